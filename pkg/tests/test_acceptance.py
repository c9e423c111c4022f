"""One test per acceptance criterion; each records a PASS/FAIL line shown in the terminal summary."""

import dataclasses
import itertools
import json
import math
import time

import numpy as np
import pytest

from anticipate.cli import run
from anticipate.data import SyntheticSpec, cyclic_grammar, generate_synthetic, split_indices
from anticipate.decoder import beam_decode, cumulative_probability, exhaustive_decode, greedy_decode
from anticipate.evaluation import (OraclePredictor, StudyGrid, UniformPredictor, cross_validate, final_loss_gaps,
                                   run_study)
from anticipate.importance import time_to_stable_correct, wrapper_rank
from anticipate.models import (TrainingConfig, encode_batch, make_windows, recognition_loss, recognize,
                               train_prediction, train_recognition)
from anticipate.nn import LstmState
from anticipate.reward import (example_scenario_path, expected_reward_beam, expected_reward_exhaustive,
                               load_scenario)
from anticipate.seeding import derive_rng

from conftest import (gradient_check, random_context, random_prediction_model, record_acceptance,
                      relative_errors, tiny_prediction_problem, tiny_recognition_problem)
from oracles import enumerate_sequences, scenario_rollout

SEEDS = range(5)


def test_criterion_01_gradients():
    start = time.perf_counter()
    worst = {"recognition": 0.0, "prediction": 0.0}
    for seed in range(20):
        for name, problem in (("recognition", tiny_recognition_problem), ("prediction", tiny_prediction_problem)):
            analytic, numeric = gradient_check(*problem(seed))
            worst[name] = max(worst[name], float(relative_errors(analytic, numeric).max()))
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) < 1e-4 and elapsed < 30
    record_acceptance(1, ok, f"20 seeds per model, worst relative error recognition {worst['recognition']:.2e}, "
                             f"prediction {worst['prediction']:.2e}, {elapsed:.1f} s")
    assert ok


def test_criterion_02_decoder_oracle():
    start = time.perf_counter()
    worst_lp, worst_sum, checked, ok = 0.0, 0.0, 0, True
    for V, N, seed in itertools.product((2, 3, 4), (1, 2, 3), range(3)):
        model = random_prediction_model(V=V, seed=seed, scale=1.5)
        ctx = random_context(4, seed)
        ex = exhaustive_decode(model, ctx, N)
        full = beam_decode(model, ctx, N, V ** N)
        ok &= full.sequences == ex.sequences
        worst_lp = max(worst_lp, float(np.max(np.abs(full.log_probs - ex.log_probs))))
        worst_sum = max(worst_sum, abs(cumulative_probability(ex) - 1.0))
        g, b1 = greedy_decode(model, ctx, N), beam_decode(model, ctx, N, 1)[0]
        ok &= g.actions == b1.actions and g.log_prob == b1.log_prob
        # independent recursive enumeration of every sequence
        oracle = enumerate_sequences(model, ctx, N)
        ok &= all(abs(oracle[bm.actions] - bm.log_prob) <= 1e-12 for bm in ex)
        checked += 1
    elapsed = time.perf_counter() - start
    ok = bool(ok) and worst_lp <= 1e-12 and worst_sum <= 1e-9 and elapsed < 10
    record_acceptance(2, ok, f"{checked} models with V<=4, N<=3, max log_prob gap {worst_lp:.1e}, "
                             f"max |sum-1| {worst_sum:.1e}, greedy == K=1, {elapsed:.1f} s")
    assert ok


def test_criterion_03_reward_convergence():
    world = load_scenario(example_scenario_path())
    raw = json.loads(example_scenario_path().read_text())
    assert len(world.states) <= 4 and len(world.human_actions) == 3 and len(world.robot_actions) == 2
    amap = raw["action_map"]
    equal_gap, errors = 0.0, {k: 0.0 for k in (1, 3, 5, 9)}
    for seed in SEEDS:
        model = random_prediction_model(V=3, seed=seed, scale=1.5)
        ctx = random_context(4, seed)
        full = exhaustive_decode(model, ctx, 2)
        dist = {tuple(world.map_predicted(a) for a in model.vocabulary.decode(b.actions)): b.prob for b in full}
        for robot in itertools.product(world.robot_actions, repeat=2):
            equal_gap = max(equal_gap, abs(expected_reward_beam(world, robot, full)
                                           - expected_reward_exhaustive(world, robot, dist)))
            exact = math.fsum(math.exp(lp) * scenario_rollout(raw, [amap[f"a{a}"] for a in seq], robot)
                              for seq, lp in enumerate_sequences(model, ctx, 2).items())
            for k in errors:
                est = expected_reward_beam(world, robot, beam_decode(model, ctx, 2, k))
                errors[k] = max(errors[k], abs(est - exact))
    ok = equal_gap <= 1e-12 and errors[9] <= 1e-12
    trace = ", ".join(f"K={k}: {v:.3g}" for k, v in errors.items())
    record_acceptance(3, ok, f"full enumeration vs exhaustive gap {equal_gap:.1e}; worst |error| {trace}")
    assert ok


def _trained_predictor(seed):
    spec = SyntheticSpec(vocab_size=6, n_sequences=24, min_length=10, max_length=14, seed=300 + seed)
    model, _ = train_prediction(generate_synthetic(spec), TrainingConfig(iterations=100, learning_rate=1e-2,
                                                                          dropout=0.0, seed=seed))
    held = generate_synthetic(dataclasses.replace(spec, seed=400 + seed, n_sequences=6))
    w = make_windows(held, model.config.window, 1, stride=3)
    state = encode_batch(model, w.observed)
    return model, [LstmState(state.hidden[i], state.cell[i]) for i in range(len(w))]


def test_criterion_04_beam_coverage():
    K, V = 3, 6
    eps = np.finfo(float).eps
    one_step_dev, monotone, mean_cov = 0.0, True, []
    for seed in SEEDS:
        model, contexts = _trained_predictor(seed)
        cov = np.zeros(3)
        for ctx in contexts:
            one_step_dev = max(one_step_dev, abs(cumulative_probability(beam_decode(model, ctx, 1, V)) - 1.0))
            for i, n in enumerate((1, 2, 3)):
                cov[i] += cumulative_probability(beam_decode(model, ctx, n, K))
            ks = [cumulative_probability(beam_decode(model, ctx, 2, k)) for k in range(1, V ** 2 + 1)]
            monotone &= all(b >= a for a, b in zip(ks, ks[1:]))
        mean_cov.append(cov / len(contexts))
    mean = np.mean(mean_cov, axis=0)
    # "exactly 1" is read as equal up to float64 rounding of the summed softmax
    ok = one_step_dev <= 4 * eps and bool(monotone) and mean[0] > mean[1] > mean[2]
    record_acceptance(4, ok, f"N=1,K=V coverage off 1.0 by at most {one_step_dev / eps:.1f} ulp; non-decreasing "
                             f"in K: {bool(monotone)}; K=3 mean coverage over 5 trained models N=1,2,3: "
                             f"{mean[0]:.3f} > {mean[1]:.3f} > {mean[2]:.3f}")
    assert ok


@pytest.mark.slow
def test_criterion_05_prediction_length():
    start = time.perf_counter()
    wins = []
    for seed in SEEDS:
        data = generate_synthetic(SyntheticSpec(vocab_size=10, n_sequences=40, noise=0.5, seed=100 + seed))
        base = TrainingConfig(iterations=400, learning_rate=1e-2, dropout=0.0, batch_size=64)
        rep = run_study(StudyGrid("prediction_length", [1, 3], base, seeds=[seed]), data)
        acc = {r[1]: r[3] for r in rep.rows if r[2] == 3}
        wins.append((acc[3], acc[1]))
    elapsed = time.perf_counter() - start
    n_win = sum(a3 > a1 for a3, a1 in wins)
    ok = n_win >= 4 and elapsed < 600
    detail = "; ".join(f"{a3:.3f} vs {a1:.3f}" for a3, a1 in wins)
    record_acceptance(5, ok, f"step-3 accuracy N=3 beats N=1 on {n_win}/5 seeds ({detail}), {elapsed:.0f} s")
    assert ok


@pytest.mark.slow
def test_criterion_06_overfit_and_lock_in():
    data = generate_synthetic(SyntheticSpec(vocab_size=6, n_sequences=20, seed=5))
    model, _ = train_recognition(data, TrainingConfig(iterations=300, learning_rate=1e-2, dropout=0.0,
                                                      batch_size=0))
    overfit = recognition_loss(model, data.sequences)
    fractions, converged = [], []
    for seed in SEEDS:
        ds = generate_synthetic(SyntheticSpec(vocab_size=6, n_sequences=60, seed=50 + seed, action_columns=2))
        train, held = split_indices(len(ds), 0.25, derive_rng(seed, "holdout"))
        cfg = TrainingConfig(iterations=250, learning_rate=1e-2, dropout=0.1, batch_size=16, seed=seed)
        rec, _ = train_recognition(ds.subset(train), cfg)
        early = final = 0
        for seq in ds.subset(held).sequences:
            label = rec.intentions.index(seq.intention)
            pred = np.argmax(recognize(rec, seq), axis=1)
            final += bool(pred[-1] == label)
            st = time_to_stable_correct(pred, label, ds.sample_rate_hz)
            early += st is not None and st[0] < 0.5 * len(seq)
        fractions.append(early / len(held))
        converged.append(final / len(held))
    # a lock-in before half length implies the argmax stays on the true label to the end
    ok = overfit < 0.05 and min(fractions) >= 0.8
    record_acceptance(6, ok, f"overfit loss {overfit:.4f} nats/frame; share of held-out sequences stable before "
                             f"half length per seed {[round(f, 3) for f in fractions]}; share with a correct final "
                             f"frame {[round(f, 3) for f in converged]}")
    assert ok


@pytest.mark.slow
def test_criterion_07_feature_importance():
    means = []
    for seed in SEEDS:
        ds = generate_synthetic(SyntheticSpec(vocab_size=6, n_sequences=60, seed=50 + seed, action_columns=2))
        cfg = TrainingConfig(iterations=250, learning_rate=1e-2, dropout=0.1, batch_size=16, seed=seed)
        rep = wrapper_rank(ds, [ds.group("early", "late"), ds.group("late")], cfg)
        means.append((rep["early+late"].mean_stable_frames, rep["late"].mean_stable_frames))
    n_win = sum(el < late for el, late in means)
    ok = n_win >= 4
    detail = "; ".join(f"{el:.2f} vs {late:.2f}" for el, late in means)
    record_acceptance(7, ok, f"mean stable frame E+L below L on {n_win}/5 seeds ({detail})")
    assert ok


def test_criterion_08_cross_validation():
    spec = SyntheticSpec(vocab_size=6, transitions=cyclic_grammar(6), n_sequences=24, min_length=10, max_length=16,
                         noise=0.3, seed=3)
    data = generate_synthetic(spec)
    model_f1 = cross_validate(data, TrainingConfig(iterations=150, learning_rate=1e-2, horizon=2, dropout=0.0,
                                                   batch_size=64), k=4).mean_f1
    oracle = cross_validate(data, TrainingConfig(horizon=2), k=4, predictor=OraclePredictor()).fold_f1
    hits = total = 0
    for seed in range(10):
        res = cross_validate(data, TrainingConfig(horizon=2), k=4, seed=seed, predictor=UniformPredictor())
        hits += sum(c.true_pos for c in res.fold_counts)
        total += sum(c.true_pos + c.false_neg for c in res.fold_counts)
    p = 1 / 6
    se = math.sqrt(p * (1 - p) / total)
    ok = model_f1 > 0.9 and abs(hits / total - p) <= 3 * se and oracle == [1.0] * 4
    record_acceptance(8, ok, f"model micro-F1 {model_f1:.3f}; uniform {hits / total:.4f} vs 1/6 "
                             f"({abs(hits / total - p) / se:.2f} SE); oracle folds {oracle}")
    assert ok


@pytest.mark.slow
def test_criterion_09_context_dim():
    dims = [5, 20, 80]
    gaps_per_seed = []
    for seed in SEEDS:
        data = generate_synthetic(SyntheticSpec(vocab_size=6, n_sequences=24, min_length=10, max_length=14,
                                                noise=1.5, seed=200 + seed))
        base = TrainingConfig(iterations=200, learning_rate=1e-2, dropout=0.0, batch_size=0, horizon=2)
        rep = run_study(StudyGrid("context_dim", dims, base, seeds=[seed], eval_every=200,
                                  validation_fraction=0.5), data)
        gaps_per_seed.append([final_loss_gaps(rep)[seed][d] for d in dims])
    n_ok = sum(a <= b <= c for a, b, c in gaps_per_seed)
    ok = n_ok >= 4
    detail = "; ".join("/".join(f"{g:.3f}" for g in gaps) for gaps in gaps_per_seed)
    record_acceptance(9, ok, f"gap non-decreasing over dims 5/20/80 on {n_ok}/5 seeds ({detail})")
    assert ok


def _cli_pipeline(root):
    root.mkdir()
    spec = root / "spec.json"
    spec.write_text(json.dumps({"vocab_size": 3, "n_sequences": 10, "min_length": 8, "max_length": 10}))
    small = ["--iterations", "15", "--train.hidden_dim", "6", "--train.embed_dim", "6", "--seed", "4"]
    ds, tp, tr = str(root / "ds"), str(root / "tp" / "model"), str(root / "tr" / "model")
    commands = [
        ["synth", "--spec", str(spec), "--seed", "4", "--out", ds],
        ["train", "--data", ds, "--out", str(root / "tp"), *small],
        ["train", "--kind", "recognition", "--data", ds, "--out", str(root / "tr"), *small],
        ["recognize", "--data", ds, "--checkpoint", tr, "--out", str(root / "rec")],
        ["predict", "--data", ds, "--checkpoint", tp, "--beams", "11", "--horizon", "2", "--out", str(root / "pr")],
        ["reward", "--scenario", str(example_scenario_path()), "--checkpoint", tp, "--out", str(root / "rw")],
        ["evaluate", "--data", ds, "--folds", "2", "--out", str(root / "ev"), *small],
        ["importance", "--data", ds, "--out", str(root / "im"), *small],
        ["study", "--data", ds, "--kind", "beam_width", "--values", "1,3", "--seeds", "0,1", "--out",
         str(root / "st"), *small[:-2]],
        ["study", "--data", ds, "--kind", "context_dim", "--values", "4,8", "--seeds", "0",
         "--study.eval_every", "5", "--out", str(root / "sc"), *small[:-2]],
    ]
    codes = [run(c) for c in commands]
    files = sorted(p.relative_to(root) for p in root.rglob("*.csv"))
    return codes, files


def test_criterion_10_reproducibility(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    codes_a, files_a = _cli_pipeline(a)
    codes_b, files_b = _cli_pipeline(b)
    same = [f for f in files_a if (a / f).read_bytes() == (b / f).read_bytes()]
    ok = set(codes_a + codes_b) == {0} and files_a == files_b and len(same) == len(files_a) and len(same) >= 12
    record_acceptance(10, ok, f"{len(same)}/{len(files_a)} CSV files byte-identical across two runs of all "
                              f"8 subcommands")
    assert ok
