import numpy as np
import pytest

from anticipate.data import FeatureSequence, SyntheticSpec, generate_synthetic
from anticipate.models import (PredictionModel, TrainingConfig, Windows, init_prediction, init_recognition,
                               pad_recognition_batch, prediction_loss_node, recognition_loss_node)
from anticipate.nn import Params, Tape
from anticipate.vocabulary import ActionVocabulary

import oracles


def random_prediction_model(V=3, H=4, D=3, E=5, seed=0, scale=1.0) -> PredictionModel:
    """Prediction model with weights drawn wider than the default init, so
    the decoder distributions are far from uniform."""
    config = TrainingConfig(hidden_dim=H, embed_dim=E, seed=seed, dropout=0.0)
    model = init_prediction(D, ActionVocabulary.numbered(V), config)
    rng = np.random.default_rng(seed + 1000)
    model.params = Params({k: rng.normal(0.0, scale, v.shape) for k, v in model.params.items()})
    return model


def random_context(H, seed):
    rng = np.random.default_rng(seed + 2000)
    from anticipate.nn import LstmState
    return LstmState(np.tanh(rng.normal(size=H)), rng.normal(size=H))


def central_differences(f, x, step=1e-5):
    g = np.empty_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[i] += step
        xm[i] -= step
        g[i] = (f(xp) - f(xm)) / (2 * step)
    return g


def relative_errors(analytic, numeric, floor=1e-10):
    """Per-coordinate |a - n| / max(|a|, |n|); coordinates where both are below
    ``floor`` count as exact (both sides are zero up to rounding)."""
    denom = np.maximum(np.abs(analytic), np.abs(numeric))
    err = np.abs(analytic - numeric)
    return np.where(denom < floor, 0.0, err / np.maximum(denom, floor))


def tiny_recognition_problem(seed, V=3, H=4, D=3, E=5, T=(4, 6), dropout=0.3):
    """Returns (model, loss, reference) where ``reference(flat)`` is the same
    loss computed independently in extended precision."""
    rng = np.random.default_rng(seed)
    intents = ActionVocabulary.numbered(V)
    config = TrainingConfig(hidden_dim=H, embed_dim=E, seed=seed, dropout=dropout)
    model = init_recognition(D, intents, config)
    seqs = [FeatureSequence(f"s{i}", rng.normal(size=(t, D)), intention=intents.symbol(int(rng.integers(V))))
            for i, t in enumerate(T)]
    batch = pad_recognition_batch(seqs, intents)
    mask_seed = seed + 7
    shapes = {k: v.shape for k, v in model.params.items()}

    def loss(params, record=False):
        tape = Tape(params, record=record)
        # same dropout draws on every evaluation
        node = recognition_loss_node(tape, batch, dropout, np.random.default_rng(mask_seed), training=dropout > 0)
        return tape, node

    def reference(flat):
        return oracles.recognition_loss_ld(flat, shapes, batch, dropout, mask_seed)

    return model, loss, reference


def tiny_prediction_problem(seed, V=3, H=4, N=2, D=3, E=5, W=3, P=3, dropout=0.3):
    rng = np.random.default_rng(seed)
    config = TrainingConfig(hidden_dim=H, embed_dim=E, seed=seed, dropout=dropout, horizon=N)
    model = init_prediction(D, ActionVocabulary.numbered(V), config)
    windows = Windows(rng.normal(size=(W, P, D)), rng.integers(0, V, size=(N, P)), [("x", i) for i in range(P)])
    mask_seed = seed + 7
    shapes = {k: v.shape for k, v in model.params.items()}

    def loss(params, record=False):
        tape = Tape(params, record=record)
        node = prediction_loss_node(tape, windows, model.start_token, dropout,
                                    np.random.default_rng(mask_seed), training=dropout > 0)
        return tape, node

    def reference(flat):
        return oracles.prediction_loss_ld(flat, shapes, windows, model.start_token, dropout, mask_seed)

    return model, loss, reference


def gradient_check(model, loss, reference, step=1e-5):
    """Analytic gradient from the tape against central differences of the
    extended-precision reference loss."""
    tape, node = loss(model.params, record=True)
    analytic = tape.backward(node).flat()
    numeric = oracles.central_differences_ld(reference, model.params.flat(), step)
    return analytic, numeric


@pytest.fixture
def small_synthetic():
    return generate_synthetic(SyntheticSpec(vocab_size=4, n_sequences=12, min_length=8, max_length=12, seed=3))


# acceptance criterion number -> (passed, detail), filled by test_acceptance.py
ACCEPTANCE = {}


def record_acceptance(number, passed, detail):
    ACCEPTANCE[number] = (bool(passed), detail)
    print(f"criterion {number}: {'PASS' if passed else 'FAIL'} ({detail})")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
