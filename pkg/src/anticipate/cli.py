"""Command-line entry point.

Every setting is a flat dotted key (``train.iterations``, ``study.values`` ...).
Keys come from an optional ``--config`` JSON file and are overridden by the
flag of the same name (``--train.iterations 200``). A few common keys also
have short flags (``--data``, ``--out``, ``--beams``, ``--horizon`` ...).

Exit codes: 0 success, 1 usage error, 2 data or validation error,
3 resource limit exceeded.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import platform
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (Dataset, SyntheticSpec, _atomic_write, generate_synthetic, load_dataset,
                   save_dataset)
from .decoder import beam_decode, beams_to_csv, cumulative_probability, exhaustive_decode
from .errors import AnticipateError, DataFormatError, InvalidArgumentError, ResourceLimitError
from .evaluation import StudyGrid, cross_validate, run_study
from .importance import time_to_first_correct, time_to_stable_correct, wrapper_rank
from .models import (PredictionModel, RecognitionModel, TrainingConfig, encode, recognize, train_prediction,
                     train_recognition)
from .nn import LstmState
from .reward import beam_human_sequences, expected_reward_exhaustive, load_scenario, select_robot_plan

OUTPUT_ROOT_ENV = "ANTICIPATE_OUTPUT_ROOT"

_T = TrainingConfig()


def _csv_ints(s):
    if isinstance(s, list):
        return [int(v) for v in s]
    return [int(v) for v in str(s).split(",") if v.strip()]


def _csv_strs(s):
    if isinstance(s, list):
        return [str(v) for v in s]
    return [v.strip() for v in str(s).split(",") if v.strip()]


def _bool(s):
    if isinstance(s, bool):
        return s
    if str(s).lower() in ("1", "true", "yes", "on"):
        return True
    if str(s).lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


# key: (parser, default, help)
KEYS = {
    "seed": (int, 0, "root seed; every random stream is derived from it"),
    "workers": (int, os.cpu_count() or 1, "worker processes for folds, seeds and subsets"),
    "figures": (_bool, True, "render PNG figures next to study/importance CSVs"),
    "out": (str, None, "run output directory"),
    "data.path": (str, None, "dataset directory"),
    "checkpoint": (str, None, "model checkpoint file"),
    "train.kind": (str, "prediction", "model to train: prediction | recognition"),
    "train.iterations": (int, _T.iterations, "Adam steps"),
    "train.learning_rate": (float, _T.learning_rate, "Adam learning rate"),
    "train.beta1": (float, _T.beta1, "Adam beta1"),
    "train.beta2": (float, _T.beta2, "Adam beta2"),
    "train.epsilon": (float, _T.epsilon, "Adam epsilon"),
    "train.batch_size": (int, _T.batch_size, "minibatch size, 0 for full batch"),
    "train.dropout": (float, _T.dropout, "dropout rate after the feature embedding"),
    "train.horizon": (int, _T.horizon, "prediction length N used for training"),
    "train.window": (int, _T.window, "observed frames per prediction window"),
    "train.hidden_dim": (int, _T.hidden_dim, "LSTM hidden / context width"),
    "train.embed_dim": (int, _T.embed_dim, "embedding width"),
    "train.zero_projection": (_bool, _T.zero_projection, "start the output projection at zero"),
    "predict.beams": (int, 11, "beam width K"),
    "predict.horizon": (int, 2, "decoded steps N"),
    "predict.sequence": (str, None, "sequence id to observe (default: first)"),
    "predict.start": (int, 0, "first observed frame"),
    "eval.folds": (int, 4, "cross-validation folds"),
    "eval.horizon": (int, None, "decoded steps scored (default: train.horizon)"),
    "importance.subsets": (_csv_strs, None, "comma list of subsets, groups joined by '+'"),
    "importance.holdout_fraction": (float, 0.25, "held-out share of sequences"),
    "study.kind": (str, None, "prediction_length | beam_width | context_dim"),
    "study.values": (_csv_ints, None, "comma list of grid values"),
    "study.seeds": (_csv_ints, [0, 1, 2, 3, 4], "comma list of seeds"),
    "study.horizons": (_csv_ints, [1, 2], "beam_width: comma list of horizons"),
    "study.eval_horizon": (int, None, "prediction_length: steps scored"),
    "study.eval_every": (int, 50, "context_dim: loss sampling period"),
    "study.validation_fraction": (float, 0.25, "validation share of sequences"),
    "reward.scenario": (str, None, "scenario JSON file"),
    "reward.beams": (int, 9, "largest beam width to estimate with"),
    "reward.horizon": (int, None, "planning horizon (default: scenario horizon)"),
    "synth.spec": (str, None, "synthetic spec JSON (default: built-in spec)"),
}

ALIASES = {
    "--data": "data.path",
    "--spec": "synth.spec",
    "--scenario": "reward.scenario",
    "--kind": None,  # resolved per subcommand
    "--beams": None,
    "--horizon": None,
    "--sequence": "predict.sequence",
    "--start": "predict.start",
    "--values": "study.values",
    "--seeds": "study.seeds",
    "--folds": "eval.folds",
    "--subset": "importance.subsets",
    "--iterations": "train.iterations",
}

SUBCOMMAND_KEYS = {
    "synth": ["synth.", "seed", "out"],
    "train": ["train.", "seed", "out", "data.path"],
    "recognize": ["checkpoint", "data.path", "out", "figures"],
    "predict": ["predict.", "checkpoint", "data.path", "out"],
    "evaluate": ["eval.", "train.", "seed", "out", "data.path", "workers"],
    "importance": ["importance.", "train.", "seed", "out", "data.path", "workers", "figures"],
    "reward": ["reward.", "predict.sequence", "predict.start", "checkpoint", "data.path", "out"],
    "study": ["study.", "train.", "out", "data.path", "workers", "figures"],
}

# defaults that differ per subcommand; synth keeps the seed from its --spec file unless --seed is given
COMMAND_DEFAULTS = {"synth": {"seed": None}}

PER_COMMAND_ALIAS = {
    ("train", "--kind"): "train.kind",
    ("study", "--kind"): "study.kind",
    ("predict", "--beams"): "predict.beams",
    ("predict", "--horizon"): "predict.horizon",
    ("reward", "--beams"): "reward.beams",
    ("reward", "--horizon"): "reward.horizon",
    ("evaluate", "--horizon"): "eval.horizon",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n\n{self.format_usage()}")


def _keys_for(command):
    prefixes = SUBCOMMAND_KEYS[command]
    return [k for k in KEYS if any(k == p or (p.endswith(".") and k.startswith(p)) for p in prefixes)]


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="anticipate", description="Human action anticipation toolkit.")
    parser.add_argument("--version", action="version", version=f"anticipate {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for command in SUBCOMMAND_KEYS:
        p = sub.add_parser(command, help=_HELP[command], description=_HELP[command])
        p.add_argument("--config", help="JSON file of dotted keys")
        keys = _keys_for(command)
        for key in keys:
            flags = [f"--{key}"]
            for alias, target in ALIASES.items():
                target = PER_COMMAND_ALIAS.get((command, alias), target)
                if target == key:
                    flags.append(alias)
            if key == "out":
                flags = ["--out"]
            if key == "checkpoint":
                flags = ["--checkpoint"]
            action = "append" if key == "importance.subsets" else "store"
            p.add_argument(*flags, dest=key, default=None, action=action, help=KEYS[key][2])
        p.set_defaults(_keys=keys)
    return parser


_HELP = {
    "synth": "generate a synthetic dataset",
    "train": "train a prediction or recognition model",
    "recognize": "per-frame intention distributions from a recognition checkpoint",
    "predict": "beam-decode future action sequences",
    "evaluate": "k-fold cross-validated micro-F1",
    "importance": "wrapper feature-subset ranking",
    "reward": "select a robot plan from beam-estimated expected reward",
    "study": "prediction-length, beam-width or context-dimension study",
}


def resolve_config(args) -> dict:
    """Merge defaults, the config file and flags; reject unknown keys and bad values."""
    allowed = set(args._keys)
    values = {k: KEYS[k][1] for k in allowed}
    values.update(COMMAND_DEFAULTS.get(args.command, {}))
    sources = []
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(raw, dict):
            raise UsageError("config file must hold a JSON object of dotted keys")
        unknown = sorted(set(raw) - allowed)
        if unknown:
            raise UsageError(f"unknown config keys for {args.command}: {unknown}")
        sources.append(raw)
    flags = {k: getattr(args, k) for k in allowed if getattr(args, k) is not None}
    if "importance.subsets" in flags:
        flags["importance.subsets"] = [s for item in flags["importance.subsets"] for s in _csv_strs(item)]
    sources.append(flags)
    for src in sources:
        for k, v in src.items():
            if v is None:
                values[k] = None
                continue
            try:
                values[k] = KEYS[k][0](v)
            except (TypeError, ValueError) as exc:
                raise UsageError(f"bad value for {k}: {v!r} ({exc})") from None
    return values


def training_config(cfg: dict) -> TrainingConfig:
    return TrainingConfig(
        iterations=cfg["train.iterations"], learning_rate=cfg["train.learning_rate"],
        beta1=cfg["train.beta1"], beta2=cfg["train.beta2"], epsilon=cfg["train.epsilon"],
        batch_size=cfg["train.batch_size"], dropout=cfg["train.dropout"], seed=cfg["seed"],
        horizon=cfg["train.horizon"], window=cfg["train.window"], hidden_dim=cfg["train.hidden_dim"],
        embed_dim=cfg["train.embed_dim"], zero_projection=cfg["train.zero_projection"],
    )


def _out_dir(cfg) -> Path:
    if not cfg.get("out"):
        raise UsageError("--out is required")
    out = Path(cfg["out"])
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not out.is_absolute():
        out = Path(root) / out
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require(cfg, key, flag):
    if cfg.get(key) in (None, []):
        raise UsageError(f"{flag} is required")
    return cfg[key]


def _write_manifest(out: Path, command: str, cfg: dict, started: str):
    manifest = {
        "command": command,
        "config": cfg,
        "seed": cfg.get("seed"),
        "versions": {"anticipate": __version__, "numpy": np.__version__, "python": platform.python_version()},
    }
    _atomic_write(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    info = {"started": started, "finished": datetime.now(timezone.utc).isoformat()}
    _atomic_write(out / "run_info.json", json.dumps(info, indent=2) + "\n")


def _rows_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def _pick_sequence(dataset: Dataset, seq_id):
    if seq_id is None:
        return dataset.sequences[0]
    for s in dataset.sequences:
        if s.id == seq_id:
            return s
    raise InvalidArgumentError(f"no sequence {seq_id!r} in dataset")


def _observation(model: PredictionModel, cfg) -> np.ndarray:
    seq = _pick_sequence(load_dataset(_require(cfg, "data.path", "--data")), cfg.get("predict.sequence"))
    window = model.config.window if model.config is not None else 3
    start = cfg.get("predict.start") or 0
    frames = seq.features[start:start + window]
    if len(frames) == 0:
        raise InvalidArgumentError(f"sequence {seq.id!r} has no frames from {start}")
    return frames


def _load_model(cfg, kind):
    model = load_checkpoint(_require(cfg, "checkpoint", "--checkpoint"))
    if model.kind != kind:
        raise InvalidArgumentError(f"checkpoint holds a {model.kind} model, this command needs {kind}")
    return model


# -- subcommands -------------------------------------------------------------

def cmd_synth(cfg, out):
    if cfg["synth.spec"]:
        try:
            raw = json.loads(Path(cfg["synth.spec"]).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"synthetic spec is not valid JSON: {exc}") from None
        spec = SyntheticSpec.from_dict(raw)
    else:
        spec = SyntheticSpec()
    if cfg.get("seed") is not None:
        spec.seed = cfg["seed"]
    save_dataset(generate_synthetic(spec), out)
    _atomic_write(out / "synthetic_spec.json", json.dumps(spec.to_dict(), indent=2) + "\n")


def cmd_train(cfg, out):
    dataset = load_dataset(_require(cfg, "data.path", "--data"))
    config = training_config(cfg)
    kind = cfg["train.kind"]
    if kind == "prediction":
        model, curve = train_prediction(dataset, config)
    elif kind == "recognition":
        model, curve = train_recognition(dataset, config)
    else:
        raise UsageError(f"--kind must be prediction or recognition, got {kind!r}")
    save_checkpoint(model, out / "model")
    _atomic_write(out / "loss_curve.csv", _rows_csv(["iteration", "loss"], enumerate(curve.tolist(), start=1)))


def cmd_recognize(cfg, out):
    model: RecognitionModel = _load_model(cfg, "recognition")
    dataset = load_dataset(_require(cfg, "data.path", "--data"))
    classes = list(model.intentions.symbols)
    frames, summary = [], []
    for seq in dataset.sequences:
        probs = recognize(model, seq)
        pred = np.argmax(probs, axis=1)
        for t, row in enumerate(probs):
            frames.append([seq.id, t, *map(float, row), classes[pred[t]]])
        stable = first = None
        if seq.intention is not None and seq.intention in model.intentions:
            label = model.intentions.index(seq.intention)
            stable = time_to_stable_correct(pred, label, seq.sample_rate_hz)
            first = time_to_first_correct(pred, label, seq.sample_rate_hz)
        summary.append([seq.id, len(seq), seq.intention or "",
                        "never" if stable is None else stable[0], "" if stable is None else float(stable[1]),
                        "never" if first is None else first[0]])
        if cfg["figures"] and seq is dataset.sequences[0]:
            from .plotting import plot_distribution
            plot_distribution(probs, classes, out / "distribution.png", title=seq.id)
    _atomic_write(out / "recognition.csv",
                  _rows_csv(["sequence_id", "frame", *(f"p_{c}" for c in classes), "argmax"], frames))
    _atomic_write(out / "stable_times.csv",
                  _rows_csv(["sequence_id", "length", "intention", "stable_frame", "stable_ms", "first_frame"],
                            summary))


def cmd_predict(cfg, out):
    model: PredictionModel = _load_model(cfg, "prediction")
    ctx = encode(model, _observation(model, cfg))
    beams = beam_decode(model, ctx, cfg["predict.horizon"], cfg["predict.beams"])
    _atomic_write(out / "beams.csv", beams_to_csv(beams))


def cmd_evaluate(cfg, out):
    dataset = load_dataset(_require(cfg, "data.path", "--data"))
    result = cross_validate(dataset, training_config(cfg), k=cfg["eval.folds"], seed=cfg["seed"],
                            horizon=cfg["eval.horizon"], workers=cfg["workers"])
    _atomic_write(out / "cross_validation.csv", result.to_csv())


def cmd_importance(cfg, out):
    dataset = load_dataset(_require(cfg, "data.path", "--data"))
    names = cfg["importance.subsets"] or ["+".join(sorted(dataset.groups))] + sorted(dataset.groups)
    subsets = [dataset.group(*name.split("+")) for name in names]
    report = wrapper_rank(dataset, subsets, training_config(cfg), cfg["importance.holdout_fraction"],
                          workers=cfg["workers"])
    _atomic_write(out / "importance_curves.csv", report.curves_csv())
    _atomic_write(out / "importance_summary.csv", report.summary_csv())
    _atomic_write(out / "importance_sequences.csv", report.sequences_csv())
    if cfg["figures"]:
        from .plotting import plot_importance
        plot_importance(report, out / "importance.png")


def cmd_reward(cfg, out):
    world = load_scenario(_require(cfg, "reward.scenario", "--scenario"))
    model: PredictionModel = _load_model(cfg, "prediction")
    horizon = cfg["reward.horizon"] or world.horizon
    if not horizon:
        raise UsageError("--horizon is required when the scenario has none")
    if cfg.get("data.path"):
        obs = _observation(model, cfg)
        ctx = encode(model, obs)
    elif world.observation is not None:
        ctx = encode(model, world.observation)
    else:
        # no observed history: decode from the untouched encoder state
        ctx = LstmState.zeros(model.hidden_dim)
    K_max = cfg["reward.beams"]
    exact = None
    try:
        full = exhaustive_decode(model, ctx, horizon, cap=10**5)
        exact = {seq: b.prob for seq, b in zip(beam_human_sequences(world, full), full)}
    except ResourceLimitError:
        pass
    rows = []
    for K in range(1, K_max + 1):
        beams = beam_decode(model, ctx, horizon, K)
        plan, value = select_robot_plan(world, beams, horizon=horizon)
        exact_value = "" if exact is None else expected_reward_exhaustive(world, plan, _merge(exact))
        err = "" if exact is None else abs(value - exact_value)
        rows.append([K, len(beams), cumulative_probability(beams), " ".join(plan), value, exact_value, err])
    beams = beam_decode(model, ctx, horizon, K_max)
    plan, value = select_robot_plan(world, beams, horizon=horizon)
    _atomic_write(out / "plan.csv", _rows_csv(
        ["step", "robot_action"], [[i + 1, a] for i, a in enumerate(plan)]))
    _atomic_write(out / "reward_estimates.csv", _rows_csv(
        ["beams", "n_beams", "cumulative_probability", "robot_plan", "estimated_reward", "exhaustive_reward",
         "abs_error"], rows))
    _atomic_write(out / "beams.csv", beams_to_csv(beams))
    print("selected plan:", " ".join(plan), f"(estimated reward {value!r})")


def _merge(dist):
    # several predictor symbols may map onto one human action sequence
    merged = {}
    for seq, p in dist.items():
        merged[seq] = merged.get(seq, 0.0) + p
    total = sum(merged.values())
    return {k: v / total for k, v in merged.items()}


def cmd_study(cfg, out):
    kind = _require(cfg, "study.kind", "--kind")
    values = _require(cfg, "study.values", "--values")
    dataset = load_dataset(_require(cfg, "data.path", "--data"))
    grid = StudyGrid(kind, values,
                     training_config({**cfg, "seed": 0}), cfg["study.seeds"], cfg["study.horizons"],
                     cfg["study.eval_horizon"], cfg["study.validation_fraction"], cfg["study.eval_every"])
    report = run_study(grid, dataset, workers=cfg["workers"])
    _atomic_write(out / f"{kind}.csv", report.to_csv())
    if cfg["figures"]:
        from .plotting import STUDY_PLOTS
        STUDY_PLOTS[kind](report, out / f"{kind}.png")


COMMANDS = {
    "synth": cmd_synth, "train": cmd_train, "recognize": cmd_recognize, "predict": cmd_predict,
    "evaluate": cmd_evaluate, "importance": cmd_importance, "reward": cmd_reward, "study": cmd_study,
}


def run(argv=None) -> int:
    parser = build_parser()
    started = datetime.now(timezone.utc).isoformat()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return 1
        cfg = resolve_config(args)
        out = _out_dir(cfg)
        COMMANDS[args.command](cfg, out)
        _write_manifest(out, args.command, cfg, started)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except ResourceLimitError as exc:
        print(f"resource limit: {exc}", file=sys.stderr)
        return 3
    except (AnticipateError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
