"""Cross-validated micro-F1 and the parameter studies.

Micro-F1 pools true positives, false negatives and false positives over all
labels and decoded steps. With exactly one prediction per step, each miss
is one false negative (for the true label) and one false positive (for the
predicted label).
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .data import Dataset, split_indices
from .decoder import beam_decode, cumulative_probability, greedy_decode_batch
from .errors import InvalidArgumentError
from .models import (TrainingConfig, Windows, encode_batch, init_prediction, make_windows,
                     prediction_loss, train_prediction)
from .nn import LstmState
from .seeding import derive_rng, derive_seed

STUDY_PARAMETERS = ("prediction_length", "beam_width", "context_dim")


@dataclass(frozen=True)
class ConfusionCounts:
    true_pos: int = 0
    false_neg: int = 0
    false_pos: int = 0

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.true_pos + other.true_pos, self.false_neg + other.false_neg,
                               self.false_pos + other.false_pos)


def f1_from_counts(c: ConfusionCounts) -> float:
    """``2TP / (2TP + FN + FP)``; 1.0 when nothing was demanded and nothing predicted."""
    if min(c.true_pos, c.false_neg, c.false_pos) < 0:
        raise InvalidArgumentError(f"negative confusion counts: {c}")
    denom = 2 * c.true_pos + c.false_neg + c.false_pos
    if denom == 0:
        return 1.0
    return 2 * c.true_pos / denom


def count_predictions(predicted, truth) -> ConfusionCounts:
    predicted, truth = np.asarray(predicted), np.asarray(truth)
    if predicted.shape != truth.shape:
        raise InvalidArgumentError(f"prediction shape {predicted.shape} != truth shape {truth.shape}")
    tp = int(np.sum(predicted == truth))
    miss = int(predicted.size - tp)
    return ConfusionCounts(tp, miss, miss)


def fold_partition(n: int, k: int, seed: int) -> list[np.ndarray]:
    """Seeded shuffle of ``range(n)`` cut into ``k`` near-equal folds."""
    if k < 2:
        raise InvalidArgumentError("need at least 2 folds")
    if n < k:
        raise InvalidArgumentError(f"{n} sequences cannot fill {k} folds")
    perm = derive_rng(seed, "folds").permutation(n)
    return [np.sort(f) for f in np.array_split(perm, k)]


# -- predictors ----------------------------------------------------------------
# A predictor is fitted on a training Dataset and returns a callable mapping
# evaluation Windows to a (pairs, horizon) array of action indices.

class ModelPredictor:
    """Train the encoder-decoder and decode greedily."""

    def fit(self, train: Dataset, config: TrainingConfig, seed: int) -> Callable[[Windows, int], np.ndarray]:
        model, _ = train_prediction(train, config.replace(seed=seed))

        def predict(windows: Windows, horizon: int) -> np.ndarray:
            return greedy_decode_batch(model, encode_batch(model, windows.observed), horizon)

        return predict


class OraclePredictor:
    """Reads the reference future; checks the harness plumbing."""

    def fit(self, train, config, seed):
        return lambda windows, horizon: windows.future[:horizon].T.copy()


class UniformPredictor:
    """Uniform random guesses over the vocabulary."""

    def fit(self, train, config, seed):
        rng = derive_rng(seed, "uniform-predictor")
        V = len(train.vocabulary)
        return lambda windows, horizon: rng.integers(0, V, size=(len(windows), horizon))


@dataclass
class CrossValidationResult:
    fold_f1: list[float]
    fold_counts: list[ConfusionCounts]
    folds: list[np.ndarray]

    @property
    def mean_f1(self) -> float:
        return float(np.mean(self.fold_f1))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["fold", "n_sequences", "true_pos", "false_neg", "false_pos", "f1"])
        for i, (f1, c, idx) in enumerate(zip(self.fold_f1, self.fold_counts, self.folds)):
            w.writerow([i, len(idx), c.true_pos, c.false_neg, c.false_pos, repr(f1)])
        w.writerow(["mean", sum(len(f) for f in self.folds), "", "", "", repr(self.mean_f1)])
        return buf.getvalue()


def _run_fold(args):
    dataset, config, folds, i, predictor, horizon, seed = args
    test = folds[i]
    train = np.sort(np.concatenate([f for j, f in enumerate(folds) if j != i]))
    predict = predictor.fit(dataset.subset(train), config, derive_seed(seed, "fold", i))
    windows = make_windows(dataset.subset(test), config.window, horizon)
    return count_predictions(predict(windows, horizon), windows.future.T)


def cross_validate(dataset: Dataset, config: TrainingConfig, k: int = 4, seed: int = 0, predictor=None,
                   horizon: int | None = None, workers: int = 1) -> CrossValidationResult:
    """Sequence-level k-fold micro-F1 of ``horizon``-step decoding on held-out windows."""
    if len(dataset) < k:
        raise InvalidArgumentError(f"dataset has {len(dataset)} sequences, fewer than k={k}")
    predictor = ModelPredictor() if predictor is None else predictor
    horizon = config.horizon if horizon is None else horizon
    folds = fold_partition(len(dataset), k, seed)
    jobs = [(dataset, config, folds, i, predictor, horizon, seed) for i in range(k)]
    counts = _map(_run_fold, jobs, workers)
    return CrossValidationResult([f1_from_counts(c) for c in counts], counts, folds)


def _map(fn, jobs, workers):
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(fn, jobs))
    return [fn(j) for j in jobs]


# -- studies -----------------------------------------------------------------

@dataclass
class StudyGrid:
    parameter: str
    values: Sequence[int]
    base: TrainingConfig
    seeds: Sequence[int] = (0,)
    horizons: Sequence[int] = (1, 2)      # beam_width: horizons to decode at
    eval_horizon: int | None = None       # prediction_length: steps scored
    validation_fraction: float = 0.25
    eval_every: int = 50                  # context_dim: loss sampling period

    def __post_init__(self):
        if self.parameter not in STUDY_PARAMETERS:
            raise InvalidArgumentError(f"unknown study parameter {self.parameter!r}; choose from {STUDY_PARAMETERS}")
        self.values = [int(v) for v in self.values]
        self.seeds = [int(s) for s in self.seeds]
        if len(self.values) < 2:
            raise InvalidArgumentError("a study grid needs at least two values")
        if any(v < 1 for v in self.values):
            raise InvalidArgumentError("grid values must be >= 1")
        if not self.seeds:
            raise InvalidArgumentError("a study grid needs at least one seed")


@dataclass
class ExperimentReport:
    study: str
    columns: list[str]
    rows: list[tuple] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for row in self.rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
        return buf.getvalue()

    def column(self, name) -> list:
        i = self.columns.index(name)
        return [r[i] for r in self.rows]

    def where(self, **match) -> list[tuple]:
        idx = {self.columns.index(k): v for k, v in match.items()}
        return [r for r in self.rows if all(r[i] == v for i, v in idx.items())]


STUDY_COLUMNS = {
    "prediction_length": ["seed", "train_horizon", "step", "accuracy", "n_windows"],
    "beam_width": ["seed", "horizon", "beam_width", "cumulative_probability", "n_windows"],
    "context_dim": ["seed", "context_dim", "iteration", "train_loss", "validation_loss"],
}


def _seed_split(dataset, grid, seed):
    train_idx, val_idx = split_indices(len(dataset), grid.validation_fraction, derive_rng(seed, "study-split"))
    return dataset.subset(train_idx), dataset.subset(val_idx)


def _study_prediction_length(args):
    dataset, grid, seed = args
    train, val = _seed_split(dataset, grid, seed)
    H = grid.eval_horizon or max(grid.values)
    windows = make_windows(val, grid.base.window, H)
    rows = []
    for n in grid.values:
        model, _ = train_prediction(train, grid.base.replace(horizon=n, seed=seed))
        pred = greedy_decode_batch(model, encode_batch(model, windows.observed), H)
        acc = (pred == windows.future.T).mean(axis=0)
        rows += [(seed, n, step + 1, float(acc[step]), len(windows)) for step in range(H)]
    return rows


def _study_beam_width(args):
    dataset, grid, seed = args
    train, val = _seed_split(dataset, grid, seed)
    model, _ = train_prediction(train, grid.base.replace(seed=seed))
    windows = make_windows(val, grid.base.window, 1)
    ctx = encode_batch(model, windows.observed)
    rows = []
    for n in grid.horizons:
        for k in grid.values:
            cover = [cumulative_probability(beam_decode(model, LstmState(ctx.hidden[i], ctx.cell[i]), n, k))
                     for i in range(len(windows))]
            rows.append((seed, n, k, float(np.mean(cover)), len(windows)))
    return rows


def _study_context_dim(args):
    dataset, grid, seed = args
    train, val = _seed_split(dataset, grid, seed)
    base = grid.base
    train_w = make_windows(train, base.window, base.horizon)
    val_w = make_windows(val, base.window, base.horizon)
    rows = []
    for dim in grid.values:
        config = base.replace(hidden_dim=dim, seed=seed)
        probe = init_prediction(dataset.width, dataset.vocabulary, config)

        def monitor(it, params):
            if it % grid.eval_every == 0 or it == config.iterations:
                m = replace(probe, params=params)
                rows.append((seed, dim, it, prediction_loss(m, train_w), prediction_loss(m, val_w)))

        train_prediction(train_w, config, dataset.vocabulary, callback=monitor)
    return rows


_STUDIES = {
    "prediction_length": _study_prediction_length,
    "beam_width": _study_beam_width,
    "context_dim": _study_context_dim,
}


def run_study(grid: StudyGrid, dataset: Dataset, workers: int = 1) -> ExperimentReport:
    fn = _STUDIES[grid.parameter]
    per_seed = _map(fn, [(dataset, grid, s) for s in grid.seeds], workers)
    report = ExperimentReport(grid.parameter, STUDY_COLUMNS[grid.parameter])
    for rows in per_seed:
        report.rows.extend(rows)
    return report


def final_loss_gaps(report: ExperimentReport) -> dict[int, dict[int, float]]:
    """context_dim report -> {seed: {dim: final validation minus training loss}}."""
    out: dict[int, dict[int, float]] = {}
    last: dict[tuple, tuple] = {}
    for seed, dim, it, tr, va in report.rows:
        if (seed, dim) not in last or it > last[(seed, dim)][0]:
            last[(seed, dim)] = (it, va - tr)
    for (seed, dim), (_, gap) in sorted(last.items()):
        out.setdefault(seed, {})[dim] = gap
    return out
