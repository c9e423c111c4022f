"""Wrapper feature selection: retrain the recognizer per column subset and compare."""

from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import Dataset, FeatureGroup, split_indices
from .errors import InvalidArgumentError
from .models import TrainingConfig, recognize, train_recognition
from .seeding import derive_rng


def time_to_stable_correct(predictions, true_label: int, sample_rate_hz: float):
    """First frame from which the argmax stays on ``true_label`` to the end.

    ``predictions`` is either per-frame distributions ``(T, C)`` or per-frame
    argmax indices ``(T,)``. Returns ``(frames, milliseconds)``, or ``None``
    if the final frame is wrong.
    """
    pred = np.asarray(predictions)
    if pred.size == 0:
        raise InvalidArgumentError("prediction sequence is empty")
    if pred.ndim == 2:
        pred = np.argmax(pred, axis=1)
    wrong = np.flatnonzero(pred != true_label)
    t = 0 if wrong.size == 0 else int(wrong[-1]) + 1
    if t == len(pred):
        return None
    return t, t * 1000.0 / sample_rate_hz


def time_to_first_correct(predictions, true_label: int, sample_rate_hz: float):
    pred = np.asarray(predictions)
    if pred.ndim == 2:
        pred = np.argmax(pred, axis=1)
    hits = np.flatnonzero(pred == true_label)
    if hits.size == 0:
        return None
    t = int(hits[0])
    return t, t * 1000.0 / sample_rate_hz


@dataclass
class SubsetResult:
    name: str
    columns: tuple[int, ...]
    accuracy: np.ndarray          # per frame index over held-out sequences
    support: np.ndarray           # held-out sequences reaching each frame index
    stable_frames: list           # per held-out sequence, None for never
    first_frames: list
    lengths: list
    sequence_ids: list
    loss_curve: np.ndarray

    @property
    def auc(self) -> float:
        return float(np.mean(self.accuracy))

    @property
    def mean_stable_frames(self) -> float:
        # a sequence that never settles counts as its full length
        return float(np.mean([L if t is None else t for t, L in zip(self.stable_frames, self.lengths)]))

    @property
    def mean_first_frames(self) -> float:
        return float(np.mean([L if t is None else t for t, L in zip(self.first_frames, self.lengths)]))

    @property
    def never_count(self) -> int:
        return sum(t is None for t in self.stable_frames)


@dataclass
class ImportanceReport:
    subsets: list[SubsetResult]
    sample_rate_hz: float
    ranking: list[str] = field(default_factory=list)

    def __post_init__(self):
        order = sorted(range(len(self.subsets)), key=lambda i: (-self.subsets[i].auc, i))
        self.ranking = [self.subsets[i].name for i in order]

    def __getitem__(self, name) -> SubsetResult:
        for s in self.subsets:
            if s.name == name:
                return s
        raise KeyError(name)

    def deltas(self) -> list[tuple[str, str, float, float]]:
        """Pairwise (a, b, frames, ms) where frames = mean stable time of b minus a."""
        out = []
        for i, a in enumerate(self.subsets):
            for b in self.subsets[i + 1:]:
                d = b.mean_stable_frames - a.mean_stable_frames
                out.append((a.name, b.name, d, d * 1000.0 / self.sample_rate_hz))
        return out

    def curves_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["subset", "frame", "accuracy", "support"])
        for s in self.subsets:
            for t, (acc, n) in enumerate(zip(s.accuracy, s.support)):
                w.writerow([s.name, t, repr(float(acc)), int(n)])
        return buf.getvalue()

    def summary_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["subset", "rank", "columns", "auc", "mean_stable_frames", "mean_stable_ms",
                    "mean_first_frames", "mean_first_ms", "never_count", "n_heldout"])
        for s in self.subsets:
            w.writerow([s.name, self.ranking.index(s.name) + 1, " ".join(map(str, s.columns)),
                        repr(s.auc), repr(s.mean_stable_frames),
                        repr(s.mean_stable_frames * 1000.0 / self.sample_rate_hz),
                        repr(s.mean_first_frames), repr(s.mean_first_frames * 1000.0 / self.sample_rate_hz),
                        s.never_count, len(s.lengths)])
        return buf.getvalue()

    def sequences_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["subset", "sequence_id", "length", "stable_frame", "first_frame"])
        for s in self.subsets:
            for sid, L, st, fi in zip(s.sequence_ids, s.lengths, s.stable_frames, s.first_frames):
                w.writerow([s.name, sid, L, "never" if st is None else st, "never" if fi is None else fi])
        return buf.getvalue()


def _evaluate_subset(args) -> SubsetResult:
    dataset, group, config, train_idx, test_idx = args
    restricted = dataset.select_columns(group.columns)
    model, curve = train_recognition(restricted.subset(train_idx), config)
    held = restricted.subset(test_idx)
    T = max(len(s) for s in held.sequences)
    hits, support = np.zeros(T), np.zeros(T)
    stable, first, lengths, ids = [], [], [], []
    for seq in held.sequences:
        label = held.intentions.index(seq.intention)
        pred = np.argmax(recognize(model, seq), axis=1)
        hits[:len(seq)] += pred == label
        support[:len(seq)] += 1
        st = time_to_stable_correct(pred, label, held.sample_rate_hz)
        fi = time_to_first_correct(pred, label, held.sample_rate_hz)
        stable.append(None if st is None else st[0])
        first.append(None if fi is None else fi[0])
        lengths.append(len(seq))
        ids.append(seq.id)
    return SubsetResult(group.name, group.columns, hits / support, support, stable, first, lengths, ids, curve)


def wrapper_rank(dataset: Dataset, subsets: Sequence[FeatureGroup], config: TrainingConfig,
                 holdout_fraction: float = 0.25, workers: int = 1) -> ImportanceReport:
    """Train one recognizer per subset (same seed, split and budget); rank by held-out accuracy AUC."""
    if len(subsets) < 2:
        raise InvalidArgumentError("need at least two feature subsets to compare")
    for g in subsets:
        if not g.columns:
            raise InvalidArgumentError(f"subset {g.name!r} is empty")
        if any(not 0 <= c < dataset.width for c in g.columns):
            raise InvalidArgumentError(f"subset {g.name!r} has a column outside 0..{dataset.width - 1}")
    labeled = [i for i, s in enumerate(dataset.sequences) if s.intention is not None]
    train_pos, test_pos = split_indices(len(labeled), holdout_fraction, derive_rng(config.seed, "holdout"))
    train_idx = [labeled[i] for i in train_pos]
    test_idx = [labeled[i] for i in test_pos]
    jobs = [(dataset, g, config, train_idx, test_idx) for g in subsets]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_evaluate_subset, jobs))
    else:
        results = [_evaluate_subset(j) for j in jobs]
    return ImportanceReport(results, dataset.sample_rate_hz)
