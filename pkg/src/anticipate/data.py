"""Datasets on disk and in memory, plus the synthetic generator.

On-disk layout of a dataset directory::

    dataset.json   header: format, version, vocabulary, intentions,
                   columns, groups, sample_rate_hz
    frames.csv     sequence_id, frame_index, <one column per feature>, label, intention

Rows of one sequence are contiguous with ``frame_index`` counting up from 0.
``label`` (per-frame action) and ``intention`` (per-sequence, repeated on
every row) may be empty. Labels are stored as vocabulary symbols.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InvalidArgumentError, ParseError, SchemaError, UnknownLabelError
from .vocabulary import ActionVocabulary

DATASET_FORMAT = "anticipate-dataset"
DATASET_VERSION = 1
HEADER_NAME = "dataset.json"
FRAMES_NAME = "frames.csv"


@dataclass(frozen=True)
class FeatureGroup:
    name: str
    columns: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(int(c) for c in self.columns))
        if not self.columns:
            raise InvalidArgumentError(f"feature group {self.name!r} is empty")
        if len(set(self.columns)) != len(self.columns):
            raise InvalidArgumentError(f"feature group {self.name!r} repeats a column")


@dataclass
class FeatureSequence:
    id: str
    features: np.ndarray
    labels: tuple | None = None
    intention: str | None = None
    sample_rate_hz: float = 1.0

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise InvalidArgumentError(f"sequence {self.id!r}: features must be (frames, width)")
        if self.labels is not None:
            self.labels = tuple(self.labels)
            if len(self.labels) != len(self.features):
                raise InvalidArgumentError(f"sequence {self.id!r}: one label per frame required")

    def __len__(self) -> int:
        return len(self.features)

    @property
    def width(self) -> int:
        return self.features.shape[1]


@dataclass
class Dataset:
    sequences: list[FeatureSequence]
    vocabulary: ActionVocabulary
    columns: tuple[str, ...]
    intentions: ActionVocabulary | None = None
    groups: dict[str, tuple[int, ...]] = field(default_factory=dict)
    sample_rate_hz: float = 1.0

    def __post_init__(self):
        self.columns = tuple(self.columns)
        if self.intentions is None:
            self.intentions = self.vocabulary
        self.groups = {k: tuple(int(i) for i in v) for k, v in self.groups.items()}
        self.validate()

    def validate(self):
        width = len(self.columns)
        for name, cols in self.groups.items():
            if any(not 0 <= c < width for c in cols):
                raise SchemaError(f"group {name!r} references a column outside 0..{width - 1}")
        seen = set()
        for seq in self.sequences:
            if seq.id in seen:
                raise SchemaError("duplicate sequence id", sequence_id=seq.id)
            seen.add(seq.id)
            if seq.width != width:
                raise SchemaError(f"feature width {seq.width}, expected {width}", sequence_id=seq.id)
            if seq.labels is not None:
                for t, lab in enumerate(seq.labels):
                    if lab is not None and lab not in self.vocabulary:
                        raise UnknownLabelError(f"unknown label {lab!r}", sequence_id=seq.id, frame_index=t)
            if seq.intention is not None and seq.intention not in self.intentions:
                raise UnknownLabelError(f"unknown intention {seq.intention!r}", sequence_id=seq.id)

    def __len__(self) -> int:
        return len(self.sequences)

    @property
    def width(self) -> int:
        return len(self.columns)

    def group(self, *names: str) -> FeatureGroup:
        """Union of named column groups, in column order."""
        cols = set()
        for n in names:
            if n not in self.groups:
                raise InvalidArgumentError(f"unknown feature group {n!r}; have {sorted(self.groups)}")
            cols.update(self.groups[n])
        return FeatureGroup("+".join(names), tuple(sorted(cols)))

    def subset(self, indices: Sequence[int]) -> "Dataset":
        return Dataset([self.sequences[i] for i in indices], self.vocabulary, self.columns,
                       self.intentions, dict(self.groups), self.sample_rate_hz)

    def select_columns(self, columns: Sequence[int]) -> "Dataset":
        columns = [int(c) for c in columns]
        if not columns:
            raise InvalidArgumentError("column selection is empty")
        remap = {c: i for i, c in enumerate(columns)}
        groups = {}
        for name, cols in self.groups.items():
            kept = tuple(remap[c] for c in cols if c in remap)
            if kept:
                groups[name] = kept
        seqs = [
            FeatureSequence(s.id, s.features[:, columns], s.labels, s.intention, s.sample_rate_hz)
            for s in self.sequences
        ]
        return Dataset(seqs, self.vocabulary, [self.columns[c] for c in columns],
                       self.intentions, groups, self.sample_rate_hz)


def split_indices(n: int, fraction: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Seeded (train, held-out) split; the held-out side gets ``round(n*fraction)``, at least 1."""
    if n < 2:
        raise InvalidArgumentError("need at least 2 sequences to split")
    perm = rng.permutation(n)
    n_out = min(n - 1, max(1, int(round(n * fraction))))
    return np.sort(perm[n_out:]), np.sort(perm[:n_out])


# -- on-disk format ---------------------------------------------------------

def _format_float(x) -> str:
    return repr(float(x))


def _atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_dataset(dataset: Dataset, path) -> Path:
    path = Path(path)
    header = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "vocabulary": list(dataset.vocabulary.symbols),
        "intentions": list(dataset.intentions.symbols),
        "columns": list(dataset.columns),
        "groups": {k: [dataset.columns[i] for i in v] for k, v in dataset.groups.items()},
        "sample_rate_hz": dataset.sample_rate_hz,
    }
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sequence_id", "frame_index", *dataset.columns, "label", "intention"])
    for seq in dataset.sequences:
        for t, row in enumerate(seq.features):
            label = "" if seq.labels is None or seq.labels[t] is None else seq.labels[t]
            w.writerow([seq.id, t, *map(_format_float, row), label, seq.intention or ""])
    _atomic_write(path / HEADER_NAME, json.dumps(header, indent=2) + "\n")
    _atomic_write(path / FRAMES_NAME, buf.getvalue())
    return path


def _read_header(path: Path) -> dict:
    try:
        header = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(f"{path.name} is not valid JSON: {exc}") from None
    if not isinstance(header, dict):
        raise SchemaError(f"{path.name} must hold a JSON object")
    if header.get("format") != DATASET_FORMAT:
        raise SchemaError(f"{path.name}: format must be {DATASET_FORMAT!r}")
    if header.get("version") != DATASET_VERSION:
        raise SchemaError(f"{path.name}: unsupported version {header.get('version')!r}")
    for key in ("vocabulary", "columns"):
        val = header.get(key)
        if not isinstance(val, list) or not all(isinstance(v, str) for v in val):
            raise SchemaError(f"{path.name}: {key!r} must be a list of strings")
    intents = header.get("intentions", header["vocabulary"])
    if not isinstance(intents, list) or not all(isinstance(v, str) for v in intents):
        raise SchemaError(f"{path.name}: 'intentions' must be a list of strings")
    groups = header.get("groups", {})
    if not isinstance(groups, dict) or not all(
        isinstance(v, list) and all(isinstance(c, str) for c in v) for v in groups.values()
    ):
        raise SchemaError(f"{path.name}: 'groups' must map names to lists of column names")
    rate = header.get("sample_rate_hz", 1.0)
    if isinstance(rate, bool) or not isinstance(rate, (int, float)) or not rate > 0:
        raise SchemaError(f"{path.name}: 'sample_rate_hz' must be a positive number")
    if len(set(header["columns"])) != len(header["columns"]) or not header["columns"]:
        raise SchemaError(f"{path.name}: 'columns' must be non-empty and unique")
    return header


def load_dataset(path) -> Dataset:
    """Load and validate a dataset directory; errors carry line/sequence/frame context."""
    path = Path(path)
    header = _read_header(path / HEADER_NAME)
    try:
        vocab = ActionVocabulary(header["vocabulary"])
        intents = ActionVocabulary(header.get("intentions", header["vocabulary"]))
    except InvalidArgumentError as exc:
        raise SchemaError(f"{HEADER_NAME}: {exc}") from None
    columns = header["columns"]
    col_index = {c: i for i, c in enumerate(columns)}
    groups = {}
    for name, cols in header.get("groups", {}).items():
        missing = [c for c in cols if c not in col_index]
        if missing:
            raise SchemaError(f"{HEADER_NAME}: group {name!r} names unknown columns {missing}")
        groups[name] = tuple(col_index[c] for c in cols)
    rate = float(header.get("sample_rate_hz", 1.0))

    expected = ["sequence_id", "frame_index", *columns, "label", "intention"]
    n_fields = len(expected)
    sequences: list[FeatureSequence] = []
    cur_id, cur_rows, cur_labels, cur_intent = None, [], [], None
    seen_ids = set()

    def flush():
        if cur_id is not None:
            sequences.append(FeatureSequence(cur_id, np.array(cur_rows, dtype=np.float64).reshape(-1, len(columns)),
                                             tuple(cur_labels), cur_intent, rate))

    try:
        text = (path / FRAMES_NAME).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"{FRAMES_NAME} is not UTF-8: {exc}") from None
    reader = csv.reader(io.StringIO(text, newline=""), strict=True)
    try:
        for row in reader:
            line = reader.line_num
            if line == 1:
                if row != expected:
                    raise SchemaError(f"{FRAMES_NAME} header must be {expected}", line=1)
                continue
            if not row:
                raise ParseError("empty row", line=line)
            if len(row) < 2:
                raise ParseError(f"expected {n_fields} fields, got {len(row)}", line=line)
            seq_id = row[0]
            if not seq_id:
                raise ParseError("empty sequence_id", line=line)
            try:
                frame = int(row[1])
            except ValueError:
                raise ParseError(f"frame_index {row[1]!r} is not an integer", line=line) from None
            if len(row) != n_fields:
                raise SchemaError(f"row has {len(row)} fields, expected {n_fields}",
                                  sequence_id=seq_id, frame_index=frame, line=line)
            if seq_id != cur_id:
                if seq_id in seen_ids:
                    raise SchemaError("rows of a sequence must be contiguous", sequence_id=seq_id,
                                      frame_index=frame, line=line)
                flush()
                seen_ids.add(seq_id)
                cur_id, cur_rows, cur_labels, cur_intent = seq_id, [], [], (row[-1] or None)
                if cur_intent is not None and cur_intent not in intents:
                    raise UnknownLabelError(f"unknown intention {cur_intent!r}", sequence_id=seq_id,
                                            frame_index=frame, line=line)
            if frame != len(cur_rows):
                raise SchemaError(f"frame_index {frame}, expected {len(cur_rows)}", sequence_id=seq_id,
                                  frame_index=frame, line=line)
            if (row[-1] or None) != cur_intent:
                raise SchemaError("intention changes within a sequence", sequence_id=seq_id,
                                  frame_index=frame, line=line)
            try:
                values = [float(v) for v in row[2:-2]]
            except ValueError as exc:
                raise ParseError(f"non-numeric feature: {exc}", line=line) from None
            if not all(np.isfinite(values)):
                raise ParseError("non-finite feature value", line=line)
            label = row[-2] or None
            if label is not None and label not in vocab:
                raise UnknownLabelError(f"unknown label {label!r}", sequence_id=seq_id,
                                        frame_index=frame, line=line)
            cur_rows.append(values)
            cur_labels.append(label)
    except csv.Error as exc:
        raise ParseError(f"malformed CSV: {exc}", line=reader.line_num) from None
    if reader.line_num == 0:
        raise SchemaError(f"{FRAMES_NAME} is empty")
    flush()
    for seq in sequences:
        if seq.labels is not None and all(lab is None for lab in seq.labels):
            seq.labels = None
    return Dataset(sequences, vocab, columns, intents, groups, rate)


# -- synthetic data ---------------------------------------------------------

def cyclic_grammar(size: int) -> np.ndarray:
    """Deterministic grammar: action i is always followed by i+1 (mod size)."""
    return np.roll(np.eye(size), 1, axis=1)


def noisy_grammar(size: int, determinism: float, rng: np.random.Generator) -> np.ndarray:
    """Each action has one preferred successor with probability ``determinism``;
    the remaining mass is spread by a random Dirichlet draw."""
    succ = rng.permutation(size)
    rest = rng.dirichlet(np.ones(size), size=size) * (1.0 - determinism)
    table = rest
    table[np.arange(size), succ] += determinism
    return table / table.sum(axis=1, keepdims=True)


@dataclass
class SyntheticSpec:
    """Recipe for a synthetic dataset.

    Action columns carry the current frame's action. Early intention columns
    carry the sequence intention from frame 0; late intention columns only
    from ``onset_fraction`` of the sequence length onward (zero mean before).
    Noise columns carry nothing.
    """

    vocab_size: int = 11
    transitions: np.ndarray | None = None
    initial: np.ndarray | None = None
    emission_means: np.ndarray | None = None
    action_columns: int = 4
    action_separation: float = 2.0
    noise: float = 0.5
    n_intentions: int | None = None
    early_columns: int = 2
    late_columns: int = 2
    noise_columns: int = 0
    intention_separation: float = 2.0
    onset_fraction: float = 0.5
    n_sequences: int = 40
    min_length: int = 15
    max_length: int = 35
    sample_rate_hz: float = 5.0
    seed: int = 0

    def to_dict(self) -> dict:
        out = {}
        for k, v in self.__dict__.items():
            out[k] = v.tolist() if isinstance(v, np.ndarray) else v
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidArgumentError(f"unknown synthetic spec keys: {sorted(unknown)}")
        d = dict(d)
        for k in ("transitions", "initial", "emission_means"):
            if d.get(k) is not None:
                d[k] = np.asarray(d[k], dtype=np.float64)
        return cls(**d)


def _check_distribution_rows(name, table, size):
    table = np.asarray(table, dtype=np.float64)
    if table.shape[-1] != size or not np.all(np.isfinite(table)) or np.any(table < 0):
        raise InvalidArgumentError(f"{name} must hold non-negative rows of length {size}")
    if not np.allclose(table.sum(axis=-1), 1.0, atol=1e-9):
        raise InvalidArgumentError(f"{name} rows must sum to 1")
    return table


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    V = spec.vocab_size
    if V < 2:
        raise InvalidArgumentError("vocab_size must be at least 2")
    rng = np.random.default_rng(spec.seed)
    trans = (noisy_grammar(V, 0.8, rng) if spec.transitions is None else spec.transitions)
    trans = _check_distribution_rows("transitions", trans, V)
    if trans.shape != (V, V):
        raise InvalidArgumentError(f"transitions must be {V}x{V}")
    init = np.full(V, 1.0 / V) if spec.initial is None else _check_distribution_rows("initial", spec.initial, V)
    n_int = V if spec.n_intentions is None else spec.n_intentions
    if not 2 <= n_int <= V:
        raise InvalidArgumentError(f"n_intentions must lie in 2..{V}")
    if not 1 <= spec.min_length <= spec.max_length:
        raise InvalidArgumentError("need 1 <= min_length <= max_length")
    if not 0.0 <= spec.onset_fraction <= 1.0:
        raise InvalidArgumentError("onset_fraction must lie in [0, 1]")
    if spec.noise < 0:
        raise InvalidArgumentError("noise must be non-negative")

    A, E, L, Z = spec.action_columns, spec.early_columns, spec.late_columns, spec.noise_columns
    if A + E + L + Z == 0:
        raise InvalidArgumentError("synthetic spec has no feature columns")
    if spec.emission_means is None:
        means = rng.normal(0.0, 1.0, size=(V, A)) * spec.action_separation
    else:
        means = np.asarray(spec.emission_means, dtype=np.float64)
        if means.shape != (V, A):
            raise InvalidArgumentError(f"emission_means must be {V}x{A}")
    codes = rng.normal(0.0, 1.0, size=(n_int, max(E, L))) * spec.intention_separation

    vocab = ActionVocabulary.numbered(V)
    intents = ActionVocabulary(vocab.symbols[:n_int])
    columns = ([f"act_{i}" for i in range(A)] + [f"early_{i}" for i in range(E)]
               + [f"late_{i}" for i in range(L)] + [f"noise_{i}" for i in range(Z)])
    groups, start = {}, 0
    for name, n in (("action", A), ("early", E), ("late", L), ("noise", Z)):
        if n:
            groups[name] = tuple(range(start, start + n))
        start += n

    sequences = []
    width = len(columns)
    for s in range(spec.n_sequences):
        T = int(rng.integers(spec.min_length, spec.max_length + 1))
        actions = np.empty(T, dtype=np.intp)
        actions[0] = rng.choice(V, p=init)
        for t in range(1, T):
            actions[t] = rng.choice(V, p=trans[actions[t - 1]])
        intent = int(rng.integers(n_int))
        onset = int(np.ceil(spec.onset_fraction * T))
        mean = np.zeros((T, width))
        mean[:, :A] = means[actions]
        mean[:, A:A + E] = codes[intent, :E]
        mean[onset:, A + E:A + E + L] = codes[intent, :L]
        feats = mean + rng.normal(0.0, 1.0, size=(T, width)) * spec.noise
        sequences.append(FeatureSequence(f"seq{s:04d}", feats, tuple(vocab.decode(actions)),
                                         intents.symbol(intent), spec.sample_rate_hz))
    return Dataset(sequences, vocab, columns, intents, groups, spec.sample_rate_hz)
