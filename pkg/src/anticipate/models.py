"""Intention-recognition and encoder-decoder action-prediction models.

Recognition: features -> affine embedding -> dropout -> LSTM -> affine ->
softmax at every frame.

Prediction: the encoder runs the same embedding + LSTM stack over an
observation window; its final (hidden, cell) state is the context that
seeds the decoder LSTM. The decoder consumes a learned action embedding of
the previous action (index ``V`` is a start token that is never emitted) and
projects its hidden state to a distribution over the ``V`` actions.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .data import Dataset, FeatureSequence
from .errors import InvalidArgumentError
from .nn import (AdamState, LstmState, Params, Tape, _lstm_forward, adam_step,
                 init_uniform, log_softmax)
from .seeding import derive_rng
from .vocabulary import ActionVocabulary


@dataclass(frozen=True)
class TrainingConfig:
    iterations: int = 500
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 32  # 0 means full batch
    dropout: float = 0.1
    seed: int = 0
    horizon: int = 1
    window: int = 3
    hidden_dim: int = 20
    embed_dim: int = 50
    zero_projection: bool = False

    def __post_init__(self):
        for name in ("iterations", "horizon", "window", "hidden_dim", "embed_dim"):
            if int(getattr(self, name)) < 1:
                raise InvalidArgumentError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.batch_size < 0:
            raise InvalidArgumentError("batch_size must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidArgumentError(f"dropout {self.dropout} outside [0, 1)")
        if not self.learning_rate > 0:
            raise InvalidArgumentError("learning_rate must be positive")

    @property
    def context_dim(self) -> int:
        # the context vector is the encoder state, so it is the hidden width
        return self.hidden_dim

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidArgumentError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **changes) -> "TrainingConfig":
        return TrainingConfig(**{**self.to_dict(), **changes})


@dataclass
class RecognitionModel:
    params: Params
    intentions: ActionVocabulary
    feature_dim: int
    hidden_dim: int = 20
    embed_dim: int = 50
    dropout: float = 0.0
    seed: int = 0
    config: TrainingConfig | None = None

    kind = "recognition"

    @property
    def n_classes(self) -> int:
        return len(self.intentions)


@dataclass
class PredictionModel:
    params: Params
    vocabulary: ActionVocabulary
    feature_dim: int
    hidden_dim: int = 20
    embed_dim: int = 50
    dropout: float = 0.0
    seed: int = 0
    config: TrainingConfig | None = None

    kind = "prediction"

    @property
    def vocab_size(self) -> int:
        return len(self.vocabulary)

    @property
    def start_token(self) -> int:
        return len(self.vocabulary)


def recognition_layout(feature_dim, hidden_dim, embed_dim, n_classes):
    D, H, E, C = feature_dim, hidden_dim, embed_dim, n_classes
    return [
        ("embed.W", (D, E), D), ("embed.b", (E,), D),
        ("lstm.W", (E + H, 4 * H), E + H), ("lstm.b", (4 * H,), E + H),
        ("proj.W", (H, C), H), ("proj.b", (C,), H),
    ]


def prediction_layout(feature_dim, hidden_dim, embed_dim, vocab_size):
    D, H, E, V = feature_dim, hidden_dim, embed_dim, vocab_size
    return [
        ("enc.embed.W", (D, E), D), ("enc.embed.b", (E,), D),
        ("enc.lstm.W", (E + H, 4 * H), E + H), ("enc.lstm.b", (4 * H,), E + H),
        # one row per action plus the start token; a lookup has fan-in 1
        ("dec.embed", (V + 1, E), 1),
        ("dec.lstm.W", (E + H, 4 * H), E + H), ("dec.lstm.b", (4 * H,), E + H),
        ("proj.W", (H, V), H), ("proj.b", (V,), H),
    ]


def init_recognition(feature_dim: int, intentions: ActionVocabulary, config: TrainingConfig) -> RecognitionModel:
    layout = recognition_layout(feature_dim, config.hidden_dim, config.embed_dim, len(intentions))
    zero = ("proj.W", "proj.b") if config.zero_projection else ()
    params = init_uniform(layout, derive_rng(config.seed, "init", "recognition"), zero)
    return RecognitionModel(params, intentions, feature_dim, config.hidden_dim, config.embed_dim,
                            config.dropout, config.seed, config)


def init_prediction(feature_dim: int, vocabulary: ActionVocabulary, config: TrainingConfig) -> PredictionModel:
    layout = prediction_layout(feature_dim, config.hidden_dim, config.embed_dim, len(vocabulary))
    zero = ("proj.W", "proj.b") if config.zero_projection else ()
    params = init_uniform(layout, derive_rng(config.seed, "init", "prediction"), zero)
    return PredictionModel(params, vocabulary, feature_dim, config.hidden_dim, config.embed_dim,
                           config.dropout, config.seed, config)


# -- forward passes (tape-based, batched) ------------------------------------

def _features(seq) -> np.ndarray:
    return seq.features if isinstance(seq, FeatureSequence) else np.asarray(seq, dtype=np.float64)


def _recognition_logits(tape: Tape, X, rate, rng, training):
    """X: (T, B, D) -> list of T logit nodes (B, C)."""
    We, be = tape.param("embed.W"), tape.param("embed.b")
    Wl, bl = tape.param("lstm.W"), tape.param("lstm.b")
    Wp, bp = tape.param("proj.W"), tape.param("proj.b")
    B = X.shape[1]
    H = bl.value.shape[0] // 4
    h = c = tape.constant(np.zeros((B, H)))
    out = []
    for t in range(X.shape[0]):
        e = tape.affine(tape.constant(X[t]), We, be)
        e = tape.dropout(e, rate, rng, training)
        h, c = tape.lstm(e, h, c, Wl, bl)
        out.append(tape.affine(h, Wp, bp))
    return out


def _encode_nodes(tape: Tape, X, rate, rng, training):
    """X: (W, B, D) -> final (h, c) nodes."""
    We, be = tape.param("enc.embed.W"), tape.param("enc.embed.b")
    Wl, bl = tape.param("enc.lstm.W"), tape.param("enc.lstm.b")
    B = X.shape[1]
    H = bl.value.shape[0] // 4
    h = c = tape.constant(np.zeros((B, H)))
    for t in range(X.shape[0]):
        e = tape.affine(tape.constant(X[t]), We, be)
        e = tape.dropout(e, rate, rng, training)
        h, c = tape.lstm(e, h, c, Wl, bl)
    return h, c


def _decoder_logits(tape: Tape, h, c, inputs):
    """inputs: (N, B) previous-action indices (teacher forcing)."""
    Emb = tape.param("dec.embed")
    Wl, bl = tape.param("dec.lstm.W"), tape.param("dec.lstm.b")
    Wp, bp = tape.param("proj.W"), tape.param("proj.b")
    out = []
    for t in range(inputs.shape[0]):
        e = tape.lookup(Emb, inputs[t])
        h, c = tape.lstm(e, h, c, Wl, bl)
        out.append(tape.affine(h, Wp, bp))
    return out


# -- recognition -------------------------------------------------------------

def recognize(model: RecognitionModel, seq) -> np.ndarray:
    """Per-frame intention distributions, shape (frames, n_classes)."""
    X = _features(seq)
    if X.ndim != 2 or X.shape[1] != model.feature_dim:
        raise InvalidArgumentError(
            f"feature width {X.shape[-1] if X.ndim else None} does not match model width {model.feature_dim}")
    if len(X) == 0:
        raise InvalidArgumentError("sequence has no frames")
    tape = Tape(model.params, record=False)
    logits = _recognition_logits(tape, X[:, None, :], 0.0, None, False)
    return np.exp(log_softmax(np.stack([z.value[0] for z in logits])))


class PaddedBatch(NamedTuple):
    X: np.ndarray       # (T, B, D)
    targets: np.ndarray  # (T, B)
    mask: np.ndarray    # (T, B)


def pad_recognition_batch(seqs: Sequence[FeatureSequence], intentions: ActionVocabulary) -> PaddedBatch:
    T = max(len(s) for s in seqs)
    D = seqs[0].width
    X = np.zeros((T, len(seqs), D))
    targets = np.zeros((T, len(seqs)), dtype=np.intp)
    mask = np.zeros((T, len(seqs)))
    for b, s in enumerate(seqs):
        X[:len(s), b] = s.features
        targets[:, b] = intentions.index(s.intention)
        mask[:len(s), b] = 1.0
    return PaddedBatch(X, targets, mask)


def recognition_loss_node(tape: Tape, batch: PaddedBatch, rate=0.0, rng=None, training=False):
    """Mean cross-entropy per valid frame."""
    logits = _recognition_logits(tape, batch.X, rate, rng, training)
    terms = [tape.softmax_xent(z, batch.targets[t], batch.mask[t]) for t, z in enumerate(logits)]
    return tape.scale(tape.add(*terms), 1.0 / batch.mask.sum())


def recognition_loss(model: RecognitionModel, seqs: Sequence[FeatureSequence]) -> float:
    batch = pad_recognition_batch(seqs, model.intentions)
    return float(recognition_loss_node(Tape(model.params, record=False), batch).value)


# -- prediction --------------------------------------------------------------

class Windows(NamedTuple):
    """Stacked (observation, future) training or evaluation pairs."""
    observed: np.ndarray  # (W, P, D)
    future: np.ndarray    # (N, P) action indices
    origin: list          # (sequence id, start frame) per pair

    def __len__(self):
        return self.future.shape[1]

    def take(self, idx) -> "Windows":
        idx = np.asarray(idx, dtype=np.intp)
        return Windows(self.observed[:, idx], self.future[:, idx], [self.origin[i] for i in idx])


def make_windows(dataset: Dataset, window: int, horizon: int, stride: int = 1) -> Windows:
    """All (window frames, next ``horizon`` labels) pairs; short or unlabeled sequences are skipped."""
    obs, fut, origin = [], [], []
    for seq in dataset.sequences:
        if seq.labels is None or len(seq) < window + horizon:
            continue
        for start in range(0, len(seq) - window - horizon + 1, stride):
            labels = seq.labels[start + window:start + window + horizon]
            if any(lab is None for lab in labels):
                continue
            obs.append(seq.features[start:start + window])
            fut.append(dataset.vocabulary.encode(labels))
            origin.append((seq.id, start))
    if not obs:
        raise InvalidArgumentError(
            f"no sequence provides {window} observed + {horizon} labeled future frames")
    return Windows(np.stack(obs, axis=1), np.array(fut, dtype=np.intp).T, origin)


def encode(model: PredictionModel, observed) -> LstmState:
    X = _features(observed)
    if X.ndim != 2 or len(X) == 0:
        raise InvalidArgumentError("observation must be a non-empty (frames, width) array")
    if X.shape[1] != model.feature_dim:
        raise InvalidArgumentError(f"feature width {X.shape[1]} does not match model width {model.feature_dim}")
    h, c = _encode_nodes(Tape(model.params, record=False), X[:, None, :], 0.0, None, False)
    return LstmState(h.value[0], c.value[0])


def encode_batch(model: PredictionModel, observed: np.ndarray) -> LstmState:
    """observed: (W, B, D) -> batched state (B, H)."""
    h, c = _encode_nodes(Tape(model.params, record=False), observed, 0.0, None, False)
    return LstmState(h.value, c.value)


def decode_logprobs(model: PredictionModel, prev_actions, state: LstmState) -> tuple[np.ndarray, LstmState]:
    """Batched decoder step: (B,) actions, (B, H) state -> (B, V) log-probs and new state."""
    p = model.params
    prev_actions = np.asarray(prev_actions, dtype=np.intp)
    if np.any(prev_actions < 0) or np.any(prev_actions > model.start_token):
        raise InvalidArgumentError(f"action index outside 0..{model.vocab_size} (start token {model.start_token})")
    e = p["dec.embed"][prev_actions]
    h, c, _ = _lstm_forward(e, state.hidden, state.cell, p["dec.lstm.W"], p["dec.lstm.b"])
    logits = h @ p["proj.W"] + p["proj.b"]
    return log_softmax(logits), LstmState(h, c)


def decode_step(model: PredictionModel, prev_action: int, state: LstmState) -> tuple[np.ndarray, LstmState]:
    """One decoder step from a single state; ``prev_action`` may be the start token."""
    if not isinstance(prev_action, (int, np.integer)) or not 0 <= prev_action <= model.start_token:
        raise InvalidArgumentError(
            f"action index {prev_action!r} outside 0..{model.vocab_size - 1} (start token {model.start_token})")
    h, c = state
    if h.shape != (model.hidden_dim,) or c.shape != (model.hidden_dim,):
        raise InvalidArgumentError(f"state must have shape ({model.hidden_dim},)")
    logp, new = decode_logprobs(model, [prev_action], LstmState(h[None], c[None]))
    return np.exp(logp[0]), LstmState(new.hidden[0], new.cell[0])


def sample_sequence(model: PredictionModel, ctx: LstmState, length: int,
                    rng: np.random.Generator) -> tuple[list[int], float]:
    """Ancestral sampling; returns the actions and their total log-probability."""
    if length < 1:
        raise InvalidArgumentError("length must be >= 1")
    prev, state = model.start_token, ctx
    actions, logp = [], 0.0
    for _ in range(length):
        probs, state = decode_step(model, prev, state)
        a = int(np.searchsorted(np.cumsum(probs), rng.random(), side="right"))
        a = min(a, len(probs) - 1)
        while probs[a] == 0.0:  # cumsum rounding can land on a zero-mass slot
            a -= 1
        actions.append(a)
        logp += math.log(probs[a])
        prev = a
    return actions, logp


def teacher_inputs(future: np.ndarray, start_token: int) -> np.ndarray:
    return np.vstack([np.full((1, future.shape[1]), start_token, dtype=np.intp), future[:-1]])


def prediction_loss_node(tape: Tape, windows: Windows, start_token: int, rate=0.0, rng=None, training=False):
    """Sequential cross-entropy summed over steps, averaged over pairs."""
    h, c = _encode_nodes(tape, windows.observed, rate, rng, training)
    logits = _decoder_logits(tape, h, c, teacher_inputs(windows.future, start_token))
    terms = [tape.softmax_xent(z, windows.future[t]) for t, z in enumerate(logits)]
    return tape.scale(tape.add(*terms), 1.0 / len(windows))


def prediction_loss(model: PredictionModel, windows: Windows) -> float:
    tape = Tape(model.params, record=False)
    return float(prediction_loss_node(tape, windows, model.start_token).value)


# -- training ----------------------------------------------------------------

def _fit(params: Params, n_items: int, config: TrainingConfig, loss_fn, stream: str,
         callback: Callable[[int, Params], None] | None = None) -> tuple[Params, np.ndarray]:
    """Adam over shuffled minibatches. ``loss_fn(tape, idx, rng)`` builds the loss node."""
    rng = derive_rng(config.seed, "train", stream)
    opt = AdamState.fresh(params, config.learning_rate, config.beta1, config.beta2, config.epsilon)
    bs = n_items if config.batch_size in (0, None) else min(config.batch_size, n_items)
    order, pos = rng.permutation(n_items), 0
    curve = np.empty(config.iterations)
    for it in range(config.iterations):
        if pos + bs > n_items:
            order, pos = rng.permutation(n_items), 0
        idx = np.sort(order[pos:pos + bs])
        pos += bs
        tape = Tape(params)
        loss = loss_fn(tape, idx, rng)
        grads = tape.backward(loss)
        curve[it] = float(loss.value)
        params, opt = adam_step(params, grads, opt)
        if callback is not None:
            callback(it + 1, params)
    return params, curve


def train_recognition(dataset: Dataset, config: TrainingConfig,
                      callback=None) -> tuple[RecognitionModel, np.ndarray]:
    """Fit the recognition model; each sequence's intention is the target at every frame."""
    seqs = [s for s in dataset.sequences if s.intention is not None and len(s) > 0]
    if not seqs:
        raise InvalidArgumentError("no sequences with an intention label")
    model = init_recognition(dataset.width, dataset.intentions, config)
    full = pad_recognition_batch(seqs, dataset.intentions)

    def loss_fn(tape, idx, rng):
        T = int(full.mask[:, idx].sum(axis=0).max())
        batch = PaddedBatch(full.X[:T, idx], full.targets[:T, idx], full.mask[:T, idx])
        return recognition_loss_node(tape, batch, config.dropout, rng, training=True)

    params, curve = _fit(model.params, len(seqs), config, loss_fn, "recognition", callback)
    model.params = params
    return model, curve


def train_prediction(dataset: Dataset | Windows, config: TrainingConfig, vocabulary: ActionVocabulary | None = None,
                     callback=None) -> tuple[PredictionModel, np.ndarray]:
    """Fit the encoder-decoder with teacher forcing over ``config.horizon`` steps."""
    if isinstance(dataset, Windows):
        if vocabulary is None:
            raise InvalidArgumentError("training from windows needs the vocabulary")
        windows = dataset
    else:
        vocabulary = dataset.vocabulary
        windows = make_windows(dataset, config.window, config.horizon)
    if windows.future.shape[0] != config.horizon or windows.observed.shape[0] < 1:
        raise InvalidArgumentError("windows do not match the configured horizon")
    model = init_prediction(windows.observed.shape[2], vocabulary, config)

    def loss_fn(tape, idx, rng):
        return prediction_loss_node(tape, windows.take(idx), model.start_token, config.dropout, rng, training=True)

    params, curve = _fit(model.params, len(windows), config, loss_fn, "prediction", callback)
    model.params = params
    return model, curve
