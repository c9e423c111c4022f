"""Exhaustive, greedy and beam-search expansion of a context vector.

All bookkeeping is in log space. Ties at a pruning boundary go to the
lexicographically smaller action sequence, so results are platform stable.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import InvalidArgumentError, ResourceLimitError
from .models import PredictionModel, decode_logprobs
from .nn import LstmState
from .vocabulary import ActionVocabulary

EXHAUSTIVE_CAP = 10**6


@dataclass(frozen=True)
class Beam:
    actions: tuple[int, ...]
    log_prob: float
    state: LstmState | None = None

    @property
    def prob(self) -> float:
        return math.exp(self.log_prob)

    def __len__(self) -> int:
        return len(self.actions)


@dataclass(frozen=True)
class BeamSet:
    beams: tuple[Beam, ...]
    width: int
    horizon: int
    vocabulary: ActionVocabulary | None = None

    def __iter__(self) -> Iterator[Beam]:
        return iter(self.beams)

    def __len__(self) -> int:
        return len(self.beams)

    def __getitem__(self, i) -> Beam:
        return self.beams[i]

    @property
    def sequences(self) -> list[tuple[int, ...]]:
        return [b.actions for b in self.beams]

    @property
    def log_probs(self) -> np.ndarray:
        return np.array([b.log_prob for b in self.beams])


def _ranked(actions: np.ndarray, scores: np.ndarray) -> np.ndarray:
    """Row order: score descending, then action sequence ascending."""
    keys = [actions[:, j] for j in range(actions.shape[1] - 1, -1, -1)] + [-scores]
    return np.lexsort(keys)


def _check_ctx(model: PredictionModel, ctx: LstmState):
    h, c = ctx
    if np.shape(h) != (model.hidden_dim,) or np.shape(c) != (model.hidden_dim,):
        raise InvalidArgumentError(f"context must be two vectors of width {model.hidden_dim}")


def beam_decode(model: PredictionModel, ctx: LstmState, horizon: int, width: int) -> BeamSet:
    """Keep the ``width`` best prefixes, expanding each by every action per step."""
    if horizon < 1 or width < 1:
        raise InvalidArgumentError("horizon and width must be >= 1")
    _check_ctx(model, ctx)
    V = model.vocab_size
    actions = np.zeros((1, 0), dtype=np.intp)
    scores = np.zeros(1)
    state = LstmState(np.asarray(ctx.hidden)[None], np.asarray(ctx.cell)[None])
    prev = np.array([model.start_token])
    for _ in range(horizon):
        logp, state = decode_logprobs(model, prev, state)
        n = len(scores)
        cand_scores = (scores[:, None] + logp).ravel()
        parent = np.repeat(np.arange(n), V)
        cand_actions = np.hstack([actions[parent], np.tile(np.arange(V), n)[:, None]])
        keep = _ranked(cand_actions, cand_scores)[:width]
        actions, scores = cand_actions[keep], cand_scores[keep]
        state = LstmState(state.hidden[parent[keep]], state.cell[parent[keep]])
        prev = actions[:, -1]
    assert len({tuple(a) for a in actions}) == len(actions)
    beams = tuple(
        Beam(tuple(int(a) for a in actions[k]), float(scores[k]), LstmState(state.hidden[k], state.cell[k]))
        for k in range(len(scores))
    )
    return BeamSet(beams, width, horizon, model.vocabulary)


def greedy_decode(model: PredictionModel, ctx: LstmState, horizon: int) -> Beam:
    return beam_decode(model, ctx, horizon, 1)[0]


def exhaustive_decode(model: PredictionModel, ctx: LstmState, horizon: int,
                      cap: int = EXHAUSTIVE_CAP) -> BeamSet:
    """Every one of the V**N sequences, ranked like :func:`beam_decode`."""
    if horizon < 1:
        raise InvalidArgumentError("horizon must be >= 1")
    V = model.vocab_size
    total = V ** horizon
    if total > cap:
        raise ResourceLimitError(
            f"exhaustive decoding of V={V}, N={horizon} needs {total} sequences, above the cap of {cap}")
    return beam_decode(model, ctx, horizon, total)


def greedy_decode_batch(model: PredictionModel, ctx: LstmState, horizon: int) -> np.ndarray:
    """Argmax decoding for a batch of contexts (B, H); returns (B, horizon) actions."""
    B = ctx.hidden.shape[0]
    prev = np.full(B, model.start_token)
    state, out = ctx, np.empty((B, horizon), dtype=np.intp)
    for t in range(horizon):
        logp, state = decode_logprobs(model, prev, state)
        # argmax returns the first maximum, i.e. the smaller index on ties
        prev = np.argmax(logp, axis=1)
        out[:, t] = prev
    return out


def cumulative_probability(beams: BeamSet) -> float:
    return math.fsum(math.exp(b.log_prob) for b in beams)


def sequence_log_prob(model: PredictionModel, ctx: LstmState, actions) -> float:
    """Replay ``actions`` through the decoder and sum the chosen log-probabilities."""
    state = LstmState(np.asarray(ctx.hidden)[None], np.asarray(ctx.cell)[None])
    prev, total = model.start_token, 0.0
    for a in actions:
        logp, state = decode_logprobs(model, [prev], state)
        total += float(logp[0, a])
        prev = int(a)
    return total


def beams_to_csv(beams: BeamSet) -> str:
    """Beam dump: rank, log_prob, prob, action_1..action_N (vocabulary symbols)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["rank", "log_prob", "prob", *(f"action_{i + 1}" for i in range(beams.horizon))])
    for rank, b in enumerate(beams, start=1):
        names = beams.vocabulary.decode(b.actions) if beams.vocabulary is not None else list(b.actions)
        w.writerow([rank, repr(b.log_prob), repr(b.prob), *names])
    return buf.getvalue()
