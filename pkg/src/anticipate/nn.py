"""Differentiable numerics for the recognition and prediction models.

Everything is float64. The pure functions (``softmax``, ``lstm_step``, ...)
are the reference forward computations; :class:`Tape` records the same
operations and replays them in reverse to produce exact gradients for a
fixed operation set. There is no general autodiff here.

LSTM weights are stored stacked: ``W`` has shape ``(in + H, 4H)`` acting on
``concat(x, h)``, with gate columns ordered input, forget, candidate, output.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, NamedTuple

import numpy as np

from .errors import InvalidArgumentError

PROB_FLOOR = 1e-12
_LOG_FLOOR = float(np.log(PROB_FLOOR))


def sigmoid(x):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _check_finite(name, a):
    a = np.asarray(a, dtype=np.float64)
    if a.size == 0:
        raise InvalidArgumentError(f"{name} is empty")
    if not np.all(np.isfinite(a)):
        raise InvalidArgumentError(f"{name} contains non-finite values")
    return a


def log_softmax(logits):
    z = logits - np.max(logits, axis=-1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


def softmax(logits) -> np.ndarray:
    """Max-shifted softmax over the last axis."""
    z = _check_finite("logits", logits)
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def cross_entropy(reference, predicted) -> float:
    """``-sum(reference * log(predicted))`` in nats, predicted floored at 1e-12."""
    r = np.asarray(reference, dtype=np.float64)
    p = np.asarray(predicted, dtype=np.float64)
    if r.shape != p.shape or r.ndim != 1:
        raise InvalidArgumentError(f"distribution shapes differ: {r.shape} vs {p.shape}")
    return float(-np.sum(r * np.log(np.maximum(p, PROB_FLOOR))))


def sequential_cross_entropy(refs, preds) -> float:
    refs, preds = list(refs), list(preds)
    if not refs or len(refs) != len(preds):
        raise InvalidArgumentError(
            f"need equal-length non-empty step lists, got {len(refs)} and {len(preds)}"
        )
    return float(sum(cross_entropy(r, p) for r, p in zip(refs, preds)))


class LstmState(NamedTuple):
    hidden: np.ndarray
    cell: np.ndarray

    @classmethod
    def zeros(cls, hidden_dim: int, batch: int | None = None) -> "LstmState":
        shape = (hidden_dim,) if batch is None else (batch, hidden_dim)
        return cls(np.zeros(shape), np.zeros(shape))


def _lstm_forward(x, h, c, W, b):
    xh = np.concatenate([x, h], axis=-1)
    z = xh @ W + b
    H = h.shape[-1]
    i = sigmoid(z[..., :H])
    f = sigmoid(z[..., H:2 * H])
    g = np.tanh(z[..., 2 * H:3 * H])
    o = sigmoid(z[..., 3 * H:])
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    return h_new, c_new, (xh, i, f, g, o, c, tc)


def _lstm_backward(cache, W, dh, dc):
    xh, i, f, g, o, c_prev, tc = cache
    dc = dc + dh * o * (1.0 - tc * tc)
    dz = np.concatenate(
        [
            dc * g * i * (1.0 - i),
            dc * c_prev * f * (1.0 - f),
            dc * i * (1.0 - g * g),
            dh * tc * o * (1.0 - o),
        ],
        axis=-1,
    )
    dW = xh.T @ dz
    db = dz.sum(axis=0)
    dxh = dz @ W.T
    return dxh, dc * f, dW, db


def lstm_step(x, state: LstmState, W, b) -> LstmState:
    """One LSTM step. ``x`` may be ``(in,)`` or batched ``(B, in)``."""
    x = np.asarray(x, dtype=np.float64)
    h, c = state
    H = h.shape[-1]
    if c.shape != h.shape:
        raise InvalidArgumentError(f"hidden {h.shape} and cell {c.shape} differ")
    if W.shape != (x.shape[-1] + H, 4 * H) or b.shape != (4 * H,):
        raise InvalidArgumentError(
            f"LSTM weights {W.shape}/{b.shape} do not fit input {x.shape[-1]}, hidden {H}"
        )
    if x.shape[:-1] != h.shape[:-1]:
        raise InvalidArgumentError(f"input batch {x.shape} does not match state {h.shape}")
    h_new, c_new, _ = _lstm_forward(x, h, c, W, b)
    return LstmState(h_new, c_new)


def dropout(v, rate: float, rng: np.random.Generator | None, training: bool):
    """Inverted dropout; identity outside training."""
    if not 0.0 <= rate < 1.0:
        raise InvalidArgumentError(f"dropout rate {rate} outside [0, 1)")
    v = np.asarray(v, dtype=np.float64)
    if not training or rate == 0.0:
        return v
    return v * _dropout_mask(v.shape, rate, rng)


def _dropout_mask(shape, rate, rng):
    return (rng.random(shape) >= rate) / (1.0 - rate)


class Params:
    """Named parameter blocks with a stable flat ordering (insertion order)."""

    __slots__ = ("_blocks",)

    def __init__(self, blocks):
        self._blocks = {k: np.asarray(v, dtype=np.float64) for k, v in dict(blocks).items()}

    @property
    def names(self) -> list[str]:
        return list(self._blocks)

    @property
    def shapes(self) -> dict[str, tuple]:
        return {k: v.shape for k, v in self._blocks.items()}

    @property
    def size(self) -> int:
        return sum(v.size for v in self._blocks.values())

    def __getitem__(self, name) -> np.ndarray:
        return self._blocks[name]

    def __contains__(self, name) -> bool:
        return name in self._blocks

    def __iter__(self):
        return iter(self._blocks)

    def items(self):
        return self._blocks.items()

    def flat(self) -> np.ndarray:
        if not self._blocks:
            return np.zeros(0)
        return np.concatenate([v.ravel() for v in self._blocks.values()])

    def with_flat(self, vec) -> "Params":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.size,):
            raise InvalidArgumentError(f"flat vector has shape {vec.shape}, expected ({self.size},)")
        out, offset = {}, 0
        for k, v in self._blocks.items():
            out[k] = vec[offset:offset + v.size].reshape(v.shape).copy()
            offset += v.size
        return Params(out)

    def replace(self, **blocks) -> "Params":
        out = dict(self._blocks)
        for k, v in blocks.items():
            if k not in out:
                raise KeyError(k)
            out[k] = v
        return Params(out)

    def copy(self) -> "Params":
        return Params({k: v.copy() for k, v in self._blocks.items()})

    def zeros_like(self) -> "Params":
        return Params({k: np.zeros_like(v) for k, v in self._blocks.items()})

    def same_shape(self, other: "Params") -> bool:
        return self.shapes == other.shapes and self.names == other.names

    def equal(self, other: "Params") -> bool:
        """Bit-exact equality of names, shapes and values."""
        return self.same_shape(other) and all(
            np.array_equal(v, other[k]) for k, v in self._blocks.items()
        )

    def __repr__(self) -> str:
        inner = ", ".join(f"{k}{v.shape}" for k, v in self._blocks.items())
        return f"Params({inner})"


def init_uniform(layout: Iterable[tuple[str, tuple, int]], rng: np.random.Generator,
                 zero: Iterable[str] = ()) -> Params:
    """Draw each block from U[-1/sqrt(fan_in), 1/sqrt(fan_in)].

    ``layout`` lists ``(name, shape, fan_in)``; blocks named in ``zero`` are
    drawn and then zero-filled, so toggling them does not shift the draws
    of other blocks.
    """
    zero = set(zero)
    blocks = {}
    for name, shape, fan_in in layout:
        s = 1.0 / np.sqrt(fan_in)
        draw = rng.uniform(-s, s, size=shape)
        blocks[name] = np.zeros(shape) if name in zero else draw
    return Params(blocks)


class Node:
    __slots__ = ("value", "grad", "requires_grad")

    def __init__(self, value, requires_grad=True):
        self.value = value
        self.grad = None
        self.requires_grad = requires_grad

    def _accum(self, g):
        if self.requires_grad:
            self.grad = g if self.grad is None else self.grad + g


class Tape:
    """Records forward operations over a :class:`Params` set.

    With ``record=False`` the tape only evaluates values, which is how the
    models run inference without a separate forward implementation.
    """

    def __init__(self, params: Params, record: bool = True):
        self.params = params
        self.record = record
        self._ops: list[Callable[[], None]] = []
        self._param_nodes: dict[str, Node] = {}

    def param(self, name: str) -> Node:
        node = self._param_nodes.get(name)
        if node is None:
            node = Node(self.params[name], requires_grad=self.record)
            self._param_nodes[name] = node
        return node

    def constant(self, value) -> Node:
        return Node(np.asarray(value, dtype=np.float64), requires_grad=False)

    def _push(self, fn):
        if self.record:
            self._ops.append(fn)

    def affine(self, x: Node, W: Node, b: Node) -> Node:
        out = Node(x.value @ W.value + b.value)

        def back():
            g = out.grad
            if g is None:
                return
            x._accum(g @ W.value.T)
            W._accum(x.value.T @ g)
            b._accum(g.sum(axis=0))

        self._push(back)
        return out

    def lookup(self, W: Node, idx) -> Node:
        idx = np.asarray(idx, dtype=np.intp)
        out = Node(W.value[idx])

        def back():
            if out.grad is None or not W.requires_grad:
                return
            gW = np.zeros_like(W.value)
            np.add.at(gW, idx, out.grad)
            W._accum(gW)

        self._push(back)
        return out

    def dropout(self, x: Node, rate: float, rng, training: bool) -> Node:
        if not 0.0 <= rate < 1.0:
            raise InvalidArgumentError(f"dropout rate {rate} outside [0, 1)")
        if not training or rate == 0.0:
            return x
        mask = _dropout_mask(x.value.shape, rate, rng)
        out = Node(x.value * mask)

        def back():
            if out.grad is not None:
                x._accum(out.grad * mask)

        self._push(back)
        return out

    def lstm(self, x: Node, h: Node, c: Node, W: Node, b: Node) -> tuple[Node, Node]:
        h_new, c_new, cache = _lstm_forward(x.value, h.value, c.value, W.value, b.value)
        out_h, out_c = Node(h_new), Node(c_new)
        D = x.value.shape[-1]

        def back():
            dh, dc = out_h.grad, out_c.grad
            if dh is None and dc is None:
                return
            dh = np.zeros_like(h_new) if dh is None else dh
            dc = np.zeros_like(c_new) if dc is None else dc
            dxh, dc_prev, dW, db = _lstm_backward(cache, W.value, dh, dc)
            x._accum(dxh[..., :D])
            h._accum(dxh[..., D:])
            c._accum(dc_prev)
            W._accum(dW)
            b._accum(db)

        self._push(back)
        return out_h, out_c

    def softmax_xent(self, logits: Node, targets, weights=None) -> Node:
        """Weighted sum over rows of ``-log softmax(logits)[target]``.

        Log-probabilities are floored at log(1e-12), matching
        :func:`cross_entropy`; a floored row contributes no gradient.
        """
        targets = np.asarray(targets, dtype=np.intp)
        rows = np.arange(len(targets))
        w = np.ones(len(targets)) if weights is None else np.asarray(weights, dtype=np.float64)
        logp = log_softmax(logits.value)
        picked = logp[rows, targets]
        floored = picked < _LOG_FLOOR
        loss = -np.sum(w * np.maximum(picked, _LOG_FLOOR))
        out = Node(np.float64(loss))

        def back():
            if out.grad is None:
                return
            g = np.exp(logp)
            g[rows, targets] -= 1.0
            scale = np.where(floored, 0.0, w) * out.grad
            logits._accum(g * scale[:, None])

        self._push(back)
        return out

    def add(self, *nodes: Node) -> Node:
        out = Node(sum(n.value for n in nodes))

        def back():
            if out.grad is not None:
                for n in nodes:
                    n._accum(out.grad)

        self._push(back)
        return out

    def scale(self, x: Node, factor: float) -> Node:
        out = Node(x.value * factor)

        def back():
            if out.grad is not None:
                x._accum(out.grad * factor)

        self._push(back)
        return out

    def half_sqnorm(self, x: Node) -> Node:
        out = Node(np.float64(0.5 * np.sum(x.value * x.value)))

        def back():
            if out.grad is not None:
                x._accum(out.grad * x.value)

        self._push(back)
        return out

    def backward(self, loss: Node) -> Params:
        if not self.record:
            raise InvalidArgumentError("tape was created with record=False")
        value = np.asarray(loss.value)
        if value.size != 1 or value.ndim > 1:
            raise InvalidArgumentError(f"loss must be scalar, got shape {value.shape}")
        loss.grad = np.float64(1.0)
        for op in reversed(self._ops):
            op()
        grads = {}
        for name, arr in self.params.items():
            node = self._param_nodes.get(name)
            g = None if node is None else node.grad
            grads[name] = np.zeros_like(arr) if g is None else np.asarray(g, dtype=np.float64)
        return Params(grads)


def value_and_grad(computation: Callable[[Tape], Node], params: Params) -> tuple[float, Params]:
    tape = Tape(params)
    loss = computation(tape)
    grads = tape.backward(loss)
    return float(loss.value), grads


def backward(computation: Callable[[Tape], Node], params: Params) -> Params:
    """Exact gradient of the scalar built by ``computation(tape)``."""
    return value_and_grad(computation, params)[1]


@dataclass(frozen=True)
class AdamState:
    m: Params
    v: Params
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def fresh(cls, params: Params, lr=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8) -> "AdamState":
        return cls(params.zeros_like(), params.zeros_like(), 0, lr, beta1, beta2, epsilon)


def adam_step(params: Params, grads: Params, state: AdamState) -> tuple[Params, AdamState]:
    """Bias-corrected Adam update. Inputs are left untouched."""
    if not (params.same_shape(grads) and params.same_shape(state.m)):
        raise InvalidArgumentError("params, grads and optimizer state have different shapes")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    new_p, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * (g * g)
        new_p[name] = p - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
        new_m[name] = m
        new_v[name] = v
    return Params(new_p), AdamState(Params(new_m), Params(new_v), t, state.lr, b1, b2, state.epsilon)
