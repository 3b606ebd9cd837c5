"""Dense f64 tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a ``numpy`` array of 64-bit floats. Operations
executed while a :class:`Tape` is active append a record holding the
operand tensors and a pull-back closure; :func:`backward` replays the tape
in reverse to accumulate gradients into every ``requires_grad`` leaf.

The primitive set is intentionally small: broadcast arithmetic, matmul,
shape manipulation, reductions, pointwise nonlinearities, masked row-wise
softmax, layer normalization, inverted dropout and embedding lookup.
Everything here is plain single-threaded numpy, which keeps results
bit-reproducible for a fixed seed.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf as _erf

from .errors import ConfigError, ContractError, DegenerateRowError, ShapeError

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Tensor:
    """A float64 array plus an optional same-shape gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Ordered record of primitive operations for one forward pass.

    Records are appended in execution order, so walking them in reverse
    is a valid reverse topological order of the computation graph.
    """

    __slots__ = ("records",)

    def __init__(self):
        self.records: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []

    def __enter__(self) -> "Tape":
        _STATE.stack.append(self)
        return self

    def __exit__(self, *exc):
        popped = _STATE.stack.pop()
        assert popped is self
        return False

    def __len__(self) -> int:
        return len(self.records)


class _TapeState(threading.local):
    def __init__(self):
        self.stack: list[Tape] = []


_STATE = _TapeState()


def _active_tape() -> Tape | None:
    return _STATE.stack[-1] if _STATE.stack else None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out: Tensor, inputs: Sequence[Tensor], pull: Callable[[np.ndarray], None]) -> Tensor:
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.records.append((out, pull))
    return out


def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every requires_grad leaf on the tape."""
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    loss.accumulate_grad(np.ones_like(loss.data))
    for out, pull in reversed(tape.records):
        if out.grad is not None:
            pull(out.grad)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# broadcast arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data)

    def pull(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g, b.data.shape))

    return _record(out, (a, b), pull)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data - b.data)

    def pull(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(-g, b.data.shape))

    return _record(out, (a, b), pull)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data)

    def pull(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a.data, b.data.shape))

    return _record(out, (a, b), pull)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data / b.data)

    def pull(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _record(out, (a, b), pull)


def neg(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(-a.data)

    def pull(g):
        if a.requires_grad:
            a.accumulate_grad(-g)

    return _record(out, (a,), pull)


# ---------------------------------------------------------------------------
# linear algebra and shape
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product with numpy batch broadcasting on leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} vs {b.shape}")
    out = Tensor(a.data @ b.data)

    def pull(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape))

    return _record(out, (a, b), pull)


def transpose(a, axes: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    out = Tensor(np.transpose(a.data, axes))
    inv = tuple(np.argsort(axes))

    def pull(g):
        if a.requires_grad:
            a.accumulate_grad(np.transpose(g, inv))

    return _record(out, (a,), pull)


def swap_last2(a) -> Tensor:
    a = as_tensor(a)
    order = list(range(a.ndim))
    order[-1], order[-2] = order[-2], order[-1]
    return transpose(a, order)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.reshape(shape))

    def pull(g):
        if a.requires_grad:
            a.accumulate_grad(g.reshape(a.data.shape))

    return _record(out, (a,), pull)


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.broadcast_to(a.data, shape).copy())

    def pull(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.data.shape))

    return _record(out, (a,), pull)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def pull(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t.accumulate_grad(g[tuple(idx)])

    return _record(out, tensors, pull)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.stack([t.data for t in tensors], axis=axis))

    def pull(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t.accumulate_grad(np.take(g, i, axis=axis))

    return _record(out, tensors, pull)


def take(a, index: int, axis: int) -> Tensor:
    """Select one index along an axis, dropping that axis."""
    a = as_tensor(a)
    out = Tensor(np.take(a.data, index, axis=axis))

    def pull(g):
        if a.requires_grad:
            buf = np.zeros_like(a.data)
            idx = [slice(None)] * a.ndim
            idx[axis] = index
            buf[tuple(idx)] = g
            a.accumulate_grad(buf)

    return _record(out, (a,), pull)


def embedding(table, idx) -> Tensor:
    """Row gather ``table[idx]``; backward scatter-adds into the table."""
    table = as_tensor(table)
    idx = np.asarray(idx)
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise ContractError(
            f"embedding index out of range [0, {table.data.shape[0]}): "
            f"min={idx.min()}, max={idx.max()}"
        )
    out = Tensor(table.data[idx])

    def pull(g):
        if table.requires_grad:
            buf = np.zeros_like(table.data)
            np.add.at(buf, idx.reshape(-1), g.reshape(-1, table.data.shape[1]))
            table.accumulate_grad(buf)

    return _record(out, (table,), pull)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def pull(g):
        if a.requires_grad:
            if axis is None:
                a.accumulate_grad(np.broadcast_to(g, a.data.shape).copy())
            else:
                gg = g if keepdims else np.expand_dims(g, axis)
                a.accumulate_grad(np.broadcast_to(gg, a.data.shape).copy())

    return _record(out, (a,), pull)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


# ---------------------------------------------------------------------------
# pointwise nonlinearities
# ---------------------------------------------------------------------------

def exp(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.exp(a.data))

    def pull(g):
        if a.requires_grad:
            a.accumulate_grad(g * out.data)

    return _record(out, (a,), pull)


def log(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.log(a.data))

    def pull(g):
        if a.requires_grad:
            a.accumulate_grad(g / a.data)

    return _record(out, (a,), pull)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = Tensor(s)

    def pull(g):
        if a.requires_grad:
            a.accumulate_grad(g * s * (1.0 - s))

    return _record(out, (a,), pull)


def softplus(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.logaddexp(0.0, a.data))

    def pull(g):
        if a.requires_grad:
            x = a.data
            s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
            a.accumulate_grad(g * s)

    return _record(out, (a,), pull)


def gelu(a) -> Tensor:
    """Exact (erf-based) GELU."""
    a = as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + _erf(x * _INV_SQRT2))
    out = Tensor(x * cdf)

    def pull(g):
        if a.requires_grad:
            pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
            a.accumulate_grad(g * (cdf + x * pdf))

    return _record(out, (a,), pull)


# ---------------------------------------------------------------------------
# structured primitives
# ---------------------------------------------------------------------------

def masked_softmax(logits, mask: np.ndarray | None = None) -> Tensor:
    """Row-wise softmax over the last axis with a structural boolean mask.

    ``mask`` entries that are True are excluded entirely: they do not enter
    the row max or the normalizer, the output there is exactly 0.0, and no
    gradient flows through them. This is equivalent to adding -inf logits
    but avoids NaNs in the backward pass.
    """
    a = as_tensor(logits)
    x = a.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        if np.any(mask.all(axis=-1)):
            raise DegenerateRowError("softmax row is fully masked")
        safe = np.where(mask, -np.inf, x)
        shifted = np.where(mask, 0.0, x - safe.max(axis=-1, keepdims=True))
        e = np.exp(shifted)
        e[mask] = 0.0
    else:
        e = np.exp(x - x.max(axis=-1, keepdims=True))
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y)

    def pull(g):
        if a.requires_grad:
            inner = (g * y).sum(axis=-1, keepdims=True)
            gx = y * (g - inner)
            if mask is not None:
                gx = np.where(mask, 0.0, gx)
            a.accumulate_grad(gx)

    return _record(out, (a,), pull)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit population variance, then affine."""
    a, gm, bt = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = a.data.shape[-1]
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(gm.data * xhat + bt.data)

    def pull(g):
        if gm.requires_grad:
            gm.accumulate_grad(_unbroadcast(g * xhat, gm.data.shape))
        if bt.requires_grad:
            bt.accumulate_grad(_unbroadcast(g, bt.data.shape))
        if a.requires_grad:
            gx = g * gm.data
            a.accumulate_grad(
                inv
                * (
                    gx
                    - gx.mean(axis=-1, keepdims=True)
                    - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
                )
            )

    return _record(out, (a, gm, bt), pull)


def dropout(x, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; identity (the same tensor object) outside training."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
    a = as_tensor(x)
    if not training or rate == 0.0:
        return a
    if rng is None:
        raise ContractError("dropout in training mode needs a seeded generator")
    keep = (rng.random(a.data.shape) >= rate) / (1.0 - rate)
    out = Tensor(a.data * keep)

    def pull(g):
        if a.requires_grad:
            a.accumulate_grad(g * keep)

    return _record(out, (a,), pull)
