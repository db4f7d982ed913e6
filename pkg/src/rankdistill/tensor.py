"""Dense float64 tensors with tape-based reverse-mode autodiff.

Every differentiable primitive records one entry on the active
``ComputationTape`` (a Wengert list). ``ComputationTape.backward`` replays
the adjoints in reverse recorded order, visiting each record exactly once,
and accumulates gradients into the ``grad`` field of leaf tensors.

With no tape active, all ops run as plain numpy (inference mode): nothing
is recorded and outputs carry ``requires_grad=False``. Everything is
float64; single-threaded execution is bit-deterministic for a fixed op
sequence.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy.special import erf

from .errors import ContractError, DimensionError, NumericError

Array = np.ndarray

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Tensor:
    """A float64 array plus an optional gradient accumulator.

    ``is_leaf`` distinguishes user-created tensors (parameters, constants)
    from op outputs; only leaves with ``requires_grad`` receive ``grad``.
    """

    __slots__ = ("data", "requires_grad", "grad", "is_leaf", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[Array] = None
        self.is_leaf = True
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad}{tag})"

    # Operator sugar; elementwise * and +, matrix @.
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return add(self, neg(other))

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


def parameter(data, name: str = "") -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def constant(data, name: str = "") -> Tensor:
    return Tensor(data, requires_grad=False, name=name)


class _OpRecord:
    __slots__ = ("output", "inputs", "backward_fn")

    def __init__(self, output: Tensor, inputs: tuple[Tensor, ...], backward_fn):
        self.output = output
        self.inputs = inputs
        self.backward_fn = backward_fn


_ACTIVE_TAPE: Optional["ComputationTape"] = None


class ComputationTape:
    """Ordered record of primitive ops, replayable in reverse for adjoints."""

    def __init__(self):
        self._records: list[_OpRecord] = []

    def __len__(self) -> int:
        return len(self._records)

    def __enter__(self) -> "ComputationTape":
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise ContractError("a ComputationTape is already active; tapes do not nest")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None

    def backward(self, loss: Tensor, params: Optional[Iterable[Tensor]] = None) -> None:
        """Populate ``grad`` on every leaf tensor reachable from ``loss``.

        ``loss`` must be scalar. Gradients accumulate into existing ``grad``
        buffers. Tensors in ``params`` that are unreachable from the loss
        end up with an explicit zero gradient.
        """
        if loss.data.ndim != 0:
            raise ContractError(f"backward requires a scalar loss, got shape {loss.data.shape}")
        if not self._records:
            raise ContractError("backward on an empty tape")
        pending: dict[int, Array] = {id(loss): np.ones((), dtype=np.float64)}
        for rec in reversed(self._records):
            g_out = pending.pop(id(rec.output), None)
            if g_out is None:
                continue  # op not on any path to the loss
            grads_in = rec.backward_fn(g_out)
            for t, g in zip(rec.inputs, grads_in):
                if g is None or not t.requires_grad:
                    continue
                if t.is_leaf:
                    if t.grad is None:
                        t.grad = np.zeros_like(t.data)
                    t.grad += g
                else:
                    prev = pending.get(id(t))
                    pending[id(t)] = g if prev is None else prev + g
        if params is not None:
            for p in params:
                if p.grad is None:
                    p.grad = np.zeros_like(p.data)


def active_tape() -> Optional[ComputationTape]:
    return _ACTIVE_TAPE


def _make_output(data: Array, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = ""
    tape = _ACTIVE_TAPE
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.is_leaf = False
        tape._records.append(_OpRecord(out, tuple(inputs), backward_fn))
    else:
        out.requires_grad = False
        out.is_leaf = True
    return out


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Reduce a broadcast gradient back to ``shape``."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make_output(data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def backward(g):
        return _unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)

    return _make_output(data, (a, b), backward)


def mul_scalar(a: Tensor, c: float) -> Tensor:
    c = float(c)
    data = a.data * c

    def backward(g):
        return (g * c,)

    return _make_output(data, (a,), backward)


def neg(a: Tensor) -> Tensor:
    def backward(g):
        return (-g,)

    return _make_output(-a.data, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy's stacked-batch broadcasting.

    Both operands must be at least 2-D; leading axes broadcast.
    """
    if a.data.ndim < 2 or b.data.ndim < 2 or a.data.shape[-1] != b.data.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.data.shape} x {b.data.shape}")
    data = a.data @ b.data

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return _make_output(data, (a, b), backward)


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    data = np.transpose(a.data, axes)
    inv = np.argsort(axes)

    def backward(g):
        return (np.transpose(g, inv),)

    return _make_output(data, (a,), backward)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    orig = a.data.shape
    data = a.data.reshape(shape)

    def backward(g):
        return (g.reshape(orig),)

    return _make_output(data, (a,), backward)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        g_exp = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g_exp, a.data.shape).copy(),)

    return _make_output(data, (a,), backward)


def mean_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul_scalar(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def softmax(z: Tensor, axis: int = -1) -> Tensor:
    """Stable softmax along ``axis``; rejects non-finite inputs."""
    if not np.all(np.isfinite(z.data)):
        raise NumericError("softmax requires finite inputs")
    shifted = z.data - z.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return ((g - dot) * y,)

    return _make_output(y, (z,), backward)


def log_softmax(z: Tensor, axis: int = -1) -> Tensor:
    if not np.all(np.isfinite(z.data)):
        raise NumericError("log_softmax requires finite inputs")
    shifted = z.data - z.data.max(axis=axis, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - logsum

    def backward(g):
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)

    return _make_output(y, (z,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Zero-mean unit-variance over the last axis (biased variance), then affine."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = xhat * gain.data + bias.data

    def backward(g):
        dgain = _unbroadcast(g * xhat, gain.data.shape)
        dbias = _unbroadcast(g, bias.data.shape)
        dxhat = g * gain.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = inv * (dxhat - m1 - xhat * m2)
        return dx, dgain, dbias

    return _make_output(data, (x, gain, bias), backward)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    phi = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    data = x.data * phi

    def backward(g):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT2PI
        return (g * (phi + x.data * pdf),)

    return _make_output(data, (x,), backward)


def take_rows(table: Tensor, ids: Array) -> Tensor:
    """Row gather (embedding lookup); ``ids`` is a non-differentiable int array."""
    ids = np.asarray(ids)
    data = table.data[ids]

    def backward(g):
        buf = np.zeros_like(table.data)
        np.add.at(buf, ids, g)
        return (buf,)

    return _make_output(data, (table,), backward)


def select_token(x: Tensor, index: int) -> Tensor:
    """Slice position ``index`` from a (batch, seq, dim) tensor -> (batch, dim)."""
    if x.data.ndim != 3:
        raise DimensionError(f"select_token expects a 3-D tensor, got shape {x.data.shape}")
    data = x.data[:, index, :].copy()

    def backward(g):
        buf = np.zeros_like(x.data)
        buf[:, index, :] = g
        return (buf,)

    return _make_output(data, (x,), backward)


def check_finite(x: Tensor, context: str) -> Tensor:
    """Pass-through that raises NumericError if any element is NaN/Inf."""
    if not np.all(np.isfinite(x.data)):
        raise NumericError(f"non-finite activation in {context}")
    return x
