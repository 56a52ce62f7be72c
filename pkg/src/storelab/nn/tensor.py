"""Tape-based reverse-mode autodiff over dense numpy arrays.

Forward operators record backward rules on the active Tape; backward() walks
the tape once in reverse, accumulating gradients additively.  Training runs
in float32; gradient checking builds float64 tensors through the same ops.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import kernels


class ShapeMismatch(Exception):
    pass


class NotScalarLoss(Exception):
    pass


class SentinelError(Exception):
    """Raised by the debug sentinel on any non-finite forward/backward value."""


_sentinel = False


def set_sentinel(enabled: bool) -> None:
    global _sentinel
    _sentinel = enabled


def _check_finite(arr: np.ndarray, where: str) -> None:
    if _sentinel and not np.all(np.isfinite(arr)):
        raise SentinelError(f"non-finite value in {where}")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def param(data) -> Tensor:
    return Tensor(np.asarray(data), requires_grad=True)


def const(data, dtype=None) -> Tensor:
    arr = np.asarray(data, dtype=dtype) if dtype is not None else np.asarray(data)
    return Tensor(arr, requires_grad=False)


class _Record:
    __slots__ = ("out", "inputs", "backward_fn")

    def __init__(self, out: Tensor, inputs: tuple[Tensor, ...], backward_fn):
        self.out = out
        self.inputs = inputs
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of executed operations; topological by construction."""

    def __init__(self):
        self.records: list[_Record] = []

    def __enter__(self) -> "Tape":
        _STACK.append(self)
        return self

    def __exit__(self, *exc):
        _STACK.pop()
        return False

    def __len__(self):
        return len(self.records)


_STACK: list[Tape] = []


def _record(out: Tensor, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    _check_finite(out.data, "forward")
    if _STACK and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _STACK[-1].records.append(_Record(out, tuple(inputs), backward_fn))
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    _check_finite(g, "backward")
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad = t.grad + g


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate .grad of every requires_grad tensor reachable from loss."""
    if loss.data.size != 1:
        raise NotScalarLoss(f"loss has shape {loss.data.shape}")
    loss.grad = np.ones_like(loss.data)
    for rec in reversed(tape.records):
        g_out = rec.out.grad
        if g_out is None:
            continue
        grads = rec.backward_fn(g_out)
        for t, g in zip(rec.inputs, grads):
            if g is not None:
                _accumulate(t, g)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# Operators.
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeMismatch(f"matmul {a.data.shape} @ {b.data.shape}")
    out = Tensor(a.data @ b.data)

    def bwd(g):
        return g @ b.data.T, a.data.T @ g

    return _record(out, (a, b), bwd)


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = Tensor(a.data + b.data)
    except ValueError:
        raise ShapeMismatch(f"add {a.data.shape} + {b.data.shape}")

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _record(out, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = Tensor(a.data - b.data)
    except ValueError:
        raise ShapeMismatch(f"sub {a.data.shape} - {b.data.shape}")

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _record(out, (a, b), bwd)


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = Tensor(a.data * b.data)
    except ValueError:
        raise ShapeMismatch(f"hadamard {a.data.shape} * {b.data.shape}")

    def bwd(g):
        return _unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)

    return _record(out, (a, b), bwd)


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    # stable split form: never exponentiates a large positive argument
    pos = d >= 0
    y = np.empty_like(d)
    y[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ez = np.exp(d[~pos])
    y[~pos] = ez / (1.0 + ez)
    out = Tensor(y)

    def bwd(g):
        return (g * y * (1.0 - y),)

    return _record(out, (x,), bwd)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    out = Tensor(y)

    def bwd(g):
        return (g * (1.0 - y * y),)

    return _record(out, (x,), bwd)


def relu(x: Tensor) -> Tensor:
    y = np.maximum(x.data, 0)
    out = Tensor(y)

    def bwd(g):
        return (g * (x.data > 0),)

    return _record(out, (x,), bwd)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise ShapeMismatch("concat of zero tensors")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        pieces = []
        for i in range(len(sizes)):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offsets[i], offsets[i + 1])
            pieces.append(g[tuple(sl)])
        return tuple(pieces)

    return _record(out, tuple(tensors), bwd)


def reduce_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(x.data.sum(axis=axis, keepdims=keepdims))

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, x.data.shape).astype(x.data.dtype),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, x.data.shape).astype(x.data.dtype),)

    return _record(out, (x,), bwd)


def reduce_mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.data.size if axis is None else x.data.shape[axis]
    out = Tensor(x.data.mean(axis=axis, keepdims=keepdims))

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g / count, x.data.shape).astype(x.data.dtype),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg / count, x.data.shape).astype(x.data.dtype),)

    return _record(out, (x,), bwd)


def take_rows(table: Tensor, indices: np.ndarray) -> Tensor:
    """Row gather (embedding lookup); backward scatter-adds into the table."""
    idx = np.asarray(indices, dtype=np.int64)
    out = Tensor(table.data[idx])

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return _record(out, (table,), bwd)


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return add(matmul(x, w), b)


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D convolution over a single (C,H,W) image."""
    if x.data.ndim != 3 or w.data.ndim != 4 or x.data.shape[0] != w.data.shape[1]:
        raise ShapeMismatch(f"conv2d x{x.data.shape} w{w.data.shape}")
    y = kernels.conv2d_forward(
        np.ascontiguousarray(x.data), np.ascontiguousarray(w.data),
        np.ascontiguousarray(b.data), stride, padding,
    )
    out = Tensor(y)

    def bwd(g):
        gx, gw, gb = kernels.conv2d_backward(
            np.ascontiguousarray(x.data), np.ascontiguousarray(w.data),
            np.ascontiguousarray(g), stride, padding,
        )
        return gx, gw, gb

    return _record(out, (x, w, b), bwd)


def maxpool2d(x: Tensor, size: int = 2, stride: int | None = None) -> Tensor:
    if x.data.ndim != 3:
        raise ShapeMismatch(f"maxpool2d expects (C,H,W), got {x.data.shape}")
    stride = size if stride is None else stride
    y, arg = kernels.maxpool2d_forward(np.ascontiguousarray(x.data), size, stride)
    out = Tensor(y)
    shape = x.data.shape

    def bwd(g):
        return (kernels.maxpool2d_backward(shape, arg, np.ascontiguousarray(g)),)

    return _record(out, (x,), bwd)


def global_maxpool(x: Tensor) -> Tensor:
    """(C,H,W) -> (1,C): max over all spatial positions per channel."""
    if x.data.ndim != 3:
        raise ShapeMismatch(f"global_maxpool expects (C,H,W), got {x.data.shape}")
    c, h, w = x.data.shape
    flat = x.data.reshape(c, h * w)
    arg = flat.argmax(axis=1)
    out = Tensor(flat[np.arange(c), arg][None, :])

    def bwd(g):
        gx = np.zeros((c, h * w), dtype=g.dtype)
        gx[np.arange(c), arg] = g[0]
        return (gx.reshape(c, h, w),)

    return _record(out, (x,), bwd)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def bwd(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return ((g - dot) * y,)

    return _record(out, (x,), bwd)


def binary_cross_entropy(logit: Tensor, label: Tensor) -> Tensor:
    """Mean stable BCE on raw logits; labels are 0/1 constants."""
    z, y = logit.data, label.data
    if z.shape != y.shape:
        raise ShapeMismatch(f"bce logit{z.shape} label{y.shape}")
    per = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    out = Tensor(np.asarray(per.mean(), dtype=z.dtype))
    n = z.size

    def bwd(g):
        sig = np.empty_like(z)
        pos = z >= 0
        sig[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        sig[~pos] = ez / (1.0 + ez)
        return ((sig - y) * (g / n), None)

    return _record(out, (logit, label), bwd)
