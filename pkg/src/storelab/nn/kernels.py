"""Hot numeric kernels: numba-jitted loops with a pure-numpy fallback.

STORELAB_NUMBA selects the path:
  auto (default)  numba where it beats numpy at our sizes (the sequential
                  skip-gram update loop, windowed max-pooling); BLAS-backed
                  numpy for convolution, where sgemm wins by an order of
                  magnitude (see benchmarks/bench_kernels.py)
  1 / all         numba everywhere it exists
  0 / off         pure numpy everywhere

Both paths are deterministic; they may differ by float rounding (different
summation orders), never by logic.
"""

from __future__ import annotations

import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_MASK64 = (1 << 64) - 1
_XS_MULT = 2685821657736338717


def _mode() -> str:
    raw = os.environ.get("STORELAB_NUMBA", "auto").strip().lower()
    if raw in ("0", "false", "off"):
        return "off"
    if raw in ("1", "true", "all"):
        return "all"
    return "auto"


MODE = _mode()
using_numba = False
if MODE != "off":
    try:
        from numba import njit

        using_numba = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        using_numba = False


# ---------------------------------------------------------------------------
# numpy reference implementations (always defined; used directly as the
# fallback path and by the benchmark).
# ---------------------------------------------------------------------------


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """(C,H,W) -> (C*kh*kw, Ho*Wo) patch matrix (copies; BLAS-friendly)."""
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    c, ho, wo = win.shape[0], win.shape[1], win.shape[2]
    # (C, Ho, Wo, kh, kw) -> (C, kh, kw, Ho, Wo) -> rows
    return np.ascontiguousarray(win.transpose(0, 3, 4, 1, 2)).reshape(c * kh * kw, ho * wo)


def conv2d_forward_np(x, w, b, stride, pad):
    c_out, _, kh, kw = w.shape
    ho = (x.shape[1] + 2 * pad - kh) // stride + 1
    wo = (x.shape[2] + 2 * pad - kw) // stride + 1
    cols = _im2col(x, kh, kw, stride, pad)
    y = w.reshape(c_out, -1) @ cols
    return y.reshape(c_out, ho, wo) + b[:, None, None]


def conv2d_backward_np(x, w, gy, stride, pad):
    c_out, _, kh, kw = w.shape
    c, h, wid = x.shape
    ho, wo = gy.shape[1], gy.shape[2]
    cols = _im2col(x, kh, kw, stride, pad)
    gy2 = gy.reshape(c_out, ho * wo)
    gb = gy2.sum(axis=1)
    gw = (gy2 @ cols.T).reshape(w.shape)
    gcols = (w.reshape(c_out, -1).T @ gy2).reshape(c, kh, kw, ho, wo)
    gxp = np.zeros((c, h + 2 * pad, wid + 2 * pad), dtype=x.dtype)
    for ki in range(kh):
        for kj in range(kw):
            gxp[:, ki : ki + stride * (ho - 1) + 1 : stride,
                kj : kj + stride * (wo - 1) + 1 : stride] += gcols[:, ki, kj]
    gx = gxp[:, pad : pad + h, pad : pad + wid] if pad else gxp
    return np.ascontiguousarray(gx), gw, gb


def maxpool2d_forward_np(x, size, stride):
    c, h, w = x.shape
    win = sliding_window_view(x, (size, size), axis=(1, 2))[:, ::stride, ::stride]
    ho, wo = win.shape[1], win.shape[2]
    flat = win.reshape(c, ho, wo, size * size)
    arg_in_window = flat.argmax(axis=3)
    y = np.take_along_axis(flat, arg_in_window[..., None], axis=3)[..., 0]
    wi = arg_in_window // size
    wj = arg_in_window % size
    base_i = (np.arange(ho) * stride)[None, :, None]
    base_j = (np.arange(wo) * stride)[None, None, :]
    arg = (base_i + wi) * w + (base_j + wj)
    return np.ascontiguousarray(y), arg.astype(np.int64)


def maxpool2d_backward_np(x_shape, arg, gy):
    c, h, w = x_shape
    gx = np.zeros((c, h * w), dtype=gy.dtype)
    for ci in range(c):
        np.add.at(gx[ci], arg[ci].ravel(), gy[ci].ravel())
    return gx.reshape(c, h, w)


def _xorshift_next(state: int) -> tuple[int, int]:
    state ^= state >> 12
    state = (state ^ (state << 25)) & _MASK64
    state ^= state >> 27
    return state, (state * _XS_MULT) & _MASK64


def sgns_train_np(pairs, w_in, w_out, neg_table, negatives, lr0, lr_min, epochs, seed):
    """Sequential skip-gram/negative-sampling updates (reference path).

    Matches the jitted kernel pair for pair: same RNG stream, same update
    order, linear learning-rate decay over all updates.
    """
    n = pairs.shape[0]
    table_size = neg_table.shape[0]
    total = max(1, n * epochs)
    state = (seed | 1) & _MASK64
    step = 0
    for _ in range(epochs):
        for p in range(n):
            lr = lr0 + (lr_min - lr0) * (step / total)
            step += 1
            center = pairs[p, 0]
            ctx = pairs[p, 1]
            vin = w_in[center].copy()
            grad_in = np.zeros_like(vin)
            for k in range(negatives + 1):
                if k == 0:
                    target, label = ctx, 1.0
                else:
                    state, rnd = _xorshift_next(state)
                    target, label = neg_table[rnd % table_size], 0.0
                f = float(vin @ w_out[target])
                f = min(30.0, max(-30.0, f))
                g = (label - 1.0 / (1.0 + np.exp(-f))) * lr
                grad_in += g * w_out[target]
                w_out[target] += g * vin
            w_in[center] += grad_in


if using_numba:

    @njit(cache=True)
    def _conv2d_forward_jit(x, w, b, stride, pad):  # pragma: no cover - jitted
        c_in, h, wid = x.shape
        c_out = w.shape[0]
        kh, kw = w.shape[2], w.shape[3]
        ho = (h + 2 * pad - kh) // stride + 1
        wo = (wid + 2 * pad - kw) // stride + 1
        y = np.empty((c_out, ho, wo), dtype=x.dtype)
        for o in range(c_out):
            for i in range(ho):
                for j in range(wo):
                    acc = b[o]
                    for c in range(c_in):
                        for ki in range(kh):
                            ii = i * stride + ki - pad
                            if ii < 0 or ii >= h:
                                continue
                            for kj in range(kw):
                                jj = j * stride + kj - pad
                                if 0 <= jj < wid:
                                    acc += x[c, ii, jj] * w[o, c, ki, kj]
                    y[o, i, j] = acc
        return y

    @njit(cache=True)
    def _conv2d_backward_jit(x, w, gy, stride, pad):  # pragma: no cover - jitted
        c_in, h, wid = x.shape
        c_out = w.shape[0]
        kh, kw = w.shape[2], w.shape[3]
        ho, wo = gy.shape[1], gy.shape[2]
        gx = np.zeros_like(x)
        gw = np.zeros_like(w)
        gb = np.zeros_like(gy[:, 0, 0])
        for o in range(c_out):
            for i in range(ho):
                for j in range(wo):
                    g = gy[o, i, j]
                    gb[o] += g
                    for c in range(c_in):
                        for ki in range(kh):
                            ii = i * stride + ki - pad
                            if ii < 0 or ii >= h:
                                continue
                            for kj in range(kw):
                                jj = j * stride + kj - pad
                                if 0 <= jj < wid:
                                    gw[o, c, ki, kj] += g * x[c, ii, jj]
                                    gx[c, ii, jj] += g * w[o, c, ki, kj]
        return gx, gw, gb

    @njit(cache=True)
    def _maxpool2d_forward_jit(x, size, stride):  # pragma: no cover - jitted
        c, h, w = x.shape
        ho = (h - size) // stride + 1
        wo = (w - size) // stride + 1
        y = np.empty((c, ho, wo), dtype=x.dtype)
        arg = np.empty((c, ho, wo), dtype=np.int64)
        for ci in range(c):
            for i in range(ho):
                for j in range(wo):
                    best = x[ci, i * stride, j * stride]
                    best_at = (i * stride) * w + j * stride
                    for ki in range(size):
                        for kj in range(size):
                            ii = i * stride + ki
                            jj = j * stride + kj
                            v = x[ci, ii, jj]
                            if v > best:
                                best = v
                                best_at = ii * w + jj
                    y[ci, i, j] = best
                    arg[ci, i, j] = best_at
        return y, arg

    @njit(cache=True)
    def _maxpool2d_backward_jit(c, h, w, arg, gy):  # pragma: no cover - jitted
        gx = np.zeros((c, h * w), dtype=gy.dtype)
        ho, wo = gy.shape[1], gy.shape[2]
        for ci in range(c):
            for i in range(ho):
                for j in range(wo):
                    gx[ci, arg[ci, i, j]] += gy[ci, i, j]
        return gx.reshape(c, h, w)

    @njit(cache=True)
    def _sgns_train_jit(
        pairs, w_in, w_out, neg_table, negatives, lr0, lr_min, epochs, seed
    ):  # pragma: no cover - jitted
        n = pairs.shape[0]
        dim = w_in.shape[1]
        table_size = neg_table.shape[0]
        total = n * epochs
        if total < 1:
            total = 1
        state = np.uint64(seed | 1)
        mult = np.uint64(2685821657736338717)
        step = 0
        vin = np.empty(dim, dtype=w_in.dtype)
        grad_in = np.empty(dim, dtype=w_in.dtype)
        for _ in range(epochs):
            for p in range(n):
                lr = lr0 + (lr_min - lr0) * (step / total)
                step += 1
                center = pairs[p, 0]
                ctx = pairs[p, 1]
                for d in range(dim):
                    vin[d] = w_in[center, d]
                    grad_in[d] = 0.0
                for k in range(negatives + 1):
                    if k == 0:
                        target = ctx
                        label = 1.0
                    else:
                        state = state ^ (state >> np.uint64(12))
                        state = state ^ (state << np.uint64(25))
                        state = state ^ (state >> np.uint64(27))
                        rnd = state * mult
                        target = neg_table[rnd % np.uint64(table_size)]
                        label = 0.0
                    f = 0.0
                    for d in range(dim):
                        f += vin[d] * w_out[target, d]
                    if f > 30.0:
                        f = 30.0
                    elif f < -30.0:
                        f = -30.0
                    g = (label - 1.0 / (1.0 + np.exp(-f))) * lr
                    for d in range(dim):
                        grad_in[d] += g * w_out[target, d]
                        w_out[target, d] += g * vin[d]
                for d in range(dim):
                    w_in[center, d] += grad_in[d]

    def conv2d_forward_nb(x, w, b, stride, pad):
        return _conv2d_forward_jit(x, w, b, stride, pad)

    def conv2d_backward_nb(x, w, gy, stride, pad):
        return _conv2d_backward_jit(x, w, gy, stride, pad)

    def maxpool2d_forward_nb(x, size, stride):
        return _maxpool2d_forward_jit(x, size, stride)

    def maxpool2d_backward_nb(x_shape, arg, gy):
        c, h, w = x_shape
        return _maxpool2d_backward_jit(c, h, w, arg, gy)

    def sgns_train_nb(pairs, w_in, w_out, neg_table, negatives, lr0, lr_min, epochs, seed):
        _sgns_train_jit(
            pairs, w_in, w_out, neg_table,
            np.int64(negatives), float(lr0), float(lr_min), np.int64(epochs),
            np.uint64(seed),
        )


def _pick(name: str, numba_fn, numpy_fn, auto_prefers_numba: bool):
    if not using_numba:
        return numpy_fn
    if MODE == "all" or (MODE == "auto" and auto_prefers_numba):
        return numba_fn
    return numpy_fn


if using_numba:
    conv2d_forward = _pick("conv2d_forward", conv2d_forward_nb, conv2d_forward_np, False)
    conv2d_backward = _pick("conv2d_backward", conv2d_backward_nb, conv2d_backward_np, False)
    maxpool2d_forward = _pick("maxpool2d_forward", maxpool2d_forward_nb, maxpool2d_forward_np, True)
    maxpool2d_backward = _pick("maxpool2d_backward", maxpool2d_backward_nb, maxpool2d_backward_np, True)
    sgns_train = _pick("sgns_train", sgns_train_nb, sgns_train_np, True)
else:
    conv2d_forward = conv2d_forward_np
    conv2d_backward = conv2d_backward_np
    maxpool2d_forward = maxpool2d_forward_np
    maxpool2d_backward = maxpool2d_backward_np
    sgns_train = sgns_train_np
