"""Relative-positional embedding of adjacency matrices.

A stack of stride-1, padding-1 convolutions treats the binary adjacency
matrix as a one-channel image; a global spatial max-pool collapses it to a
channel vector and a dense head maps that to 40 dimensions, so the output
length never depends on the graph size.  Variants: a plain 3-conv stack and
residual stacks with 2 or 3 blocks.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .graphs import AdjMatrix
from .nn import Tensor, add, const, conv2d, dense, global_maxpool, matmul, param, relu

OUT_DIM = 40
MIN_SIZE = 8  # matrices smaller than this are zero-padded (adds no edges)


class CnnVariant(Enum):
    CNN3 = "CNN3"
    RESNET7 = "Resnet7"
    RESNET11 = "Resnet11"


# (stem channels, residual block channel plan); CNN3 uses the plain plan
_PLANS: dict[CnnVariant, list[int]] = {
    CnnVariant.CNN3: [16, 32, 64],
    CnnVariant.RESNET7: [32, 64],
    CnnVariant.RESNET11: [16, 32, 64],
}
_STEM = 16


@dataclass
class ResBlock:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    proj_w: Tensor | None  # 1x1 projection when channel count changes
    proj_b: Tensor | None


@dataclass
class CnnParams:
    variant: CnnVariant
    stem_w: Tensor | None  # residual variants only
    stem_b: Tensor | None
    plain: list[tuple[Tensor, Tensor]]  # CNN3 only
    blocks: list[ResBlock]
    head_w: Tensor  # channels -> OUT_DIM
    head_b: Tensor

    def named(self, prefix: str = "cnn") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        if self.stem_w is not None:
            out[f"{prefix}.stem_w"] = self.stem_w
            out[f"{prefix}.stem_b"] = self.stem_b
        for i, (w, b) in enumerate(self.plain):
            out[f"{prefix}.conv{i}_w"] = w
            out[f"{prefix}.conv{i}_b"] = b
        for i, blk in enumerate(self.blocks):
            out[f"{prefix}.block{i}_w1"] = blk.w1
            out[f"{prefix}.block{i}_b1"] = blk.b1
            out[f"{prefix}.block{i}_w2"] = blk.w2
            out[f"{prefix}.block{i}_b2"] = blk.b2
            if blk.proj_w is not None:
                out[f"{prefix}.block{i}_proj_w"] = blk.proj_w
                out[f"{prefix}.block{i}_proj_b"] = blk.proj_b
        out[f"{prefix}.head_w"] = self.head_w
        out[f"{prefix}.head_b"] = self.head_b
        return out


def _he(rng: np.random.Generator, c_out: int, c_in: int, k: int, dtype) -> Tensor:
    scale = np.sqrt(2.0 / (c_in * k * k))
    return param((rng.standard_normal((c_out, c_in, k, k)) * scale).astype(dtype))


def init_cnn(
    variant: CnnVariant, rng: np.random.Generator, dtype=np.float32
) -> CnnParams:
    def bias(c):
        return param(np.zeros(c, dtype=dtype))

    plan = _PLANS[variant]
    if variant is CnnVariant.CNN3:
        plain = []
        c_in = 1
        for c_out in plan:
            plain.append((_he(rng, c_out, c_in, 3, dtype), bias(c_out)))
            c_in = c_out
        head_w = param((rng.standard_normal((c_in, OUT_DIM)) * np.sqrt(2.0 / c_in)).astype(dtype))
        return CnnParams(variant, None, None, plain, [], head_w, param(np.zeros((1, OUT_DIM), dtype=dtype)))

    blocks = []
    c_in = _STEM
    for c_out in plan:
        blk = ResBlock(
            w1=_he(rng, c_out, c_in, 3, dtype),
            b1=bias(c_out),
            w2=_he(rng, c_out, c_out, 3, dtype),
            b2=bias(c_out),
            proj_w=_he(rng, c_out, c_in, 1, dtype) if c_out != c_in else None,
            proj_b=bias(c_out) if c_out != c_in else None,
        )
        blocks.append(blk)
        c_in = c_out
    head_w = param((rng.standard_normal((c_in, OUT_DIM)) * np.sqrt(2.0 / c_in)).astype(dtype))
    return CnnParams(
        variant,
        _he(rng, _STEM, 1, 3, dtype),
        bias(_STEM),
        [],
        blocks,
        head_w,
        param(np.zeros((1, OUT_DIM), dtype=dtype)),
    )


def pad_matrix(cells: np.ndarray, dtype=np.float32) -> np.ndarray:
    """Zero-pad bottom/right up to MIN_SIZE (zero cells add no edges)."""
    n = cells.shape[0]
    out = np.zeros((max(n, MIN_SIZE), max(n, MIN_SIZE)), dtype=dtype)
    out[:n, :n] = cells
    return out


def _res_block(x: Tensor, blk: ResBlock) -> Tensor:
    branch = conv2d(relu(conv2d(x, blk.w1, blk.b1, 1, 1)), blk.w2, blk.b2, 1, 1)
    if blk.proj_w is not None:
        skip = conv2d(x, blk.proj_w, blk.proj_b, 1, 0)
    else:
        skip = x
    return relu(add(skip, branch))


def pooled_channels(x: Tensor, params: CnnParams) -> Tensor:
    """Convolution stack then global spatial max-pool: (1,n,n) -> (1,C)."""
    h = x
    if params.variant is CnnVariant.CNN3:
        for w, b in params.plain:
            h = relu(conv2d(h, w, b, 1, 1))
    else:
        h = relu(conv2d(h, params.stem_w, params.stem_b, 1, 1))
        for blk in params.blocks:
            h = _res_block(h, blk)
    return global_maxpool(h)


def embed_adjacency(adj: AdjMatrix | np.ndarray, params: CnnParams) -> Tensor:
    """Fixed-length positional embedding of one adjacency matrix."""
    cells = adj.cells if isinstance(adj, AdjMatrix) else np.asarray(adj)
    dtype = params.head_w.data.dtype
    image = const(pad_matrix(cells, dtype)[None, :, :])
    pooled = pooled_channels(image, params)
    return add(matmul(pooled, params.head_w), params.head_b)


def insert_node(cells: np.ndarray, index: int) -> np.ndarray:
    """Graph transformation used by the sensitivity probe: splice in an
    unconnected node, shifting later rows and columns."""
    n = cells.shape[0]
    out = np.zeros((n + 1, n + 1), dtype=cells.dtype)
    out[:index, :index] = cells[:index, :index]
    out[:index, index + 1 :] = cells[:index, index:]
    out[index + 1 :, :index] = cells[index:, :index]
    out[index + 1 :, index + 1 :] = cells[index:, index:]
    return out


def pattern_sensitivity_probe(
    params: CnnParams,
    patterns: list[np.ndarray],
    sizes: tuple[int, ...] = (16, 64),
    offset: int = 2,
) -> dict[int, list[np.ndarray]]:
    """Max-pooled channel activations for each motif embedded (at a fixed
    interior offset) in otherwise-empty matrices of the given sizes.

    Trained filters responding to a motif keep the same activations across
    sizes, documenting size-independence of the positional features.
    """
    report: dict[int, list[np.ndarray]] = {}
    dtype = params.head_w.data.dtype
    for pid, pattern in enumerate(patterns):
        pattern = np.asarray(pattern)
        acts = []
        for size in sizes:
            ph, pw = pattern.shape
            if offset + ph > size or offset + pw > size:
                raise ValueError(f"pattern {pattern.shape} does not fit in {size}x{size}")
            canvas = np.zeros((size, size), dtype=dtype)
            canvas[offset : offset + ph, offset : offset + pw] = pattern
            acts.append(pooled_channels(const(canvas[None]), params).data[0].copy())
        report[pid] = acts
    return report
