"""Gated graph network over node-attributed directed graphs.

T steps of message passing with per-direction linear transforms feeding a
GRU state update, then a permutation-invariant readout.  Used both for
control-flow graphs (60-d inputs, 70-d states, 10 steps) and calling-context
trees (30-d inputs, 50-d states, 5 steps).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graphs import Cct
from .nn import (
    Tensor,
    add,
    const,
    hadamard,
    matmul,
    param,
    reduce_mean,
    sigmoid,
    sub,
    tanh,
)


class EdgeOutOfRange(Exception):
    pass


class EmptyGraph(Exception):
    pass


@dataclass
class GgnnConfig:
    state_dim: int
    steps: int
    input_dim: int
    per_kind_transforms: bool = False
    readout_kind: str = "mean"  # "mean" or "gated"
    edge_kinds: int = 1

    def __post_init__(self):
        if self.state_dim < 1 or self.steps < 0:
            raise ValueError("state_dim must be >= 1 and steps >= 0")


@dataclass
class GgnnParams:
    proj: Tensor  # input_dim x D
    w_fwd: list[Tensor]  # one per edge kind (single entry when shared)
    b_fwd: list[Tensor]
    w_bwd: list[Tensor]
    b_bwd: list[Tensor]
    w_z: Tensor
    u_z: Tensor
    b_z: Tensor
    w_r: Tensor
    u_r: Tensor
    b_r: Tensor
    w_h: Tensor
    u_h: Tensor
    b_h: Tensor
    gate_w: Tensor | None = None  # gated readout only
    gate_b: Tensor | None = None
    gate_v: Tensor | None = None
    gate_c: Tensor | None = None

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = {f"{prefix}.proj": self.proj}
        for i, (wf, bf, wb, bb) in enumerate(
            zip(self.w_fwd, self.b_fwd, self.w_bwd, self.b_bwd)
        ):
            out[f"{prefix}.w_fwd{i}"] = wf
            out[f"{prefix}.b_fwd{i}"] = bf
            out[f"{prefix}.w_bwd{i}"] = wb
            out[f"{prefix}.b_bwd{i}"] = bb
        for name in ("w_z", "u_z", "b_z", "w_r", "u_r", "b_r", "w_h", "u_h", "b_h"):
            out[f"{prefix}.{name}"] = getattr(self, name)
        if self.gate_w is not None:
            out[f"{prefix}.gate_w"] = self.gate_w
            out[f"{prefix}.gate_b"] = self.gate_b
            out[f"{prefix}.gate_v"] = self.gate_v
            out[f"{prefix}.gate_c"] = self.gate_c
        return out


def init_ggnn(cfg: GgnnConfig, rng: np.random.Generator, dtype=np.float32) -> GgnnParams:
    d = cfg.state_dim

    def mat(rows, cols):
        bound = 1.0 / np.sqrt(rows)
        return param(rng.uniform(-bound, bound, (rows, cols)).astype(dtype))

    def vec(cols):
        return param(np.zeros((1, cols), dtype=dtype))

    kinds = cfg.edge_kinds if cfg.per_kind_transforms else 1
    params = GgnnParams(
        proj=mat(cfg.input_dim, d),
        w_fwd=[mat(d, d) for _ in range(kinds)],
        b_fwd=[vec(d) for _ in range(kinds)],
        w_bwd=[mat(d, d) for _ in range(kinds)],
        b_bwd=[vec(d) for _ in range(kinds)],
        w_z=mat(d, d), u_z=mat(d, d), b_z=vec(d),
        w_r=mat(d, d), u_r=mat(d, d), b_r=vec(d),
        w_h=mat(d, d), u_h=mat(d, d), b_h=vec(d),
    )
    if cfg.readout_kind == "gated":
        params.gate_w = mat(d, d)
        params.gate_b = vec(d)
        params.gate_v = mat(d, d)
        params.gate_c = vec(d)
    return params


def direction_matrices(
    edges: list[tuple], n: int, kinds: int = 1, dtype=np.float32
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Dense incoming/outgoing adjacency per edge kind: a_in[k][v,u]=1 for an
    edge u->v of kind k (kind index 0 when transforms are shared)."""
    a_in = [np.zeros((n, n), dtype=dtype) for _ in range(kinds)]
    a_out = [np.zeros((n, n), dtype=dtype) for _ in range(kinds)]
    for e in edges:
        u, v = e[0], e[1]
        k = int(e[2]) if (len(e) > 2 and kinds > 1) else 0
        if not (0 <= u < n and 0 <= v < n):
            raise EdgeOutOfRange(f"edge ({u},{v}) outside 0..{n - 1}")
        if not 0 <= k < kinds:
            raise EdgeOutOfRange(f"edge kind {k} outside 0..{kinds - 1}")
        a_in[k][v, u] += 1.0
        a_out[k][u, v] += 1.0
    return a_in, a_out


def gru_cell(m: Tensor, h: Tensor, p: GgnnParams) -> Tensor:
    z = sigmoid(add(add(matmul(m, p.w_z), matmul(h, p.u_z)), p.b_z))
    r = sigmoid(add(add(matmul(m, p.w_r), matmul(h, p.u_r)), p.b_r))
    h_tilde = tanh(add(add(matmul(m, p.w_h), matmul(hadamard(r, h), p.u_h)), p.b_h))
    ones = const(np.ones_like(z.data))
    return add(hadamard(sub(ones, z), h), hadamard(z, h_tilde))


def propagate(
    node_inputs: Tensor,
    edges: list[tuple],
    cfg: GgnnConfig,
    params: GgnnParams,
    a_in: list[np.ndarray] | None = None,
    a_out: list[np.ndarray] | None = None,
) -> Tensor:
    """Final node states after T update steps.

    h^0 is the projected input; each step sums per-edge messages (transformed
    neighbor states from the previous step, separate forward/backward
    weights) and applies the GRU.  T=0 returns the projection unchanged.
    Precomputed direction matrices may be passed to skip rebuilding them.
    """
    n = node_inputs.data.shape[0]
    kinds = len(params.w_fwd)
    if a_in is None or a_out is None:
        a_in, a_out = direction_matrices(edges, n, kinds, node_inputs.data.dtype)
    h = matmul(node_inputs, params.proj)
    for _ in range(cfg.steps):
        m: Tensor | None = None
        for k in range(kinds):
            fwd = matmul(const(a_in[k]), add(matmul(h, params.w_fwd[k]), params.b_fwd[k]))
            bwd = matmul(const(a_out[k]), add(matmul(h, params.w_bwd[k]), params.b_bwd[k]))
            part = add(fwd, bwd)
            m = part if m is None else add(m, part)
        h = gru_cell(m, h, params)
    return h


def readout(states: Tensor, params: GgnnParams | None = None, kind: str = "mean") -> Tensor:
    """Graph embedding from node states; mean pooling by default."""
    if states.data.shape[0] < 1:
        raise EmptyGraph("readout of empty node set")
    if kind == "mean":
        return reduce_mean(states, axis=0, keepdims=True)
    if kind == "gated":
        if params is None or params.gate_w is None:
            raise ValueError("gated readout requires gate parameters")
        gate = sigmoid(add(matmul(states, params.gate_w), params.gate_b))
        val = tanh(add(matmul(states, params.gate_v), params.gate_c))
        return reduce_mean(hadamard(gate, val), axis=0, keepdims=True)
    raise ValueError(f"unknown readout kind {kind!r}")


def proc_selector(cct: Cct, proc: str, dtype=np.float32) -> np.ndarray:
    """Averaging row over CCT nodes running the target procedure (all zeros
    if the procedure never appears, producing the zero embedding)."""
    ids = sorted(cct.nodes)
    matches = [i for i, node_id in enumerate(ids) if cct.nodes[node_id].proc == proc]
    row = np.zeros((1, len(ids)), dtype=dtype)
    if matches:
        row[0, matches] = 1.0 / len(matches)
    return row


def embed_cct_for_procedure(cct: Cct, proc: str, states: Tensor) -> Tensor:
    """Mean of final states over the procedure's CCT nodes; zero vector when
    the procedure was never exercised."""
    return matmul(const(proc_selector(cct, proc, states.data.dtype)), states)
