"""Per-procedure control-flow graphs and run-time calling-context trees.

CFGs are static (block terminators decide edges); CCTs are profiled from an
execution with periodic memory-state snapshots attached to the active call
path.  Serialization formats live in docs/formats.md.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .isa import Op, Procedure, Program
from .vm import EventKind, ExitStatus, MachineState, Site, StackOverflow, TraceEvent, execute


class EdgeKind(Enum):
    FALL_THROUGH = "FallThrough"
    BRANCH_TRUE = "BranchTrue"
    BRANCH_FALSE = "BranchFalse"
    JUMP = "Jump"


class DanglingLabel(Exception):
    pass


@dataclass(frozen=True)
class Cfg:
    proc: str
    node_count: int
    edges: frozenset[tuple[int, int, EdgeKind]]


@dataclass(frozen=True)
class AdjMatrix:
    n: int
    cells: np.ndarray  # n x n, {0,1}, kind-erased

    def __eq__(self, other):
        return (
            isinstance(other, AdjMatrix)
            and self.n == other.n
            and np.array_equal(self.cells, other.cells)
        )


def build_cfg(proc: Procedure) -> Cfg:
    """Edges follow terminator semantics: plain/call falls through, a branch
    yields one BranchTrue and one BranchFalse successor (fall-through takes
    the branch-not-taken flag value), jmp jumps, ret/halt end the walk."""
    edges: set[tuple[int, int, EdgeKind]] = set()
    n = len(proc.blocks)

    def target(block_id: int, label: str) -> int:
        dst = proc.label_blocks.get(label)
        if dst is None:
            raise DanglingLabel(f"{proc.name}: label {label!r} has no block")
        return dst

    for block in proc.blocks:
        term = block.terminator
        op = term.opcode
        if op is Op.JMP:
            edges.add((block.id, target(block.id, term.args[0].name), EdgeKind.JUMP))
        elif op is Op.BR_TRUE:
            edges.add((block.id, target(block.id, term.args[0].name), EdgeKind.BRANCH_TRUE))
            edges.add((block.id, block.id + 1, EdgeKind.BRANCH_FALSE))
        elif op is Op.BR_FALSE:
            edges.add((block.id, target(block.id, term.args[0].name), EdgeKind.BRANCH_FALSE))
            edges.add((block.id, block.id + 1, EdgeKind.BRANCH_TRUE))
        elif op in (Op.RET, Op.HALT):
            pass
        else:  # plain instruction or call: fall through
            if block.id + 1 < n:
                edges.add((block.id, block.id + 1, EdgeKind.FALL_THROUGH))
    return Cfg(proc.name, n, frozenset(edges))


def adjacency(cfg: Cfg) -> AdjMatrix:
    """Binary, kind-erased adjacency; cell(i,j)=1 iff some edge i->j exists."""
    cells = np.zeros((cfg.node_count, cfg.node_count), dtype=np.uint8)
    for src, dst, _ in cfg.edges:
        cells[src, dst] = 1
    return AdjMatrix(cfg.node_count, cells)


# ---------------------------------------------------------------------------
# Calling-context tree profiling.
# ---------------------------------------------------------------------------


@dataclass
class Snapshot:
    seq: int
    registers: tuple[int, ...]
    stored_values: list[tuple[int, int]]  # (address, value) since previous
    # snapshot within the active frame


@dataclass
class CctNode:
    id: int
    proc: str
    call_site: Site | None  # None for the root
    children: list[int] = field(default_factory=list)
    snapshots: list[Snapshot] = field(default_factory=list)


@dataclass
class Cct:
    nodes: dict[int, CctNode]
    root: int


class _CctSampler:
    """Execution hook: tracks the call-path cursor and per-frame pending
    stores; every sample_period instructions it snapshots the active node."""

    def __init__(self, sample_period: int, snapshot_cap: int):
        self.period = sample_period
        self.cap = snapshot_cap
        self.snapshots: dict[int, list[Snapshot]] = {}
        # frame stack mirrors the VM's: (context id, pending stores)
        self.frames: list[tuple[int, list[tuple[int, int]]]] = [(0, [])]
        self.count = 0

    def __call__(self, state: MachineState, event: TraceEvent) -> None:
        if event.kind is EventKind.STORE:
            self.frames[-1][1].append((event.address, event.value))
        elif event.kind is EventKind.CALL:
            self.frames.append((state.current_context, []))
        elif event.kind is EventKind.RET:
            if len(self.frames) > 1:
                self.frames.pop()  # unsampled pending stores die with the frame
        self.count += 1
        if self.count % self.period == 0:
            self.take(state, event.seq)

    def take(self, state: MachineState, seq: int) -> None:
        ctx, pending = self.frames[-1]
        existing = self.snapshots.setdefault(ctx, [])
        if len(existing) < self.cap:
            existing.append(Snapshot(seq, tuple(state.registers), list(pending)))
        pending.clear()


def profile_cct(
    program: Program,
    init_memory: dict[int, int] | None = None,
    max_steps: int = 100_000,
    sample_period: int = 50,
    snapshot_cap: int = 8,
    force_final: bool = True,
) -> Cct:
    """Profile one execution into a calling-context tree.

    Nodes are the distinct call paths exercised (repeat calls through the
    same site merge).  Snapshots record register values plus the (address,
    value) pairs stored by the active frame since its previous snapshot.
    """
    if sample_period < 1:
        raise ValueError("sample_period must be >= 1")
    sampler = _CctSampler(sample_period, snapshot_cap)
    trace, state, status = execute(program, init_memory, max_steps, hook=sampler)
    if status is ExitStatus.FAULT and state.fault_reason == "call stack overflow":
        raise StackOverflow(state.fault_reason)
    if force_final and trace:
        root_frame = sampler.frames[0]
        existing = sampler.snapshots.setdefault(0, [])
        if len(existing) < sampler.cap:
            existing.append(
                Snapshot(trace[-1].seq, tuple(state.registers), list(root_frame[1]))
            )

    nodes: dict[int, CctNode] = {}
    for ctx_id, (parent, proc, call_site) in enumerate(state.contexts):
        nodes[ctx_id] = CctNode(ctx_id, proc, call_site)
    for ctx_id, (parent, _, _) in enumerate(state.contexts):
        if parent is not None:
            nodes[parent].children.append(ctx_id)
    for ctx_id, snaps in sampler.snapshots.items():
        nodes[ctx_id].snapshots = snaps
    return Cct(nodes, root=0)


# ---------------------------------------------------------------------------
# Value tokens: log-bucketed magnitudes keep the vocabulary bounded.
# ---------------------------------------------------------------------------


def value_token(v: int) -> str:
    if v == 0:
        return "V0"
    if v > 0:
        return f"V+{v.bit_length() - 1}"
    return f"V-{(-v).bit_length() - 1}"


def address_token(addr: int) -> str:
    return f"A{(addr + 1).bit_length() - 1}"


def value_tokens(s: Snapshot) -> list[str]:
    """Register values then store pairs; each stored address token precedes
    its value token."""
    out = [value_token(v) for v in s.registers]
    for addr, val in s.stored_values:
        out.append(address_token(addr))
        out.append(value_token(val))
    return out


# ---------------------------------------------------------------------------
# JSON-lines serialization (docs/formats.md).
# ---------------------------------------------------------------------------


def cfg_to_json(cfg: Cfg, node_tokens: list[list[list[str]]] | None = None) -> str:
    nodes = []
    for i in range(cfg.node_count):
        entry: dict = {"id": i}
        if node_tokens is not None:
            entry["tokens"] = node_tokens[i]
        nodes.append(entry)
    edges = sorted([s, d, k.value] for s, d, k in cfg.edges)
    return json.dumps({"kind": "cfg", "proc": cfg.proc, "nodes": nodes, "edges": edges})


def cct_to_json(cct: Cct, program_id: str = "") -> str:
    nodes = []
    for node_id in sorted(cct.nodes):
        node = cct.nodes[node_id]
        nodes.append(
            {
                "id": node.id,
                "proc": node.proc,
                "call_site": list(node.call_site) if node.call_site else None,
                "snapshots": [
                    {
                        "seq": s.seq,
                        "registers": list(s.registers),
                        "stores": [list(p) for p in s.stored_values],
                    }
                    for s in node.snapshots
                ],
            }
        )
    edges = sorted(
        [node.id, child, "call"] for node in cct.nodes.values() for child in node.children
    )
    return json.dumps(
        {"kind": "cct", "program": program_id, "nodes": nodes, "edges": edges}
    )
