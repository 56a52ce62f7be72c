"""Deterministic MiniASM interpreter and the dead-store shadow oracle.

Executing a program yields a full event trace (one event per executed
instruction).  Dead stores are detected either online with a per-address
shadow state machine or by an independent per-address scan used as a
testing oracle.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, NamedTuple

from .isa import (
    ImmOperand,
    MemOperand,
    NUM_REGISTERS,
    Op,
    Procedure,
    Program,
    RegOperand,
)

_U64 = 1 << 64
_I64_MIN = -(1 << 63)


def wrap64(v: int) -> int:
    """Wrap a Python int to signed 64-bit two's complement."""
    return (v - _I64_MIN) % _U64 + _I64_MIN


class EventKind(Enum):
    LOAD = "Load"
    STORE = "Store"
    CALL = "Call"
    RET = "Ret"
    EXEC = "Exec"


Site = tuple[str, int, int]  # (procedure, block id, instruction index)


class TraceEvent(NamedTuple):
    seq: int
    kind: EventKind
    address: int | None
    value: int | None
    site: Site
    context: int


Trace = list[TraceEvent]


class ExitStatus(Enum):
    HALTED = "Halted"
    STEP_LIMIT = "StepLimit"
    FAULT = "Fault"


class StackOverflow(Exception):
    pass


@dataclass
class Frame:
    return_pc: tuple[str, int, int]
    context: int
    frame_id: int


@dataclass
class MachineState:
    registers: list[int] = field(default_factory=lambda: [0] * NUM_REGISTERS)
    flag: bool = False
    memory: dict[int, int] = field(default_factory=dict)
    pc: tuple[str, int, int] = ("main", 0, 0)
    call_stack: list[Frame] = field(default_factory=list)
    # call-path interning: context id -> (parent context, procedure, call site)
    contexts: list[tuple[int | None, str, Site | None]] = field(default_factory=list)
    current_context: int = 0
    fault_reason: str | None = None


_RELATION_FN: dict[str, Callable[[int, int], bool]] = {
    "lt": lambda a, b: a < b,
    "le": lambda a, b: a <= b,
    "gt": lambda a, b: a > b,
    "ge": lambda a, b: a >= b,
    "eq": lambda a, b: a == b,
    "ne": lambda a, b: a != b,
}


def execute(
    program: Program,
    init_memory: dict[int, int] | None = None,
    max_steps: int = 100_000,
    strict_reads: bool = False,
    stack_limit: int = 64,
    hook: Callable[[MachineState, TraceEvent], None] | None = None,
) -> tuple[Trace, MachineState, ExitStatus]:
    """Run a program from its entry procedure.

    Deterministic: identical inputs produce identical traces.  Every ld emits
    a Load, every st a Store, every other instruction exactly one event.
    Reads of never-written addresses yield 0 (or Fault when strict_reads).
    The optional hook observes (state, event) after each instruction.
    """
    if max_steps <= 0:
        raise ValueError("max_steps must be positive")
    state = MachineState()
    if init_memory:
        state.memory.update(init_memory)
    state.pc = (program.entry, 0, 0)
    state.contexts.append((None, program.entry, None))
    # (parent ctx, callee, site) -> ctx id, for merging repeat call paths
    ctx_intern: dict[tuple[int, str, Site], int] = {}

    trace: Trace = []
    next_frame_id = 1
    seq = 0
    status: ExitStatus | None = None

    while status is None:
        if seq >= max_steps:
            status = ExitStatus.STEP_LIMIT
            break
        proc_name, block_id, idx = state.pc
        proc = program.procedures[proc_name]
        ins = proc.blocks[block_id].instructions[idx]
        site: Site = (proc_name, block_id, idx)
        kind = EventKind.EXEC
        address: int | None = None
        value: int | None = None
        event_ctx = state.current_context

        # default pc advance: next instruction, falling through block ends
        if idx + 1 < len(proc.blocks[block_id].instructions):
            next_pc = (proc_name, block_id, idx + 1)
        else:
            next_pc = (proc_name, block_id + 1, 0)

        op = ins.opcode
        regs = state.registers
        if op is Op.MOV:
            regs[ins.args[0].index] = _src(regs, ins.args[1])
        elif op is Op.ADD:
            regs[ins.args[0].index] = wrap64(regs[ins.args[1].index] + _src(regs, ins.args[2]))
        elif op is Op.SUB:
            regs[ins.args[0].index] = wrap64(regs[ins.args[1].index] - _src(regs, ins.args[2]))
        elif op is Op.MUL:
            regs[ins.args[0].index] = wrap64(regs[ins.args[1].index] * _src(regs, ins.args[2]))
        elif op is Op.CMPFLAG:
            rel = ins.args[0].relation
            state.flag = _RELATION_FN[rel](regs[ins.args[1].index], regs[ins.args[2].index])
        elif op is Op.LD:
            mem = ins.args[1]
            address = (regs[mem.base] + mem.offset) % _U64
            if strict_reads and address not in state.memory:
                state.fault_reason = f"read of unwritten address {address}"
                status = ExitStatus.FAULT
                break
            value = state.memory.get(address, 0)
            regs[ins.args[0].index] = value
            kind = EventKind.LOAD
        elif op is Op.ST:
            mem = ins.args[0]
            address = (regs[mem.base] + mem.offset) % _U64
            value = regs[ins.args[1].index]
            state.memory[address] = value
            kind = EventKind.STORE
        elif op is Op.JMP:
            next_pc = (proc_name, proc.label_blocks[ins.args[0].name], 0)
        elif op is Op.BR_TRUE:
            if state.flag:
                next_pc = (proc_name, proc.label_blocks[ins.args[0].name], 0)
            else:
                next_pc = (proc_name, block_id + 1, 0)
        elif op is Op.BR_FALSE:
            if not state.flag:
                next_pc = (proc_name, proc.label_blocks[ins.args[0].name], 0)
            else:
                next_pc = (proc_name, block_id + 1, 0)
        elif op is Op.CALL:
            if len(state.call_stack) >= stack_limit:
                state.fault_reason = "call stack overflow"
                status = ExitStatus.FAULT
                break
            callee = ins.args[0].name
            kind = EventKind.CALL
            key = (state.current_context, callee, site)
            child = ctx_intern.get(key)
            if child is None:
                child = len(state.contexts)
                state.contexts.append((state.current_context, callee, site))
                ctx_intern[key] = child
            state.call_stack.append(Frame((proc_name, block_id + 1, 0), state.current_context, next_frame_id))
            next_frame_id += 1
            state.current_context = child
            next_pc = (callee, 0, 0)
        elif op is Op.RET:
            kind = EventKind.RET
            if state.call_stack:
                frame = state.call_stack.pop()
                state.current_context = frame.context
                next_pc = frame.return_pc
            else:
                status = ExitStatus.HALTED
        elif op is Op.HALT:
            status = ExitStatus.HALTED
        else:  # pragma: no cover - opcode set is closed
            raise AssertionError(f"unhandled opcode {op}")

        event = TraceEvent(seq, kind, address, value, site, event_ctx)
        trace.append(event)
        seq += 1
        state.pc = next_pc
        if hook is not None:
            hook(state, event)

    return trace, state, status


def _src(regs: list[int], arg) -> int:
    if isinstance(arg, RegOperand):
        return regs[arg.index]
    if isinstance(arg, ImmOperand):
        return wrap64(arg.value)
    raise TypeError(f"bad source operand {arg!r}")


# ---------------------------------------------------------------------------
# Dead-store detection.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DeadStoreReport:
    """A store (killed) overwritten by a later store (killing) with no
    intervening load of the same address."""

    address: int
    killed_site: Site
    killed_seq: int
    killing_site: Site
    killing_seq: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "address": self.address,
                "killed_site": list(self.killed_site),
                "killed_seq": self.killed_seq,
                "killing_site": list(self.killing_site),
                "killing_seq": self.killing_seq,
            }
        )


class _Mode(Enum):
    VIRGIN = 0
    WRITTEN_UNREAD = 1
    READ_SINCE_WRITE = 2


@dataclass
class ShadowState:
    mode: _Mode = _Mode.VIRGIN
    last_store_site: Site | None = None
    last_store_seq: int = -1


def detect_dead_stores(trace: Trace) -> list[DeadStoreReport]:
    """Online shadow-memory pass; reports come out in killing_seq order."""
    shadow: dict[int, ShadowState] = {}
    reports: list[DeadStoreReport] = []
    for ev in trace:
        if ev.kind is EventKind.STORE:
            cell = shadow.get(ev.address)
            if cell is None:
                cell = ShadowState()
                shadow[ev.address] = cell
            if cell.mode is _Mode.WRITTEN_UNREAD:
                reports.append(
                    DeadStoreReport(
                        ev.address, cell.last_store_site, cell.last_store_seq, ev.site, ev.seq
                    )
                )
            cell.mode = _Mode.WRITTEN_UNREAD
            cell.last_store_site = ev.site
            cell.last_store_seq = ev.seq
        elif ev.kind is EventKind.LOAD:
            cell = shadow.get(ev.address)
            if cell is not None and cell.mode is _Mode.WRITTEN_UNREAD:
                cell.mode = _Mode.READ_SINCE_WRITE
    return reports


def brute_force_dead_stores(trace: Trace) -> list[DeadStoreReport]:
    """Independent oracle: group events per address, pair consecutive stores
    with no load between them by direct scan of the address's event list."""
    by_address: dict[int, list[TraceEvent]] = {}
    for ev in trace:
        if ev.kind in (EventKind.STORE, EventKind.LOAD):
            by_address.setdefault(ev.address, []).append(ev)
    reports: list[DeadStoreReport] = []
    for _, events in by_address.items():
        stores = [i for i, ev in enumerate(events) if ev.kind is EventKind.STORE]
        for a, b in zip(stores[:-1], stores[1:]):
            if not any(events[k].kind is EventKind.LOAD for k in range(a + 1, b)):
                killed, killing = events[a], events[b]
                reports.append(
                    DeadStoreReport(
                        killed.address, killed.site, killed.seq, killing.site, killing.seq
                    )
                )
    reports.sort(key=lambda r: r.killing_seq)
    return reports


# ---------------------------------------------------------------------------
# Per-procedure labeling.
# ---------------------------------------------------------------------------

Run = tuple[dict[int, int], int]  # (init_memory, max_steps)


@dataclass
class OracleResult:
    labels: dict[str, int]
    unexercised: set[str]
    reports: list[list[DeadStoreReport]]  # per run
    costs: dict[str, int]  # executed instruction counts per procedure
    traces: list[Trace]


def run_oracle(program: Program, runs: list[Run], keep_traces: bool = False) -> OracleResult:
    """Execute each run, detect dead stores, and label procedures.

    A procedure is labeled 1 iff some report's killed store lies in it (the
    killed store is the instruction a developer would delete).  Procedures
    never executed in any run are flagged unexercised.
    """
    if not runs:
        raise ValueError("at least one run is required")
    labels = {name: 0 for name in program.procedures}
    executed: set[str] = set()
    costs = {name: 0 for name in program.procedures}
    all_reports: list[list[DeadStoreReport]] = []
    traces: list[Trace] = []
    for init_memory, max_steps in runs:
        trace, _, _ = execute(program, init_memory, max_steps)
        for ev in trace:
            executed.add(ev.site[0])
            costs[ev.site[0]] += 1
        reports = detect_dead_stores(trace)
        for rep in reports:
            labels[rep.killed_site[0]] = 1
        all_reports.append(reports)
        if keep_traces:
            traces.append(trace)
    unexercised = set(program.procedures) - executed
    return OracleResult(labels, unexercised, all_reports, costs, traces)


def label_procedures(program: Program, runs: list[Run]) -> dict[str, int]:
    """Union labeling over runs; 1 iff any run produced a killed store in the
    procedure."""
    return run_oracle(program, runs).labels


def format_trace(trace: Trace) -> str:
    """Tab-separated dump: seq kind addr value proc block idx ctx ('-' when
    the event carries no address/value)."""
    lines = []
    for ev in trace:
        addr = "-" if ev.address is None else str(ev.address)
        val = "-" if ev.value is None else str(ev.value)
        p, b, i = ev.site
        lines.append(f"{ev.seq}\t{ev.kind.value}\t{addr}\t{val}\t{p}\t{b}\t{i}\t{ev.context}")
    return "\n".join(lines) + ("\n" if lines else "")
