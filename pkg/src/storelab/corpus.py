"""Labeled MiniASM corpus generation.

Programs are random procedure trees whose memory behavior is controlled so
that dead stores appear only where injected.  Three motifs are injected:

  (a) same-block double store to one scratch slot,
  (b) cross-block double store with only register traffic between,
  (c) a callee's store to a shared channel killed by its caller after the
      call returns (the confusable negative has the caller load instead).

Register conventions inside generated code: r7 scratch base (re-established
after every call), r6 transient base for input/channel accesses, r5 loop
counter, r0-r4 data temps.  Normal stores are always re-loaded in the same
block, scratch regions are per-procedure, and shared channels have
log-distinct addresses, so non-injected procedures stay dead-store-free by
construction (verified by the oracle sweep tests).

The Opt1 generator level runs a same-block redundant-store removal pass, so
motif (a) disappears from Opt1 programs the way a stronger compiler
optimization level would erase locally visible dead stores.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace

from .dataset import DatasetSplit, SampleRecord, save_split
from .graphs import build_cfg, adjacency, profile_cct, value_tokens
from .isa import (
    BasicBlock,
    DIALECTS,
    MemOperand,
    Op,
    Procedure,
    Program,
    block_tokens,
    dialect_by_name,
    format_program,
    parse_program,
    remap_dialect,
)
from .vm import Run, brute_force_dead_stores, detect_dead_stores, run_oracle

GENERATOR_VERSION = "storelab-corpus-2"

INPUT_SLOTS = 16
CHANNEL_BASES = (40, 100, 200, 400)  # distinct log2 buckets: A5, A6, A7, A8
SCRATCH_BASE = 1 << 16
SCRATCH_STRIDE = 64
SCRATCH_SLOTS = 16

RELS = ("lt", "le", "gt", "ge", "eq", "ne")


class GenerationBudgetExceeded(Exception):
    pass


@dataclass
class GenConfig:
    seed: int = 0
    procedures: tuple[int, int] = (3, 5)  # non-entry procedure count
    blocks: tuple[int, int] = (3, 6)  # body segments per procedure
    instructions: tuple[int, int] = (2, 5)  # filler instructions per block
    call_density: float = 0.2
    loop_probability: float = 0.3
    dead_store_injection: float = 0.55
    motif_weights: tuple[float, float, float] = (0.38, 0.3, 0.32)  # a, b, c
    dialect: str = "A"
    opt_level: str = "Opt0"

    def __post_init__(self):
        for lo, hi in (self.procedures, self.blocks, self.instructions):
            if lo > hi or lo < 1:
                raise ValueError("ranges must be non-empty")
        for p in (self.call_density, self.loop_probability, self.dead_store_injection):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must lie in [0,1]")
        if sum(self.motif_weights) <= 0:
            raise ValueError("motif weights must not all be zero")
        if self.dialect not in DIALECTS:
            raise ValueError(f"unknown dialect {self.dialect!r}")
        if self.opt_level not in ("Opt0", "Opt1"):
            raise ValueError(f"unknown opt level {self.opt_level!r}")

    @property
    def tag(self) -> str:
        return f"{self.dialect}-{self.opt_level}"


def derive_seed(base: int, *parts) -> int:
    """Stable integer mixing (independent of PYTHONHASHSEED)."""
    h = (base * 0x9E3779B97F4A7C15 + 0xD1B54A32D192ED03) & ((1 << 64) - 1)
    for part in parts:
        if isinstance(part, str):
            for ch in part:
                h = (h * 131 + ord(ch)) & ((1 << 64) - 1)
        else:
            h = (h * 0x100000001B3 + int(part)) & ((1 << 64) - 1)
        h ^= h >> 31
    return h


# ---------------------------------------------------------------------------
# Single-program generation.
# ---------------------------------------------------------------------------


@dataclass
class _ProcPlan:
    index: int
    name: str
    caller: int | None  # index of the primary caller
    role: str = "none"  # none | a | b | writer_killed | writer_read
    channel: int | None = None
    callees: list[int] = field(default_factory=list)  # primary call order
    extra_callees: list[int] = field(default_factory=list)
    single_shot: bool = True  # executes at most once per run


def _plan_program(cfg: GenConfig, rng: random.Random) -> list[_ProcPlan]:
    n = rng.randint(*cfg.procedures)
    plans = [_ProcPlan(0, "main", None)]
    for i in range(1, n + 1):
        caller = rng.choice([0, 0] + list(range(i)))  # biased toward main
        plans.append(_ProcPlan(i, f"p{i}", caller))

    channels = list(CHANNEL_BASES)
    for i in range(1, n + 1):
        if rng.random() < cfg.dead_store_injection:
            motif = rng.choices(("a", "b", "c"), weights=cfg.motif_weights)[0]
            if motif == "c" and channels:
                plans[i].role = "writer_killed"
                plans[i].channel = channels.pop(rng.randrange(len(channels)))
            else:
                plans[i].role = motif if motif != "c" else rng.choice(("a", "b"))
        elif channels and rng.random() < 0.4:
            plans[i].role = "writer_read"
            plans[i].channel = channels.pop(rng.randrange(len(channels)))
    wa, wb, _ = cfg.motif_weights
    if wa + wb > 0 and rng.random() < cfg.dead_store_injection * 0.5:
        plans[0].role = rng.choices(("a", "b"), weights=(wa, wb))[0]

    # channel writers keep a single, loop-free call site under the entry
    # procedure: the entry runs exactly once, so channel traffic cannot
    # interleave across invocations, and its forced final snapshot captures
    # the killing store
    for plan in plans[1:]:
        if plan.role.startswith("writer"):
            plan.caller = 0

    for plan in plans[1:]:
        plans[plan.caller].callees.append(plan.index)

    # extra call sites (distinct call paths) to non-writer procedures
    for i in range(n + 1):
        for j in range(i + 1, n + 1):
            if plans[j].role.startswith("writer") or plans[j].caller == i:
                continue
            if rng.random() < cfg.call_density:
                plans[i].extra_callees.append(j)

    # invocation multiplicity over the acyclic call plan (callers precede
    # callees in index order); lone stores are only safe in procedures that
    # execute at most once per run
    mult = [0] * (n + 1)
    mult[0] = 1
    for i in range(n + 1):
        for j in plans[i].callees + plans[i].extra_callees:
            mult[j] += mult[i]
    for plan in plans:
        plan.single_shot = mult[plan.index] <= 1
    return plans


class _ProcBuilder:
    def __init__(self, plan: _ProcPlan, plans: list[_ProcPlan], cfg: GenConfig, rng: random.Random):
        self.plan = plan
        self.plans = plans
        self.cfg = cfg
        self.rng = rng
        self.lines: list[str] = []
        self.label_count = 0
        self.scratch = SCRATCH_BASE + SCRATCH_STRIDE * plan.index
        self.free_slots = list(range(SCRATCH_SLOTS))
        self.paired_slots: list[int] = []

    def label(self) -> str:
        self.label_count += 1
        return f"L{self.label_count - 1}"

    def temp(self) -> str:
        return f"r{self.rng.randint(0, 4)}"

    def emit(self, line: str) -> None:
        self.lines.append("  " + line)

    def take_slot(self) -> int | None:
        if not self.free_slots:
            return None
        return self.free_slots.pop(self.rng.randrange(len(self.free_slots)))

    # -- filler ----------------------------------------------------------

    def filler(self, count: int, in_loop: bool) -> None:
        emitted = 0
        while emitted < count:
            choice = self.rng.random()
            if choice < 0.45 or emitted + 2 > count:
                op = self.rng.choice(("add", "sub", "mul"))
                src = self.temp() if self.rng.random() < 0.6 else str(self.rng.randint(0, 9))
                self.emit(f"{op} {self.temp()}, {self.temp()}, {src}")
                emitted += 1
            elif choice < 0.65:
                self.emit("mov r6, 0")
                self.emit(f"ld {self.temp()}, [r6+{self.rng.randrange(INPUT_SLOTS)}]")
                emitted += 2
            elif choice < 0.9:
                slot = None
                if self.paired_slots and self.rng.random() < 0.5:
                    slot = self.rng.choice(self.paired_slots)
                else:
                    slot = self.take_slot()
                    if slot is not None:
                        self.paired_slots.append(slot)
                if slot is None:
                    continue
                self.emit(f"st [r7+{slot}], {self.temp()}")
                self.emit(f"ld {self.temp()}, [r7+{slot}]")
                emitted += 2
            else:
                # a store with no later access is only dead-store-free if it
                # executes at most once
                if in_loop or not self.plan.single_shot:
                    continue
                slot = self.take_slot()  # retired: never touched again
                if slot is None:
                    continue
                self.emit(f"st [r7+{slot}], {self.temp()}")
                emitted += 1

    def compare(self) -> None:
        self.emit(f"cmpflag {self.rng.choice(RELS)}, {self.temp()}, {self.temp()}")

    # -- segments ---------------------------------------------------------

    def seg_straight(self) -> None:
        self.filler(self.rng.randint(*self.cfg.instructions), in_loop=False)

    def seg_diamond(self) -> None:
        true_label, join_label = self.label(), self.label()
        self.compare()
        self.emit(f"br_true {true_label}")
        self.filler(self.rng.randint(1, 3), in_loop=False)
        self.emit(f"jmp {join_label}")
        self.lines.append(f"{true_label}:")
        self.filler(self.rng.randint(1, 3), in_loop=False)
        self.lines.append(f"{join_label}:")

    def seg_loop(self) -> None:
        head = self.label()
        trip = self.rng.randint(2, 3)
        self.emit("mov r5, 0")
        self.lines.append(f"{head}:")
        self.filler(self.rng.randint(1, 3), in_loop=True)
        self.emit("add r5, r5, 1")
        self.emit(f"mov r4, {trip}")
        self.emit(f"cmpflag lt, r5, r4")
        self.emit(f"br_true {head}")

    def seg_call(self, callee_index: int) -> None:
        callee = self.plans[callee_index]
        self.emit(f"call {callee.name}")
        # registers are global: the callee clobbered our bases
        self.emit(f"mov r7, {self.scratch}")
        if callee.caller == self.plan.index and callee.role == "writer_killed":
            self.emit(f"mov r6, {callee.channel}")
            self.emit(f"st [r6+0], {self.temp()}")
        elif callee.caller == self.plan.index and callee.role == "writer_read":
            self.emit(f"mov r6, {callee.channel}")
            self.emit(f"ld {self.temp()}, [r6+0]")

    # -- whole body --------------------------------------------------------

    def build(self) -> list[str]:
        plan, rng = self.plan, self.rng
        motif_slot: int | None = None
        if plan.role in ("a", "b"):
            motif_slot = self.free_slots.pop(0)  # reserved for the motif

        self.lines.append(f"proc {plan.name}:")
        self.emit(f"mov r7, {self.scratch}")
        self.filler(rng.randint(*self.cfg.instructions), in_loop=False)
        if plan.role == "a":
            self.emit(f"st [r7+{motif_slot}], {self.temp()}")
            for _ in range(rng.randint(1, 2)):
                self.emit(f"add {self.temp()}, {self.temp()}, {rng.randint(0, 9)}")
            self.emit(f"st [r7+{motif_slot}], {self.temp()}")
        elif plan.role == "b":
            self.emit(f"st [r7+{motif_slot}], {self.temp()}")

        middle = [("call", c) for c in plan.callees + plan.extra_callees]
        rng.shuffle(middle)
        spare = max(0, rng.randint(*self.cfg.blocks) - 2 - len(middle))
        for _ in range(spare):
            roll = rng.random()
            if roll < self.cfg.loop_probability:
                kind = "loop"
            elif roll < self.cfg.loop_probability + 0.35:
                kind = "diamond"
            else:
                kind = "straight"
            middle.insert(rng.randrange(len(middle) + 1), (kind, None))
        for kind, arg in middle:
            if kind == "call":
                self.seg_call(arg)
            elif kind == "loop":
                self.seg_loop()
            elif kind == "diamond":
                self.seg_diamond()
            else:
                self.seg_straight()

        self.filler(rng.randint(*self.cfg.instructions), in_loop=False)
        if plan.role == "b":
            self.emit(f"st [r7+{motif_slot}], {self.temp()}")
        if plan.role.startswith("writer"):
            self.emit(f"mov r6, {plan.channel}")
            self.emit(f"st [r6+0], {self.temp()}")
        self.emit("halt" if plan.index == 0 else "ret")
        return self.lines


def _dest_register(ins) -> int | None:
    if ins.opcode in (Op.MOV, Op.ADD, Op.SUB, Op.MUL, Op.LD):
        return ins.args[0].index
    return None


def remove_redundant_stores(program: Program) -> Program:
    """Same-block peephole: drop a store whose memref is stored again with no
    intervening load of that memref and no write to its base register."""
    new_procs: dict[str, Procedure] = {}
    for name, proc in program.procedures.items():
        new_blocks = []
        for block in proc.blocks:
            keep = [True] * len(block.instructions)
            last: dict[tuple[int, int], int] = {}
            for i, ins in enumerate(block.instructions):
                if ins.opcode is Op.ST:
                    mem = ins.args[0]
                    key = (mem.base, mem.offset)
                    if key in last:
                        keep[last[key]] = False
                    last[key] = i
                elif ins.opcode is Op.LD:
                    mem = ins.args[1]
                    last.pop((mem.base, mem.offset), None)
                dest = _dest_register(ins)
                if dest is not None:
                    last = {k: v for k, v in last.items() if k[0] != dest}
            kept = tuple(ins for ins, k in zip(block.instructions, keep) if k)
            if not kept:  # defensive: never empty a block
                kept = block.instructions
            new_blocks.append(BasicBlock(block.id, kept))
        new_procs[name] = Procedure(
            name, tuple(new_blocks), 0, proc.label_blocks, proc.block_labels
        )
    return Program(new_procs, program.entry, program.dialect)


def generate_program(cfg: GenConfig) -> str:
    """Well-formed MiniASM text in the configured dialect and opt level.

    The same seed yields the same canonical program for both dialects;
    rendering is applied last.
    """
    rng = random.Random(derive_seed(cfg.seed, "program"))
    plans = _plan_program(cfg, rng)
    lines: list[str] = []
    for plan in plans:
        lines.extend(_ProcBuilder(plan, plans, cfg, rng).build())
        lines.append("")
    from .isa import DIALECT_A

    program = parse_program("\n".join(lines) + "\n", DIALECT_A)
    if cfg.opt_level == "Opt1":
        program = remove_redundant_stores(program)
    program = remap_dialect(program, dialect_by_name(cfg.dialect))
    return format_program(program)


def default_runs(seed: int, n_runs: int = 2, max_steps: int = 20_000) -> list[Run]:
    """Deterministic input-region contents per run."""
    runs = []
    for r in range(n_runs):
        rng = random.Random(derive_seed(seed, "run", r))
        memory = {addr: rng.randint(-40, 40) for addr in range(INPUT_SLOTS)}
        runs.append((memory, max_steps))
    return runs


# ---------------------------------------------------------------------------
# Records for one program.
# ---------------------------------------------------------------------------


def program_records(
    program: Program,
    program_id: str,
    tag: str,
    runs: list[Run],
    sample_period: int = 50,
    snapshot_cap: int = 8,
) -> tuple[list[SampleRecord], "OracleBundle"]:
    oracle = run_oracle(program, runs, keep_traces=True)
    cct = profile_cct(
        program, runs[0][0], runs[0][1], sample_period=sample_period, snapshot_cap=snapshot_cap
    )
    node_ids = sorted(cct.nodes)
    cct_nodes = []
    for node_id in node_ids:
        node = cct.nodes[node_id]
        tokens: list[str] = []
        for snap in node.snapshots:
            tokens.extend(value_tokens(snap))
        cct_nodes.append((node.proc, tokens))
    cct_edges = [
        (node_id, child) for node_id in node_ids for child in cct.nodes[node_id].children
    ]

    records = []
    for name, proc in program.procedures.items():
        if name in oracle.unexercised:
            continue
        cfg_obj = build_cfg(proc)
        records.append(
            SampleRecord(
                program_id=program_id,
                proc=name,
                config=tag,
                label=oracle.labels[name],
                cfg_nodes=[block_tokens(b, program.dialect) for b in proc.blocks],
                cfg_edges=sorted((s, d, k.value) for s, d, k in cfg_obj.edges),
                adj=adjacency(cfg_obj).cells.astype(int).tolist(),
                cct_nodes=cct_nodes,
                cct_edges=cct_edges,
                cost=oracle.costs[name],
            )
        )
    return records, OracleBundle(oracle.traces, oracle.labels)


@dataclass
class OracleBundle:
    traces: list
    labels: dict[str, int]


# ---------------------------------------------------------------------------
# Dataset assembly.
# ---------------------------------------------------------------------------


def build_dataset(
    configs: list[GenConfig],
    samples_per_config: int,
    split_ratios: tuple[float, float, float] = (0.4, 0.3, 0.3),
    seed: int = 0,
    out_dir: str | None = None,
    runs_per_program: int = 2,
    max_steps: int = 20_000,
    sample_period: int = 50,
    snapshot_cap: int = 8,
    spot_check_every: int = 20,
    budget_factor: int = 40,
) -> dict[str, DatasetSplit]:
    """Generate, label, and bucket samples into balanced splits per config.

    Whole programs are assigned to one role (no split leakage); within each
    role, rejection sampling caps each class at half the role target, so the
    class ratio lands at 1:1 up to rounding.  Every spot_check_every-th
    program, the shadow detector is cross-checked against the brute-force
    oracle on the run traces.
    """
    if abs(sum(split_ratios) - 1.0) > 1e-9:
        raise ValueError("split ratios must sum to 1")
    out: dict[str, DatasetSplit] = {}
    roles = ("train", "val", "test")
    for cfg in configs:
        targets = _role_targets(samples_per_config, split_ratios)
        quota = {
            role: {1: targets[role] // 2, 0: targets[role] - targets[role] // 2}
            for role in roles
        }
        buckets: dict[str, list[SampleRecord]] = {role: [] for role in roles}
        produced = 0
        index = 0
        budget = budget_factor * max(1, samples_per_config)
        while produced < samples_per_config:
            if index >= budget:
                raise GenerationBudgetExceeded(
                    f"{cfg.tag}: {produced}/{samples_per_config} after {index} programs"
                )
            program_seed = derive_seed(seed, cfg.tag, index)
            text = generate_program(replace(cfg, seed=program_seed))
            program = parse_program(text, dialect_by_name(cfg.dialect))
            program_id = f"{cfg.tag}-{index:06d}"
            runs = default_runs(program_seed, runs_per_program, max_steps)
            records, bundle = program_records(
                program, program_id, cfg.tag, runs, sample_period, snapshot_cap
            )
            if spot_check_every and index % spot_check_every == 0:
                for trace in bundle.traces:
                    assert set(detect_dead_stores(trace)) == set(
                        brute_force_dead_stores(trace)
                    ), f"oracle mismatch on {program_id}"
            role = random.Random(derive_seed(seed, cfg.tag, "role", index)).choices(
                roles, weights=split_ratios
            )[0]
            for rec in records:
                if quota[role][rec.label] > 0:
                    quota[role][rec.label] -= 1
                    buckets[role].append(rec)
                    produced += 1
            index += 1
        split = DatasetSplit(cfg.tag, buckets["train"], buckets["val"], buckets["test"])
        out[cfg.tag] = split
        if out_dir is not None:
            save_split(
                f"{out_dir}/{cfg.tag}",
                split,
                {
                    "seed": seed,
                    "generator_version": GENERATOR_VERSION,
                    "gen_config": {
                        "dialect": cfg.dialect,
                        "opt_level": cfg.opt_level,
                        "procedures": list(cfg.procedures),
                        "blocks": list(cfg.blocks),
                        "instructions": list(cfg.instructions),
                        "call_density": cfg.call_density,
                        "loop_probability": cfg.loop_probability,
                        "dead_store_injection": cfg.dead_store_injection,
                    },
                    "runs_per_program": runs_per_program,
                    "sample_period": sample_period,
                    "snapshot_cap": snapshot_cap,
                },
            )
    return out


def _role_targets(total: int, ratios: tuple[float, float, float]) -> dict[str, int]:
    train = round(total * ratios[0])
    val = round(total * ratios[1])
    test = total - train - val
    return {"train": train, "val": val, "test": test}


def mix_hybrid(splits: list[DatasetSplit], seed: int = 0) -> DatasetSplit:
    """Uniform interleave of per-config splits; role membership is preserved
    so no sample changes between train/val/test."""
    rng = random.Random(derive_seed(seed, "hybrid"))
    merged = {}
    for role in ("train", "val", "test"):
        pool = [rec for split in splits for rec in getattr(split, role)]
        rng.shuffle(pool)
        merged[role] = pool
    return DatasetSplit("Hybrid", merged["train"], merged["val"], merged["test"])


def four_default_configs(seed: int = 0, **overrides) -> list[GenConfig]:
    """The dialect x opt-level grid used by the experiments."""
    out = []
    for dialect in ("A", "B"):
        for opt in ("Opt0", "Opt1"):
            out.append(GenConfig(seed=seed, dialect=dialect, opt_level=opt, **overrides))
    return out
