"""MiniASM instruction set: dialects, parsing, printing, and basic-block partitioning.

MiniASM is a line-oriented toy assembly with 8 integer registers, a single
comparison flag, and base+offset memory addressing.  Two dialects share the
same canonical semantics but use disjoint surface mnemonics and register
names.  The grammar is documented in docs/miniasm.md.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum


class Op(Enum):
    """Canonical opcodes."""

    MOV = "mov"
    ADD = "add"
    SUB = "sub"
    MUL = "mul"
    CMPFLAG = "cmpflag"
    LD = "ld"
    ST = "st"
    JMP = "jmp"
    BR_TRUE = "br_true"
    BR_FALSE = "br_false"
    CALL = "call"
    RET = "ret"
    HALT = "halt"


# Opcodes that may only terminate a basic block.
CONTROL_FLOW: frozenset[Op] = frozenset(
    {Op.JMP, Op.BR_TRUE, Op.BR_FALSE, Op.CALL, Op.RET, Op.HALT}
)

# Comparison relations accepted by cmpflag.
RELATIONS = ("lt", "le", "gt", "ge", "eq", "ne")

NUM_REGISTERS = 8


class TokenKind(Enum):
    OPCODE = "opcode"
    REGISTER = "register"
    IMMEDIATE = "immediate"
    MEMREF = "memref"
    LABEL = "label"
    PROCNAME = "procname"


@dataclass(frozen=True)
class Token:
    """One lexical unit.  The '+' inside an expanded memory reference keeps
    kind MEMREF; comparison relations are OPCODE-kind (they name a
    sub-operation)."""

    text: str
    kind: TokenKind


class AsmError(Exception):
    """Base class for MiniASM front-end errors."""


class AsmSyntaxError(AsmError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class UnknownMnemonic(AsmSyntaxError):
    pass


class UndefinedLabel(AsmError):
    pass


class UndefinedProcedure(AsmError):
    pass


@dataclass(frozen=True)
class Dialect:
    """Surface vocabulary: canonical opcode -> mnemonic plus a register alphabet."""

    name: str
    mnemonics: dict[Op, str]
    registers: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.mnemonics.values())) != len(self.mnemonics):
            raise ValueError("mnemonic map must be a bijection")

    def mnemonic_to_op(self) -> dict[str, Op]:
        return {m: op for op, m in self.mnemonics.items()}

    def register_index(self, name: str) -> int | None:
        try:
            return self.registers.index(name)
        except ValueError:
            return None


DIALECT_A = Dialect(
    name="A",
    mnemonics={op: op.value for op in Op},
    registers=tuple(f"r{i}" for i in range(NUM_REGISTERS)),
)

DIALECT_B = Dialect(
    name="B",
    mnemonics={
        Op.MOV: "movz",
        Op.ADD: "adds",
        Op.SUB: "subs",
        Op.MUL: "muls",
        Op.CMPFLAG: "ccmp",
        Op.LD: "ldr",
        Op.ST: "str",
        Op.JMP: "b",
        Op.BR_TRUE: "cbnz",
        Op.BR_FALSE: "cbz",
        Op.CALL: "bl",
        Op.RET: "retn",
        Op.HALT: "hlt",
    },
    registers=tuple(f"x{i}" for i in range(NUM_REGISTERS)),
)

DIALECTS: dict[str, Dialect] = {"A": DIALECT_A, "B": DIALECT_B}


def dialect_by_name(name: str) -> Dialect:
    try:
        return DIALECTS[name]
    except KeyError:
        raise ValueError(f"unknown dialect {name!r}; expected one of {sorted(DIALECTS)}")


# ---------------------------------------------------------------------------
# Operand model.  Tokens are the public view; decoded operands back the VM.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RegOperand:
    index: int


@dataclass(frozen=True)
class ImmOperand:
    value: int


@dataclass(frozen=True)
class MemOperand:
    base: int  # register index
    offset: int  # non-negative


@dataclass(frozen=True)
class LabelOperand:
    name: str


@dataclass(frozen=True)
class ProcOperand:
    name: str


@dataclass(frozen=True)
class RelOperand:
    relation: str  # one of RELATIONS


Operand = RegOperand | ImmOperand | MemOperand | LabelOperand | ProcOperand | RelOperand

# Operand signatures per opcode: r=register, s=register-or-immediate source,
# m=memref, l=label, p=procname, c=comparison relation.
_SIGNATURES: dict[Op, str] = {
    Op.MOV: "rs",
    Op.ADD: "rrs",
    Op.SUB: "rrs",
    Op.MUL: "rrs",
    Op.CMPFLAG: "crr",
    Op.LD: "rm",
    Op.ST: "mr",
    Op.JMP: "l",
    Op.BR_TRUE: "l",
    Op.BR_FALSE: "l",
    Op.CALL: "p",
    Op.RET: "",
    Op.HALT: "",
}


def _canonical_operand_token(operand: Operand) -> Token:
    if isinstance(operand, RegOperand):
        return Token(f"r{operand.index}", TokenKind.REGISTER)
    if isinstance(operand, ImmOperand):
        return Token(str(operand.value), TokenKind.IMMEDIATE)
    if isinstance(operand, MemOperand):
        return Token(f"[r{operand.base}+{operand.offset}]", TokenKind.MEMREF)
    if isinstance(operand, LabelOperand):
        return Token(operand.name, TokenKind.LABEL)
    if isinstance(operand, ProcOperand):
        return Token(operand.name, TokenKind.PROCNAME)
    if isinstance(operand, RelOperand):
        return Token(operand.relation, TokenKind.OPCODE)
    raise TypeError(f"unexpected operand {operand!r}")


@dataclass(frozen=True)
class Instruction:
    """One canonical instruction.

    ``operands`` holds one Token per operand (a memory reference is a single
    MEMREF token); ``tokens`` is the flat canonical token stream with the
    opcode first and memory references expanded to base/'+'/offset.
    """

    opcode: Op
    args: tuple[Operand, ...]
    operands: tuple[Token, ...] = field(init=False, compare=False)
    tokens: tuple[Token, ...] = field(init=False, compare=False)

    def __post_init__(self):
        sig = _SIGNATURES[self.opcode]
        if len(sig) != len(self.args):
            raise ValueError(
                f"{self.opcode.value} expects {len(sig)} operands, got {len(self.args)}"
            )
        for spec, arg in zip(sig, self.args):
            ok = {
                "r": isinstance(arg, RegOperand),
                "s": isinstance(arg, (RegOperand, ImmOperand)),
                "m": isinstance(arg, MemOperand),
                "l": isinstance(arg, LabelOperand),
                "p": isinstance(arg, ProcOperand),
                "c": isinstance(arg, RelOperand),
            }[spec]
            if not ok:
                raise ValueError(f"{self.opcode.value}: bad operand {arg!r}")
        object.__setattr__(
            self, "operands", tuple(_canonical_operand_token(a) for a in self.args)
        )
        toks: list[Token] = [Token(self.opcode.value, TokenKind.OPCODE)]
        for arg in self.args:
            if isinstance(arg, MemOperand):
                toks.append(Token(f"r{arg.base}", TokenKind.REGISTER))
                toks.append(Token("+", TokenKind.MEMREF))
                toks.append(Token(str(arg.offset), TokenKind.IMMEDIATE))
            else:
                toks.append(_canonical_operand_token(arg))
        object.__setattr__(self, "tokens", tuple(toks))


@dataclass(frozen=True)
class BasicBlock:
    """Maximal straight-line run; control flow only as the final instruction."""

    id: int
    instructions: tuple[Instruction, ...]

    def __post_init__(self):
        if not self.instructions:
            raise ValueError("basic block must be non-empty")
        for ins in self.instructions[:-1]:
            if ins.opcode in CONTROL_FLOW:
                raise ValueError("control flow inside basic block")

    @property
    def terminator(self) -> Instruction:
        return self.instructions[-1]


@dataclass(frozen=True)
class Procedure:
    name: str
    blocks: tuple[BasicBlock, ...]
    entry_block: int = 0
    # label name -> block id of the labeled instruction
    label_blocks: dict[str, int] = field(default_factory=dict, compare=False)
    # label names attached to each block start, for printing
    block_labels: dict[int, str] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if [b.id for b in self.blocks] != list(range(len(self.blocks))):
            raise ValueError("block ids must be dense 0..K-1")
        if self.entry_block != 0:
            raise ValueError("entry block must be 0")


@dataclass(frozen=True)
class Program:
    procedures: dict[str, Procedure]
    entry: str
    dialect: Dialect

    def __post_init__(self):
        if self.entry not in self.procedures:
            raise UndefinedProcedure(f"entry procedure {self.entry!r} not defined")


# ---------------------------------------------------------------------------
# Basic-block partitioning (standard leaders construction).
# ---------------------------------------------------------------------------


def partition_blocks(
    instructions: list[Instruction], labels: dict[str, int]
) -> list[BasicBlock]:
    """Split a flat instruction list into basic blocks.

    Leaders are index 0, every label target, and every index following a
    control-flow instruction.  Concatenating the blocks reproduces the input.
    """
    if not instructions:
        return []
    n = len(instructions)
    for name, idx in labels.items():
        if not 0 <= idx < n:
            raise UndefinedLabel(f"label {name!r} targets index {idx} out of range")
    leaders = {0}
    leaders.update(labels.values())
    for i, ins in enumerate(instructions):
        if ins.opcode in CONTROL_FLOW and i + 1 < n:
            leaders.add(i + 1)
    starts = sorted(leaders)
    bounds = starts + [n]
    return [
        BasicBlock(bid, tuple(instructions[lo:hi]))
        for bid, (lo, hi) in enumerate(zip(bounds[:-1], bounds[1:]))
    ]


def _label_block_map(labels: dict[str, int], blocks: list[BasicBlock]) -> dict[str, int]:
    start_to_block: dict[int, int] = {}
    pos = 0
    for b in blocks:
        start_to_block[pos] = b.id
        pos += len(b.instructions)
    return {name: start_to_block[idx] for name, idx in labels.items()}


# ---------------------------------------------------------------------------
# Parsing.
# ---------------------------------------------------------------------------


def _strip_comment(line: str) -> str:
    pos = line.find(";")
    return line if pos < 0 else line[:pos]


def _parse_operand_text(
    text: str, spec: str, dialect: Dialect, lineno: int
) -> Operand:
    text = text.strip()
    if not text:
        raise AsmSyntaxError(lineno, "empty operand")
    if spec == "m":
        if not (text.startswith("[") and text.endswith("]")):
            raise AsmSyntaxError(lineno, f"expected memory reference, got {text!r}")
        body = text[1:-1]
        if "+" not in body:
            raise AsmSyntaxError(lineno, f"memory reference must be [reg+offset]: {text!r}")
        base_txt, off_txt = body.split("+", 1)
        base = dialect.register_index(base_txt.strip())
        if base is None:
            raise AsmSyntaxError(lineno, f"unknown base register {base_txt.strip()!r}")
        try:
            offset = int(off_txt.strip(), 10)
        except ValueError:
            raise AsmSyntaxError(lineno, f"bad offset in {text!r}")
        if offset < 0:
            raise AsmSyntaxError(lineno, "memory offsets must be non-negative")
        return MemOperand(base, offset)
    if spec == "c":
        if text not in RELATIONS:
            raise AsmSyntaxError(lineno, f"unknown relation {text!r}")
        return RelOperand(text)
    if spec == "l":
        return LabelOperand(text)
    if spec == "p":
        return ProcOperand(text)
    # register or immediate
    reg = dialect.register_index(text)
    if reg is not None:
        return RegOperand(reg)
    if spec == "r":
        raise AsmSyntaxError(lineno, f"expected register, got {text!r}")
    try:
        return ImmOperand(int(text, 10))
    except ValueError:
        raise AsmSyntaxError(lineno, f"expected register or integer, got {text!r}")


def parse_program(text: str, dialect: Dialect) -> Program:
    """Parse MiniASM source into a validated Program.

    Raises AsmSyntaxError / UnknownMnemonic / UndefinedLabel /
    UndefinedProcedure with line positions on malformed input.
    """
    mnemonic_map = dialect.mnemonic_to_op()
    procedures: dict[str, Procedure] = {}
    proc_order: list[str] = []

    cur_name: str | None = None
    cur_instrs: list[Instruction] = []
    cur_labels: dict[str, int] = {}
    cur_lines: list[int] = []
    call_sites: list[tuple[str, int]] = []  # (target, line)

    def finish_procedure(lineno: int):
        nonlocal cur_name, cur_instrs, cur_labels, cur_lines
        if cur_name is None:
            return
        if not cur_instrs:
            raise AsmSyntaxError(lineno, f"procedure {cur_name!r} has no instructions")
        for lbl, idx in cur_labels.items():
            if idx >= len(cur_instrs):
                raise AsmSyntaxError(lineno, f"label {lbl!r} has no following instruction")
        last = cur_instrs[-1]
        if last.opcode not in (Op.JMP, Op.RET, Op.HALT):
            raise AsmSyntaxError(
                cur_lines[-1],
                f"procedure {cur_name!r} must end in jmp/ret/halt "
                f"(branches and calls need a fall-through block)",
            )
        for ins, ln in zip(cur_instrs, cur_lines):
            for arg in ins.args:
                if isinstance(arg, LabelOperand) and arg.name not in cur_labels:
                    raise UndefinedLabel(
                        f"line {ln}: label {arg.name!r} undefined in {cur_name!r}"
                    )
        blocks = partition_blocks(cur_instrs, cur_labels)
        label_blocks = _label_block_map(cur_labels, blocks)
        block_labels = {bid: lbl for lbl, bid in label_blocks.items()}
        if cur_name in procedures:
            raise AsmSyntaxError(lineno, f"duplicate procedure {cur_name!r}")
        procedures[cur_name] = Procedure(
            cur_name, tuple(blocks), 0, label_blocks, block_labels
        )
        proc_order.append(cur_name)
        cur_name, cur_instrs, cur_labels, cur_lines = None, [], {}, []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if line.startswith("proc "):
            if not line.endswith(":"):
                raise AsmSyntaxError(lineno, "procedure header must end with ':'")
            name = line[len("proc "):-1].strip()
            if not name.isidentifier():
                raise AsmSyntaxError(lineno, f"bad procedure name {name!r}")
            finish_procedure(lineno)
            cur_name = name
            continue
        if cur_name is None:
            raise AsmSyntaxError(lineno, "instruction outside any procedure")
        if line.endswith(":") and " " not in line[:-1] and "," not in line:
            label = line[:-1]
            if not label.isidentifier():
                raise AsmSyntaxError(lineno, f"bad label name {label!r}")
            if label in cur_labels:
                raise AsmSyntaxError(lineno, f"duplicate label {label!r}")
            cur_labels[label] = len(cur_instrs)
            continue
        parts = line.split(None, 1)
        mnemonic = parts[0]
        op = mnemonic_map.get(mnemonic)
        if op is None:
            raise UnknownMnemonic(lineno, f"unknown mnemonic {mnemonic!r}")
        operand_text = parts[1] if len(parts) > 1 else ""
        fields = [f for f in operand_text.split(",")] if operand_text.strip() else []
        sig = _SIGNATURES[op]
        if len(fields) != len(sig):
            raise AsmSyntaxError(
                lineno, f"{mnemonic} expects {len(sig)} operands, got {len(fields)}"
            )
        args = tuple(
            _parse_operand_text(f, s, dialect, lineno) for f, s in zip(fields, sig)
        )
        try:
            ins = Instruction(op, args)
        except ValueError as e:
            raise AsmSyntaxError(lineno, str(e))
        if op is Op.CALL:
            call_sites.append((args[0].name, lineno))  # type: ignore[union-attr]
        cur_instrs.append(ins)
        cur_lines.append(lineno)

    finish_procedure(len(text.splitlines()) + 1)

    if not procedures:
        raise AsmSyntaxError(1, "no procedures defined")
    for target, ln in call_sites:
        if target not in procedures:
            raise UndefinedProcedure(f"line {ln}: call target {target!r} not defined")
    if "main" not in procedures:
        raise UndefinedProcedure("entry procedure 'main' not defined")
    return Program(procedures, "main", dialect)


# ---------------------------------------------------------------------------
# Printing and tokenization.
# ---------------------------------------------------------------------------


def _format_operand(operand: Operand, dialect: Dialect) -> str:
    if isinstance(operand, RegOperand):
        return dialect.registers[operand.index]
    if isinstance(operand, ImmOperand):
        return str(operand.value)
    if isinstance(operand, MemOperand):
        return f"[{dialect.registers[operand.base]}+{operand.offset}]"
    if isinstance(operand, LabelOperand):
        return operand.name
    if isinstance(operand, ProcOperand):
        return operand.name
    if isinstance(operand, RelOperand):
        return operand.relation
    raise TypeError(f"unexpected operand {operand!r}")


def format_instruction(ins: Instruction, dialect: Dialect) -> str:
    mnemonic = dialect.mnemonics[ins.opcode]
    if not ins.args:
        return mnemonic
    return f"{mnemonic} " + ", ".join(_format_operand(a, dialect) for a in ins.args)


def format_program(program: Program) -> str:
    """Render a Program back to MiniASM text in its own dialect."""
    lines: list[str] = []
    for name, proc in program.procedures.items():
        lines.append(f"proc {name}:")
        for block in proc.blocks:
            label = proc.block_labels.get(block.id)
            if label is not None:
                lines.append(f"{label}:")
            for ins in block.instructions:
                lines.append("  " + format_instruction(ins, program.dialect))
    return "\n".join(lines) + "\n"


def tokenize_instruction(ins: Instruction, dialect: Dialect) -> list[Token]:
    """Flat surface-token view: dialect mnemonic first, memory references
    expanded to base / '+' / offset.  Deterministic per instruction."""
    out: list[Token] = []
    for tok in ins.tokens:
        if tok.kind is TokenKind.OPCODE and tok.text == ins.opcode.value:
            out.append(Token(dialect.mnemonics[ins.opcode], TokenKind.OPCODE))
        elif tok.kind is TokenKind.REGISTER:
            idx = int(tok.text[1:])
            out.append(Token(dialect.registers[idx], TokenKind.REGISTER))
        else:
            out.append(tok)
    return out


def block_tokens(block: BasicBlock, dialect: Dialect) -> list[list[str]]:
    """Surface token texts per instruction of a block."""
    return [[t.text for t in tokenize_instruction(i, dialect)] for i in block.instructions]


def remap_dialect(program: Program, target: Dialect) -> Program:
    """Re-dress a program in another dialect (canonical form is unchanged)."""
    return Program(program.procedures, program.entry, target)
