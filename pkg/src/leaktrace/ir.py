"""Toy register-machine IR: textual format, code layout, CFG.

One instruction per line. ``LABEL:`` lines name jump targets; ``@0xADDR``
and ``size=N`` annotations pin an instruction's fetch address and byte
size so instruction-cache block boundaries can be placed exactly.
Directives declare the initial state: secret values as explicit finite
sets, public values as constants or fresh symbols.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional

OPCODES = {
    "MOV", "AND", "OR", "XOR", "ADD", "SUB", "MUL", "SHL",
    "CMP", "LOAD", "STORE", "MALLOC", "JMP", "JZ", "JNZ", "HALT",
}

VALID_WIDTHS = (8, 12, 16, 32)
DEFAULT_SIZE = 4
DEFAULT_BASE = 0x1000


class ParseError(ValueError):
    def __init__(self, msg: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line else msg)


@dataclass(frozen=True)
class Register:
    index: int

    def __post_init__(self) -> None:
        if not 0 <= self.index < 16:
            raise ValueError(f"register index {self.index} out of range")

    def __repr__(self) -> str:
        return f"r{self.index}"


@dataclass(frozen=True)
class Operand:
    """Register or immediate."""

    kind: str  # "register" | "immediate"
    value: object

    @staticmethod
    def reg(i: int) -> "Operand":
        return Operand("register", Register(i))

    @staticmethod
    def imm(v: int) -> "Operand":
        return Operand("immediate", v)

    @property
    def is_reg(self) -> bool:
        return self.kind == "register"


@dataclass(frozen=True)
class MemOperand:
    """Memory reference of the form [base_register + displacement]."""

    base: Register
    disp: int


@dataclass
class Instr:
    opcode: str
    operands: tuple
    addr: int = 0
    size: int = DEFAULT_SIZE
    target: Optional[str] = None  # label, for jumps
    line: int = 0

    def __repr__(self) -> str:
        return f"<{self.addr:#x}: {self.opcode} {self.operands}>"


@dataclass(frozen=True)
class InitDirective:
    kind: str     # high | low_const | low_symbolic | mem_high | mem_low
    target: object  # Register or MemOperand
    values: tuple = ()


@dataclass
class Program:
    instrs: list[Instr]
    labels: dict[str, int]
    directives: list[InitDirective]
    base_addr: int
    bitwidth: int
    name: str = "<program>"

    def target_index(self, instr: Instr) -> int:
        return self.labels[instr.target]


_REG_RE = re.compile(r"^[rR](\d{1,2})$")
_MEM_RE = re.compile(r"^\[\s*[rR](\d{1,2})\s*(?:([+-])\s*(\w+))?\s*\]$")
_LABEL_RE = re.compile(r"^([A-Za-z_]\w*):(.*)$")


def _parse_int(tok: str, line: int) -> int:
    try:
        return int(tok, 0)
    except ValueError:
        raise ParseError(f"bad integer {tok!r}", line)


def _parse_reg(tok: str, line: int) -> Register:
    m = _REG_RE.match(tok.strip())
    if not m or int(m.group(1)) > 15:
        raise ParseError(f"expected register r0..r15, got {tok!r}", line)
    return Register(int(m.group(1)))


def _parse_mem(tok: str, line: int) -> MemOperand:
    m = _MEM_RE.match(tok.strip())
    if not m:
        raise ParseError(f"expected memory operand [rN+disp], got {tok!r}", line)
    idx = int(m.group(1))
    if idx > 15:
        raise ParseError(f"register index {idx} out of range", line)
    disp = 0
    if m.group(2):
        disp = _parse_int(m.group(3), line)
        if m.group(2) == "-":
            disp = -disp
    return MemOperand(Register(idx), disp)


def _parse_operand(tok: str, line: int) -> Operand:
    tok = tok.strip()
    if _REG_RE.match(tok):
        return Operand.reg(int(tok[1:]))
    return Operand.imm(_parse_int(tok, line))


def _split_operands(rest: str) -> list[str]:
    """Split on top-level commas (commas inside [...] do not occur)."""
    return [p.strip() for p in rest.split(",")] if rest.strip() else []


def _parse_value_set(text: str, line: int) -> tuple[int, ...]:
    text = text.strip()
    if not (text.startswith("{") and text.endswith("}")):
        raise ParseError("expected a value set {v1, v2, ...}", line)
    inner = text[1:-1].strip()
    if not inner:
        raise ParseError("value sets must be nonempty", line)
    vals = tuple(_parse_int(v.strip(), line) for v in inner.split(","))
    return vals


def _parse_directive(line_text: str, lineno: int,
                     prog_state: dict) -> Optional[InitDirective]:
    parts = line_text.split(None, 1)
    word = parts[0]
    rest = parts[1] if len(parts) > 1 else ""
    if word == ".base":
        prog_state["base"] = _parse_int(rest.strip(), lineno)
        return None
    if word == ".bitwidth":
        w = _parse_int(rest.strip(), lineno)
        if w not in VALID_WIDTHS:
            raise ParseError(f"bitwidth must be one of {VALID_WIDTHS}", lineno)
        prog_state["bitwidth"] = w
        return None
    if word == ".high":
        tgt, _, vals = rest.partition("{")
        return InitDirective("high", _parse_reg(tgt, lineno),
                             _parse_value_set("{" + vals, lineno))
    if word == ".low":
        tgt, _, val = rest.partition("=")
        return InitDirective("low_const", _parse_reg(tgt, lineno),
                             (_parse_int(val.strip(), lineno),))
    if word == ".lowsym":
        tgt = rest.strip()
        target = _parse_mem(tgt, lineno) if tgt.startswith("[") \
            else _parse_reg(tgt, lineno)
        return InitDirective("low_symbolic", target)
    if word == ".memhigh":
        tgt, _, vals = rest.partition("{")
        return InitDirective("mem_high", _parse_mem(tgt, lineno),
                             _parse_value_set("{" + vals, lineno))
    if word == ".memlow":
        tgt, _, val = rest.partition("=")
        return InitDirective("mem_low", _parse_mem(tgt, lineno),
                             (_parse_int(val.strip(), lineno),))
    raise ParseError(f"unknown directive {word!r}", lineno)


def _parse_instr(text: str, lineno: int, width: int) -> Instr:
    addr_override: Optional[int] = None
    size = DEFAULT_SIZE
    toks = text.split()
    i = 0
    while i < len(toks) and (toks[i].startswith("@") or toks[i].startswith("size=")):
        if toks[i].startswith("@"):
            addr_override = _parse_int(toks[i][1:], lineno)
        else:
            size = _parse_int(toks[i][5:], lineno)
            if size < 1:
                raise ParseError("instruction size must be positive", lineno)
        i += 1
    if i >= len(toks):
        raise ParseError("annotation without instruction", lineno)
    op = toks[i].upper()
    if op not in OPCODES:
        raise ParseError(f"unknown opcode {toks[i]!r}", lineno)
    ops = _split_operands(" ".join(toks[i + 1:]))

    full = (1 << width) - 1

    def imm_ok(v: int) -> int:
        if not -(1 << width) < v <= full:
            raise ParseError(f"immediate {v} does not fit in {width} bits", lineno)
        return v

    operands: tuple
    target = None
    if op == "HALT":
        if ops:
            raise ParseError("HALT takes no operands", lineno)
        operands = ()
    elif op in ("JMP", "JZ", "JNZ"):
        if len(ops) != 1:
            raise ParseError(f"{op} takes one label", lineno)
        target = ops[0]
        operands = ()
    elif op == "LOAD":
        if len(ops) != 2:
            raise ParseError("LOAD takes rDst, [rBase+disp]", lineno)
        operands = (_parse_reg(ops[0], lineno), _parse_mem(ops[1], lineno))
    elif op == "STORE":
        if len(ops) != 2:
            raise ParseError("STORE takes [rBase+disp], src", lineno)
        operands = (_parse_mem(ops[0], lineno), _parse_operand(ops[1], lineno))
    elif op == "MALLOC":
        if len(ops) != 2:
            raise ParseError("MALLOC takes rDst, size", lineno)
        sz = _parse_int(ops[1], lineno)
        if sz <= 0:
            raise ParseError("allocation size must be positive", lineno)
        operands = (_parse_reg(ops[0], lineno), imm_ok(sz))
    elif op in ("MUL", "SHL"):
        if len(ops) != 2:
            raise ParseError(f"{op} takes rDst, immediate", lineno)
        src = _parse_operand(ops[1], lineno)
        if src.is_reg:
            raise ParseError(f"{op} second operand must be an immediate", lineno)
        operands = (_parse_reg(ops[0], lineno), imm_ok(src.value))
    else:  # MOV, AND, OR, XOR, ADD, SUB, CMP
        if len(ops) != 2:
            raise ParseError(f"{op} takes two operands", lineno)
        src = _parse_operand(ops[1], lineno)
        if not src.is_reg:
            imm_ok(src.value)
        operands = (_parse_reg(ops[0], lineno), src)
    return Instr(op, operands, size=size, target=target, line=lineno,
                 addr=addr_override if addr_override is not None else -1)


def parse(text: str, name: str = "<program>") -> Program:
    """Parse textual IR into a laid-out, label-resolved Program."""
    state = {"base": DEFAULT_BASE, "bitwidth": 32}
    directives: list[InitDirective] = []
    raw: list[tuple[int, str, tuple]] = []  # (lineno, text, labels)
    pending_labels: list[tuple[str, int]] = []
    seen_instr = False

    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split(";", 1)[0].strip()
        if not line:
            continue
        m = _LABEL_RE.match(line)
        if m:
            pending_labels.append((m.group(1), lineno))
            line = m.group(2).strip()
            if not line:
                continue
        if line.startswith("."):
            if seen_instr:
                raise ParseError("directives must precede instructions", lineno)
            d = _parse_directive(line, lineno, state)
            if d is not None:
                directives.append(d)
            continue
        seen_instr = True
        raw.append((lineno, line, tuple(l for l, _ in pending_labels)))
        pending_labels = []
    if pending_labels:
        raise ParseError("label at end of file has no instruction",
                         pending_labels[0][1])

    width = state["bitwidth"]
    instrs: list[Instr] = []
    labels: dict[str, int] = {}
    for lineno, line, lbls in raw:
        idx = len(instrs)
        if lbls:
            for lbl in lbls:
                if lbl in labels:
                    raise ParseError(f"duplicate label {lbl!r}", lineno)
                labels[lbl] = idx
        instrs.append(_parse_instr(line, lineno, width))

    if not instrs:
        raise ParseError("program has no instructions")

    # Layout: cumulative sizes from base, @addr overrides reset the cursor.
    full = (1 << width) - 1
    cursor = state["base"]
    for ins in instrs:
        if ins.addr == -1:
            ins.addr = cursor
        else:
            cursor = ins.addr
        if ins.addr > full:
            raise ParseError(f"address {ins.addr:#x} exceeds {width}-bit space",
                             ins.line)
        cursor = ins.addr + ins.size
    spans = sorted((i.addr, i.addr + i.size, i.line) for i in instrs)
    for (s1, e1, l1), (s2, e2, l2) in zip(spans, spans[1:]):
        if s2 < e1:
            raise ParseError(f"instruction address ranges overlap "
                             f"(lines {l1} and {l2})", l2)

    # Resolve jumps and check totality.
    for idx, ins in enumerate(instrs):
        if ins.target is not None and ins.target not in labels:
            raise ParseError(f"unresolved jump target {ins.target!r}", ins.line)
        if ins.opcode != "HALT" and ins.opcode != "JMP" and idx + 1 >= len(instrs):
            raise ParseError("control falls off the end of the program", ins.line)

    prog = Program(instrs, labels, directives, state["base"], width, name)
    _check_single_reachable_halt(prog)
    return prog


def _successor_indices(prog: Program, idx: int) -> list[int]:
    ins = prog.instrs[idx]
    if ins.opcode == "HALT":
        return []
    if ins.opcode == "JMP":
        return [prog.target_index(ins)]
    if ins.opcode in ("JZ", "JNZ"):
        return [prog.target_index(ins), idx + 1]
    return [idx + 1]


def _check_single_reachable_halt(prog: Program) -> None:
    seen = set()
    stack = [0]
    halts = set()
    while stack:
        i = stack.pop()
        if i in seen:
            continue
        seen.add(i)
        if prog.instrs[i].opcode == "HALT":
            halts.add(i)
            continue
        stack.extend(_successor_indices(prog, i))
    if len(halts) != 1:
        raise ParseError(f"program must have exactly one reachable HALT, "
                         f"found {len(halts)}")


@dataclass
class BasicBlock:
    index: int
    instr_indices: list[int]
    successors: list[int] = field(default_factory=list)


@dataclass
class CFG:
    blocks: list[BasicBlock]
    block_of: dict[int, int]  # instruction index -> block index

    @property
    def entry(self) -> BasicBlock:
        return self.blocks[0]


def build_cfg(prog: Program) -> CFG:
    """Partition into basic blocks and wire successor edges."""
    leaders = {0}
    for idx, ins in enumerate(prog.instrs):
        if ins.opcode in ("JMP", "JZ", "JNZ"):
            leaders.add(prog.target_index(ins))
            if idx + 1 < len(prog.instrs):
                leaders.add(idx + 1)
        elif ins.opcode == "HALT" and idx + 1 < len(prog.instrs):
            leaders.add(idx + 1)
    order = sorted(leaders)
    blocks: list[BasicBlock] = []
    block_of: dict[int, int] = {}
    for bi, start in enumerate(order):
        end = order[bi + 1] if bi + 1 < len(order) else len(prog.instrs)
        blk = BasicBlock(bi, list(range(start, end)))
        for i in blk.instr_indices:
            block_of[i] = bi
        blocks.append(blk)
    for blk in blocks:
        last = blk.instr_indices[-1]
        blk.successors = sorted({block_of[s]
                                 for s in _successor_indices(prog, last)})
    return CFG(blocks, block_of)
