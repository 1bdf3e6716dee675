"""Masked-symbol abstract domain: trit-masked symbolic bit-vectors.

A masked symbol pairs an opaque symbol id with a per-bit trit mask: every
bit is either known (0/1) or symbolic (unknown but fixed, printed as T).
Finite sets of masked symbols abstract register and memory contents.
Projecting the trits an observer can see, and counting distinct
projections, bounds what that observer learns regardless of how the
symbols are instantiated.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Optional

CONST_SYM = 0

# Symbol ids below this bound are low inputs (allocator results, declared
# unknown-but-public values); ids at or above it are minted during analysis.
FRESH_BASE = 1 << 20

_FRESH = object()  # sentinel: op core requests a fresh symbol


def is_low_input(sym: int) -> bool:
    return 0 < sym < FRESH_BASE


class SymbolAllocator:
    """Mints unique symbol ids; low-input ids sort before analysis ids."""

    def __init__(self) -> None:
        self._next_low = 1
        self._next_fresh = FRESH_BASE

    def fresh(self, low_input: bool = False) -> int:
        if low_input:
            sym = self._next_low
            self._next_low += 1
            if sym >= FRESH_BASE:
                raise RuntimeError("low-input symbol space exhausted")
        else:
            sym = self._next_fresh
            self._next_fresh += 1
        return sym

    @property
    def low_symbols(self) -> list[int]:
        return list(range(1, self._next_low))


@dataclass(frozen=True)
class MaskedSymbol:
    """One symbolic value: symbol id plus trit mask.

    The mask is stored as two bit-vectors: `known` marks positions whose
    bit is known, `val` holds those bits (0 at symbolic positions).  A
    fully known mask denotes a constant and always carries CONST_SYM, so
    equal constants compare equal.
    """

    sym: int
    val: int
    known: int
    width: int

    def __post_init__(self) -> None:
        full = self.full
        assert 0 <= self.val <= full and 0 <= self.known <= full
        assert self.val & ~self.known == 0, "value bits outside known mask"
        if self.known == full:
            assert self.sym == CONST_SYM, "constants use the const symbol"
        else:
            assert self.sym != CONST_SYM, "const symbol cannot have T bits"

    @property
    def full(self) -> int:
        return (1 << self.width) - 1

    @staticmethod
    def make(sym: int, val: int, known: int, width: int) -> "MaskedSymbol":
        if known == (1 << width) - 1:
            sym = CONST_SYM
        return MaskedSymbol(sym, val & known, known, width)

    @staticmethod
    def const(value: int, width: int) -> "MaskedSymbol":
        full = (1 << width) - 1
        return MaskedSymbol(CONST_SYM, value & full, full, width)

    @staticmethod
    def symbolic(sym: int, width: int) -> "MaskedSymbol":
        return MaskedSymbol(sym, 0, 0, width)

    @property
    def is_const(self) -> bool:
        return self.known == self.full

    def trit(self, i: int) -> Optional[int]:
        """Bit i as 0/1, or None when symbolic."""
        if (self.known >> i) & 1:
            return (self.val >> i) & 1
        return None

    def render(self) -> str:
        """Stable debug form, e.g. ``s3:TTTT TT00 0000`` (MSB first)."""
        groups = []
        for hi in range(self.width - 1, -1, -4):
            bits = []
            for i in range(hi, max(hi - 4, -1), -1):
                t = self.trit(i)
                bits.append("T" if t is None else str(t))
            groups.append("".join(bits))
        return f"s{self.sym}:" + " ".join(groups)

    def __repr__(self) -> str:
        return f"<{self.render()}>"


class MSymSet:
    """A finite set of masked symbols, or Top (all bit-vectors)."""

    __slots__ = ("elems", "width")

    def __init__(self, elems: Optional[frozenset], width: int):
        self.elems = elems  # None encodes Top
        self.width = width
        if elems is not None and not elems:
            raise ValueError("abstract value sets are nonempty unless Top")

    @staticmethod
    def of(*ms: MaskedSymbol) -> "MSymSet":
        return MSymSet(frozenset(ms), ms[0].width)

    @staticmethod
    def top(width: int) -> "MSymSet":
        return MSymSet(None, width)

    @staticmethod
    def const(value: int, width: int) -> "MSymSet":
        return MSymSet.of(MaskedSymbol.const(value, width))

    @property
    def is_top(self) -> bool:
        return self.elems is None

    def __iter__(self) -> Iterator[MaskedSymbol]:
        if self.is_top:
            raise ValueError("cannot iterate Top")
        return iter(sorted(self.elems, key=lambda m: (m.sym, m.val, m.known)))

    def __len__(self) -> int:
        if self.is_top:
            raise ValueError("Top has no cardinality")
        return len(self.elems)

    def __eq__(self, other: object) -> bool:
        return (isinstance(other, MSymSet) and self.width == other.width
                and self.elems == other.elems)

    def __hash__(self) -> int:
        return hash((self.elems, self.width))

    def __repr__(self) -> str:
        if self.is_top:
            return f"<Top/{self.width}>"
        return "{" + ", ".join(m.render() for m in self) + "}"

    def union(self, other: "MSymSet", cap: int) -> "MSymSet":
        if self.is_top or other.is_top:
            return MSymSet.top(self.width)
        u = self.elems | other.elems
        if len(u) > cap:
            return MSymSet.top(self.width)
        return MSymSet(u, self.width)


# ---------------------------------------------------------------------------
# Concretization, projection, counting
# ---------------------------------------------------------------------------

Valuation = dict  # symbol id -> bit-vector


def concretize_one(m: MaskedSymbol, lam: Valuation) -> int:
    if m.is_const:
        return m.val
    base = lam[m.sym]
    return (base & ~m.known | m.val) & m.full


def concretize(x: MSymSet, lam: Valuation) -> set[int]:
    """All bit-vectors the set may denote under valuation `lam`."""
    if x.is_top:
        raise ValueError("Top is not concretizable")
    return {concretize_one(m, lam) for m in x}


@dataclass(frozen=True)
class ProjectedTop:
    """Projection of Top: every pattern on the observable bits."""

    card: int


def project_one(m: MaskedSymbol, positions: tuple[int, ...]) -> tuple:
    """Selected trits MSB-first; symbolic trits keep their symbol id and
    bit position, so equal tuples denote equal observations under every
    valuation."""
    out = []
    for i in positions:
        t = m.trit(i)
        out.append(("s", m.sym, i) if t is None else t)
    return tuple(out)


def project(x: MSymSet, positions: tuple[int, ...]):
    """Observer view of an abstract value: set of projected trit tuples."""
    if x.is_top:
        return ProjectedTop(1 << len(positions))
    return frozenset(project_one(m, positions) for m in x)


def count_obs(x: MSymSet, positions: tuple[int, ...]) -> int:
    """Upper bound on distinct observations of x through the projection."""
    p = project(x, positions)
    if isinstance(p, ProjectedTop):
        return p.card
    return len(p)


# ---------------------------------------------------------------------------
# Abstract operators
#
# Each core returns (symdec, val, known) without allocating: symdec is a
# symbol id to keep, or _FRESH.  A symbol is kept only when every symbolic
# result bit provably equals the corresponding bit of that symbol's value,
# which makes symbol-preserving results exact.
# ---------------------------------------------------------------------------


def _same_symbol(x: MaskedSymbol, y: MaskedSymbol) -> bool:
    return x.sym == y.sym and x.sym != CONST_SYM


def _resolve_sym(provs: set) -> object:
    if None in provs or len(provs) > 1:
        return _FRESH
    return provs.pop() if provs else _FRESH


def _bool_core(op: str, x: MaskedSymbol, y: MaskedSymbol):
    full = x.full
    xk, yk = x.known, y.known
    xt, yt = full & ~xk, full & ~yk
    if op == "and":
        known = (xk & yk) | (xk & ~x.val) | (yk & ~y.val)
        val = x.val & y.val
        px = xt & yk & y.val          # y known 1 acts neutral
        py = yt & xk & x.val
        both = xt & yt
        anti = 0
    elif op == "or":
        known = (xk & yk) | (xk & x.val) | (yk & y.val)
        val = (x.val | y.val) & known
        px = xt & yk & ~y.val & full  # y known 0 acts neutral
        py = yt & xk & ~x.val & full
        both = xt & yt
        anti = 0
    else:  # xor
        same = _same_symbol(x, y)
        known = (xk & yk) | ((xt & yt) if same else 0)
        val = (x.val ^ y.val) & xk & yk
        px = xt & yk & ~y.val & full   # y known 0 acts neutral
        py = yt & xk & ~x.val & full
        anti = (xt & yk & y.val) | (yt & xk & x.val)  # flipped bit: no symbol
        both = (xt & yt) if not same else 0
    known &= full
    if known == full:
        return CONST_SYM, val, known
    provs: set = set()
    if px:
        provs.add(x.sym)
    if py:
        provs.add(y.sym)
    if both:
        provs.add(x.sym if _same_symbol(x, y) else None)
    if anti:
        provs.add(None)
    return _resolve_sym(provs), val, known


def _add_core(x: MaskedSymbol, y: MaskedSymbol):
    full, w = x.full, x.width
    unknown = full & ~(x.known & y.known)
    if unknown == 0:
        return CONST_SYM, (x.val + y.val) & full, full
    i = (unknown & -unknown).bit_length() - 1  # first symbolic position
    lowm = (1 << i) - 1
    s = (x.val & lowm) + (y.val & lowm)
    carry = s >> i
    val, known = s & lowm, lowm
    # Keep the symbol only when the constant operand is zero on and above
    # the other's symbolic region and no carry enters it.
    if y.is_const and x.known >> i == 0 and y.val >> i == 0 and carry == 0:
        return x.sym, val, known
    if x.is_const and y.known >> i == 0 and x.val >> i == 0 and carry == 0:
        return y.sym, val, known
    return _FRESH, val, known


def _tnot(t: Optional[int]) -> Optional[int]:
    return None if t is None else 1 - t


def _tmaj(a: Optional[int], b: Optional[int], c: Optional[int]) -> Optional[int]:
    ks = [v for v in (a, b, c) if v is not None]
    if len(ks) == 3:
        return 1 if sum(ks) >= 2 else 0
    if len(ks) == 2 and ks[0] == ks[1]:
        return ks[0]
    return None


def _sub_core(x: MaskedSymbol, y: MaskedSymbol):
    full, w = x.full, x.width
    if x.known == full and y.known == full:
        return CONST_SYM, (x.val - y.val) & full, full
    same = _same_symbol(x, y)
    borrow: Optional[int] = 0
    val = known = 0
    first_t = None
    borrow_at_first_t: Optional[int] = None
    for i in range(w):
        xt, yt = x.trit(i), y.trit(i)
        if first_t is None and (xt is None or yt is None):
            first_t = i
            borrow_at_first_t = borrow
        if same and xt is None and yt is None:
            bit = borrow  # x_i = y_i, so the difference bit is the borrow
        elif xt is not None and yt is not None and borrow is not None:
            bit = xt ^ yt ^ borrow
            borrow = ((1 - xt) & yt) | ((1 - xt) & borrow) | (yt & borrow)
        else:
            bit = None
            borrow = _tmaj(_tnot(xt), yt, borrow)
        if bit is not None:
            known |= 1 << i
            val |= bit << i
    if known == full:
        return CONST_SYM, val, known
    if (y.known == full and x.known >> first_t == 0
            and y.val >> first_t == 0 and borrow_at_first_t == 0):
        return x.sym, val, known
    return _FRESH, val, known


def _mul_core(x: MaskedSymbol, c: int):
    full = x.full
    if x.is_const:
        return CONST_SYM, (x.val * c) & full, full
    return _FRESH, 0, 0  # any symbolic bit poisons the whole product


def _shl_core(x: MaskedSymbol, k: int):
    full = x.full
    if k == 0:
        return x.sym if not x.is_const else CONST_SYM, x.val, x.known
    if x.is_const:
        return CONST_SYM, (x.val << k) & full, full
    val = (x.val << k) & full
    known = ((x.known << k) | ((1 << k) - 1)) & full
    return _FRESH, val, known


_CORES = {
    "and": lambda x, y: _bool_core("and", x, y),
    "or": lambda x, y: _bool_core("or", x, y),
    "xor": lambda x, y: _bool_core("xor", x, y),
    "add": _add_core,
    "sub": _sub_core,
}


def _finish(core_result, alloc: SymbolAllocator, width: int) -> MaskedSymbol:
    symdec, val, known = core_result
    if symdec is _FRESH:
        symdec = alloc.fresh(False)
    return MaskedSymbol.make(symdec, val, known, width)


def abs_and(x: MaskedSymbol, y: MaskedSymbol, alloc: SymbolAllocator) -> MaskedSymbol:
    return _finish(_bool_core("and", x, y), alloc, x.width)


def abs_or(x: MaskedSymbol, y: MaskedSymbol, alloc: SymbolAllocator) -> MaskedSymbol:
    return _finish(_bool_core("or", x, y), alloc, x.width)


def abs_xor(x: MaskedSymbol, y: MaskedSymbol, alloc: SymbolAllocator) -> MaskedSymbol:
    return _finish(_bool_core("xor", x, y), alloc, x.width)


def abs_add(x: MaskedSymbol, y: MaskedSymbol, alloc: SymbolAllocator) -> MaskedSymbol:
    return _finish(_add_core(x, y), alloc, x.width)


def abs_sub(x: MaskedSymbol, y: MaskedSymbol, alloc: SymbolAllocator) -> MaskedSymbol:
    return _finish(_sub_core(x, y), alloc, x.width)


def abs_mul(x: MaskedSymbol, c: int, alloc: SymbolAllocator) -> MaskedSymbol:
    return _finish(_mul_core(x, c), alloc, x.width)


def abs_shl(x: MaskedSymbol, k: int, alloc: SymbolAllocator) -> MaskedSymbol:
    return _finish(_shl_core(x, k), alloc, x.width)


# ---------------------------------------------------------------------------
# Origin/offset congruences
# ---------------------------------------------------------------------------


class OffsetTable:
    """Tracks, per masked symbol, the origin it was derived from by
    constant additions and the cumulative offset, so equal pointers can be
    recognized without knowing the base.  One table per analysis run."""

    def __init__(self) -> None:
        self._orig: dict[MaskedSymbol, MaskedSymbol] = {}
        self._off: dict[MaskedSymbol, int] = {}
        self._succ: dict[tuple[MaskedSymbol, int], MaskedSymbol] = {}

    def ensure(self, x: MaskedSymbol) -> None:
        if x not in self._orig:
            self._orig[x] = x
            self._off[x] = 0
            self._succ[(x, 0)] = x

    def origoff(self, x: MaskedSymbol) -> tuple[MaskedSymbol, int]:
        self.ensure(x)
        return self._orig[x], self._off[x]

    def register(self, y: MaskedSymbol, orig: MaskedSymbol, off: int) -> None:
        if y in self._orig:
            return
        self._orig[y] = orig
        self._off[y] = off
        self._succ.setdefault((orig, off), y)

    def succ(self, orig: MaskedSymbol, off: int) -> Optional[MaskedSymbol]:
        return self._succ.get((orig, off))


def add_offset(x: MaskedSymbol, c: int, tbl: OffsetTable,
               alloc: SymbolAllocator) -> MaskedSymbol:
    """Add the signed constant c to x, canonicalizing through the table:
    an offset reached before yields the identical masked symbol."""
    if x.is_const:
        return MaskedSymbol.const(x.val + c, x.width)
    orig, off = tbl.origoff(x)
    hit = tbl.succ(orig, off + c)
    if hit is not None:
        return hit
    cv = MaskedSymbol.const(abs(c), x.width)
    y = abs_sub(x, cv, alloc) if c < 0 else abs_add(x, cv, alloc)
    if not y.is_const:
        tbl.register(y, orig, off + c)
    return y


# ---------------------------------------------------------------------------
# Set lifting and flag inference
# ---------------------------------------------------------------------------


@dataclass
class OpCtx:
    """Shared per-run machinery the lifted operators need."""

    alloc: SymbolAllocator
    tbl: OffsetTable
    cap: int = 256


def _pair_op(op: str, a: MaskedSymbol, b: MaskedSymbol, ctx: OpCtx) -> MaskedSymbol:
    if op == "add":
        if a.is_const and b.is_const:
            return MaskedSymbol.const(a.val + b.val, a.width)
        if b.is_const:
            return add_offset(a, b.val, ctx.tbl, ctx.alloc)
        if a.is_const:
            return add_offset(b, a.val, ctx.tbl, ctx.alloc)
        y = abs_add(a, b, ctx.alloc)
        if not y.is_const:
            ctx.tbl.ensure(y)  # symbolic-symbolic sums are their own origin
        return y
    if op == "sub":
        if a.is_const and b.is_const:
            return MaskedSymbol.const(a.val - b.val, a.width)
        if b.is_const:
            return add_offset(a, -b.val, ctx.tbl, ctx.alloc)
        y = abs_sub(a, b, ctx.alloc)
        if not y.is_const:
            ctx.tbl.ensure(y)
        return y
    if op == "and":
        return abs_and(a, b, ctx.alloc)
    if op == "or":
        return abs_or(a, b, ctx.alloc)
    if op == "xor":
        return abs_xor(a, b, ctx.alloc)
    raise ValueError(f"unknown operator {op!r}")


def lift2(op: str, xs: MSymSet, ys: MSymSet, ctx: OpCtx) -> MSymSet:
    """Pairwise application over the product, deduplicated; Top-absorbing
    and capped at ctx.cap elements."""
    if xs.is_top or ys.is_top:
        return MSymSet.top(xs.width)
    out = set()
    for a in xs:
        for b in ys:
            out.add(_pair_op(op, a, b, ctx))
            if len(out) > ctx.cap:
                return MSymSet.top(xs.width)
    return MSymSet(frozenset(out), xs.width)


def lift_imm(op: str, xs: MSymSet, c: int, ctx: OpCtx) -> MSymSet:
    """Lifted shift/scale by an immediate."""
    if xs.is_top:
        return MSymSet.top(xs.width)
    f = abs_mul if op == "mul" else abs_shl
    out = {f(a, c, ctx.alloc) for a in xs}
    if len(out) > ctx.cap:
        return MSymSet.top(xs.width)
    return MSymSet(frozenset(out), xs.width)


class FlagTrits(NamedTuple):
    zf: Optional[int]  # None means any value possible
    cf: Optional[int]


def _const_pair_flags(op: str, a: int, b: int, width: int) -> tuple[int, int]:
    full = (1 << width) - 1
    if op in ("and", "or", "xor"):
        r = {"and": a & b, "or": a | b, "xor": a ^ b}[op]
        return (1 if r == 0 else 0, 0)
    if op == "add":
        s = a + b
        return (1 if s & full == 0 else 0, s >> width)
    if op in ("sub", "cmp"):
        return (1 if (a - b) & full == 0 else 0, 1 if a < b else 0)
    if op == "mul":
        return (1 if (a * b) & full == 0 else 0, 0)
    if op == "shl":
        return (1 if (a << b) & full == 0 else 0, 0)
    raise ValueError(op)


def _pair_flags(op: str, a: MaskedSymbol, b: MaskedSymbol,
                ctx: OpCtx) -> tuple[Optional[int], Optional[int]]:
    if a.is_const and b.is_const:
        return _const_pair_flags(op, a.val, b.val, a.width)
    if op in ("and", "or", "xor"):
        symdec, val, known = _bool_core(op, a, b)
        # Only a known non-zero result bit forces ZF; an all-zero result of
        # a symbolic operand is left undetermined.
        zf = 0 if val != 0 else None
        return zf, 0
    if op == "add":
        symdec, val, known = _add_core(a, b)
        zf = 0 if val != 0 else None
        # Symbol preservation certifies the symbolic high bits are untouched.
        cf = 0 if isinstance(symdec, int) and symdec != CONST_SYM else None
        return zf, cf
    if op in ("sub", "cmp"):
        if a == b:
            return 1, None
        oa, offa = ctx.tbl.origoff(a)
        ob, offb = ctx.tbl.origoff(b)
        if oa == ob and offa != offb:
            return 0, None
        return None, None
    if op in ("mul", "shl"):
        return None, None
    raise ValueError(op)


def infer_flags(op: str, xs: MSymSet, ys: MSymSet, ctx: OpCtx) -> FlagTrits:
    """Strongest ZF/CF trits derivable uniformly across all operand pairs."""
    if xs.is_top or ys.is_top:
        return FlagTrits(None, None)
    zfs, cfs = set(), set()
    for a in xs:
        for b in ys:
            zf, cf = _pair_flags(op, a, b, ctx)
            zfs.add(zf)
            cfs.add(cf)

    def unani(vals: set) -> Optional[int]:
        return vals.pop() if len(vals) == 1 and None not in vals else None

    return FlagTrits(unani(zfs), unani(cfs))
