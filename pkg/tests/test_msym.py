import itertools

import pytest
from hypothesis import given, settings, strategies as st

from leaktrace.msym import (
    CONST_SYM, MSymSet, MaskedSymbol, OffsetTable, OpCtx, SymbolAllocator,
    abs_add, abs_and, abs_mul, abs_or, abs_shl, abs_sub, abs_xor, add_offset,
    concretize, count_obs, infer_flags, is_low_input, lift2, project,
    ProjectedTop,
)

W = 8
FULL = (1 << W) - 1


def ms(sym, trits):
    """Build a masked symbol from an MSB-first trit string like 'TT01'."""
    val = known = 0
    for ch in trits:
        val <<= 1
        known <<= 1
        if ch != "T":
            known |= 1
            val |= int(ch)
    return MaskedSymbol.make(sym, val, known, len(trits))


def concrete_op(op, a, b, width):
    full = (1 << width) - 1
    return {
        "and": a & b, "or": a | b, "xor": a ^ b,
        "add": (a + b) & full, "sub": (a - b) & full,
    }[op]


ABS_OPS = {"and": abs_and, "or": abs_or, "xor": abs_xor,
           "add": abs_add, "sub": abs_sub}


def check_local_soundness(op, x, y, alloc):
    """Independent oracle: enumerate every valuation of the operand
    symbols and compare against the abstract result's known trits; when
    the symbol is preserved the result must match exactly."""
    z = ABS_OPS[op](x, y, alloc)
    width = x.width
    syms = {m.sym for m in (x, y) if not m.is_const}
    for combo in itertools.product(range(1 << width), repeat=len(syms)):
        lam = dict(zip(sorted(syms), combo))
        a = concretize(MSymSet.of(x), lam).pop()
        b = concretize(MSymSet.of(y), lam).pop()
        r = concrete_op(op, a, b, width)
        assert r & z.known == z.val, (op, x, y, z, lam)
        if not z.is_const and z.sym in syms:
            lam2 = dict(lam)
            assert r == concretize(MSymSet.of(z), lam2).pop(), \
                (op, x, y, z, lam)
    return z


class TestConcretize:
    def test_all_symbolic_mask_is_identity(self):
        x = MSymSet.of(ms(1, "TTT"))
        assert concretize(x, {1: 0b101}) == {0b101}

    def test_masked_lsb_forced(self):
        x = MSymSet.of(ms(1, "TT1"))
        assert concretize(x, {1: 0b100}) == {0b101}

    def test_collision_under_shared_valuation(self):
        x = MSymSet.of(ms(1, "001"), ms(2, "TT1"), ms(3, "111"))
        assert concretize(x, {1: 0, 2: 0, 3: 0}) == {0b001, 0b111}

    def test_top_is_not_concretizable(self):
        with pytest.raises(ValueError):
            concretize(MSymSet.top(4), {})


class TestProjectAndCount:
    def setup_method(self):
        self.x = MSymSet.of(ms(1, "001"), ms(2, "TT1"), ms(3, "111"))

    def test_two_msbs(self):
        p = project(self.x, (2, 1))
        assert p == frozenset({(0, 0), (("s", 2, 2), ("s", 2, 1)), (1, 1)})
        assert count_obs(self.x, (2, 1)) == 3

    def test_lsb_only(self):
        assert project(self.x, (0,)) == frozenset({(1,)})
        assert count_obs(self.x, (0,)) == 1

    def test_singleton_in_singleton_out(self):
        x = MSymSet.of(ms(1, "TT0"))
        assert count_obs(x, (2, 1, 0)) == 1

    def test_top_counts_observable_patterns(self):
        assert count_obs(MSymSet.top(8), (7, 6)) == 4
        assert isinstance(project(MSymSet.top(8), (7, 6)), ProjectedTop)

    def test_projection_monotone_under_subset(self):
        small = MSymSet.of(ms(1, "001"), ms(2, "TT1"))
        for pos in [(2, 1), (0,), (2, 1, 0), ()]:
            assert count_obs(small, pos) <= count_obs(self.x, pos)


class TestBoolOps:
    def test_and_aligns_pointer(self):
        alloc = SymbolAllocator()
        s = alloc.fresh(True)
        x = MaskedSymbol.symbolic(s, 32)
        z = abs_and(x, MaskedSymbol.const(0xFFFFFFC0, 32), alloc)
        assert z.sym == s and z.known == 0x3F and z.val == 0
        assert z.render() == "s1:TTTT TTTT TTTT TTTT TTTT TTTT TT00 0000"

    def test_and_idempotent_same_symbol(self):
        alloc = SymbolAllocator()
        x = ms(1, "T" * 8)
        z = abs_and(x, x, alloc)
        assert z == x

    def test_and_distinct_symbols_goes_fresh(self):
        alloc = SymbolAllocator()
        alloc.fresh(True), alloc.fresh(True)
        z = check_local_soundness("and", ms(1, "TTTT"), ms(2, "TTTT"), alloc)
        assert z.sym not in (1, 2, CONST_SYM) and z.known == 0

    def test_xor_same_symbol_cancels(self):
        alloc = SymbolAllocator()
        z = abs_xor(ms(1, "T" * 8), ms(1, "T" * 8), alloc)
        assert z == MaskedSymbol.const(0, 8)

    def test_xor_neutral_constant_keeps_symbol(self):
        alloc = SymbolAllocator()
        z = abs_xor(ms(1, "T" * 8), MaskedSymbol.const(0, 8), alloc)
        assert z == ms(1, "T" * 8)

    def test_xor_constant_flips_known_bits(self):
        alloc = SymbolAllocator()
        z = check_local_soundness(
            "xor", ms(1, "TTTT1010"), MaskedSymbol.const(0b0110, 8), alloc)
        assert z == ms(1, "TTTT1100")


class TestAddSub:
    def test_add_crossing_into_symbolic_region_goes_fresh(self):
        alloc = SymbolAllocator()
        alloc.fresh(True)
        x = ms(1, "TT000000")
        z = check_local_soundness(
            "add", x, MaskedSymbol.const(0x40, 8), alloc)
        assert z.sym not in (1, CONST_SYM)
        assert z.known == 0x3F and z.val == 0

    def test_add_absorbed_in_masked_prefix_keeps_symbol(self):
        alloc = SymbolAllocator()
        alloc.fresh(True)
        z = check_local_soundness(
            "add", ms(1, "TT000000"), MaskedSymbol.const(0x3F, 8), alloc)
        assert z == ms(1, "TT111111")

    def test_add_zero_is_identity(self):
        alloc = SymbolAllocator()
        z = abs_add(ms(1, "T" * 8), MaskedSymbol.const(0, 8), alloc)
        assert z == ms(1, "T" * 8)

    def test_sub_same_symbol_is_zero(self):
        alloc = SymbolAllocator()
        z = abs_sub(ms(1, "T" * 8), ms(1, "T" * 8), alloc)
        assert z == MaskedSymbol.const(0, 8)

    def test_sub_zero_is_identity(self):
        alloc = SymbolAllocator()
        z = abs_sub(ms(1, "T" * 8), MaskedSymbol.const(0, 8), alloc)
        assert z == ms(1, "T" * 8)

    def test_sub_constant_without_borrow_keeps_symbol(self):
        alloc = SymbolAllocator()
        alloc.fresh(True)
        z = check_local_soundness(
            "sub", ms(1, "TTTT0110"), MaskedSymbol.const(0b0010, 8), alloc)
        assert z == ms(1, "TTTT0100")

    def test_sub_same_symbol_distinct_masks_is_exact(self):
        alloc = SymbolAllocator()
        alloc.fresh(True)
        z = check_local_soundness("sub", ms(1, "TT10"), ms(1, "TT01"), alloc)
        assert z == MaskedSymbol.const(1, 4)


class TestMulShl:
    def test_const_mul(self):
        alloc = SymbolAllocator()
        z = abs_mul(MaskedSymbol.const(5, 8), 8, alloc)
        assert z == MaskedSymbol.const(40, 8)

    def test_shl_shifts_trits_fresh(self):
        alloc = SymbolAllocator()
        alloc.fresh(True)
        x = ms(1, "00000TTT")
        z = abs_shl(x, 2, alloc)
        assert z.sym not in (1, CONST_SYM)
        # trit vector shifted left, zero fill: 000TTT00
        assert z == MaskedSymbol.make(z.sym, 0, 0b11100011, 8)
        # independent check: shifted concrete values always match known trits
        for v in range(8):
            r = ((v) << 2) & FULL
            assert r & z.known == z.val

    def test_const_shl(self):
        alloc = SymbolAllocator()
        assert abs_shl(MaskedSymbol.const(3, 8), 4, alloc) == \
            MaskedSymbol.const(48, 8)

    def test_symbolic_mul_loses_everything(self):
        alloc = SymbolAllocator()
        alloc.fresh(True)
        z = abs_mul(ms(1, "TTTTTTTT"), 3, alloc)
        assert z.known == 0 and z.sym not in (1, CONST_SYM)


class TestOffsets:
    def setup_method(self):
        self.alloc = SymbolAllocator()
        self.tbl = OffsetTable()
        self.base = MaskedSymbol.symbolic(self.alloc.fresh(True), 12)

    def test_same_offset_is_reused(self):
        y = add_offset(self.base, 10, self.tbl, self.alloc)
        z = add_offset(self.base, 10, self.tbl, self.alloc)
        assert y is z

    def test_zero_offset_is_identity(self):
        assert add_offset(self.base, 0, self.tbl, self.alloc) is self.base

    def test_offsets_compose_through_origin(self):
        w = add_offset(add_offset(self.base, 4, self.tbl, self.alloc), 6,
                       self.tbl, self.alloc)
        assert w is add_offset(self.base, 10, self.tbl, self.alloc)

    def test_negative_offsets_track(self):
        down = add_offset(self.base, -4, self.tbl, self.alloc)
        back = add_offset(down, 4, self.tbl, self.alloc)
        assert back is self.base


class TestFlags:
    def setup_method(self):
        self.alloc = SymbolAllocator()
        self.tbl = OffsetTable()
        self.ctx = OpCtx(self.alloc, self.tbl, 256)

    def test_cmp_identical_sets_zf(self):
        x = MSymSet.of(ms(1, "T" * 8))
        assert infer_flags("cmp", x, x, self.ctx).zf == 1

    def test_cmp_same_origin_distinct_offsets_clears_zf(self):
        base = MaskedSymbol.symbolic(self.alloc.fresh(True), 12)
        a = add_offset(base, 0, self.tbl, self.alloc)
        b = add_offset(base, 40, self.tbl, self.alloc)
        f = infer_flags("cmp", MSymSet.of(a), MSymSet.of(b), self.ctx)
        assert f.zf == 0

    def test_and_masked_zero_result_stays_unknown(self):
        x = MSymSet.of(ms(1, "TT000000"))
        f = infer_flags("and", x, MSymSet.const(0x3F, 8), self.ctx)
        assert f.zf is None and f.cf == 0

    def test_const_pairs_are_exact(self):
        f = infer_flags("cmp", MSymSet.const(5, 8), MSymSet.const(5, 8), self.ctx)
        assert f == (1, 0)
        f = infer_flags("cmp", MSymSet.const(3, 8), MSymSet.const(5, 8), self.ctx)
        assert f == (0, 1)
        f = infer_flags("add", MSymSet.const(0xFF, 8), MSymSet.const(1, 8), self.ctx)
        assert f == (1, 1)

    def test_mixed_pairs_fall_to_unknown(self):
        x = MSymSet(frozenset({MaskedSymbol.const(0, 8),
                               MaskedSymbol.const(1, 8)}), 8)
        f = infer_flags("cmp", x, MSymSet.const(0, 8), self.ctx)
        assert f.zf is None


class TestLift:
    def setup_method(self):
        self.alloc = SymbolAllocator()
        self.ctx = OpCtx(self.alloc, OffsetTable(), 256)

    def test_constant_set_arithmetic(self):
        X = MSymSet(frozenset({MaskedSymbol.const(1, 8),
                               MaskedSymbol.const(2, 8)}), 8)
        Y = MSymSet.const(3, 8)
        assert lift2("add", X, Y, self.ctx) == MSymSet(
            frozenset({MaskedSymbol.const(4, 8), MaskedSymbol.const(5, 8)}), 8)

    def test_symbolic_plus_constants(self):
        s = MaskedSymbol.symbolic(self.alloc.fresh(True), 12)
        Y = MSymSet(frozenset({MaskedSymbol.const(0, 12),
                               MaskedSymbol.const(64, 12)}), 12)
        R = lift2("add", MSymSet.of(s), Y, self.ctx)
        assert len(R) == 2 and s in R.elems

    def test_cap_overflow_widens_to_top(self):
        ctx = OpCtx(self.alloc, OffsetTable(), cap=256)
        X = MSymSet(frozenset(MaskedSymbol.const(v, 12) for v in range(20)), 12)
        Y = MSymSet(frozenset(MaskedSymbol.const(v * 32, 12) for v in range(20)), 12)
        assert lift2("add", X, Y, ctx).is_top

    def test_top_absorbs(self):
        X = MSymSet.top(8)
        assert lift2("xor", X, MSymSet.const(1, 8), self.ctx).is_top


class TestAllocator:
    def test_distinct_ids(self):
        a = SymbolAllocator()
        ids = {a.fresh(False) for _ in range(3)}
        assert len(ids) == 3

    def test_low_input_marking(self):
        a = SymbolAllocator()
        low = a.fresh(low_input=True)
        hi = a.fresh(low_input=False)
        assert is_low_input(low) and not is_low_input(hi)
        assert not is_low_input(CONST_SYM)
        assert a.low_symbols == [low]


# -- property tests ----------------------------------------------------------

trit_masks = st.tuples(st.integers(0, 15), st.integers(0, 15)).map(
    lambda t: (t[0] & t[1], t[1]))


@st.composite
def masked_pair(draw):
    (v1, k1) = draw(trit_masks)
    (v2, k2) = draw(trit_masks)
    s1 = 1
    s2 = draw(st.sampled_from([1, 2]))
    return (MaskedSymbol.make(s1 if k1 != 15 else 0, v1, k1, 4),
            MaskedSymbol.make(s2 if k2 != 15 else 0, v2, k2, 4))


@settings(max_examples=300, deadline=None)
@given(masked_pair(), st.sampled_from(["and", "or", "xor", "add", "sub"]))
def test_local_soundness_property(pair, op):
    x, y = pair
    alloc = SymbolAllocator()
    alloc.fresh(True), alloc.fresh(True)
    check_local_soundness(op, x, y, alloc)


@settings(max_examples=200, deadline=None)
@given(st.lists(trit_masks, min_size=1, max_size=6),
       st.integers(0, 15), st.integers(0, 15), st.integers(0, 4))
def test_counting_bound_property(masks, l1, l2, b):
    """Projections of the concretization never exceed the abstract count."""
    elems = frozenset(MaskedSymbol.make(0 if k == 15 else 1 + (v & 1), v, k, 4)
                      for v, k in masks)
    x = MSymSet(elems, 4)
    positions = tuple(range(3, b - 1, -1))
    lam = {1: l1, 2: l2}
    projected_concrete = {tuple((c >> i) & 1 for i in positions)
                          for c in concretize(x, lam)}
    assert len(projected_concrete) <= count_obs(x, positions)


@settings(max_examples=200, deadline=None)
@given(masked_pair())
def test_constant_embedding(pair):
    """Fully known operands behave exactly like machine integers."""
    x, _ = pair
    alloc = SymbolAllocator()
    a, b = x.val & 0xF, (x.val * 7 + 3) & 0xF
    ca, cb = MaskedSymbol.const(a, 4), MaskedSymbol.const(b, 4)
    for op in ("and", "or", "xor", "add", "sub"):
        z = ABS_OPS[op](ca, cb, alloc)
        assert z == MaskedSymbol.const(concrete_op(op, a, b, 4), 4)
