"""Concrete reference semantics and exact leakage measurement.

Runs programs with explicit allocation bases and secret choices, records
the exact access trace, and checks that every observer's exact view count
stays at or below the analyzer's bound.  Feasible only at small bit
widths; that is its job.
"""
from __future__ import annotations

import itertools
import json
import random
from dataclasses import dataclass, field
from typing import Optional

from .analyzer import AnalysisConfig, Analysis
from .ir import InitDirective, MemOperand, Program, Register
from .observers import Observer, view_concrete

DEFAULT_STEP_BUDGET = 1_000_000
CELL_REGION_SIZE = 64  # pointee region for symbolic pointers stored in cells


class OracleError(Exception):
    pass


class MemoryRangeError(OracleError):
    """Concrete access outside every allocated or declared region."""


@dataclass
class ConcreteState:
    regs: list[int]
    mem: dict[int, int]
    zf: int = 0
    cf: int = 0
    trace: list = field(default_factory=list)
    regions: list = field(default_factory=list)  # (lo, hi) half-open

    def in_range(self, addr: int) -> bool:
        return any(lo <= addr < hi for lo, hi in self.regions)


@dataclass(frozen=True)
class LowSlot:
    index: int      # mint order; matches low symbol ids (1-based)
    kind: str       # "lowsym" | "lowsym-cell" | "malloc"
    size: int


@dataclass
class ScenarioSpace:
    slots: list[LowSlot]
    lam_candidates: list[dict]
    high_candidates: list[dict]
    exhaustive: bool


@dataclass
class Violation:
    observer: str
    lam: dict
    bound: int
    exact: int
    views: list  # (high assignment, observation sequence) pairs

    def to_json(self) -> str:
        return json.dumps({
            "observer": self.observer,
            "lam": {str(k): v for k, v in self.lam.items()},
            "bound": self.bound,
            "exact": self.exact,
            "views": [{"high": {str(k): v for k, v in h.items()},
                       "view": list(v)} for h, v in self.views],
        }, sort_keys=True)


@dataclass
class BoundVerdict:
    ok: bool
    checked_valuations: int
    checked_runs: int
    violations: list[Violation]


def _high_space(prog: Program) -> list[tuple[int, tuple[int, ...]]]:
    out = []
    slot = 0
    for d in prog.directives:
        if d.kind in ("high", "mem_high"):
            out.append((slot, d.values))
            slot += 1
    return out


def high_assignments(prog: Program) -> list[dict]:
    space = _high_space(prog)
    if not space:
        return [{}]
    keys = [s for s, _ in space]
    return [dict(zip(keys, combo))
            for combo in itertools.product(*[vals for _, vals in space])]


def run_concrete(prog: Program, lam: dict, high: dict,
                 step_budget: int = DEFAULT_STEP_BUDGET,
                 bitwidth: Optional[int] = None,
                 collect_sizes: Optional[list] = None) -> ConcreteState:
    """Execute with allocation bases from `lam` (low slot -> base) and
    secret choices from `high` (high slot -> value).  Every instruction
    fetch and data access is recorded in program order."""
    width = bitwidth or prog.bitwidth
    full = (1 << width) - 1
    st = ConcreteState(regs=[0] * 16, mem={})
    low_i = 0
    high_i = 0

    def next_low(size: int, kind: str) -> int:
        nonlocal low_i
        low_i += 1
        if collect_sizes is not None:
            collect_sizes.append((kind, size))
        if low_i not in lam:
            if collect_sizes is None:
                raise OracleError(f"valuation missing low slot {low_i}")
            base = (low_i * 0x100) & full  # probe placement for planning
            lam[low_i] = base
        return lam[low_i]

    # Initial state from directives, in order.
    for d in prog.directives:
        if d.kind == "high":
            st.regs[d.target.index] = high[high_i] if high_i in high \
                else d.values[0]
            high_i += 1
        elif d.kind == "low_const":
            st.regs[d.target.index] = d.values[0] & full
        elif d.kind == "low_symbolic":
            if isinstance(d.target, Register):
                size = _declared_region_size(prog, d.target)
                base = next_low(size, "lowsym")
                st.regs[d.target.index] = base
                st.regions.append((base, base + size))
            else:
                base = next_low(CELL_REGION_SIZE, "lowsym-cell")
                addr = (st.regs[d.target.base.index] + d.target.disp) & full
                st.mem[addr] = base
                st.regions.append((base, base + CELL_REGION_SIZE))
        elif d.kind == "mem_high":
            addr = (st.regs[d.target.base.index] + d.target.disp) & full
            st.mem[addr] = high[high_i] if high_i in high else d.values[0]
            high_i += 1
        elif d.kind == "mem_low":
            addr = (st.regs[d.target.base.index] + d.target.disp) & full
            st.mem[addr] = d.values[0] & full

    def read_mem(addr: int) -> int:
        if addr in st.mem:
            return st.mem[addr]
        if st.in_range(addr):
            return 0  # untouched allocated memory reads as zero
        raise MemoryRangeError(f"read outside allocated memory: {addr:#x}")

    def write_mem(addr: int, value: int) -> None:
        if addr in st.mem or st.in_range(addr):
            st.mem[addr] = value & full
            return
        raise MemoryRangeError(f"write outside allocated memory: {addr:#x}")

    def opval(op) -> int:
        return st.regs[op.value.index] if op.is_reg else op.value & full

    idx = 0
    steps = 0
    while True:
        steps += 1
        if steps > step_budget:
            raise OracleError("step budget exceeded")
        ins = prog.instrs[idx]
        st.trace.append(("I", ins.addr & full))
        op = ins.opcode
        if op == "HALT":
            return st
        if op == "JMP":
            idx = prog.target_index(ins)
            continue
        if op in ("JZ", "JNZ"):
            want = 1 if op == "JZ" else 0
            idx = prog.target_index(ins) if st.zf == want else idx + 1
            continue
        if op == "MOV":
            dst, src = ins.operands
            st.regs[dst.index] = opval(src)
        elif op in ("AND", "OR", "XOR"):
            dst, src = ins.operands
            a, b = st.regs[dst.index], opval(src)
            r = {"AND": a & b, "OR": a | b, "XOR": a ^ b}[op]
            st.regs[dst.index] = r
            st.zf, st.cf = (1 if r == 0 else 0), 0
        elif op == "ADD":
            dst, src = ins.operands
            s = st.regs[dst.index] + opval(src)
            st.regs[dst.index] = s & full
            st.zf, st.cf = (1 if s & full == 0 else 0), s >> width
        elif op in ("SUB", "CMP"):
            dst, src = ins.operands
            a, b = st.regs[dst.index], opval(src)
            r = (a - b) & full
            if op == "SUB":
                st.regs[dst.index] = r
            st.zf, st.cf = (1 if r == 0 else 0), (1 if a < b else 0)
        elif op == "MUL":
            dst, imm = ins.operands
            r = (st.regs[dst.index] * imm) & full
            st.regs[dst.index] = r
            st.zf, st.cf = (1 if r == 0 else 0), 0
        elif op == "SHL":
            dst, imm = ins.operands
            r = (st.regs[dst.index] << imm) & full
            st.regs[dst.index] = r
            st.zf, st.cf = (1 if r == 0 else 0), 0
        elif op == "LOAD":
            dst, mop = ins.operands
            ea = (st.regs[mop.base.index] + mop.disp) & full
            st.trace.append(("D", ea))
            st.regs[dst.index] = read_mem(ea)
        elif op == "STORE":
            mop, src = ins.operands
            ea = (st.regs[mop.base.index] + mop.disp) & full
            st.trace.append(("D", ea))
            write_mem(ea, opval(src))
        elif op == "MALLOC":
            dst, size = ins.operands
            base = next_low(size, "malloc")
            st.regs[dst.index] = base & full
            st.regions.append((base, base + size))
        idx += 1


def _declared_region_size(prog: Program, reg: Register) -> int:
    size = 1
    for d in prog.directives:
        if d.kind in ("mem_high", "mem_low", "low_symbolic") and \
                isinstance(d.target, MemOperand) and d.target.base == reg:
            size = max(size, d.target.disp + 1)
    return size


def plan_lows(prog: Program, bitwidth: Optional[int] = None) -> list[LowSlot]:
    """Discover the low slots (declared symbols, then allocations in
    execution order) with a probe run using the first secret choice."""
    sizes: list = []
    run_concrete(prog, {}, high_assignments(prog)[0], bitwidth=bitwidth,
                 collect_sizes=sizes)
    return [LowSlot(i + 1, kind, size) for i, (kind, size) in enumerate(sizes)]


def _placement_ok(bases: list[int], slots: list[LowSlot], space: int) -> bool:
    spans = []
    for b, s in zip(bases, slots):
        if b + s.size > space:
            return False
        spans.append((b, b + s.size))
    spans.sort()
    return all(e1 <= s2 for (_, e1), (s2, _) in zip(spans, spans[1:]))


def build_scenarios(prog: Program, bitwidth: Optional[int] = None,
                    samples: int = 50, seed: int = 0,
                    alignment: Optional[int] = None) -> ScenarioSpace:
    """Valuation candidates: exhaustive when the joint base space is at
    most 16 bits, otherwise corner placements (block-aligned and
    maximally misaligned) plus seeded random disjoint placements."""
    width = bitwidth or prog.bitwidth
    space = 1 << width
    slots = plan_lows(prog, bitwidth=width)
    highs = high_assignments(prog)
    if not slots:
        return ScenarioSpace(slots, [{}], highs, True)

    step = alignment or 1
    exhaustive = len(slots) * width <= 16
    lams: list[dict] = []
    if exhaustive:
        ranges = [range(0, space - s.size + 1, step) for s in slots]
        for combo in itertools.product(*ranges):
            if _placement_ok(list(combo), slots, space):
                lams.append({s.index: b for s, b in zip(slots, combo)})
    else:
        rng = random.Random(seed)
        block = 64

        def aligned_run(offset: int) -> Optional[dict]:
            cursor = block
            out = {}
            for s in slots:
                base = cursor + offset
                if step > 1:
                    base = (base + step - 1) // step * step
                if base + s.size > space:
                    return None
                out[s.index] = base
                cursor = base + s.size + block
                cursor = (cursor + block - 1) // block * block
            return out

        for corner in (aligned_run(0), aligned_run(block - 1)):
            if corner is not None:
                lams.append(corner)
        tries = 0
        while len(lams) < samples and tries < samples * 200:
            tries += 1
            bases = []
            for s in slots:
                hi = (space - s.size) // step
                bases.append(rng.randint(0, hi) * step)
            if _placement_ok(bases, slots, space):
                cand = {s.index: b for s, b in zip(slots, bases)}
                if cand not in lams:
                    lams.append(cand)
        if len(lams) < min(samples, 3):
            raise OracleError("could not place allocations disjointly")
    return ScenarioSpace(slots, lams, highs, exhaustive)


def exact_view_count(prog: Program, obs: Observer, lam: dict,
                     bitwidth: Optional[int] = None,
                     step_budget: int = DEFAULT_STEP_BUDGET) -> int:
    """|{observer view over all secret choices}| for one valuation."""
    views = set()
    for high in high_assignments(prog):
        st = run_concrete(prog, dict(lam), high, step_budget, bitwidth)
        views.add(view_concrete(st.trace, obs))
    return len(views)


def check_bound(prog: Program, cfg: AnalysisConfig,
                scenarios: ScenarioSpace) -> BoundVerdict:
    """Exact view counts must never exceed the analyzer's bounds."""
    analysis = Analysis(prog, cfg)
    report = analysis.run()
    bounds = {r.name: r.count for r in report.results}
    observers = {o.name: o for o in cfg.observers}
    violations = []
    runs = 0
    for lam in scenarios.lam_candidates:
        per_obs: dict[str, dict] = {name: {} for name in observers}
        for high in scenarios.high_candidates:
            st = run_concrete(prog, dict(lam), high, bitwidth=analysis.width)
            runs += 1
            for name, obs in observers.items():
                view = view_concrete(st.trace, obs)
                per_obs[name].setdefault(view, high)
        for name, views in per_obs.items():
            bound = bounds[name]
            if bound is not None and len(views) > bound:
                violations.append(Violation(
                    observer=name, lam=dict(lam), bound=bound,
                    exact=len(views),
                    views=[(h, v) for v, h in sorted(views.items())]))
    return BoundVerdict(not violations, len(scenarios.lam_candidates),
                        runs, violations)
