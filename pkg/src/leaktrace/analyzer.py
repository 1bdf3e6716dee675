"""Abstract interpreter: transfer functions, state joins, bounded unrolling,
and per-observer leakage bounds.

Each instruction emits its fetch address to instruction-kind observers and
any effective data address to data-kind observers; every observer folds
those projected accesses into its own trace DAG.  At the single reachable
HALT all surviving paths are joined and each DAG is counted.
"""
from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass
from typing import Optional

from . import msym
from .ir import MemOperand, Operand, Program, Register
from .msym import (FlagTrits, MaskedSymbol, MSymSet, OffsetTable, OpCtx,
                   SymbolAllocator, add_offset, infer_flags, lift2, lift_imm)
from .observers import Observer
from .tracedag import Frontier, TraceDag


class AnalysisError(Exception):
    pass


class UnboundedStoreError(AnalysisError):
    """A store through a Top address set; no sound cheap recovery."""


@dataclass
class AnalysisConfig:
    observers: list[Observer]
    bitwidth: Optional[int] = None  # None: take the program's directive
    set_cap: int = 256
    unroll_limit: int = 4096
    malloc_alignment: Optional[int] = None  # e.g. 64 for line-aligned chunks
    step_limit: int = 2_000_000

    def __post_init__(self) -> None:
        if self.unroll_limit < 1:
            raise ValueError("unroll limit must be >= 1")
        if not self.observers:
            raise ValueError("at least one observer is required")


@dataclass(frozen=True)
class MemKey:
    """Abstract memory cell: a concrete address, or an offset from the
    masked symbol an allocation (or derived pointer chain) originates at.
    Distinct symbolic origins are treated as non-aliasing, mirroring
    disjoint allocations."""

    kind: str  # "concrete" | "symbolic"
    base: object  # int address, or origin MaskedSymbol
    off: int = 0


@dataclass
class AbstractState:
    regs: dict[int, MSymSet]
    mem: dict[MemKey, MSymSet]
    flags: FlagTrits
    frontiers: dict[str, Frontier]

    def copy_for_split(self) -> "AbstractState":
        return AbstractState(
            regs=dict(self.regs),
            mem=dict(self.mem),
            flags=self.flags,
            frontiers={k: f.shared() for k, f in self.frontiers.items()},
        )


@dataclass
class ObserverResult:
    name: str
    count: Optional[int]
    bits: Optional[float]
    vertices: int
    edges: int
    status: str  # ok | top-widened | unroll-limit | unbounded-store


@dataclass
class LeakReport:
    program: str
    bitwidth: int
    results: list[ObserverResult]
    status: str

    def to_json(self) -> str:
        return json.dumps({
            "program": self.program,
            "bitwidth": self.bitwidth,
            "status": self.status,
            "results": [
                {"observer": r.name, "count": r.count, "bits": r.bits,
                 "vertices": r.vertices, "edges": r.edges, "status": r.status}
                for r in self.results
            ],
        }, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "LeakReport":
        d = json.loads(text)
        return LeakReport(
            d["program"], d["bitwidth"],
            [ObserverResult(r["observer"], r["count"], r["bits"],
                            r["vertices"], r["edges"], r["status"])
             for r in d["results"]],
            d["status"])


class Analysis:
    """One run over one program; single-writer state."""

    def __init__(self, prog: Program, cfg: AnalysisConfig):
        self.prog = prog
        self.cfg = cfg
        self.width = cfg.bitwidth or prog.bitwidth
        self.alloc = SymbolAllocator()
        self.tbl = OffsetTable()
        self.opctx = OpCtx(self.alloc, self.tbl, cfg.set_cap)
        self.dags = {o.name: TraceDag() for o in cfg.observers}
        self.observers = {o.name: o for o in cfg.observers}
        self.alloc_sizes: dict[int, int] = {}
        self.hit_unroll_limit = False
        self.final_vertices: dict[str, int] = {}
        self.report: Optional[LeakReport] = None

    # -- values --------------------------------------------------------------

    def _const_set(self, v: int) -> MSymSet:
        return MSymSet.const(v, self.width)

    def _fresh_unknown(self, low: bool = False) -> MSymSet:
        return MSymSet.of(MaskedSymbol.symbolic(self.alloc.fresh(low), self.width))

    def init_state(self) -> AbstractState:
        regs = {i: self._fresh_unknown() for i in range(16)}
        st = AbstractState(regs=regs, mem={}, flags=FlagTrits(None, None),
                           frontiers={name: dag.root_frontier()
                                      for name, dag in self.dags.items()})
        for d in self.prog.directives:
            if d.kind == "high":
                st.regs[d.target.index] = MSymSet(
                    frozenset(MaskedSymbol.const(v, self.width) for v in d.values),
                    self.width)
            elif d.kind == "low_const":
                st.regs[d.target.index] = self._const_set(d.values[0])
            elif d.kind == "low_symbolic":
                val = self._fresh_unknown(low=True)
                if isinstance(d.target, Register):
                    st.regs[d.target.index] = val
                else:
                    st.mem[self._directive_key(st, d.target)] = val
            elif d.kind == "mem_high":
                st.mem[self._directive_key(st, d.target)] = MSymSet(
                    frozenset(MaskedSymbol.const(v, self.width) for v in d.values),
                    self.width)
            elif d.kind == "mem_low":
                st.mem[self._directive_key(st, d.target)] = \
                    self._const_set(d.values[0])
        return st

    def _directive_key(self, st: AbstractState, mop: MemOperand) -> MemKey:
        base = st.regs[mop.base.index]
        if base.is_top or len(base) != 1:
            raise AnalysisError(
                f"directive base r{mop.base.index} must hold a single value")
        (elem,) = base
        return self._key_for(elem, mop.disp)

    def _key_for(self, elem: MaskedSymbol, disp: int) -> MemKey:
        if elem.is_const:
            return MemKey("concrete", (elem.val + disp) & elem.full)
        orig, off = self.tbl.origoff(elem)
        return MemKey("symbolic", orig, off + disp)

    # -- memory ---------------------------------------------------------------

    def _cell(self, st: AbstractState, key: MemKey) -> MSymSet:
        got = st.mem.get(key)
        if got is None:
            got = self._fresh_unknown()  # untouched memory: unknown but fixed
            st.mem[key] = got
        return got

    def load(self, st: AbstractState, addrs: MSymSet) -> MSymSet:
        if addrs.is_top:
            return MSymSet.top(self.width)
        out: Optional[MSymSet] = None
        for elem in addrs:
            cell = self._cell(st, self._key_for(elem, 0))
            out = cell if out is None else out.union(cell, self.cfg.set_cap)
        return out

    def store(self, st: AbstractState, addrs: MSymSet, value: MSymSet) -> None:
        if addrs.is_top:
            raise UnboundedStoreError(
                "store through an unbounded address set")
        keys = [self._key_for(e, 0) for e in addrs]
        if len(keys) == 1:
            st.mem[keys[0]] = value  # strong update: one cell per valuation
            return
        for key in keys:  # weak update: each cell may keep its old value
            old = self._cell(st, key)
            st.mem[key] = old.union(value, self.cfg.set_cap)

    # -- joins ----------------------------------------------------------------

    def join_states(self, a: AbstractState, b: AbstractState) -> AbstractState:
        cap = self.cfg.set_cap
        regs = {i: a.regs[i].union(b.regs[i], cap) for i in range(16)}
        mem: dict[MemKey, MSymSet] = {}
        for key in a.mem.keys() | b.mem.keys():
            va, vb = a.mem.get(key), b.mem.get(key)
            if va is None:
                va = self._fresh_unknown()  # absent: unknown initial content
            if vb is None:
                vb = self._fresh_unknown()
            mem[key] = va.union(vb, cap)
        zf = a.flags.zf if a.flags.zf == b.flags.zf else None
        cf = a.flags.cf if a.flags.cf == b.flags.cf else None
        frontiers = {name: self.dags[name].join(a.frontiers[name],
                                                b.frontiers[name])
                     for name in self.dags}
        return AbstractState(regs, mem, FlagTrits(zf, cf), frontiers)

    # -- accesses --------------------------------------------------------------

    def _emit(self, st: AbstractState, kind: str, addrs: MSymSet) -> None:
        for name, obs in self.observers.items():
            if obs.kind != "both" and \
                    (obs.kind == "instruction") != (kind == "I"):
                continue
            label = msym.project(addrs, obs.proj.positions)
            st.frontiers[name] = self.dags[name].update(st.frontiers[name], label)

    # -- instruction semantics ---------------------------------------------------

    def _operand_value(self, st: AbstractState, op: Operand) -> MSymSet:
        if op.is_reg:
            return st.regs[op.value.index]
        return self._const_set(op.value)

    def _effective_addrs(self, st: AbstractState, mop: MemOperand) -> MSymSet:
        base = st.regs[mop.base.index]
        if base.is_top:
            return MSymSet.top(self.width)
        out = set()
        for elem in base:
            out.add(add_offset(elem, mop.disp, self.tbl, self.alloc))
            if len(out) > self.cfg.set_cap:
                return MSymSet.top(self.width)
        return MSymSet(frozenset(out), self.width)

    def transfer(self, idx: int, st: AbstractState) -> list[tuple[int, AbstractState, bool]]:
        """Execute one instruction; returns (next_index, state, retreating)
        tuples.  An empty list means the path halted."""
        ins = self.prog.instrs[idx]
        self._emit(st, "I", self._const_set(ins.addr))
        op = ins.opcode

        if op == "HALT":
            return []
        if op == "JMP":
            t = self.prog.target_index(ins)
            return [(t, st, t <= idx)]
        if op in ("JZ", "JNZ"):
            t = self.prog.target_index(ins)
            want = 1 if op == "JZ" else 0
            zf = st.flags.zf
            if zf == want:
                return [(t, st, t <= idx)]
            if zf is not None:
                return [(idx + 1, st, False)]
            # Undetermined flag: explore both arms.  Each arm's frontiers
            # lose ownership so repetition bumps never mutate the shared
            # history of the other arm.
            taken = st.copy_for_split()
            taken.flags = FlagTrits(want, taken.flags.cf)
            fall = st
            fall.frontiers = {k: f.shared() for k, f in fall.frontiers.items()}
            fall.flags = FlagTrits(1 - want, fall.flags.cf)
            return [(t, taken, t <= idx), (idx + 1, fall, False)]

        if op == "MOV":
            dst, src = ins.operands
            st.regs[dst.index] = self._operand_value(st, src)
        elif op in ("AND", "OR", "XOR", "ADD", "SUB"):
            dst, src = ins.operands
            x = st.regs[dst.index]
            y = self._operand_value(st, src)
            res = lift2(op.lower(), x, y, self.opctx)
            st.flags = infer_flags(op.lower(), x, y, self.opctx)
            st.regs[dst.index] = res
        elif op == "CMP":
            dst, src = ins.operands
            x = st.regs[dst.index]
            y = self._operand_value(st, src)
            st.flags = infer_flags("cmp", x, y, self.opctx)
        elif op in ("MUL", "SHL"):
            dst, imm = ins.operands
            x = st.regs[dst.index]
            res = lift_imm(op.lower(), x, imm, self.opctx)
            st.flags = infer_flags(op.lower(), x, self._const_set(imm),
                                   self.opctx)
            st.regs[dst.index] = res
        elif op == "LOAD":
            dst, mop = ins.operands
            addrs = self._effective_addrs(st, mop)
            self._emit(st, "D", addrs)
            st.regs[dst.index] = self.load(st, addrs)
        elif op == "STORE":
            mop, src = ins.operands
            addrs = self._effective_addrs(st, mop)
            self._emit(st, "D", addrs)
            self.store(st, addrs, self._operand_value(st, src))
        elif op == "MALLOC":
            dst, size = ins.operands
            st.regs[dst.index] = self.alloc_region(size)
        else:  # pragma: no cover
            raise AnalysisError(f"unhandled opcode {op}")
        return [(idx + 1, st, False)]

    def alloc_region(self, size: int) -> MSymSet:
        """Fresh low-input pointer for a dynamic allocation."""
        sym = self.alloc.fresh(low_input=True)
        self.alloc_sizes[sym] = size
        ms = MaskedSymbol.symbolic(sym, self.width)
        if self.cfg.malloc_alignment:
            a = self.cfg.malloc_alignment
            if a & (a - 1):
                raise AnalysisError("malloc alignment must be a power of two")
            ms = MaskedSymbol(sym, 0, a - 1, self.width)
        self.tbl.ensure(ms)
        return MSymSet.of(ms)

    # -- driver -------------------------------------------------------------------

    def run(self) -> LeakReport:
        pending: dict[tuple, AbstractState] = {}
        heap: list = []
        seq = 0

        def push(idx: int, ctx: frozenset, st: AbstractState) -> None:
            nonlocal seq
            key = (idx, ctx)
            if key in pending:
                pending[key] = self.join_states(pending[key], st)
                return
            pending[key] = st
            wave = sum(c for _, c in ctx)
            heapq.heappush(heap, (wave, idx, seq, key))
            seq += 1

        push(0, frozenset(), self.init_state())
        finals: list[AbstractState] = []
        steps = 0
        while heap:
            _, _, _, key = heapq.heappop(heap)
            st = pending.pop(key, None)
            if st is None:
                continue  # joined into a later push and already handled
            idx, ctx = key
            steps += 1
            if steps > self.cfg.step_limit:
                raise AnalysisError("step limit exceeded")
            succs = self.transfer(idx, st)
            if not succs:
                finals.append(st)
                continue
            for nxt, nst, retreat in succs:
                nctx = ctx
                if retreat:
                    d = dict(ctx)
                    d[idx] = d.get(idx, 0) + 1
                    if d[idx] > self.cfg.unroll_limit:
                        self.hit_unroll_limit = True
                        continue
                    nctx = frozenset(d.items())
                push(nxt, nctx, nst)

        self.report = self._report(finals)
        return self.report

    def _report(self, finals: list[AbstractState]) -> LeakReport:
        results = []
        if finals:
            joined = finals[0]
            for other in finals[1:]:
                joined = self.join_states(joined, other)
        overall = "unroll-limit" if self.hit_unroll_limit else "ok"
        for obs in self.cfg.observers:
            dag = self.dags[obs.name]
            if not finals:
                results.append(ObserverResult(obs.name, None, None,
                                              dag.n_vertices, dag.n_edges,
                                              "unroll-limit"))
                continue
            final_v = dag.finalize(joined.frontiers[obs.name])
            joined.frontiers[obs.name] = Frontier(current=final_v)
            self.final_vertices[obs.name] = final_v
            count = dag.count(final_v, stuttering=obs.stuttering)
            status = "ok"
            if self.hit_unroll_limit:
                status = "unroll-limit"
            elif dag.saw_top:
                status = "top-widened"
            if status != "ok" and overall == "ok":
                overall = status
            results.append(ObserverResult(obs.name, count, math.log2(count),
                                          dag.n_vertices, dag.n_edges, status))
        return LeakReport(self.prog.name, self.width, results, overall)


def run(prog: Program, cfg: AnalysisConfig) -> LeakReport:
    return Analysis(prog, cfg).run()


def run_analysis(prog: Program, cfg: AnalysisConfig) -> Analysis:
    """Run and return the full Analysis (report plus DAGs) for export."""
    a = Analysis(prog, cfg)
    a.report = a.run()
    return a
