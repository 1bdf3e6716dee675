"""Trace DAG: compact representation of sets of projected access traces.

Vertices carry a projected-observation label and a set of possible
repetition counts; paths from the root enumerate possible observation
sequences.  Updates fold runs of equal observations into repetition
counts, joins merge same-parents-same-label sinks, and pending (delayed)
joins let two control-flow arms share one more vertex before an epsilon
join is materialized.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, replace
from typing import Optional

from .msym import ProjectedTop

EPSILON = None  # label of join vertices; contributes factor 1 to counting

R_CAP = 64  # distinct repetition counts kept before widening to a range


def _label_card(label) -> int:
    if label is EPSILON:
        return 1
    if isinstance(label, ProjectedTop):
        return label.card
    return len(label)


class RepSet:
    """Finite set of repetition counts, widened to a dense range when it
    grows past R_CAP distinct values."""

    __slots__ = ("lo", "hi", "vals")

    def __init__(self, vals=None, lo=None, hi=None):
        if vals is not None:
            self.vals: Optional[frozenset] = frozenset(vals)
            self.lo = min(self.vals)
            self.hi = max(self.vals)
        else:
            self.vals = None  # dense {lo..hi}
            self.lo, self.hi = lo, hi
        assert self.lo >= 1

    def bump(self) -> "RepSet":
        if self.vals is not None:
            return RepSet(vals={v + 1 for v in self.vals})
        return RepSet(lo=self.lo + 1, hi=self.hi + 1)

    def merge(self, other: "RepSet") -> "RepSet":
        if self.vals is not None and other.vals is not None:
            u = self.vals | other.vals
            if len(u) <= R_CAP:
                return RepSet(vals=u)
        return RepSet(lo=min(self.lo, other.lo), hi=max(self.hi, other.hi))

    def card(self) -> int:
        if self.vals is not None:
            return len(self.vals)
        return self.hi - self.lo + 1

    def counts(self) -> list[int]:
        if self.vals is not None:
            return sorted(self.vals)
        return list(range(self.lo, self.hi + 1))

    def __eq__(self, other) -> bool:
        return isinstance(other, RepSet) and self.counts() == other.counts()

    def __repr__(self) -> str:
        if self.vals is not None:
            return "{" + ",".join(map(str, sorted(self.vals))) + "}"
        return f"{{{self.lo}..{self.hi}}}"


@dataclass(frozen=True)
class Frontier:
    """Current growth point of one observer's DAG.

    Either a single current vertex, or a pending (delayed) join of several
    vertices that resolves on the next update.  `owned` marks a vertex
    created by this frontier and not shared with any other analysis path,
    so its repetition set may be bumped in place.
    """

    current: Optional[int] = None
    pending: Optional[frozenset] = None
    owned: bool = False

    def __post_init__(self):
        assert (self.current is None) != (self.pending is None)

    def shared(self) -> "Frontier":
        return replace(self, owned=False) if self.owned else self


class TraceDag:
    """Single-writer DAG of projected access labels."""

    def __init__(self) -> None:
        self.labels: list = [EPSILON]
        self.reps: list[RepSet] = [RepSet(vals={1})]
        self.parents: list[tuple[int, ...]] = [()]
        self.children: list[list[int]] = [[]]
        self.root = 0
        self.saw_top = False

    # -- construction ------------------------------------------------------

    def root_frontier(self) -> Frontier:
        return Frontier(current=self.root)

    def _new_vertex(self, label, parents: tuple[int, ...]) -> int:
        v = len(self.labels)
        self.labels.append(label)
        self.reps.append(RepSet(vals={1}))
        self.parents.append(parents)
        self.children.append([])
        for p in parents:
            self.children[p].append(v)
        if isinstance(label, ProjectedTop):
            self.saw_top = True
        return v

    def _resolve_pending(self, f: Frontier) -> Frontier:
        if f.pending is None:
            return f
        v = self._new_vertex(EPSILON, tuple(sorted(f.pending)))
        return Frontier(current=v, owned=True)

    def update(self, f: Frontier, label) -> Frontier:
        """Extend the frontier by one access with the given projected label."""
        assert label is not EPSILON
        f = self._resolve_pending(f)
        v = f.current
        if self.labels[v] == label:
            if f.owned:
                self.reps[v] = self.reps[v].bump()
                return f
            # Shared vertex: bump on a private copy with the same parents.
            w = self._new_vertex(label, self.parents[v])
            self.reps[w] = self.reps[v].bump()
            return Frontier(current=w, owned=True)
        w = self._new_vertex(label, (v,))
        return Frontier(current=w, owned=True)

    def join(self, f1: Frontier, f2: Frontier) -> Frontier:
        """Join two frontiers of this DAG.

        Identical vertices join to themselves; same-parents-same-label
        sinks merge their repetition sets; anything else becomes a pending
        join, resolved at the next update (or immediately when a third
        distinct vertex joins in).
        """
        verts = set()
        for f in (f1, f2):
            verts.update(f.pending if f.pending is not None else {f.current})
        if len(verts) == 1:
            return Frontier(current=verts.pop())
        if len(verts) == 2:
            v1, v2 = sorted(verts)
            if (self.labels[v1] == self.labels[v2]
                    and self.labels[v1] is not EPSILON
                    and self.parents[v1] == self.parents[v2]):
                self.reps[v1] = self.reps[v1].merge(self.reps[v2])
                return Frontier(current=v1)
            return Frontier(pending=frozenset(verts))
        # Three or more distinct vertices: materialize eagerly, pairwise.
        f = self._resolve_pending(f1)
        g = self._resolve_pending(f2)
        return self.join(f, g)

    def finalize(self, f: Frontier) -> int:
        """Materialize any pending join and return the final vertex."""
        return self._resolve_pending(f).current

    # -- queries -----------------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return len(self.labels)

    @property
    def n_edges(self) -> int:
        return sum(len(p) for p in self.parents)

    def count(self, v: int, stuttering: bool = False) -> int:
        """Number of observation sequences ending at v: product of label
        cardinality and repetition-count cardinality along each path,
        summed over paths.  Stuttering observers cannot count repetitions,
        so their repetition factor is 1."""
        memo: dict[int, int] = {self.root: 1}
        for u in range(self.root + 1, v + 1):  # vertex ids are topologically ordered
            pred = sum(memo.get(p, 0) for p in self.parents[u])
            if pred == 0:
                continue
            rep = 1 if stuttering else self.reps[u].card()
            memo[u] = rep * _label_card(self.labels[u]) * pred
        return memo.get(v, 1 if v == self.root else 0)

    def _paths_to(self, v: int) -> list[list[int]]:
        if v == self.root:
            return [[self.root]]
        out = []
        for p in self.parents[v]:
            for path in self._paths_to(p):
                out.append(path + [v])
        return out

    def concretize_traces(self, v: int, lam: dict, limit: int = 1_000_000) -> set:
        """All concrete observation sequences up to v (test/oracle use).

        Labels are projected trit tuples; symbolic entries (sym, position)
        are filled in from the valuation.  Epsilon vertices contribute
        nothing.
        """
        traces = set()
        for path in self._paths_to(v):
            per_vertex = []
            combos = 1
            for u in path:
                label = self.labels[u]
                if label is EPSILON:
                    continue
                if isinstance(label, ProjectedTop):
                    raise ValueError("cannot concretize a Top label")
                obs = sorted({_concretize_obs(el, lam) for el in label})
                counts = self.reps[u].counts()
                per_vertex.append((obs, counts))
                combos *= len(obs) * len(counts)
                if combos > limit:
                    raise ValueError("trace concretization too large")
            for choice in itertools.product(*[itertools.product(o, c)
                                              for o, c in per_vertex]):
                seq: list = []
                for ob, k in choice:
                    seq.extend([ob] * k)
                traces.add(tuple(seq))
        return traces

    # -- export -------------------------------------------------------------

    def to_dot(self, final: Optional[int] = None) -> str:
        lines = ["digraph trace {", "  rankdir=LR;"]
        for v in range(self.n_vertices):
            lines.append(f'  v{v} [label="{_render_label(self.labels[v])}'
                         f'\\nR={self.reps[v]!r}"];')
        for v in range(self.n_vertices):
            for p in self.parents[v]:
                lines.append(f"  v{p} -> v{v};")
        if final is not None:
            lines.append(f"  v{final} [penwidth=2];")
        lines.append("}")
        return "\n".join(lines)

    def to_json(self, final: Optional[int] = None) -> str:
        data = {
            "root": self.root,
            "final": final,
            "vertices": [
                {"id": v, "label": _json_label(self.labels[v]),
                 "reps": self.reps[v].counts()}
                for v in range(self.n_vertices)
            ],
            "edges": sorted((p, v) for v in range(self.n_vertices)
                            for p in self.parents[v]),
        }
        return json.dumps(data, sort_keys=True)


def _concretize_obs(el: tuple, lam: dict) -> tuple:
    return tuple((lam[e[1]] >> e[2]) & 1
                 if isinstance(e, tuple) and e[0] == "s" else e
                 for e in el)


def _entry_str(e) -> str:
    if isinstance(e, tuple) and e and e[0] == "s":
        return f"s{e[1]}"
    return str(e)


def _render_label(label) -> str:
    if label is EPSILON:
        return "eps"
    if isinstance(label, ProjectedTop):
        return f"TOP({label.card})"
    return "{" + ", ".join(sorted("".join(_entry_str(e) for e in el)
                                  for el in label)) + "}"


def _json_label(label):
    if label is EPSILON:
        return "eps"
    if isinstance(label, ProjectedTop):
        return {"top": label.card}
    return sorted(["".join(_entry_str(e) for e in el) for el in label])
