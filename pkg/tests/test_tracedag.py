import itertools
import random

import pytest

from leaktrace.msym import MSymSet, MaskedSymbol, ProjectedTop, project
from leaktrace.observers import stutter_collapse
from leaktrace.tracedag import EPSILON, Frontier, TraceDag


def lbl(*names):
    """Small constant labels: frozensets of 1-entry tuples."""
    return frozenset({(n,) for n in names})


A, B, C = lbl("A"), lbl("B"), lbl("C")


def brute_count(dag, v, stuttering):
    """Independent oracle for the counting recursion: enumerate every
    root-to-v path and sum the per-path products of label and repetition
    cardinalities."""
    total = 0
    for path in dag._paths_to(v):
        prod = 1
        for u in path:
            if dag.labels[u] is EPSILON:
                card = 1
            elif isinstance(dag.labels[u], ProjectedTop):
                card = dag.labels[u].card
            else:
                card = len(dag.labels[u])
            reps = 1 if stuttering else dag.reps[u].card()
            prod *= card * reps
        total += prod
    return total


class TestUpdate:
    def test_repetition_folds(self):
        dag = TraceDag()
        f = dag.root_frontier()
        f = dag.update(f, B)
        v = f.current
        f = dag.update(f, B)
        assert f.current == v and dag.reps[v].counts() == [2]

    def test_new_label_appends(self):
        dag = TraceDag()
        f = dag.update(dag.root_frontier(), A)
        g = dag.update(f, B)
        assert g.current != f.current
        assert dag.parents[g.current] == (f.current,)

    def test_three_updates_one_vertex(self):
        dag = TraceDag()
        f = dag.root_frontier()
        for _ in range(3):
            f = dag.update(f, A)
        assert dag.reps[f.current].counts() == [3]
        assert dag.n_vertices == 2  # root plus one folded vertex

    def test_shared_vertex_bumps_copy_on_write(self):
        dag = TraceDag()
        f = dag.update(dag.root_frontier(), A)
        g = f.shared()
        h = dag.update(g, A)
        assert h.current != f.current
        assert dag.reps[f.current].counts() == [1]
        assert dag.reps[h.current].counts() == [2]
        assert dag.parents[h.current] == dag.parents[f.current]


class TestJoin:
    def test_identical_vertices(self):
        dag = TraceDag()
        f = dag.update(dag.root_frontier(), A)
        j = dag.join(f, Frontier(current=f.current))
        assert j.current == f.current and j.pending is None

    def test_same_parents_same_label_merges_reps(self):
        dag = TraceDag()
        f1 = dag.update(dag.root_frontier(), B)
        f2 = dag.update(dag.root_frontier().shared(), B)
        # force distinct sinks with the same parent and label
        assert f1.current != f2.current
        dag.reps[f2.current] = dag.reps[f2.current].merge(dag.reps[f2.current])
        dag.reps[f2.current] = dag.reps[f2.current].bump()  # now {2}
        j = dag.join(f1, f2)
        assert j.current == f1.current
        assert dag.reps[f1.current].counts() == [1, 2]

    def test_delayed_join_resolves_on_update(self):
        dag = TraceDag()
        f1 = dag.update(dag.root_frontier(), A)
        f2 = dag.update(dag.root_frontier().shared(), B)
        j = dag.join(f1, f2)
        assert j.pending == frozenset({f1.current, f2.current})
        g = dag.update(j, C)
        eps = dag.parents[g.current][0]
        assert dag.labels[eps] is EPSILON
        assert set(dag.parents[eps]) == {f1.current, f2.current}

    def test_third_vertex_materializes(self):
        dag = TraceDag()
        f1 = dag.update(dag.root_frontier(), A)
        f2 = dag.update(dag.root_frontier().shared(), B)
        f3 = dag.update(dag.root_frontier().shared(), C)
        j12 = dag.join(f1, f2)
        j = dag.join(j12, f3)
        # pending pair became an epsilon vertex, then joined with the third
        assert j.pending is not None
        eps_members = set()
        for v in j.pending:
            if dag.labels[v] is EPSILON:
                eps_members = set(dag.parents[v])
        assert eps_members == {f1.current, f2.current}

    def test_join_absorbs_member_vertex(self):
        dag = TraceDag()
        f1 = dag.update(dag.root_frontier(), A)
        f2 = dag.update(dag.root_frontier().shared(), B)
        j = dag.join(f1, f2)
        j2 = dag.join(j, Frontier(current=f1.current))
        assert j2.pending == frozenset({f1.current, f2.current})


class TestCount:
    def test_single_path_counts_one(self):
        dag = TraceDag()
        f = dag.root_frontier()
        for label in (A, B, C):
            f = dag.update(f, label)
        assert dag.count(f.current) == 1

    def test_branch_diamond_counts_two(self):
        dag = TraceDag()
        f1 = dag.update(dag.root_frontier(), A)
        f2 = dag.update(dag.root_frontier().shared(), B)
        j = dag.join(f1, f2)
        g = dag.update(j, C)
        assert dag.count(g.current) == 2

    def test_same_block_branch_stutters_to_one(self):
        # two arms fold into one vertex with reps {3, 6}; a plain block
        # observer counts 2, a stuttering one counts 1
        dag = TraceDag()
        f = dag.root_frontier()
        for _ in range(3):
            f = dag.update(f, A)
        taken, fall = f.shared(), f.shared()
        for _ in range(3):
            fall = dag.update(fall, A)
        j = dag.join(taken, fall)
        g = dag.update(j, B)
        assert dag.count(g.current, stuttering=False) == 2
        assert dag.count(g.current, stuttering=True) == 1

    def test_count_at_least_one_and_stutter_bound(self):
        dag = TraceDag()
        f = dag.update(dag.root_frontier(), lbl("A", "B"))
        f = dag.update(f, lbl("C"))
        c, cs = dag.count(f.current), dag.count(f.current, stuttering=True)
        assert 1 <= cs <= c


class TestConcretize:
    def test_repeated_constant(self):
        dag = TraceDag()
        f = dag.update(dag.root_frontier(), B)
        f = dag.update(f, B)
        assert dag.concretize_traces(f.current, {}) == {(("B",), ("B",))}

    def test_diamond_two_sequences(self):
        dag = TraceDag()
        f1 = dag.update(dag.root_frontier(), A)
        f2 = dag.update(dag.root_frontier().shared(), B)
        j = dag.join(f1, f2)
        g = dag.update(j, C)
        assert dag.concretize_traces(g.current, {}) == {
            (("A",), ("C",)), (("B",), ("C",))}

    def test_repetition_set(self):
        dag = TraceDag()
        f = dag.update(dag.root_frontier(), A)
        v = f.current
        dag.reps[v] = dag.reps[v].merge(dag.reps[v].bump())
        assert dag.concretize_traces(v, {}) == {(("A",),), (("A",), ("A",))}

    def test_symbolic_labels_fill_from_valuation(self):
        dag = TraceDag()
        x = MSymSet.of(MaskedSymbol.make(1, 0, 0b01, 2))
        label = project(x, (1,))
        f = dag.update(dag.root_frontier(), label)
        assert dag.concretize_traces(f.current, {1: 0b10}) == {((1,),)}


def random_dag(rng, max_v=8):
    """Random small DAG built through the public update/join interface."""
    dag = TraceDag()
    frontiers = [dag.root_frontier()]
    labels = [lbl(*ls) for ls in (["A"], ["B"], ["A", "B"], ["C"], ["A", "C"])]
    sym_label = project(MSymSet.of(MaskedSymbol.make(1, 0, 0b01, 2),
                                   MaskedSymbol.make(2, 0b10, 0b11, 2)), (1, 0))
    labels.append(sym_label)
    for _ in range(rng.randint(2, 12)):
        act = rng.random()
        if act < 0.55 or len(frontiers) == 1:
            i = rng.randrange(len(frontiers))
            if act < 0.15:
                frontiers.append(frontiers[i].shared())  # split
            else:
                frontiers[i] = dag.update(frontiers[i], rng.choice(labels))
        else:
            i, j = rng.sample(range(len(frontiers)), 2)
            joined = dag.join(frontiers[i], frontiers[j])
            frontiers = [f for k, f in enumerate(frontiers) if k not in (i, j)]
            frontiers.append(joined)
        if dag.n_vertices >= max_v:
            break
    f = frontiers[0]
    for other in frontiers[1:]:
        f = dag.join(f, other)
    return dag, dag.finalize(f)


class TestRandomized:
    def test_count_equals_brute_force(self):
        rng = random.Random(7)
        for _ in range(300):
            dag, v = random_dag(rng)
            for stut in (False, True):
                assert dag.count(v, stut) == brute_count(dag, v, stut)

    def test_views_bounded_by_count(self):
        rng = random.Random(8)
        for _ in range(200):
            dag, v = random_dag(rng)
            for lam in ({1: 0, 2: 1}, {1: 3, 2: 2}, {1: 2, 2: 0}):
                traces = dag.concretize_traces(v, lam)
                assert len(traces) <= dag.count(v)
                stuttered = {stutter_collapse(t) for t in traces}
                assert len(stuttered) <= dag.count(v, stuttering=True)

    def test_acyclic_and_reachable(self):
        rng = random.Random(9)
        for _ in range(100):
            dag, v = random_dag(rng)
            for u in range(dag.n_vertices):
                assert all(p < u for p in dag.parents[u])  # ids topological

    def test_distinct_traces_never_remerge(self):
        """Once a delayed join resolves with both arms distinct, identical
        further updates keep their trace sets distinct (count stays >= 2)."""
        rng = random.Random(10)
        for _ in range(200):
            dag = TraceDag()
            f1, f2 = dag.root_frontier(), dag.root_frontier().shared()
            seq1 = [random.Random(rng.random()).choice([A, B]) for _ in range(3)]
            seq2 = [random.Random(rng.random()).choice([A, B]) for _ in range(2)]
            for l in seq1:
                f1 = dag.update(f1, l)
            for l in seq2:
                f2 = dag.update(f2, l)
            traces_differ = (
                dag.concretize_traces(f1.current, {}) !=
                dag.concretize_traces(f2.current, {}))
            j = dag.join(f1, f2)
            for _ in range(rng.randint(1, 4)):
                j = dag.update(j, C)
            if traces_differ:
                assert dag.count(j.current) >= 2


class TestExport:
    def test_dot_root_only(self):
        dag = TraceDag()
        out = dag.to_dot()
        assert out.count("->") == 0 and "v0" in out

    def test_dot_diamond(self):
        dag = TraceDag()
        f1 = dag.update(dag.root_frontier(), A)
        f2 = dag.update(dag.root_frontier().shared(), B)
        g = dag.update(dag.join(f1, f2), C)
        out = dag.to_dot(g.current)
        assert out.count("->") == 5  # r->A, r->B, A->eps, B->eps, eps->C

    def test_json_round_trip_shape(self):
        import json
        dag = TraceDag()
        f = dag.update(dag.root_frontier(), A)
        data = json.loads(dag.to_json(f.current))
        assert data["final"] == f.current
        assert data["vertices"][0]["label"] == "eps"
        assert data["edges"] == [[0, 1]]
