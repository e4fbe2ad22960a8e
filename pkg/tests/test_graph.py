import json

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from itrca.graph import (
    CausalDag,
    CycleError,
    DuplicateEdgeError,
    InfeasibleShdError,
    UnknownNodeError,
    ancestors,
    build_dag,
    descendants,
    is_polytree,
    max_in_degree,
    perturb_graph,
    shd_feasible_range,
    structural_hamming_distance,
)


def random_dag(rng, n, p):
    names = [f"v{i}" for i in range(n)]
    edges = [(names[i], names[j]) for i in range(n) for j in range(i + 1, n) if rng.random() < p]
    perm = rng.permutation(n)
    # shuffle declaration order so topological order is not trivially the input order
    return build_dag([names[i] for i in perm], edges)


def shd_oracle(a: CausalDag, b: CausalDag) -> int:
    """Pair-based SHD computed from adjacency matrices."""
    idx = {n: i for i, n in enumerate(a.nodes)}
    n = len(idx)
    A = np.zeros((n, n), dtype=int)
    B = np.zeros((n, n), dtype=int)
    for u, v in a.edges:
        A[idx[u], idx[v]] = 1
    for u, v in b.edges:
        B[idx[u], idx[v]] = 1
    return int(sum(
        (A[i, j], A[j, i]) != (B[i, j], B[j, i]) for i in range(n) for j in range(i + 1, n)
    ))


dag_params = st.tuples(st.integers(0, 2**32 - 1), st.integers(1, 12), st.floats(0.0, 0.6))


class TestBuild:
    def test_basic_accessors(self, diamond):
        assert diamond.parents("D") == ("B", "C")
        assert diamond.children("A") == ("B", "C")
        assert diamond.in_degree("A") == 0
        assert diamond.roots() == ["A"]
        assert diamond.index("C") == 2
        assert max_in_degree(diamond) == 2

    def test_empty_graph(self):
        dag = build_dag([], [])
        assert dag.topological_order() == ()
        assert is_polytree(dag)
        assert max_in_degree(dag) == 0

    def test_cycle_rejected(self):
        with pytest.raises(CycleError):
            build_dag(["a", "b", "c"], [("a", "b"), ("b", "c"), ("c", "a")])

    def test_self_loop_rejected(self):
        with pytest.raises(CycleError):
            build_dag(["a"], [("a", "a")])

    def test_unknown_node(self):
        with pytest.raises(UnknownNodeError) as err:
            build_dag(["a"], [("a", "b")])
        assert "'b'" in str(err.value)

    def test_duplicate_edge(self):
        with pytest.raises(DuplicateEdgeError):
            build_dag(["a", "b"], [("a", "b"), ("a", "b")])

    def test_duplicate_node(self):
        with pytest.raises(DuplicateEdgeError):
            build_dag(["a", "a"], [])

    def test_unknown_lookup(self, chain):
        with pytest.raises(UnknownNodeError):
            chain.parents("Z")

    def test_json_roundtrip(self, diamond, tmp_path):
        again = CausalDag.from_json(diamond.to_json())
        assert again.nodes == diamond.nodes and again.edges == diamond.edges
        path = tmp_path / "g.json"
        diamond.to_json(path)
        assert CausalDag.from_json(path).edge_set() == diamond.edge_set()
        assert json.loads(path.read_text())["nodes"] == list(diamond.nodes)


class TestAgainstNetworkx:
    @settings(max_examples=60, deadline=None)
    @given(dag_params)
    def test_topological_order_valid(self, params):
        seed, n, p = params
        dag = random_dag(np.random.default_rng(seed), n, p)
        pos = {v: i for i, v in enumerate(dag.topological_order())}
        assert sorted(pos) == sorted(dag.nodes)
        assert all(pos[u] < pos[v] for u, v in dag.edges)

    @settings(max_examples=60, deadline=None)
    @given(dag_params)
    def test_ancestors_descendants(self, params):
        seed, n, p = params
        dag = random_dag(np.random.default_rng(seed), n, p)
        g = nx.DiGraph(list(dag.edges))
        g.add_nodes_from(dag.nodes)
        for v in dag.nodes:
            assert ancestors(dag, v) == nx.ancestors(g, v) | {v}
            assert descendants(dag, v) == nx.descendants(g, v) | {v}

    @settings(max_examples=60, deadline=None)
    @given(dag_params)
    def test_polytree(self, params):
        seed, n, p = params
        dag = random_dag(np.random.default_rng(seed), n, p)
        g = nx.Graph(list(dag.edges))
        g.add_nodes_from(dag.nodes)
        assert is_polytree(dag) == nx.is_forest(g)


class TestShd:
    def test_reversal_costs_one(self, chain):
        flipped = build_dag(chain.nodes, [("B", "A"), ("B", "C")])
        assert structural_hamming_distance(chain, flipped) == 1

    def test_add_and_remove(self, chain):
        other = build_dag(chain.nodes, [("A", "B"), ("A", "C")])
        assert structural_hamming_distance(chain, other) == 2

    def test_symmetric_and_zero(self, diamond):
        assert structural_hamming_distance(diamond, diamond) == 0

    def test_feasible_range(self):
        # 4 nodes, 3 edges, 3 free pairs
        assert shd_feasible_range(4, 3, 5) == (2, 2)
        assert shd_feasible_range(4, 3, 1) == (0, 0)
        lo, hi = shd_feasible_range(4, 3, 7)
        assert lo > hi

    def test_infeasible_raises(self, chain, rng):
        with pytest.raises(InfeasibleShdError):
            perturb_graph(chain, 10, rng)
        with pytest.raises(InfeasibleShdError):
            perturb_graph(chain, -1, rng)

    def test_zero_is_identity(self, diamond, rng):
        assert perturb_graph(diamond, 0, rng) is diamond

    @settings(max_examples=80, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(3, 15), st.floats(0.1, 0.5), st.floats(0.0, 1.0))
    def test_perturb_exact(self, seed, n, p, frac):
        rng = np.random.default_rng(seed)
        dag = random_dag(rng, n, p)
        if not dag.edges:
            return
        shd = max(1, round(frac * len(dag.edges)))
        lo, hi = shd_feasible_range(n, len(dag.edges), shd)
        if lo > hi:
            return
        out = perturb_graph(dag, shd, rng)
        assert shd_oracle(dag, out) == shd == structural_hamming_distance(dag, out)
        assert len(out.edges) == len(dag.edges)
        assert nx.is_directed_acyclic_graph(nx.DiGraph(list(out.edges)))


def test_perturb_dense_reversals_only():
    # a complete DAG has no free pairs, so the whole distance must come from reversals
    names = [f"v{i}" for i in range(8)]
    dag = build_dag(names, [(names[i], names[j]) for i in range(8) for j in range(i + 1, 8)])
    rng = np.random.default_rng(0)
    for shd in (1, 10, 20, 27, 28):
        out = perturb_graph(dag, shd, rng)
        assert shd_oracle(dag, out) == shd
