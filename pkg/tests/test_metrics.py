import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gridnetsim.errors import EmptySet, NoEdges, TooSmall
from gridnetsim.metrics import (
    UndirectedGraph,
    betweenness,
    centrality_table,
    closeness,
    eigenvector_centrality,
    global_clustering,
    rank_from_scores,
    spectral_gap,
)

from .conftest import case_topology
from .oracles import brute_betweenness, brute_closeness, brute_clustering, dense_eigenvector, random_walk_gap


@st.composite
def connected_graphs(draw, min_n=2, max_n=8):
    n = draw(st.integers(min_n, max_n))
    nodes = ["v%d" % i for i in range(n)]
    edges = set()
    for i in range(1, n):
        j = draw(st.integers(0, i - 1))
        edges.add((nodes[j], nodes[i]))
    extra = draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=2 * n))
    for a, b in extra:
        if a != b:
            edges.add((nodes[min(a, b)], nodes[max(a, b)]))
    return nodes, sorted(edges)


def adjacency(nodes, edges):
    adj = {v: set() for v in nodes}
    for a, b in edges:
        adj[a].add(b)
        adj[b].add(a)
    return adj


def graph(edges, nodes=None):
    nodes = nodes or sorted({v for e in edges for v in e})
    return UndirectedGraph(nodes, edges)


P3 = graph([("a", "b"), ("b", "c")])
K3 = graph([("a", "b"), ("b", "c"), ("a", "c")])


# spectral gap

def test_gap_small_graphs():
    assert spectral_gap(graph([("a", "b")])) == pytest.approx(2.0, abs=1e-12)
    assert spectral_gap(P3) == pytest.approx(1.0, abs=1e-12)
    assert spectral_gap(graph([("a", "b"), ("c", "d")])) == 0.0
    with pytest.raises(TooSmall):
        spectral_gap(UndirectedGraph(["a"], []))


@given(connected_graphs(max_n=12))
def test_gap_matches_random_walk_spectrum(g):
    nodes, edges = g
    ug = UndirectedGraph(nodes, edges)
    expected = random_walk_gap(nodes, adjacency(nodes, edges))
    assert spectral_gap(ug) == pytest.approx(expected, abs=1e-9)
    assert 0.0 <= spectral_gap(ug) <= 2.0


def test_sparse_path_agrees_with_dense():
    ug = UndirectedGraph.from_topology(case_topology("500", "star"))
    assert spectral_gap(ug, force_sparse=True) == pytest.approx(spectral_gap(ug), abs=1e-9)


def test_star_gaps():
    gap500 = spectral_gap(UndirectedGraph.from_topology(case_topology("500", "star")))
    gap2000 = spectral_gap(UndirectedGraph.from_topology(case_topology("2000", "star")))
    gap10k = spectral_gap(UndirectedGraph.from_topology(case_topology("10k", "star")))
    assert 0 < gap500 < 0.05 and 0 < gap2000 < 0.05
    assert gap10k == 0.0


# clustering

def test_clustering_examples():
    assert global_clustering(K3) == 1.0
    k4_minus = graph([("a", "b"), ("a", "c"), ("a", "d"), ("b", "c"), ("c", "d")])
    assert global_clustering(k4_minus) == pytest.approx(5 / 6)
    star = graph([("h", "x%d" % i) for i in range(6)])
    assert global_clustering(star) == 0.0


# betweenness and closeness

def test_small_betweenness_and_closeness():
    assert betweenness(P3) == {"a": 0.0, "b": 1.0, "c": 0.0}
    assert betweenness(K3) == {"a": 0.0, "b": 0.0, "c": 0.0}
    assert closeness(P3) == pytest.approx({"a": 1 / 3, "b": 1 / 2, "c": 1 / 3})
    assert closeness(K3) == pytest.approx({"a": 0.5, "b": 0.5, "c": 0.5})
    assert closeness(graph([("a", "b"), ("c", "d")])) == {v: 1.0 for v in "abcd"}


@given(connected_graphs())
def test_structure_matches_enumeration(g):
    nodes, edges = g
    adj = adjacency(nodes, edges)
    ug = UndirectedGraph(nodes, edges)
    between = betweenness(ug)
    for v, want in brute_betweenness(nodes, adj).items():
        assert between[v] == pytest.approx(want, abs=1e-12)
    close = closeness(ug)
    for v, want in brute_closeness(nodes, adj).items():
        assert close[v] == pytest.approx(want, abs=1e-15)
    assert global_clustering(ug) == pytest.approx(brute_clustering(nodes, adj), abs=1e-15)


def test_batched_bfs_agrees_across_batch_sizes():
    from gridnetsim.metrics import _bfs_batches

    ug = UndirectedGraph.from_topology(case_topology("500", "radial"))
    whole = np.hstack([d for _, d, _ in _bfs_batches(ug, batch=ug.n)])
    pieces = np.hstack([d for _, d, _ in _bfs_batches(ug, batch=7)])
    assert np.array_equal(whole, pieces)


# eigenvector

def test_eigenvector_examples():
    k5 = graph([(a, b) for a in "abcde" for b in "abcde" if a < b])
    assert all(v == pytest.approx(1 / math.sqrt(5), abs=1e-9) for v in eigenvector_centrality(k5).values())
    star = eigenvector_centrality(graph([("h", "x%d" % i) for i in range(4)]))
    assert all(star["h"] > star["x%d" % i] for i in range(4))
    p3 = eigenvector_centrality(P3)
    assert p3["b"] / p3["a"] == pytest.approx(math.sqrt(2), abs=1e-9)
    with pytest.raises(NoEdges):
        eigenvector_centrality(UndirectedGraph(["a", "b"], []))


@given(connected_graphs())
def test_eigenvector_matches_dense(g):
    nodes, edges = g
    ug = UndirectedGraph(nodes, edges)
    want, lam, a = dense_eigenvector(nodes, adjacency(nodes, edges))
    got = eigenvector_centrality(ug)
    for v in nodes:
        assert got[v] == pytest.approx(want[v], abs=1e-8)
    x = np.array([got[v] for v in nodes])
    assert np.linalg.norm(x) == pytest.approx(1.0, abs=1e-12)
    assert np.max(np.abs(a @ x - lam * x)) < 1e-8


def test_eigenvector_zero_outside_largest_component():
    ug = graph([("a", "b"), ("b", "c"), ("x", "y")])
    got = eigenvector_centrality(ug)
    assert got["x"] == got["y"] == 0.0 and got["b"] > 0


def test_relabeling_keeps_scores():
    edges = [("a", "b"), ("b", "c"), ("c", "d"), ("b", "d"), ("d", "e")]
    rename = {"a": "n1", "b": "n2", "c": "n3", "d": "n4", "e": "n5"}
    g1 = graph(edges)
    g2 = graph([(rename[x], rename[y]) for x, y in edges])
    for fn in (betweenness, closeness, eigenvector_centrality):
        s1, s2 = fn(g1), fn(g2)
        for v in rename:
            assert s1[v] == pytest.approx(s2[rename[v]], abs=1e-12)


# ranks

def test_rank_from_scores_rules():
    assert rank_from_scores({"u0": 0.9, "u1": 0.1}).as_dict() == {"u0": 0, "u1": 1}
    assert rank_from_scores({"u1": 0.5, "u0": 0.5}).as_dict() == {"u0": 0, "u1": 1}
    assert rank_from_scores({"u2": 1.0, "u10": 1.0}).nodes() == ["u2", "u10"]
    with pytest.raises(EmptySet):
        rank_from_scores({})
    with pytest.raises(EmptySet):
        rank_from_scores({"a": 1.0}, ["b"])


@given(st.dictionaries(st.text(min_size=1, max_size=4), st.floats(-1e6, 1e6), min_size=1, max_size=12))
def test_ranks_are_a_bijection(scores):
    r = rank_from_scores(scores).as_dict()
    assert sorted(r.values()) == list(range(len(scores)))


def test_star_500_betweenness_rank():
    topo = case_topology("500", "star")
    table = centrality_table(UndirectedGraph.from_topology(topo))
    ranks = table.ranks(topo.utilities)["betweenness"].as_dict()
    assert ranks == {"Utility 0": 0, "Utility 1": 2, "Utility 2": 3, "Utility 3": 1}


def test_table_exports():
    table = centrality_table(P3)
    lines = table.to_csv().splitlines()
    assert lines[0] == "node,betweenness,eigenvector,closeness"
    assert lines[2].startswith("b,1.0,")
    import json

    doc = json.loads(table.to_json())
    assert doc["spectral_gap"] == pytest.approx(1.0)
    assert [n["node"] for n in doc["nodes"]] == ["a", "b", "c"]
