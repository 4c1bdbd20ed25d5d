import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pumacgl.graph import (GraphStructureError, GraphValidationError, build_graph, graph_from_dict,
                           graph_to_dict, induced_subgraph, normalize_adjacency, propagate)

from conftest import random_graph


def dense_normalized(n, edges, loops):
    """Independent dense evaluation of D^-1/2 A D^-1/2."""
    A = np.zeros((n, n))
    for u, v in edges:
        A[u, v] = A[v, u] = 1.0
    if loops:
        A += np.eye(n)
    d = A.sum(axis=1)
    s = np.where(d > 0, 1 / np.sqrt(np.where(d > 0, d, 1)), 0.0)
    return s[:, None] * A * s[None, :]


def test_build_symmetrizes():
    g = build_graph(np.eye(2), [(0, 1)])
    assert sorted(map(tuple, g.edges.tolist())) == [(0, 1), (1, 0)]


def test_build_dedups():
    g = build_graph(np.eye(2), [(0, 1), (0, 1), (1, 0)])
    assert g.num_edges == 1


def test_build_rejects_out_of_range_edge():
    with pytest.raises(GraphStructureError):
        build_graph(np.eye(2), [(0, 5)])


def test_build_rejects_mask_overlap():
    with pytest.raises(GraphValidationError):
        build_graph(np.eye(3), [], [0, 1, 0], train=[0, 1], test=[1])


def test_train_nodes_need_labels():
    with pytest.raises(GraphValidationError):
        build_graph(np.eye(2), [], [0, None], train=[1])


def test_graph_is_immutable():
    g = build_graph(np.eye(2), [(0, 1)])
    with pytest.raises(ValueError):
        g.features[0, 0] = 5


def test_normalize_two_nodes():
    g = build_graph(np.eye(2), [(0, 1)])
    np.testing.assert_array_equal(normalize_adjacency(g, True).toarray(), [[0.5, 0.5], [0.5, 0.5]])
    np.testing.assert_array_equal(normalize_adjacency(g, False).toarray(), [[0, 1], [1, 0]])


def test_normalize_path():
    g = build_graph(np.eye(3), [(0, 1), (1, 2)])
    L = normalize_adjacency(g, False).toarray()
    r = 1 / np.sqrt(2)
    np.testing.assert_allclose(L, [[0, r, 0], [r, 0, r], [0, r, 0]], rtol=0, atol=1e-15)


def test_isolated_node_rows():
    g = build_graph(np.ones((3, 2)), [(0, 1)])
    assert not normalize_adjacency(g, False).toarray()[2].any()
    assert normalize_adjacency(g, True).toarray()[2].tolist() == [0, 0, 1]
    assert not propagate(normalize_adjacency(g, False), g.features, 1).F[2].any()


def test_propagate_examples():
    g = build_graph(np.eye(2), [(0, 1)])
    L = normalize_adjacency(g, True)
    X = np.eye(2, dtype=np.float32)
    np.testing.assert_array_equal(propagate(L, X, 0).F, X)
    np.testing.assert_array_equal(propagate(L, X, 1).F, [[0.5, 0.5], [0.5, 0.5]])
    Ld = dense_normalized(2, [(0, 1)], True)
    np.testing.assert_allclose(propagate(L, X, 2).F, Ld @ (Ld @ X), rtol=1e-7)
    np.testing.assert_array_equal(propagate(L, X, 2).F, [[0.5, 0.5], [0.5, 0.5]])


def test_propagate_dimension_mismatch():
    g = build_graph(np.eye(2), [(0, 1)])
    with pytest.raises(ValueError):
        propagate(normalize_adjacency(g), np.ones((3, 2)), 1)


def test_induced_subgraph_examples():
    path = build_graph(np.eye(3), [(0, 1), (1, 2)])
    assert induced_subgraph(path, [0, 2]).num_edges == 0
    assert induced_subgraph(path, [0, 1, 2]) == path
    tri = build_graph(np.eye(3), [(0, 1), (1, 2), (0, 2)])
    sub = induced_subgraph(tri, [0, 1])
    assert (sub.num_nodes, sub.num_edges) == (2, 1)
    with pytest.raises(GraphValidationError):
        induced_subgraph(tri, [])


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2**31), st.booleans())
def test_normalize_matches_dense_oracle(n, seed, loops):
    X, E = random_graph(np.random.default_rng(seed), n)
    g = build_graph(X, E)
    L = normalize_adjacency(g, loops).toarray()
    np.testing.assert_allclose(L, dense_normalized(n, E, loops), rtol=1e-14, atol=0)
    assert np.array_equal(L, L.T)  # exact symmetry
    assert (L >= 0).all()
    if loops:
        deg_max = (dense_normalized(n, E, True) > 0).sum(axis=1).max()
        rs = L.sum(axis=1)
        assert (rs > 0).all() and (rs <= np.sqrt(deg_max) + 1e-12).all()


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 10), st.integers(0, 2**31), st.integers(0, 4))
def test_propagate_hops_compose(n, seed, p):
    X, E = random_graph(np.random.default_rng(seed), n)
    g = build_graph(X, E)
    L = normalize_adjacency(g)
    F = g.features
    for _ in range(p):
        F = propagate(L, F, 1).F
    assert np.array_equal(propagate(L, g.features, p).F, F)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 10), st.integers(0, 2**31), st.data())
def test_induced_subgraph_composes(n, seed, data):
    X, E = random_graph(np.random.default_rng(seed), n, p=0.5)
    g = build_graph(X, E, list(range(n)))
    S = data.draw(st.lists(st.integers(0, n - 1), min_size=1, unique=True))
    T = data.draw(st.lists(st.integers(0, len(S) - 1), min_size=1, unique=True))
    twice = induced_subgraph(induced_subgraph(g, S), T)
    once = induced_subgraph(g, [S[t] for t in T])
    assert twice == once


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 10), st.integers(0, 2**31))
def test_graph_file_round_trip(n, seed):
    rng = np.random.default_rng(seed)
    X, E = random_graph(rng, n)
    X[0, 0] = np.float32(np.nan) if n > 3 else X[0, 0]  # NaN payload must survive too
    labels = [None if rng.random() < 0.3 else int(rng.integers(0, 3)) for _ in range(n)]
    train = [i for i, l in enumerate(labels) if l is not None and rng.random() < 0.5]
    rest = [i for i in range(n) if i not in train]
    g = build_graph(X, E, labels, train=train, test=rest[: len(rest) // 2])
    doc = graph_to_dict(g)
    import json
    assert graph_from_dict(json.loads(json.dumps(doc))) == g
