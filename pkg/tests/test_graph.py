import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ntgcf.errors import DataError, MemoryBudgetError
from ntgcf.graph import (SimilarityOperator, count_neighbor_pairs, graph_from_edges,
                         neighborhood_sizes, write_pair_counts)
from oracles import dense_adjacency, dense_similarity, random_edges


def test_duplicate_edges_collapse():
    g = graph_from_edges(2, 3, [(0, 1), (0, 1), (1, 2)])
    assert g.num_edges == 2
    assert g.items_of(0).tolist() == [1]
    assert g.users_of(2).tolist() == [1]


def test_out_of_range_edge():
    with pytest.raises(DataError):
        graph_from_edges(1, 1, [(0, 1)])


def test_has_edge_vectorized(g1):
    got = g1.has_edge(np.array([0, 0, 1, 1]), np.array([0, 1, 0, 1]))
    assert got.tolist() == [True, True, True, False]


def test_degrees_and_normalized_block(g1):
    assert g1.degrees.tolist() == [2, 1, 2, 1]
    dense = g1.normalized_adjacency().toarray()
    assert np.allclose(dense, dense.T)
    assert dense[0, 2] == pytest.approx(0.5)


class TestHandExamples:
    def test_one_layer_rows(self, g0):
        S = SimilarityOperator(g0, 1).apply(np.eye(3))
        assert S[0] == pytest.approx([0.5, 2 ** -0.5 / 2, 2 ** -0.5 / 2])

    def test_two_layer_rows(self, g0):
        S = SimilarityOperator(g0, 2).apply(np.eye(3))
        assert S[0, 0] == pytest.approx(2 / 3)
        assert S[0, 1] == pytest.approx(0.2357022603955158)
        assert S[1, 2] == pytest.approx(1 / 6)

    def test_zero_layers_is_identity(self, g1):
        X = np.random.default_rng(0).normal(size=(4, 3))
        assert np.array_equal(SimilarityOperator(g1, 0).apply(X), X)

    def test_isolated_node_keeps_its_vector(self):
        g = graph_from_edges(2, 2, [(0, 0)])
        X = np.random.default_rng(1).normal(size=(4, 2))
        out = SimilarityOperator(g, 3).apply(X)
        assert np.allclose(out[1], X[1] / 4)
        assert np.allclose(out[3], X[3] / 4)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 4))
def test_operator_matches_dense_powers(seed, L):
    rng = np.random.default_rng(seed)
    nu, ni, edges = random_edges(rng, 30)
    op = SimilarityOperator(graph_from_edges(nu, ni, edges), L)
    S = dense_similarity(nu, ni, edges, L)
    X = rng.normal(size=(nu + ni, 3))
    assert np.abs(op.apply(X) - S @ X).max() < 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_adjoint_symmetry(seed):
    rng = np.random.default_rng(seed)
    nu, ni, edges = random_edges(rng, 40)
    op = SimilarityOperator(graph_from_edges(nu, ni, edges), 3)
    x, y = rng.normal(size=(2, nu + ni))
    assert abs(x @ op.apply(y) - op.apply(x) @ y) < 1e-10


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_linearity(seed, a, b):
    rng = np.random.default_rng(seed)
    nu, ni, edges = random_edges(rng, 30)
    op = SimilarityOperator(graph_from_edges(nu, ni, edges), 2)
    X, Y = rng.normal(size=(2, nu + ni, 2))
    assert np.allclose(op.apply(a * X + b * Y), a * op.apply(X) + b * op.apply(Y), atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 5))
def test_split_matches_masked_propagation(seed, L):
    rng = np.random.default_rng(seed)
    nu, ni, edges = random_edges(rng, 30)
    op = SimilarityOperator(graph_from_edges(nu, ni, edges), L)
    X = rng.normal(size=(nu + ni, 4))
    mask_u = np.zeros_like(X)
    mask_u[:nu] = X[:nu]
    from_u, from_i = op.apply_split(X)
    assert np.abs(from_u - op.apply(mask_u)).max() < 1e-12
    assert np.abs(from_i - op.apply(X - mask_u)).max() < 1e-12
    assert np.abs(from_u + from_i - op.apply(X)).max() < 1e-12


def test_dimension_mismatch(g1):
    with pytest.raises(ValueError, match="dimension mismatch"):
        SimilarityOperator(g1, 2).apply(np.zeros((3, 2)))


def test_negative_layers(g1):
    with pytest.raises(ValueError):
        SimilarityOperator(g1, -1)


class TestMaterializedRows:
    def test_rows_match_dense(self):
        rng = np.random.default_rng(7)
        nu, ni, edges = random_edges(rng, 25)
        op = SimilarityOperator(graph_from_edges(nu, ni, edges), 3)
        S = dense_similarity(nu, ni, edges, 3)
        idx = op.materialize_rows(range(nu + ni), batch=5)
        for x in range(nu + ni):
            assert np.abs(idx.dense_row(x, nu + ni) - S[x]).max() < 1e-12
            ids, _ = idx.user_part(x)
            assert (ids < nu).all()
            ids, _ = idx.item_part(x)
            assert (ids >= nu).all()

    def test_weight_lookup(self, g0):
        idx = SimilarityOperator(g0, 1).materialize_rows([0])
        assert idx.weight(0, 0) == pytest.approx(0.5)
        assert idx.size(0) == 3

    def test_missing_row(self, g0):
        idx = SimilarityOperator(g0, 1).materialize_rows([0])
        with pytest.raises(LookupError):
            idx.row(1)

    def test_budget_names_the_node(self, g0):
        with pytest.raises(MemoryBudgetError, match="node 1"):
            SimilarityOperator(g0, 1).materialize_rows([0, 1], max_entries=4)


class TestNeighborPairs:
    def test_hand_counts(self, g0):
        rows = count_neighbor_pairs(g0, g0.edges(), [0, 1])
        assert rows[0]["mean_pairs"] == 1.0
        assert rows[1]["mean_pairs"] == 6.0
        assert rows[1]["coverage"] == pytest.approx(6 / 9)

    def test_sizes_match_dense_reachability(self):
        rng = np.random.default_rng(3)
        nu, ni, edges = random_edges(rng, 30)
        g = graph_from_edges(nu, ni, edges)
        A = dense_adjacency(nu, ni, edges) + np.eye(nu + ni)
        sizes = neighborhood_sizes(g, [1, 2, 3], block=7)
        reach = np.eye(nu + ni)
        for h in (1, 2, 3):
            reach = (reach @ A > 0).astype(float)
            assert sizes[h].tolist() == reach.sum(axis=1).astype(int).tolist()

    def test_operator_and_graph_agree(self, g1):
        a = count_neighbor_pairs(g1, g1.edges(), [1, 2])
        b = count_neighbor_pairs(SimilarityOperator(g1, 2), g1.edges(), [1, 2])
        assert a == b

    def test_csv(self, g0, tmp_path):
        write_pair_counts(count_neighbor_pairs(g0, g0.edges(), [1]), tmp_path / "p.csv")
        lines = (tmp_path / "p.csv").read_text().splitlines()
        assert lines[0] == "hop,mean_pairs,coverage"
        assert lines[1].startswith("1,6.0,")


def test_empty_graph():
    g = graph_from_edges(3, 2, [])
    assert g.num_edges == 0 and g.degrees.tolist() == [0] * 5
    X = np.ones((5, 2))
    assert np.allclose(SimilarityOperator(g, 2).apply(X), X / 3)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 4))
def test_rows_nonnegative_with_self_weight_floor(seed, L):
    rng = np.random.default_rng(seed)
    nu, ni, edges = random_edges(rng, 25)
    op = SimilarityOperator(graph_from_edges(nu, ni, edges), L)
    idx = op.materialize_rows(range(nu + ni))
    for x in range(nu + ni):
        ids, w = idx.row(x)
        assert (w > 0).all()
        assert idx.weight(x, x) >= 1 / (L + 1) - 1e-15
