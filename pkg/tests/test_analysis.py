import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ntgcf.analysis import (HeuristicScorer, build_scorer, cooccurrence, heuristic_score,
                            heuristic_score_typed, retain_neighbors, retention_count, retention_masks,
                            retention_study, study_scores, write_study_csv)
from ntgcf.data import bundle_from_edges
from ntgcf.errors import MemoryBudgetError
from ntgcf.graph import SimilarityOperator, graph_from_edges
from oracles import cooccurrence_table, dense_similarity, quadruple_sum_score, random_edges, retained_set

RATIOS = [0.1, 1, 5, 10, 25, 34, 50, 75, 100]


def connected_instance(seed, max_nodes=20, L=2):
    rng = np.random.default_rng(seed)
    while True:
        nu, ni, edges = random_edges(rng, max_nodes)
        if edges:
            return nu, ni, edges, SimilarityOperator(graph_from_edges(nu, ni, edges), L)


class TestRetentionCount:
    @pytest.mark.parametrize("size,q,expected", [(3, 34, 2), (3, 33, 1), (10, 0.1, 1), (10, 100, 10),
                                                 (7, 50, 4), (1000, 0.1, 1), (1001, 0.1, 2)])
    def test_values(self, size, q, expected):
        assert retention_count(size, q) == expected

    @pytest.mark.parametrize("q", [0, -1, 101])
    def test_range(self, q):
        with pytest.raises(ValueError):
            retention_count(5, q)


def test_g0_hand_example(g0):
    ret = retain_neighbors(SimilarityOperator(g0, 1), [0], 34)
    assert ret.members(0).tolist() == [0, 1]          # u0 and i0, tie with i1 goes to the lower id
    assert ret.contains(0, 1) and not ret.contains(0, 2)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(RATIOS))
def test_retained_sets_match_oracle(seed, q):
    nu, ni, edges, op = connected_instance(seed)
    S = dense_similarity(nu, ni, edges, op.num_layers)
    ret = retain_neighbors(op, range(nu + ni), q)
    for x in range(nu + ni):
        assert ret.members(x).tolist() == retained_set(S[x], q)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.lists(st.sampled_from(RATIOS), min_size=2, max_size=2, unique=True))
def test_retention_monotone(seed, pair):
    lo, hi = sorted(pair)
    nu, ni, edges, op = connected_instance(seed)
    rows = op.materialize_rows(range(nu + ni))
    small = retain_neighbors(op, range(nu + ni), lo, rows)
    big = retain_neighbors(op, range(nu + ni), hi, rows)
    for x in range(nu + ni):
        assert set(small.members(x)) <= set(big.members(x))
    if hi == 100:
        for x in range(nu + ni):
            assert big.members(x).size == rows.size(x)


def test_cooccurrence_matches_oracle():
    nu, ni, edges, op = connected_instance(5, 16)
    S = dense_similarity(nu, ni, edges, op.num_layers)
    omega = cooccurrence_table(S, nu, edges, 25, 50)
    ru = retain_neighbors(op, range(nu), 25)
    ri = retain_neighbors(op, range(nu, nu + ni), 50)
    for v in range(nu + ni):
        for vp in range(nu + ni):
            assert cooccurrence(op.graph, ru, ri, v, vp) == omega[v, vp]


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("q,qp", [(10, 10), (34, 100), (100, 100), (0.1, 50)])
def test_factorized_score_matches_quadruple_sum(seed, q, qp):
    nu, ni, edges, op = connected_instance(seed, 18)
    S = dense_similarity(nu, ni, edges, op.num_layers)
    omega = cooccurrence_table(S, nu, edges, q, qp)
    scorer = build_scorer(op, q, qp)
    for u in range(nu):
        for i in range(ni):
            ref = quadruple_sum_score(S, omega, nu, u, i)
            assert heuristic_score(scorer, u, i) == pytest.approx(ref, rel=1e-10, abs=1e-12)
            typed = heuristic_score_typed(scorer, u, i)
            for part, t in zip(typed, ("UU", "II", "UI", "IU")):
                assert part == pytest.approx(quadruple_sum_score(S, omega, nu, u, i, t), rel=1e-10, abs=1e-12)


def test_scorer_needs_cached_rows():
    nu, ni, edges, op = connected_instance(2)
    rows = op.materialize_rows(range(1, nu + ni))
    ru = retain_neighbors(op, range(nu), 50, op.materialize_rows(range(nu + ni)))
    ri = retain_neighbors(op, range(nu, nu + ni), 50, op.materialize_rows(range(nu + ni)))
    scorer = HeuristicScorer(op, ru, ri, rows)
    with pytest.raises(LookupError, match="node 0"):
        scorer.score(0, 0)


@pytest.mark.parametrize("pair_type", ["full", "UU", "II", "UI", "IU"])
def test_study_path_matches_scorer(pair_type):
    nu, ni, edges, op = connected_instance(11, 24)
    scorer = build_scorer(op, 10, 34)
    um = retention_masks(op, np.arange(nu), [10], block=3)[10]
    im = retention_masks(op, np.arange(nu, nu + ni), [34], block=4)[34]
    block = study_scores(op, um, im, np.arange(nu), pair_type)
    for u in range(nu):
        for i in range(ni):
            ref = scorer.score(u, i) if pair_type == "full" else \
                scorer.score_typed(u, i)[("UU", "II", "UI", "IU").index(pair_type)]
            assert block[u, i] == pytest.approx(ref, rel=1e-9, abs=1e-12)


def test_mask_budget():
    nu, ni, edges, op = connected_instance(3)
    with pytest.raises(MemoryBudgetError, match="node"):
        retention_masks(op, np.arange(nu), [100], max_entries=2)


def test_retention_study_rows(tmp_path):
    rng = np.random.default_rng(0)
    edges = sorted({(int(u), int(i)) for u, i in zip(rng.integers(0, 12, 120), rng.integers(0, 15, 120))})
    rng.shuffle(edges)
    n = len(edges)
    b = bundle_from_edges(12, 15, edges[: int(0.7 * n)], edges[int(0.7 * n): int(0.8 * n)],
                          edges[int(0.8 * n):], seed=0)
    rows = retention_study(b, 2, (10, 100), (100,), types=("full", "UI"), N=5)
    assert [(r["q"], r["q_prime"], r["type"]) for r in rows] == \
        [(10, 100, "full"), (10, 100, "UI"), (100, 100, "full"), (100, 100, "UI")]
    assert all(0.0 <= r["ndcg"] <= 1.0 for r in rows)
    write_study_csv(rows, tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == "q,q_prime,type,ndcg"
    with pytest.raises(ValueError):
        retention_study(b, 2, (10,), (10,), types=("XY",))
