"""Training-free neighbor-pair studies.

A node's *retained neighborhood* at ratio ``q`` (percent) keeps its
``max(1, ceil(q/100 * |row|))`` strongest similarity-row entries, ties going
to the lower node id. Co-occurrence of a neighbor pair ``(v, v')`` counts the
training edges ``(u', i')`` with ``v`` retained by ``u'`` and ``v'`` retained
by ``i'``. The heuristic score of ``(u, i)`` sums row weights times
co-occurrence over all neighbor pairs, which factorizes as

    score(u, i) = sum over edges (u', i') of a[u, u'] * b[i, i']
    a[u, u'] = sum_v S[u, v] * [v retained by u']
    b[i, i'] = sum_v' S[i, v'] * [v' retained by i']

so the co-occurrence table itself is never built.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import MemoryBudgetError
from .evaluation import evaluate_scores, exclusion_edges
from .graph import InteractionGraph, NeighborhoodIndex, SimilarityOperator, build_graph

PAIR_TYPES = ("full", "UU", "II", "UI", "IU")


def retention_count(row_size: int, q) -> int:
    """``max(1, ceil(q/100 * row_size))`` evaluated exactly."""
    qf = Fraction(str(q))
    if not (0 < qf <= 100):
        raise ValueError(f"retention ratio must satisfy 0 < q <= 100, got {q}")
    return max(1, math.ceil(qf * row_size / 100))


def _top(ids: np.ndarray, weights: np.ndarray, count: int) -> np.ndarray:
    order = np.lexsort((ids, -weights))
    return np.sort(ids[order[:count]])


@dataclass
class RetainedNeighborhoods:
    q: float
    num_layers: int
    sets: dict[int, np.ndarray]

    def members(self, x: int) -> np.ndarray:
        return self.sets[int(x)]

    def contains(self, x: int, v: int) -> bool:
        s = self.sets[int(x)]
        k = np.searchsorted(s, v)
        return bool(k < s.size and s[k] == v)


def retain_neighbors(op: SimilarityOperator, nodes, q, rows: NeighborhoodIndex | None = None) -> RetainedNeighborhoods:
    nodes = [int(x) for x in nodes]
    rows = rows or op.materialize_rows(nodes)
    sets = {}
    for x in nodes:
        ids, w = rows.row(x)
        if ids.size == 0:  # cannot happen: the zero-hop term keeps x itself
            raise RuntimeError(f"node {x} has an empty neighborhood")
        sets[x] = _top(ids, w, retention_count(ids.size, q))
    return RetainedNeighborhoods(float(q), op.num_layers, sets)


def cooccurrence(graph: InteractionGraph, ru: RetainedNeighborhoods, ri: RetainedNeighborhoods,
                 v: int, vp: int) -> int:
    """Training edges whose user retains ``v`` and whose item retains ``vp`` (by enumeration)."""
    nu = graph.num_users
    count = 0
    for u, i in graph.edges().tolist():
        if ru.contains(u, v) and ri.contains(nu + i, vp):
            count += 1
    return count


def _split_by_type(vec: np.ndarray, num_users: int):
    user_part = vec.copy()
    user_part[num_users:] = 0.0
    item_part = vec.copy()
    item_part[:num_users] = 0.0
    return user_part, item_part


class HeuristicScorer:
    """Factorized co-occurrence scores for nodes whose similarity rows are cached."""

    def __init__(self, op: SimilarityOperator, ru: RetainedNeighborhoods, ri: RetainedNeighborhoods,
                 rows: NeighborhoodIndex):
        g = op.graph
        self.op, self.graph, self.rows = op, g, rows
        self.q, self.q_prime = ru.q, ri.q
        self._user_mask = _membership(ru, range(g.num_users), g.num_nodes)
        self._item_mask = _membership(ri, range(g.num_users, g.num_nodes), g.num_nodes)
        self._R = g.interaction_matrix()
        self._cache: dict[tuple[str, int], tuple[np.ndarray, np.ndarray]] = {}

    def _factor(self, side: str, x: int):
        key = (side, int(x))
        if key not in self._cache:
            try:
                row = self.rows.dense_row(x, self.graph.num_nodes)
            except LookupError:
                raise LookupError(f"no cached similarity row for node {x}") from None
            mask = self._user_mask if side == "u" else self._item_mask
            from_users, from_items = _split_by_type(row, self.graph.num_users)
            self._cache[key] = (mask @ from_users, mask @ from_items)
        return self._cache[key]

    def score_typed(self, u: int, i: int) -> tuple[float, float, float, float]:
        """Parts split by the type of the retained member on each side: (UU, II, UI, IU)."""
        aU, aI = self._factor("u", u)
        bU, bI = self._factor("i", self.graph.num_users + i)
        R = self._R
        return (float(aU @ (R @ bU)), float(aI @ (R @ bI)),
                float(aU @ (R @ bI)), float(aI @ (R @ bU)))

    def score(self, u: int, i: int) -> float:
        a = sum(self._factor("u", u))
        b = sum(self._factor("i", self.graph.num_users + i))
        return float(a @ (self._R @ b))


def _membership(ret: RetainedNeighborhoods, owners, num_nodes: int) -> sp.csr_matrix:
    owners = list(owners)
    indptr = [0]
    indices = []
    for x in owners:
        m = ret.members(x)
        indices.append(m)
        indptr.append(indptr[-1] + m.size)
    idx = np.concatenate(indices) if indices else np.empty(0, dtype=np.int64)
    return sp.csr_matrix((np.ones(idx.size), idx, np.asarray(indptr)), shape=(len(owners), num_nodes))


def build_scorer(op: SimilarityOperator, q, q_prime, query_nodes=None) -> HeuristicScorer:
    g = op.graph
    all_rows = op.materialize_rows(range(g.num_nodes))
    ru = retain_neighbors(op, range(g.num_users), q, all_rows)
    ri = retain_neighbors(op, range(g.num_users, g.num_nodes), q_prime, all_rows)
    return HeuristicScorer(op, ru, ri, all_rows)


def heuristic_score(scorer: HeuristicScorer, u: int, i: int) -> float:
    return scorer.score(u, i)


def heuristic_score_typed(scorer: HeuristicScorer, u: int, i: int) -> tuple[float, float, float, float]:
    return scorer.score_typed(u, i)


# ------------------------------------------------------------- study path

def retention_masks(op: SimilarityOperator, owners: np.ndarray, ratios, block: int = 256,
                    max_entries: int | None = None) -> dict:
    """Sparse (len(owners), num_nodes) retained-set indicators for each ratio.

    Rows of the similarity operator are computed in column blocks; one stable
    descending sort per block serves every ratio.
    """
    n = op.num_nodes
    ratios = list(ratios)
    parts = {q: ([], []) for q in ratios}
    used = 0
    for lo in range(0, owners.size, block):
        cols = owners[lo:lo + block]
        unit = np.zeros((n, cols.size))
        unit[cols, np.arange(cols.size)] = 1.0
        S = op.apply(unit)
        sizes = np.count_nonzero(S, axis=0)
        order = np.argsort(-S, axis=0, kind="stable")
        for q in ratios:
            counts = np.array([retention_count(int(s), q) for s in sizes])
            keep = np.arange(n)[:, None] < counts[None, :]
            r, c = np.nonzero(keep.T)
            used += r.size
            if max_entries is not None and used > max_entries:
                worst = int(cols[np.argmax(counts)])
                raise MemoryBudgetError(f"node {worst}: retained row of {counts.max()} entries "
                                        f"pushes the study past {max_entries} entries")
            parts[q][0].append(lo + r)
            parts[q][1].append(order[c, r])
    out = {}
    for q, (rr, cc) in parts.items():
        rr = np.concatenate(rr) if rr else np.empty(0, dtype=np.int64)
        cc = np.concatenate(cc) if cc else np.empty(0, dtype=np.int64)
        out[q] = sp.csr_matrix((np.ones(rr.size), (rr, cc)), shape=(owners.size, n))
    return out


def _type_filter(M: sp.csr_matrix, num_users: int, t: str | None) -> sp.csr_matrix:
    if t is None:
        return M
    keep = np.zeros(M.shape[1])
    if t == "U":
        keep[:num_users] = 1.0
    else:
        keep[num_users:] = 1.0
    return (M @ sp.diags(keep)).tocsr()


def study_scores(op: SimilarityOperator, user_mask: sp.csr_matrix, item_mask: sp.csr_matrix,
                 users: np.ndarray, pair_type: str = "full") -> np.ndarray:
    """Heuristic scores of ``users`` against every item for one (q, q') cell."""
    g = op.graph
    nu, n = g.num_users, g.num_nodes
    t_user, t_item = (None, None) if pair_type == "full" else (pair_type[0], pair_type[1])
    MU = _type_filter(user_mask, nu, t_user)
    MI = _type_filter(item_mask, nu, t_item)
    unit = np.zeros((n, users.size))
    unit[users, np.arange(users.size)] = 1.0
    S_cols = op.apply(unit)                          # similarity rows of the users, as columns
    A_t = MU @ S_cols                                 # (num_users, b): a[u, u'] transposed
    C_t = g.interaction_matrix().T @ A_t              # (num_items, b)
    D_t = MI.T @ C_t                                  # (n, b)
    return op.apply(np.asarray(D_t))[nu:].T           # (b, num_items)


def retention_study(bundle, num_layers: int = 3, q_grid=(0.1, 1, 10, 100), q_prime_grid=(0.1, 1, 10, 100),
                    types=("full",), N: int = 20, block: int = 512, max_entries: int | None = None,
                    progress=None) -> list[dict]:
    """Test NDCG@N of the heuristic score for every (q, q', type) cell."""
    if not q_grid or not q_prime_grid:
        raise ValueError("grids must be non-empty")
    for t in types:
        if t not in PAIR_TYPES:
            raise ValueError(f"unknown pair type {t!r}")
    graph = build_graph(bundle, "train")
    op = SimilarityOperator(graph, num_layers)
    nu = graph.num_users
    user_masks = retention_masks(op, np.arange(nu), q_grid, max_entries=max_entries)
    item_masks = retention_masks(op, np.arange(nu, graph.num_nodes), q_prime_grid, max_entries=max_entries)
    excl = exclusion_edges(bundle, "test")
    results = []
    for q in q_grid:
        for qp in q_prime_grid:
            for t in types:
                metrics = evaluate_scores(
                    lambda us, q=q, qp=qp, t=t: study_scores(op, user_masks[q], item_masks[qp], us, t),
                    bundle.num_users, bundle.num_items, bundle.test, excl, (N,), block=block)
                row = {"q": q, "q_prime": qp, "type": t, "ndcg": metrics.ndcg[N]}
                results.append(row)
                if progress is not None:
                    progress(row)
    return results


def write_study_csv(rows: list[dict], path) -> None:
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["q", "q_prime", "type", "ndcg"])
        for r in rows:
            w.writerow([r["q"], r["q_prime"], r["type"], repr(float(r["ndcg"]))])
