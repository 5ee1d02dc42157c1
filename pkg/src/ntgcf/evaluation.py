"""Full-ranking Recall@N / NDCG@N."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import PropagatedState, user_item_scores


def _check_truth(truth) -> set:
    truth = set(int(t) for t in truth)
    if not truth:
        raise ValueError("ground truth is empty; such users must be excluded by the caller")
    return truth


def recall_at(ranked, truth, N: int) -> float:
    truth = _check_truth(truth)
    hits = sum(1 for x in list(ranked)[:N] if int(x) in truth)
    return hits / len(truth)


def ndcg_at(ranked, truth, N: int) -> float:
    truth = _check_truth(truth)
    dcg = sum(1.0 / np.log2(p + 2) for p, x in enumerate(list(ranked)[:N]) if int(x) in truth)
    idcg = sum(1.0 / np.log2(p + 2) for p in range(min(N, len(truth))))
    return dcg / idcg


@dataclass
class RankingMetrics:
    recall: dict[int, float]
    ndcg: dict[int, float]
    users_evaluated: int
    per_user: dict | None = field(default=None, repr=False)

    def write_csv(self, path) -> None:
        with open(Path(path), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["N", "recall", "ndcg", "users_evaluated"])
            for N in sorted(self.recall):
                w.writerow([N, repr(self.recall[N]), repr(self.ndcg[N]), self.users_evaluated])

    def write_per_user_csv(self, path) -> None:
        if self.per_user is None:
            raise ValueError("per-user breakdown was not collected")
        Ns = sorted(self.recall)
        with open(Path(path), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["user"] + [f"recall{N}" for N in Ns] + [f"ndcg{N}" for N in Ns])
            for u in sorted(self.per_user):
                rec, nd = self.per_user[u]
                w.writerow([u] + [repr(rec[N]) for N in Ns] + [repr(nd[N]) for N in Ns])


def _grouped(edges: np.ndarray, num_users: int) -> list[np.ndarray]:
    """Item arrays per user."""
    if len(edges) == 0:
        return [np.empty(0, dtype=np.int64) for _ in range(num_users)]
    order = np.argsort(edges[:, 0], kind="stable")
    e = edges[order]
    bounds = np.searchsorted(e[:, 0], np.arange(num_users + 1))
    return [e[bounds[u]:bounds[u + 1], 1] for u in range(num_users)]


def topk_matrix(scores: np.ndarray, K: int) -> np.ndarray:
    """Row-wise top-K column indices, descending score, ties by ascending index.

    ``-inf`` marks excluded entries; they are never returned ahead of finite
    ones, and callers must drop them if fewer than K valid candidates exist.
    """
    n = scores.shape[1]
    K = min(K, n)
    if K < n:
        part = np.argpartition(-scores, K - 1, axis=1)[:, :K]
        kth = np.take_along_axis(scores, part, axis=1).min(axis=1, keepdims=True)
    else:
        kth = np.full((scores.shape[0], 1), -np.inf)
    out = np.empty((scores.shape[0], K), dtype=np.int64)
    for r in range(scores.shape[0]):
        cand = np.flatnonzero(scores[r] >= kth[r, 0])
        cs = scores[r, cand]
        order = np.lexsort((cand, -cs))
        out[r] = cand[order[:K]]
    return out


def evaluate_scores(score_fn, num_users: int, num_items: int, truth_edges: np.ndarray,
                    exclude_edges: np.ndarray, Ns=(20,), per_user: bool = False,
                    block: int = 1024) -> RankingMetrics:
    """Metrics for any scorer ``score_fn(users) -> (len(users), num_items)`` array."""
    Ns = sorted({int(n) for n in Ns})
    truth = _grouped(np.asarray(truth_edges, dtype=np.int64).reshape(-1, 2), num_users)
    excl = _grouped(np.asarray(exclude_edges, dtype=np.int64).reshape(-1, 2), num_users)
    users = np.array([u for u in range(num_users) if truth[u].size], dtype=np.int64)
    Kmax = max(Ns)
    rec_sum = {N: 0.0 for N in Ns}
    nd_sum = {N: 0.0 for N in Ns}
    breakdown = {} if per_user else None
    discounts = 1.0 / np.log2(np.arange(2, Kmax + 2))
    for lo in range(0, users.size, block):
        ub = users[lo:lo + block]
        scores = np.array(score_fn(ub), dtype=np.float64, copy=True)
        for r, u in enumerate(ub):
            if excl[u].size:
                scores[r, excl[u]] = -np.inf
        top = topk_matrix(scores, Kmax)
        for r, u in enumerate(ub):
            valid = np.isfinite(scores[r, top[r]])
            ranked = top[r][valid]
            tset = truth[u]
            hit = np.isin(ranked, tset)
            rec_u, nd_u = {}, {}
            for N in Ns:
                h = hit[:N]
                rec_u[N] = float(h.sum()) / tset.size
                idcg = float(discounts[:min(N, tset.size)].sum())
                nd_u[N] = float((discounts[:h.size] * h).sum()) / idcg
                rec_sum[N] += rec_u[N]
                nd_sum[N] += nd_u[N]
            if per_user:
                breakdown[int(u)] = (rec_u, nd_u)
    n = users.size
    return RankingMetrics(
        recall={N: rec_sum[N] / n if n else 0.0 for N in Ns},
        ndcg={N: nd_sum[N] / n if n else 0.0 for N in Ns},
        users_evaluated=int(n),
        per_user=breakdown,
    )


def exclusion_edges(bundle, which: str) -> np.ndarray:
    if which == "valid":
        return bundle.train
    if which == "test":
        return np.vstack([bundle.train, bundle.valid])
    raise ValueError(f"which must be 'valid' or 'test', got {which!r}")


def evaluate_all(state: PropagatedState, bundle, which: str = "valid", Ns=(20,),
                 kind: str = "inner", per_user: bool = False) -> RankingMetrics:
    """Rank every item for each user with held-out interactions in ``which``."""
    state.check_fresh()
    return evaluate_scores(lambda users: user_item_scores(state, users, kind),
                           bundle.num_users, bundle.num_items, bundle.split(which),
                           exclusion_edges(bundle, which), Ns, per_user)
