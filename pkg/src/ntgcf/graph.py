"""Bipartite interaction graph, normalized propagation, and multi-hop neighborhoods.

Node layout is users first: user ``u`` is node ``u`` and item ``i`` is node
``num_users + i``. The normalized adjacency is never formed as a full square
matrix; propagation uses the user-by-item block ``R_norm`` and its transpose,
which is all a bipartite graph needs.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import DataError, MemoryBudgetError

DENSE_BITMAP_LIMIT = 200_000_000


@dataclass(frozen=True)
class InteractionGraph:
    num_users: int
    num_items: int
    user_indptr: np.ndarray
    user_indices: np.ndarray   # item ids per user, ascending
    item_indptr: np.ndarray
    item_indices: np.ndarray   # user ids per item, ascending
    user_degree: np.ndarray
    item_degree: np.ndarray
    _edge_keys: np.ndarray = field(repr=False)

    @property
    def num_nodes(self) -> int:
        return self.num_users + self.num_items

    @property
    def num_edges(self) -> int:
        return int(self.user_indices.size)

    @property
    def degrees(self) -> np.ndarray:
        return np.concatenate([self.user_degree, self.item_degree])

    def items_of(self, u: int) -> np.ndarray:
        return self.user_indices[self.user_indptr[u]:self.user_indptr[u + 1]]

    def users_of(self, i: int) -> np.ndarray:
        return self.item_indices[self.item_indptr[i]:self.item_indptr[i + 1]]

    def edges(self) -> np.ndarray:
        users = np.repeat(np.arange(self.num_users, dtype=np.int64), self.user_degree)
        return np.column_stack([users, self.user_indices])

    @cached_property
    def _bitmap(self) -> np.ndarray | None:
        # dense membership table when it fits comfortably in memory
        if self.num_users * self.num_items > DENSE_BITMAP_LIMIT:
            return None
        mask = np.zeros((self.num_users, self.num_items), dtype=bool)
        mask[np.repeat(np.arange(self.num_users), self.user_degree), self.user_indices] = True
        return mask

    def has_edge(self, users, items) -> np.ndarray:
        """Vectorized membership test for (user, item) pairs."""
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        if self._bitmap is not None:
            return self._bitmap[users, items]
        keys = users * self.num_items + items
        if self._edge_keys.size == 0:
            return np.zeros(keys.shape, dtype=bool)
        pos = np.searchsorted(self._edge_keys, keys)
        pos = np.minimum(pos, self._edge_keys.size - 1)
        return self._edge_keys[pos] == keys

    def interaction_matrix(self, dtype=np.float64) -> sp.csr_matrix:
        data = np.ones(self.num_edges, dtype=dtype)
        return sp.csr_matrix((data, self.user_indices, self.user_indptr),
                             shape=(self.num_users, self.num_items))

    def normalized_block(self, dtype=np.float64) -> sp.csr_matrix:
        """``D_U^{-1/2} R D_I^{-1/2}``; rows or columns of isolated nodes stay zero."""
        du = self.user_degree.astype(np.float64)
        di = self.item_degree.astype(np.float64)
        users = np.repeat(np.arange(self.num_users), self.user_degree)
        vals = 1.0 / np.sqrt(du[users] * di[self.user_indices]) if self.num_edges else np.empty(0)
        return sp.csr_matrix((vals.astype(dtype), self.user_indices, self.user_indptr),
                             shape=(self.num_users, self.num_items))

    def normalized_adjacency(self, dtype=np.float64) -> sp.csr_matrix:
        block = self.normalized_block(dtype)
        return sp.bmat([[None, block], [block.T, None]], format="csr",
                       dtype=dtype) if self.num_nodes else sp.csr_matrix((0, 0), dtype=dtype)


def graph_from_edges(num_users: int, num_items: int, edges) -> InteractionGraph:
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if e.size and (e.min() < 0 or e[:, 0].max() >= num_users or e[:, 1].max() >= num_items):
        raise DataError("edge index out of range")
    keys = np.unique(e[:, 0] * num_items + e[:, 1]) if e.size else np.empty(0, dtype=np.int64)
    users, items = np.divmod(keys, num_items) if num_items else (keys, keys)
    user_degree = np.bincount(users, minlength=num_users).astype(np.int64)
    item_degree = np.bincount(items, minlength=num_items).astype(np.int64)
    user_indptr = np.concatenate([[0], np.cumsum(user_degree)]).astype(np.int64)
    user_indices = items.astype(np.int64)  # keys sorted by (user, item)
    order = np.lexsort((users, items))
    item_indptr = np.concatenate([[0], np.cumsum(item_degree)]).astype(np.int64)
    item_indices = users[order].astype(np.int64)
    return InteractionGraph(num_users, num_items, user_indptr, user_indices,
                            item_indptr, item_indices, user_degree, item_degree, keys)


def build_graph(bundle, which: str = "train") -> InteractionGraph:
    if which == "train":
        edges = bundle.train
    elif which == "train+valid":
        edges = np.vstack([bundle.train, bundle.valid])
    else:
        raise ValueError(f"which must be 'train' or 'train+valid', got {which!r}")
    return graph_from_edges(bundle.num_users, bundle.num_items, edges)


@dataclass
class NeighborhoodIndex:
    """Sparse rows of the similarity operator for a chosen set of nodes."""

    num_users: int
    num_layers: int
    rows: dict[int, tuple[np.ndarray, np.ndarray]]

    def row(self, x: int) -> tuple[np.ndarray, np.ndarray]:
        try:
            return self.rows[int(x)]
        except KeyError:
            raise LookupError(f"row for node {x} was not materialized") from None

    def user_part(self, x: int):
        ids, w = self.row(x)
        keep = ids < self.num_users
        return ids[keep], w[keep]

    def item_part(self, x: int):
        ids, w = self.row(x)
        keep = ids >= self.num_users
        return ids[keep], w[keep]

    def weight(self, x: int, v: int) -> float:
        ids, w = self.row(x)
        k = np.searchsorted(ids, v)
        return float(w[k]) if k < ids.size and ids[k] == v else 0.0

    def dense_row(self, x: int, num_nodes: int) -> np.ndarray:
        ids, w = self.row(x)
        out = np.zeros(num_nodes)
        out[ids] = w
        return out

    def size(self, x: int) -> int:
        return int(self.row(x)[0].size)


class SimilarityOperator:
    """Applies ``(1/(L+1)) * sum_{l=0..L} A_norm^l`` without materializing it."""

    def __init__(self, graph: InteractionGraph, num_layers: int = 3, dtype=np.float64):
        if num_layers < 0:
            raise ValueError("num_layers must be >= 0")
        self.graph = graph
        self.num_layers = int(num_layers)
        self.dtype = np.dtype(dtype)
        self._block = graph.normalized_block(self.dtype)
        self._block_t = self._block.T.tocsr()

    @property
    def num_nodes(self) -> int:
        return self.graph.num_nodes

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X)
        if X.shape[0] != self.num_nodes:
            raise ValueError(f"dimension mismatch: operator has {self.num_nodes} rows, input has {X.shape[0]}")
        return X

    def adjacency_step(self, X: np.ndarray) -> np.ndarray:
        nu = self.graph.num_users
        out = np.empty(X.shape, dtype=np.result_type(X.dtype, self.dtype))
        out[:nu] = self._block @ X[nu:]
        out[nu:] = self._block_t @ X[:nu]
        return out

    def apply(self, X) -> np.ndarray:
        X = self._check(X)
        cur = X.astype(np.result_type(X.dtype, self.dtype), copy=True)
        acc = cur.copy()
        for _ in range(self.num_layers):
            cur = self.adjacency_step(cur)
            acc += cur
        acc /= self.num_layers + 1
        return acc

    def apply_split(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(S @ mask_U X, S @ mask_I X)`` from a single propagation.

        On a bipartite graph an even power keeps user-sourced signal on user
        rows; an odd power moves it to item rows. Routing each block of every
        power to the matching accumulator therefore reproduces the two masked
        propagations bit for bit.
        """
        X = self._check(X)
        nu = self.graph.num_users
        cur = X.astype(np.result_type(X.dtype, self.dtype), copy=True)
        from_u = np.zeros_like(cur)
        from_i = np.zeros_like(cur)
        for step in range(self.num_layers + 1):
            if step:
                cur = self.adjacency_step(cur)
            if step % 2 == 0:
                from_u[:nu] += cur[:nu]
                from_i[nu:] += cur[nu:]
            else:
                from_u[nu:] += cur[nu:]
                from_i[:nu] += cur[:nu]
        from_u /= self.num_layers + 1
        from_i /= self.num_layers + 1
        return from_u, from_i

    def materialize_rows(self, nodes, batch: int = 256, max_entries: int | None = None) -> NeighborhoodIndex:
        """Exact sparse rows for ``nodes``, computed by propagating unit columns."""
        nodes = [int(x) for x in nodes]
        n = self.num_nodes
        for x in nodes:
            if not 0 <= x < n:
                raise DataError(f"node {x} out of range")
        rows: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        used = 0
        for start in range(0, len(nodes), batch):
            chunk = nodes[start:start + batch]
            unit = np.zeros((n, len(chunk)), dtype=np.float64)
            unit[chunk, np.arange(len(chunk))] = 1.0
            cols = self.apply(unit)
            for k, x in enumerate(chunk):
                ids = np.flatnonzero(cols[:, k])
                if max_entries is not None and used + ids.size > max_entries:
                    raise MemoryBudgetError(
                        f"node {x}: row has {ids.size} entries, budget of {max_entries} "
                        f"entries exceeded ({used} already used)")
                used += ids.size
                rows[x] = (ids.astype(np.int64), cols[ids, k].astype(np.float64))
        return NeighborhoodIndex(self.graph.num_users, self.num_layers, rows)


def neighborhood_sizes(graph: InteractionGraph, hops, block: int = 512) -> dict[int, np.ndarray]:
    """Number of nodes within ``L`` hops (self included) for every node and each L in ``hops``."""
    hops = sorted({int(h) for h in hops})
    if hops and hops[0] < 0:
        raise ValueError("hops must be >= 0")
    n, nu = graph.num_nodes, graph.num_users
    out = {h: np.ones(n, dtype=np.int64) for h in hops}
    if not hops or hops[-1] == 0 or n == 0:
        return out
    R = graph.interaction_matrix(np.float32)
    Rt = R.T.tocsr()
    for start in range(0, n, block):
        cols = np.arange(start, min(n, start + block))
        reach = np.zeros((n, cols.size), dtype=np.float32)
        reach[cols, np.arange(cols.size)] = 1.0
        for h in range(1, hops[-1] + 1):
            step = np.empty_like(reach)
            step[:nu] = R @ reach[nu:]
            step[nu:] = Rt @ reach[:nu]
            reach = ((reach + step) > 0).astype(np.float32)
            if h in out:
                out[h][cols] = np.count_nonzero(reach, axis=0)
    return out


def count_neighbor_pairs(op_or_graph, edges, hops) -> list[dict]:
    """Mean neighbor-pair count over ``edges`` and its share of all node pairs, per hop count.

    Neighborhood sets depend only on the graph structure, so the first
    argument may be a :class:`SimilarityOperator` or an :class:`InteractionGraph`.
    """
    graph = op_or_graph.graph if isinstance(op_or_graph, SimilarityOperator) else op_or_graph
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    sizes = neighborhood_sizes(graph, hops)
    n = graph.num_nodes
    table = []
    for h in sorted(sizes):
        s = sizes[h]
        if e.size:
            pairs = s[e[:, 0]].astype(np.float64) * s[graph.num_users + e[:, 1]].astype(np.float64)
            mean = float(pairs.mean())
        else:
            mean = 0.0
        table.append({"hop": h, "mean_pairs": mean, "coverage": mean / (n * n) if n else 0.0})
    return table


def write_pair_counts(rows: list[dict], path) -> None:
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["hop", "mean_pairs", "coverage"])
        for r in rows:
            w.writerow([r["hop"], repr(float(r["mean_pairs"])), repr(float(r["coverage"]))])
