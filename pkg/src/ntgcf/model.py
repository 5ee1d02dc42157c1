"""Embedding table, propagation, scoring and top-K ranking."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._rng import stream
from .errors import DataError, StaleStateError
from .graph import SimilarityOperator

CHECKPOINT_MAGIC = "NTGCF1"


class EmbeddingTable:
    """Learnable initial embeddings, users in rows ``0..U-1`` and items after."""

    def __init__(self, E0: np.ndarray, num_users: int | None = None):
        E0 = np.asarray(E0)
        if E0.ndim != 2:
            raise ValueError("embedding table must be two-dimensional")
        if not np.all(np.isfinite(E0)):
            raise ValueError("embedding table has non-finite entries")
        self.E0 = E0
        self.num_users = num_users
        self.version = 0

    @property
    def num_rows(self) -> int:
        return self.E0.shape[0]

    @property
    def dim(self) -> int:
        return self.E0.shape[1]

    def touch(self) -> None:
        """Mark the table as modified; outstanding propagated states become stale."""
        self.version += 1

    def copy(self) -> "EmbeddingTable":
        t = EmbeddingTable(self.E0.copy(), self.num_users)
        return t


def init_embeddings(num_rows: int, d: int, seed: int, dtype=np.float32,
                    num_users: int | None = None) -> EmbeddingTable:
    """Xavier-uniform table drawn from the seed's ``init`` stream."""
    if d < 1:
        raise ValueError("d must be >= 1")
    bound = np.sqrt(6.0 / (num_rows + d))
    vals = stream(seed, "init").uniform(-bound, bound, size=(num_rows, d))
    return EmbeddingTable(vals.astype(dtype), num_users)


@dataclass
class PropagatedState:
    E: np.ndarray
    E_fromU: np.ndarray
    E_fromI: np.ndarray
    norms: np.ndarray
    num_users: int
    table: EmbeddingTable
    version: int

    @property
    def stale(self) -> bool:
        return self.table.version != self.version

    @property
    def num_items(self) -> int:
        return self.E.shape[0] - self.num_users

    def check_fresh(self) -> None:
        if self.stale:
            raise StaleStateError("embedding table changed since the last forward pass")

    def user_rows(self, u):
        return self.E[np.asarray(u)]

    def item_rows(self, i):
        return self.E[self.num_users + np.asarray(i)]


def forward(op: SimilarityOperator, table: EmbeddingTable) -> PropagatedState:
    """Propagate ``E0`` and split the result by the type of the source node.

    ``E`` is defined as ``E_fromU + E_fromI`` so the decomposition identity
    holds exactly; it agrees with ``op.apply(E0)`` up to rounding.
    """
    if table.num_rows != op.num_nodes:
        raise ValueError(f"dimension mismatch: table has {table.num_rows} rows, graph has {op.num_nodes} nodes")
    from_u, from_i = op.apply_split(table.E0)
    E = from_u + from_i
    return PropagatedState(E, from_u, from_i, np.linalg.norm(E, axis=1),
                           op.graph.num_users, table, table.version)


def _cosine(a: np.ndarray, b: np.ndarray, na, nb):
    denom = na * nb
    dots = np.sum(a * b, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(denom > 0, dots / np.where(denom > 0, denom, 1.0), 0.0)
    return out


def score(state: PropagatedState, u, i, kind: str = "inner"):
    """Similarity between users ``u`` and items ``i`` (scalars or aligned arrays)."""
    state.check_fresh()
    u = np.asarray(u)
    i = np.asarray(i)
    eu, ei = state.user_rows(u), state.item_rows(i)
    if kind == "inner":
        out = np.sum(eu * ei, axis=-1)
    elif kind == "cosine":
        out = _cosine(eu, ei, state.norms[u], state.norms[state.num_users + i])
    else:
        raise ValueError(f"unknown similarity {kind!r}")
    return float(out) if np.ndim(out) == 0 else out


def score_decomposed(state: PropagatedState, u: int, i: int) -> tuple[float, float, float, float]:
    """Inner-product score split by source type on each side: (UU, II, UI, IU)."""
    state.check_fresh()
    nu = state.num_users
    uU, uI = state.E_fromU[u], state.E_fromI[u]
    iU, iI = state.E_fromU[nu + i], state.E_fromI[nu + i]
    return (float(uU @ iU), float(uI @ iI), float(uU @ iI), float(uI @ iU))


def user_item_scores(state: PropagatedState, users, kind: str = "inner") -> np.ndarray:
    """Dense score block for ``users`` against every item."""
    state.check_fresh()
    users = np.asarray(users)
    eu = state.E[users]
    ei = state.E[state.num_users:]
    s = eu @ ei.T
    if kind == "cosine":
        nu_ = state.norms[users][:, None]
        ni_ = state.norms[state.num_users:][None, :]
        denom = nu_ * ni_
        s = np.where(denom > 0, s / np.where(denom > 0, denom, 1.0), 0.0)
    elif kind != "inner":
        raise ValueError(f"unknown similarity {kind!r}")
    return s


def topk_from_scores(scores: np.ndarray, K: int, exclude=None) -> np.ndarray:
    """Indices of the K largest entries, ties by ascending index, skipping ``exclude``."""
    if K < 1:
        raise ValueError("K must be >= 1")
    s = np.asarray(scores, dtype=np.float64).copy()
    valid = np.ones(s.size, dtype=bool)
    if exclude is not None and len(exclude):
        valid[np.asarray(list(exclude) if isinstance(exclude, (set, frozenset)) else exclude, dtype=np.int64)] = False
    cand = np.flatnonzero(valid)
    if cand.size == 0:
        return cand
    cs = s[cand]
    k = min(K, cand.size)
    if k < cand.size:
        kth = np.partition(cs, cand.size - k)[cand.size - k]
        keep = cs >= kth
        cand, cs = cand[keep], cs[keep]
    order = np.lexsort((cand, -cs))
    return cand[order[:k]]


def rank_topk(state: PropagatedState, u: int, K: int, exclude=None, kind: str = "inner") -> list[int]:
    scores = user_item_scores(state, [u], kind)[0]
    return topk_from_scores(scores, K, exclude).tolist()


def save_checkpoint(table: EmbeddingTable, path, meta: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows, d = table.E0.shape
    with open(path, "wb") as fh:
        fh.write(f"{CHECKPOINT_MAGIC} {rows} {d}\n".encode("ascii"))
        fh.write(np.ascontiguousarray(table.E0, dtype="<f4").tobytes())
    sidecar = dict(meta or {})
    sidecar.update({"num_rows": rows, "d": d, "num_users": table.num_users})
    path.with_suffix(path.suffix + ".json").write_text(
        json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_checkpoint(path) -> tuple[EmbeddingTable, dict]:
    path = Path(path)
    raw = path.read_bytes()
    nl = raw.find(b"\n")
    header = raw[:nl].decode("ascii", errors="replace").split() if nl >= 0 else []
    if len(header) != 3 or header[0] != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: not a checkpoint file")
    rows, d = int(header[1]), int(header[2])
    body = raw[nl + 1:]
    if len(body) != rows * d * 4:
        raise DataError(f"{path}: expected {rows * d * 4} payload bytes, found {len(body)}")
    E0 = np.frombuffer(body, dtype="<f4").reshape(rows, d).astype(np.float32)
    side = path.with_suffix(path.suffix + ".json")
    meta = json.loads(side.read_text(encoding="utf-8")) if side.is_file() else {}
    return EmbeddingTable(E0, meta.get("num_users")), meta
