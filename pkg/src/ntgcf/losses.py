"""Contrastive objectives with exact gradients.

Four objectives are supported: ``bpr``, ``ssm`` (sampled softmax), and their
neighbor-type-aware, bidirectional counterparts ``nt-bpr`` and ``nt-ssm``.

Each objective is a sum of one or two *directions*. The item direction
anchors on user ``u`` and contrasts the positive item ``i`` against sampled
items ``j``; the user direction anchors on item ``i`` and contrasts the
positive user ``u`` against sampled users ``k``. In the type-aware variants
a negative node ``n`` is represented by

    t_n = alpha_from_users * E_fromU[n] + alpha_from_items * E_fromI[n]

instead of ``E[n]``, where the two coefficients depend on the side
(item-direction negatives use the ``alpha_I_*`` pair, user-direction
negatives use ``alpha_U_*``). Positives always use the plain embeddings.

Gradients are accumulated with respect to the propagated embeddings into a
:class:`GradientBuffer`; negative-side typed terms go to separate buffers so
:func:`backprop_to_initial` can route them through the masked propagations.
Cosine gradients include the norm derivatives.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .errors import DivergenceError
from .graph import InteractionGraph, SimilarityOperator
from .model import PropagatedState

LOSS_KINDS = ("bpr", "nt-bpr", "ssm", "nt-ssm")
SIMILARITIES = ("inner", "cosine")
DIRECTIONS = ("item", "user", "both")


@dataclass(frozen=True)
class LossConfig:
    kind: str = "nt-ssm"
    similarity: str | None = None
    tau: float = 0.2
    alpha_I_U: float = 1.0
    alpha_I_I: float = 1.0
    alpha_U_U: float = 1.0
    alpha_U_I: float = 1.0
    neg_items: int = 256
    neg_users: int = 256
    directions: str | None = None

    def __post_init__(self):
        kind = self.kind.lower().replace("_", "-")
        object.__setattr__(self, "kind", kind)
        if kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}; expected one of {LOSS_KINDS}")
        if self.similarity is None:
            object.__setattr__(self, "similarity", "cosine" if kind.endswith("ssm") else "inner")
        if self.similarity not in SIMILARITIES:
            raise ValueError(f"unknown similarity {self.similarity!r}")
        if self.directions is None:
            object.__setattr__(self, "directions", "both" if kind.startswith("nt-") else "item")
        if self.directions not in DIRECTIONS:
            raise ValueError(f"directions must be one of {DIRECTIONS}")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        for name in ("alpha_I_U", "alpha_I_I", "alpha_U_U", "alpha_U_I"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.neg_items < 1:
            raise ValueError("neg_items must be >= 1")
        if self.uses_user_direction and self.neg_users < 1:
            raise ValueError("neg_users must be >= 1 when the user direction is active")

    @property
    def pairwise(self) -> bool:
        return self.kind in ("bpr", "nt-bpr")

    @property
    def typed(self) -> bool:
        return self.kind.startswith("nt-")

    @property
    def uses_item_direction(self) -> bool:
        return self.directions in ("item", "both")

    @property
    def uses_user_direction(self) -> bool:
        return self.directions in ("user", "both")

    @property
    def item_negatives(self) -> int:
        return 1 if self.pairwise else self.neg_items

    @property
    def user_negatives(self) -> int:
        return 1 if self.pairwise else self.neg_users

    def with_alphas(self, alpha_U_U, alpha_U_I, alpha_I_U, alpha_I_I) -> "LossConfig":
        return replace(self, alpha_U_U=alpha_U_U, alpha_U_I=alpha_U_I,
                       alpha_I_U=alpha_I_U, alpha_I_I=alpha_I_I)


@dataclass
class TrainBatch:
    positives: np.ndarray                    # (B, 2) user, item
    neg_items: np.ndarray                    # (B, K_items)
    neg_users: np.ndarray = field(default_factory=lambda: np.empty((0, 0), dtype=np.int64))


@dataclass
class GradientBuffer:
    grad_E: np.ndarray
    grad_E_fromU: np.ndarray | None
    grad_E_fromI: np.ndarray | None
    loss_value: float


# ---------------------------------------------------------------- sampling

def _rejection_sample(count_per_row: int, anchors: np.ndarray, pool: int, is_positive, rng) -> np.ndarray:
    B = anchors.size
    out = rng.integers(0, pool, size=(B, count_per_row)) if B and count_per_row else \
        np.empty((B, count_per_row), dtype=np.int64)
    if out.size == 0:
        return out.astype(np.int64)
    rows, cols = np.nonzero(is_positive(np.repeat(anchors, count_per_row).reshape(B, count_per_row), out))
    draws = np.full(B, count_per_row, dtype=np.int64)
    limit = 1000 * count_per_row
    while rows.size:
        draws += np.bincount(rows, minlength=B)
        if draws.max() > limit:
            worst = int(anchors[np.argmax(draws)])
            raise RuntimeError(f"negative sampling for node {worst} exceeded {limit} draws")
        fresh = rng.integers(0, pool, size=rows.size)
        out[rows, cols] = fresh
        still = is_positive(anchors[rows], fresh)
        rows, cols = rows[still], cols[still]
    return out.astype(np.int64)


def sample_item_negatives(graph: InteractionGraph, users, count: int, rng) -> np.ndarray:
    """Uniform items with replacement, rejecting each user's training items."""
    users = np.asarray(users, dtype=np.int64).reshape(-1)
    if count and users.size and np.any(graph.user_degree[users] >= graph.num_items):
        u = int(users[np.argmax(graph.user_degree[users] >= graph.num_items)])
        raise RuntimeError(f"user {u} has interacted with every item; no negatives exist")
    return _rejection_sample(count, users, graph.num_items, graph.has_edge, rng)


def sample_user_negatives(graph: InteractionGraph, items, count: int, rng) -> np.ndarray:
    """Uniform users with replacement, rejecting users who interacted with the item."""
    items = np.asarray(items, dtype=np.int64).reshape(-1)
    if count and items.size and np.any(graph.item_degree[items] >= graph.num_users):
        i = int(items[np.argmax(graph.item_degree[items] >= graph.num_users)])
        raise RuntimeError(f"item {i} was consumed by every user; no negatives exist")
    return _rejection_sample(count, items, graph.num_users,
                             lambda it, us: graph.has_edge(us, it), rng)


def sample_negatives(graph: InteractionGraph, u: int, count: int, rng) -> list[int]:
    return sample_item_negatives(graph, [u], count, rng)[0].tolist()


def make_batch(graph: InteractionGraph, positives, cfg: LossConfig, rng) -> TrainBatch:
    pos = np.asarray(positives, dtype=np.int64).reshape(-1, 2)
    neg_items = sample_item_negatives(graph, pos[:, 0], cfg.item_negatives, rng) \
        if cfg.uses_item_direction else np.empty((len(pos), 0), dtype=np.int64)
    neg_users = sample_user_negatives(graph, pos[:, 1], cfg.user_negatives, rng) \
        if cfg.uses_user_direction else np.empty((len(pos), 0), dtype=np.int64)
    return TrainBatch(pos, neg_items, neg_users)


# ------------------------------------------------------------ objectives

def softmax_weights(scores: np.ndarray, tau: float) -> np.ndarray:
    """Row-wise softmax of ``scores / tau`` (positive in column 0)."""
    z = scores / tau
    z = z - z.max(axis=1, keepdims=True)
    p = np.exp(z)
    return p / p.sum(axis=1, keepdims=True)


def _softmax_terms(s_pos, s_neg, tau):
    logits = np.concatenate([s_pos[:, None], s_neg], axis=1) / tau
    top = logits.max(axis=1, keepdims=True)
    ex = np.exp(logits - top)
    Z = ex.sum(axis=1, keepdims=True)
    loss = (np.log(Z) + top)[:, 0] - logits[:, 0]
    pi = ex / Z
    return loss, (pi[:, 0] - 1.0) / tau, pi[:, 1:] / tau


def _pairwise_terms(s_pos, s_neg):
    x = s_pos - s_neg[:, 0]
    loss = np.logaddexp(0.0, -x)
    sig = np.exp(-np.logaddexp(0.0, x))      # sigma(-x)
    return loss, -sig, sig[:, None]


def _safe_inv(x):
    out = np.zeros_like(x)
    np.divide(1.0, x, out=out, where=x > 0)
    return out


def _scatter_rows(num_rows: int, idx: np.ndarray, coef: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """Sum ``coef[b, k] * vectors[b]`` into row ``idx[b, k]``."""
    B, K = idx.shape
    cols = np.repeat(np.arange(B), K)
    P = sp.csr_matrix((coef.ravel(), (idx.ravel(), cols)), shape=(num_rows, B))
    return P @ vectors


def _direction(state, anchors, positives, negatives, pool, cfg, negative_repr, weight, G, H):
    """Accumulate one direction of the objective; returns the per-pair losses.

    ``pool`` is the ``(start, stop)`` node range the negatives are drawn from.
    Each chunk of anchors is scored against the whole pool with one matrix
    product and the sampled entries are picked out; gradients flow back
    through a dense (chunk, pool) coefficient matrix, so repeated negatives
    simply add up.
    """
    E, norms = state.E, state.norms
    cosine = cfg.similarity == "cosine"
    n_rows = E.shape[0]
    base, stop = pool
    T = negative_repr[base:stop]
    size = stop - base
    chunk = int(max(16, min(1024, (1 << 23) // max(1, size))))
    losses = np.empty(anchors.size)
    target = H if H is not None else G
    for lo in range(0, anchors.size, chunk):
        hi = min(anchors.size, lo + chunk)
        b = hi - lo
        a_idx, p_idx, n_idx = anchors[lo:hi], positives[lo:hi], negatives[lo:hi]
        n_loc = n_idx - base
        flat = (np.arange(b)[:, None] * size + n_loc).ravel()
        a, p = E[a_idx], E[p_idx]
        dot_pos = np.einsum("bd,bd->b", a, p)
        dot_neg = (a @ T.T).ravel()[flat].reshape(n_idx.shape)
        if cosine:
            inv_a = _safe_inv(norms[a_idx])
            inv_p = _safe_inv(norms[p_idx])
            inv_n = _safe_inv(norms[n_idx])
            s_pos = dot_pos * inv_a * inv_p
            s_neg = dot_neg * inv_a[:, None] * inv_n
        else:
            s_pos, s_neg = dot_pos, dot_neg
        if cfg.pairwise:
            loss, g_pos, g_neg = _pairwise_terms(s_pos, s_neg)
        else:
            loss, g_pos, g_neg = _softmax_terms(s_pos, s_neg, cfg.tau)
        if not np.all(np.isfinite(loss)):
            bad = lo + int(np.flatnonzero(~np.isfinite(loss))[0])
            raise DivergenceError(
                f"non-finite loss at pair (anchor node {int(anchors[bad])}, positive node {int(positives[bad])})")
        losses[lo:hi] = loss
        g_pos = g_pos * weight
        g_neg = g_neg * weight

        if cosine:
            # ds/d(anchor) = x/(|a||y|) - s a/|a|^2,  ds/dx = a/(|a||y|),  ds/dy = -s y/|y|^2
            c_pos = g_pos * inv_a * inv_p
            c_neg = g_neg * inv_a[:, None] * inv_n
            anchor_self = (g_pos * s_pos + (g_neg * s_neg).sum(axis=1)) * inv_a ** 2
            gp = c_pos[:, None] * a - (g_pos * s_pos * inv_p ** 2)[:, None] * p
            self_coef = np.bincount(n_idx.ravel(), weights=(-g_neg * s_neg * inv_n ** 2).ravel(),
                                    minlength=n_rows)
            G += self_coef[:, None] * E
        else:
            c_pos, c_neg, anchor_self = g_pos, g_neg, None
            gp = g_pos[:, None] * a
        C = np.bincount(flat, weights=c_neg.ravel(), minlength=b * size).reshape(b, size).astype(E.dtype)
        ga = c_pos[:, None] * p + C @ T
        if anchor_self is not None:
            ga -= anchor_self[:, None] * a
        G += _scatter_rows(n_rows, a_idx[:, None], np.ones((b, 1)), ga)
        G += _scatter_rows(n_rows, p_idx[:, None], np.ones((b, 1)), gp)
        target[base:stop] += C.T @ a
    return losses


def loss_grad(state: PropagatedState, batch: TrainBatch, cfg: LossConfig) -> GradientBuffer:
    """Mean loss over the batch's positives and its gradient w.r.t. propagated embeddings."""
    state.check_fresh()
    nu = state.num_users
    pos = np.asarray(batch.positives, dtype=np.int64).reshape(-1, 2)
    B = len(pos)
    G = np.zeros_like(state.E, dtype=np.float64 if state.E.dtype == np.float64 else state.E.dtype)
    if B == 0:
        return GradientBuffer(G, None, None, 0.0)
    weight = 1.0 / B
    users, items = pos[:, 0], nu + pos[:, 1]

    if cfg.typed:
        scale_u = np.empty(state.E.shape[0])
        scale_i = np.empty(state.E.shape[0])
        scale_u[:nu], scale_i[:nu] = cfg.alpha_U_U, cfg.alpha_U_I
        scale_u[nu:], scale_i[nu:] = cfg.alpha_I_U, cfg.alpha_I_I
        negative_repr = (scale_u[:, None] * state.E_fromU + scale_i[:, None] * state.E_fromI
                         ).astype(state.E.dtype, copy=False)
        H = np.zeros_like(G)
    else:
        negative_repr, H, scale_u, scale_i = state.E, None, None, None

    total = np.zeros(B)
    if cfg.uses_item_direction:
        negs = np.asarray(batch.neg_items, dtype=np.int64)[:, :cfg.item_negatives]
        if negs.shape[1] < cfg.item_negatives:
            raise ValueError("batch carries fewer negative items than the objective needs")
        total += _direction(state, users, items, nu + negs, (nu, state.E.shape[0]), cfg,
                            negative_repr, weight, G, H)
    if cfg.uses_user_direction:
        negs = np.asarray(batch.neg_users, dtype=np.int64)[:, :cfg.user_negatives]
        if negs.shape[1] < cfg.user_negatives:
            raise ValueError("batch carries fewer negative users than the objective needs")
        total += _direction(state, items, users, negs, (0, nu), cfg, negative_repr, weight, G, H)

    loss = float(total.mean())
    if H is None:
        return GradientBuffer(G, None, None, loss)
    return GradientBuffer(G, scale_u[:, None] * H, scale_i[:, None] * H, loss)


def _expect(cfg: LossConfig, *kinds):
    if cfg.kind not in kinds:
        raise ValueError(f"loss configured as {cfg.kind!r}, expected {kinds[0]!r}")


def bpr_loss_grad(state, batch, cfg: LossConfig) -> GradientBuffer:
    _expect(cfg, "bpr")
    return loss_grad(state, batch, cfg)


def ssm_loss_grad(state, batch, cfg: LossConfig) -> GradientBuffer:
    _expect(cfg, "ssm")
    return loss_grad(state, batch, cfg)


def nt_ssm_loss_grad(state, batch, cfg: LossConfig) -> GradientBuffer:
    _expect(cfg, "nt-ssm")
    return loss_grad(state, batch, cfg)


def nt_bpr_loss_grad(state, batch, cfg: LossConfig) -> GradientBuffer:
    _expect(cfg, "nt-bpr")
    return loss_grad(state, batch, cfg)


def backprop_to_initial(op: SimilarityOperator, buf: GradientBuffer) -> np.ndarray:
    """Gradient w.r.t. the initial embeddings.

    With typed buffers, user rows come from ``S (G + G_U)`` and item rows from
    ``S (G + G_I)``; both are obtained from one propagation of the two
    stacked column blocks.
    """
    G = buf.grad_E
    if G.shape[0] != op.num_nodes:
        raise ValueError(f"dimension mismatch: gradient has {G.shape[0]} rows, graph has {op.num_nodes} nodes")
    if buf.grad_E_fromU is None and buf.grad_E_fromI is None:
        return op.apply(G)
    nu, d = op.graph.num_users, G.shape[1]
    gu = G + (buf.grad_E_fromU if buf.grad_E_fromU is not None else 0.0)
    gi = G + (buf.grad_E_fromI if buf.grad_E_fromI is not None else 0.0)
    both = op.apply(np.hstack([gu, gi]))
    out = np.empty_like(G, dtype=both.dtype)
    out[:nu] = both[:nu, :d]
    out[nu:] = both[nu:, d:]
    return out
