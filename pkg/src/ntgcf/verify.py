"""Oracles for the analytic gradients.

Two independent routes are provided:

* :func:`finite_diff_check` compares the end-to-end gradient with respect to
  the initial embeddings against central differences of the loss.
* The pair-weight view treats every product ``e_v . e_v'`` of initial
  embeddings as a free weight ``W[v, v']`` so that a score becomes
  ``s(x, y) = r_x^T W r_y`` with ``r`` the similarity rows. Closed-form
  derivatives of the losses with respect to one such weight are checked
  against central differences of :func:`w_parametrized_loss`.

All node arguments in this module are global node ids (items offset by the
number of users). Everything runs in float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._rng import stream
from .graph import InteractionGraph, NeighborhoodIndex, SimilarityOperator, graph_from_edges
from .losses import LossConfig, TrainBatch, backprop_to_initial, loss_grad, make_batch
from .model import EmbeddingTable, forward


# --------------------------------------------------------- random instances

@dataclass
class Instance:
    graph: InteractionGraph
    op: SimilarityOperator
    E0: np.ndarray
    batch: TrainBatch


def random_graph(rng: np.random.Generator, max_nodes: int = 50, min_nodes: int = 6) -> InteractionGraph:
    """Random bipartite graph where every user has an item, and no user owns
    every item nor any item every user (so negatives always exist)."""
    while True:
        total = int(rng.integers(min_nodes, max_nodes + 1))
        nu = int(rng.integers(2, total - 1))
        ni = total - nu
        mask = rng.random((nu, ni)) < rng.uniform(0.15, 0.5)
        if mask.any(axis=1).all() and not mask.all(axis=1).any() and not mask.all(axis=0).any():
            users, items = np.nonzero(mask)
            return graph_from_edges(nu, ni, np.column_stack([users, items]))


def random_instance(seed: int, cfg: LossConfig, max_nodes: int = 50, dim: int = 4,
                    num_layers: int | None = None, batch_size: int = 6, scale: float = 0.5) -> Instance:
    rng = stream(seed, "verify")
    graph = random_graph(rng, max_nodes)
    L = int(rng.integers(1, 4)) if num_layers is None else num_layers
    op = SimilarityOperator(graph, L)
    E0 = rng.normal(0.0, scale, size=(graph.num_nodes, dim))
    edges = graph.edges()
    pick = rng.choice(len(edges), size=min(batch_size, len(edges)), replace=False)
    batch = make_batch(graph, edges[np.sort(pick)], cfg, rng)
    return Instance(graph, op, E0, batch)


def g0_graph() -> InteractionGraph:
    """One user linked to two items."""
    return graph_from_edges(1, 2, [(0, 0), (0, 1)])


# ------------------------------------------------------- end-to-end check

def loss_and_grad_E0(op: SimilarityOperator, E0: np.ndarray, batch: TrainBatch, cfg: LossConfig):
    table = EmbeddingTable(np.asarray(E0, dtype=np.float64), op.graph.num_users)
    state = forward(op, table)
    buf = loss_grad(state, batch, cfg)
    return buf.loss_value, backprop_to_initial(op, buf)


def loss_at(op, E0, batch, cfg) -> float:
    table = EmbeddingTable(np.asarray(E0, dtype=np.float64), op.graph.num_users)
    return loss_grad(forward(op, table), batch, cfg).loss_value


def relative_errors(analytic: np.ndarray, numeric: np.ndarray, scale: float) -> np.ndarray:
    """``|a - n| / max(|a|, |n|, 1e-3 * scale)``.

    The floor keeps coordinates whose true gradient is (near) zero from
    reporting pure rounding noise as a large relative error.
    """
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-3 * scale)
    denom = np.where(denom > 0, denom, 1.0)
    return np.abs(analytic - numeric) / denom


def finite_diff_check(kind: str, similarity: str = "inner", seed: int = 0, coords: int = 20,
                      h: float = 1e-4, tol: float = 1e-5, max_nodes: int = 50,
                      cfg: LossConfig | None = None, instance: Instance | None = None) -> dict:
    """Central differences on ``coords`` random initial-embedding entries."""
    if not (np.isfinite(h) and h > 0):
        raise ValueError("invalid step")
    if cfg is None:
        alphas = dict(alpha_I_U=1.2, alpha_I_I=0.8, alpha_U_U=0.9, alpha_U_I=1.1) \
            if kind.startswith("nt") else {}
        cfg = LossConfig(kind=kind, similarity=similarity, tau=0.5, neg_items=4, neg_users=4, **alphas)
    inst = instance or random_instance(seed, cfg, max_nodes=max_nodes)
    op, E0, batch = inst.op, inst.E0, inst.batch
    loss, grad = loss_and_grad_E0(op, E0, batch, cfg)

    rng = stream(seed, "verify-coords")
    flat = rng.choice(E0.size, size=min(coords, E0.size), replace=False)
    numeric = np.empty(flat.size)
    for n, k in enumerate(flat):
        r, c = divmod(int(k), E0.shape[1])
        plus, minus = E0.copy(), E0.copy()
        plus[r, c] += h
        minus[r, c] -= h
        numeric[n] = (loss_at(op, plus, batch, cfg) - loss_at(op, minus, batch, cfg)) / (2 * h)
    analytic = grad.ravel()[flat]
    scale = float(np.abs(grad).max())
    rel = relative_errors(analytic, numeric, scale)
    max_rel = float(rel.max()) if rel.size else 0.0
    return {
        "kind": cfg.kind,
        "similarity": cfg.similarity,
        "directions": cfg.directions,
        "seed": seed,
        "num_nodes": op.num_nodes,
        "num_layers": op.num_layers,
        "coords": int(flat.size),
        "h": h,
        "tol": tol,
        "loss": loss,
        "max_rel_err": max_rel,
        "max_abs_err": float(np.abs(analytic - numeric).max()) if rel.size else 0.0,
        "passed": bool(max_rel < tol),
    }


# -------------------------------------------------------- pair weights

@dataclass
class PairWeightView:
    """Free pair weights ``W[v, v']`` over an explicit node list."""

    nodes: np.ndarray
    W: np.ndarray

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=np.int64)
        self.W = np.asarray(self.W, dtype=np.float64)
        if self.W.shape != (self.nodes.size, self.nodes.size):
            raise ValueError("W must be square over the node list")
        self._pos = {int(v): k for k, v in enumerate(self.nodes)}

    @classmethod
    def from_embeddings(cls, E0: np.ndarray, nodes=None) -> "PairWeightView":
        nodes = np.arange(E0.shape[0]) if nodes is None else np.asarray(nodes)
        sub = E0[nodes]
        return cls(nodes, sub @ sub.T)

    def index(self, v: int) -> int:
        return self._pos[int(v)]

    def perturbed(self, v: int, vp: int, delta: float) -> "PairWeightView":
        W = self.W.copy()
        W[self.index(v), self.index(vp)] += delta
        return PairWeightView(self.nodes, W)


def _dense(rows: NeighborhoodIndex, x: int, view: PairWeightView) -> np.ndarray:
    ids, w = rows.row(x)
    out = np.zeros(view.nodes.size)
    for v, val in zip(ids.tolist(), w.tolist()):
        k = view._pos.get(v)
        if k is None:
            raise LookupError(f"node {v} in the row of {x} is not part of the weight view")
        out[k] = val
    return out


def _type_scale(view: PairWeightView, num_users: int, from_users: float, from_items: float) -> np.ndarray:
    return np.where(view.nodes < num_users, from_users, from_items)


@dataclass(frozen=True)
class PairLossSpec:
    """One positive pair with fixed negatives, as global node ids."""

    u: int
    i: int
    neg_items: tuple
    neg_users: tuple = ()
    cfg: LossConfig = LossConfig(kind="ssm", similarity="inner", tau=1.0)


def _direction_scores(rows, view, spec: PairLossSpec):
    cfg, W = spec.cfg, view.W
    ru, ri = _dense(rows, spec.u, view), _dense(rows, spec.i, view)
    s_pos = ru @ W @ ri
    s_items, s_users = None, None
    if cfg.uses_item_direction:
        scale = _type_scale(view, rows.num_users, cfg.alpha_I_U, cfg.alpha_I_I) if cfg.typed else 1.0
        s_items = np.array([ru @ W @ (scale * _dense(rows, j, view)) for j in spec.neg_items])
    if cfg.uses_user_direction:
        scale = _type_scale(view, rows.num_users, cfg.alpha_U_U, cfg.alpha_U_I) if cfg.typed else 1.0
        s_users = np.array([(scale * _dense(rows, k, view)) @ W @ ri for k in spec.neg_users])
    return s_pos, s_items, s_users


def _softmax_loss(s_pos, s_neg, tau):
    z = np.concatenate([[s_pos], s_neg]) / tau
    top = z.max()
    return float(top + np.log(np.exp(z - top).sum()) - z[0])


def w_parametrized_loss(rows: NeighborhoodIndex, view: PairWeightView, spec: PairLossSpec) -> float:
    """Softmax or pairwise loss of one positive, with scores taken from ``W``."""
    s_pos, s_items, s_users = _direction_scores(rows, view, spec)
    cfg = spec.cfg
    total = 0.0
    for s_neg in (s_items, s_users):
        if s_neg is None:
            continue
        if cfg.pairwise:
            total += float(np.logaddexp(0.0, -(s_pos - s_neg[0])))
        else:
            total += _softmax_loss(s_pos, s_neg, cfg.tau)
    return total


def induced_distributions(rows: NeighborhoodIndex, view: PairWeightView, spec: PairLossSpec) -> dict:
    """Softmax distributions implied by ``W``.

    ``pi_u`` covers ``[i, *neg_items]``; ``pi_hat_u`` is its restriction to
    the negatives, renormalized, and ``Pi_u`` is the negatives' total mass.
    The ``*_i`` entries are the analogues for the user direction.
    """
    s_pos, s_items, s_users = _direction_scores(rows, view, spec)
    tau = spec.cfg.tau
    out = {}
    for tag, s_neg in (("u", s_items), ("i", s_users)):
        if s_neg is None:
            continue
        z = np.concatenate([[s_pos], s_neg]) / tau
        p = np.exp(z - z.max())
        p /= p.sum()
        out[f"pi_{tag}"] = p
        out[f"Pi_{tag}"] = float(p[1:].sum())
        out[f"pi_hat_{tag}"] = p[1:] / p[1:].sum()
    return out


def pair_weight_grad_ssm(rows: NeighborhoodIndex, u: int, i: int, negs, pi, v: int, vp: int,
                         tau: float) -> float:
    """Closed-form derivative of the sampled-softmax loss w.r.t. ``W[v, vp]``.

    ``pi`` is the candidate distribution over ``[i, *negs]``.
    """
    pi = np.asarray(pi, dtype=np.float64)
    cands = [i, *negs]
    if pi.size != len(cands):
        raise ValueError("pi must cover the positive and every negative")
    s_uv = rows.weight(u, v)
    if s_uv == 0.0:
        return 0.0
    expected = sum(p * rows.weight(x, vp) for p, x in zip(pi.tolist(), cands))
    return s_uv / tau * (expected - rows.weight(i, vp))


def pair_weight_grad_ntssm(rows: NeighborhoodIndex, u: int, i: int, neg_items, neg_users,
                           pi_hat_u, pi_hat_i, Pi_u: float, Pi_i: float, v: int, vp: int,
                           cfg: LossConfig) -> float:
    """Closed-form derivative of the bidirectional type-aware loss w.r.t. ``W[v, vp]``.

    Item-direction negatives are weighted by the coefficient of ``vp``'s type,
    user-direction negatives by the coefficient of ``v``'s type.
    """
    nu, tau = rows.num_users, cfg.tau
    s_uv, s_ivp = rows.weight(u, v), rows.weight(i, vp)
    total = 0.0
    if cfg.uses_item_direction and s_uv != 0.0:
        alpha = cfg.alpha_I_U if vp < nu else cfg.alpha_I_I
        exp_j = sum(p * rows.weight(j, vp) for p, j in zip(np.asarray(pi_hat_u).tolist(), neg_items))
        total += Pi_u * s_uv / tau * (alpha * exp_j - s_ivp)
    if cfg.uses_user_direction and s_ivp != 0.0:
        alpha = cfg.alpha_U_U if v < nu else cfg.alpha_U_I
        exp_k = sum(p * rows.weight(k, v) for p, k in zip(np.asarray(pi_hat_i).tolist(), neg_users))
        total += Pi_i * s_ivp / tau * (alpha * exp_k - s_uv)
    return total


def w_finite_difference(rows, view, spec, v, vp, h: float = 1e-3) -> float:
    if not (np.isfinite(h) and h > 0):
        raise ValueError("invalid step")
    return (w_parametrized_loss(rows, view.perturbed(v, vp, h), spec)
            - w_parametrized_loss(rows, view.perturbed(v, vp, -h), spec)) / (2 * h)


def pair_weight_check(seed: int, kind: str = "ssm", max_nodes: int = 30, pairs: int = 20,
                      h: float = 1e-3) -> dict:
    """Closed form vs central differences of the W-loss on a random instance."""
    rng = stream(seed, "pair-weights")
    graph = random_graph(rng, max_nodes)
    op = SimilarityOperator(graph, int(rng.integers(1, 4)))
    nu = graph.num_users
    rows = op.materialize_rows(range(graph.num_nodes))
    E0 = rng.normal(0.0, 0.5, size=(graph.num_nodes, 3))
    view = PairWeightView.from_embeddings(E0)
    edges = graph.edges()
    u, i_local = edges[rng.integers(len(edges))]
    u, i = int(u), int(nu + i_local)
    neg_items = tuple(int(nu + j) for j in make_batch(
        graph, [(u, i_local)], LossConfig(kind="ssm", neg_items=4), rng).neg_items[0])
    if kind == "ssm":
        cfg = LossConfig(kind="ssm", similarity="inner", tau=0.7)
        spec = PairLossSpec(u, i, neg_items, (), cfg)
    else:
        cfg = LossConfig(kind="nt-ssm", similarity="inner", tau=0.7, alpha_I_U=1.2,
                         alpha_I_I=0.8, alpha_U_U=0.9, alpha_U_I=1.1, neg_users=4)
        neg_users = tuple(int(k) for k in make_batch(graph, [(u, i_local)], cfg, rng).neg_users[0])
        spec = PairLossSpec(u, i, neg_items, neg_users, cfg)
    dist = induced_distributions(rows, view, spec)

    ru_ids, ri_ids = rows.row(u)[0], rows.row(i)[0]
    cand_v = np.union1d(ru_ids, rows.row(neg_items[0])[0])
    all_nodes = np.arange(graph.num_nodes)
    errs = []
    for _ in range(pairs):
        v = int(rng.choice(cand_v if rng.random() < 0.8 else all_nodes))
        vp = int(rng.choice(ri_ids if rng.random() < 0.6 else all_nodes))
        if kind == "ssm":
            closed = pair_weight_grad_ssm(rows, u, i, neg_items, dist["pi_u"], v, vp, cfg.tau)
        else:
            closed = pair_weight_grad_ntssm(rows, u, i, neg_items, spec.neg_users,
                                            dist["pi_hat_u"], dist["pi_hat_i"], dist["Pi_u"],
                                            dist["Pi_i"], v, vp, cfg)
        numeric = w_finite_difference(rows, view, spec, v, vp, h)
        errs.append((closed, numeric))
    arr = np.array(errs)
    scale = float(np.abs(arr).max())
    rel = relative_errors(arr[:, 0], arr[:, 1], scale)
    return {"kind": kind, "seed": seed, "num_nodes": graph.num_nodes, "pairs": pairs,
            "max_rel_err": float(rel.max()), "nonzero_pairs": int(np.count_nonzero(arr[:, 0]))}
