"""Adam training loop with early stopping, checkpoints, and the alpha sweep."""

from __future__ import annotations

import csv
import dataclasses
import itertools
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ._rng import stream
from .errors import DivergenceError
from .evaluation import evaluate_all
from .graph import SimilarityOperator, build_graph
from .losses import LossConfig, backprop_to_initial, loss_grad, make_batch
from .model import EmbeddingTable, forward, init_embeddings, save_checkpoint

log = logging.getLogger(__name__)

ALPHA_ORDER = ("alpha_U_U", "alpha_U_I", "alpha_I_U", "alpha_I_I")
HISTORY_COLUMNS = ("epoch", "loss", "recall20", "ndcg20")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    l2: float = 1e-4
    epochs: int = 500
    batch_size: int = 2048
    patience: int = 10
    eval_every: int = 1
    seed: int = 0
    d: int = 64
    num_layers: int = 3
    dtype: str = "float32"
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.l2 < 0:
            raise ValueError("l2 must be >= 0")
        if self.epochs < 0 or self.batch_size < 1 or self.eval_every < 1:
            raise ValueError("epochs >= 0, batch_size >= 1 and eval_every >= 1 are required")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.d < 1 or self.num_layers < 0:
            raise ValueError("d >= 1 and num_layers >= 0 are required")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    def to_flat(self) -> dict:
        flat = {k: v for k, v in dataclasses.asdict(self).items() if k != "loss"}
        flat.update(dataclasses.asdict(self.loss))
        return flat

    @classmethod
    def from_flat(cls, flat: dict) -> "TrainConfig":
        train_keys = {f.name for f in dataclasses.fields(cls)} - {"loss"}
        loss_keys = {f.name for f in dataclasses.fields(LossConfig)}
        unknown = set(flat) - train_keys - loss_keys
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        loss = LossConfig(**{k: v for k, v in flat.items() if k in loss_keys})
        return cls(loss=loss, **{k: v for k, v in flat.items() if k in train_keys})


def config_keys() -> list[str]:
    return sorted(TrainConfig().to_flat())


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, E0: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(E0), np.zeros_like(E0), 0)


def adam_step(table: EmbeddingTable, grad_E0: np.ndarray, state: AdamState, cfg: TrainConfig) -> None:
    """In-place bias-corrected Adam update on ``grad_E0 + 2 * l2 * E0``."""
    if grad_E0.shape != table.E0.shape:
        raise ValueError("gradient shape does not match the embedding table")
    g = grad_E0.astype(table.E0.dtype, copy=False) + (2.0 * cfg.l2) * table.E0
    if not np.all(np.isfinite(g)):
        raise DivergenceError(f"non-finite gradient at step {state.t + 1}")
    state.t += 1
    state.m *= cfg.beta1
    state.m += (1.0 - cfg.beta1) * g
    state.v *= cfg.beta2
    state.v += (1.0 - cfg.beta2) * g * g
    m_hat = state.m / (1.0 - cfg.beta1 ** state.t)
    v_hat = state.v / (1.0 - cfg.beta2 ** state.t)
    table.E0 -= (cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)).astype(table.E0.dtype, copy=False)
    table.touch()


@dataclass
class TrainHistory:
    records: list[dict] = field(default_factory=list)
    best_epoch: int | None = None
    best_ndcg: float = float("-inf")
    checkpoint_path: str | None = None
    stopped_early: bool = False
    seconds: list[float] = field(default_factory=list)

    def write_csv(self, path) -> None:
        with open(Path(path), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(HISTORY_COLUMNS)
            for r in self.records:
                w.writerow([r["epoch"], repr(r["loss"]),
                            "" if r["recall20"] is None else repr(r["recall20"]),
                            "" if r["ndcg20"] is None else repr(r["ndcg20"])])

    def write_timing(self, path) -> None:
        Path(path).write_text(json.dumps({"epoch_seconds": self.seconds,
                                          "total_seconds": float(sum(self.seconds))}, indent=2) + "\n",
                              encoding="utf-8")


def _flush(history: TrainHistory, out: Path | None, cfg: TrainConfig) -> None:
    if out is None:
        return
    out.mkdir(parents=True, exist_ok=True)
    history.write_csv(out / "history.csv")
    history.write_timing(out / "timing.json")
    (out / "config.json").write_text(json.dumps(cfg.to_flat(), indent=2, sort_keys=True) + "\n",
                                     encoding="utf-8")


def train(bundle, cfg: TrainConfig, out_dir=None,
          progress: Callable[[dict], None] | None = None) -> tuple[EmbeddingTable, TrainHistory]:
    """Train and return the best embedding table by validation NDCG@20."""
    out = Path(out_dir) if out_dir is not None else None
    dtype = np.dtype(cfg.dtype)
    graph = build_graph(bundle, "train")
    op = SimilarityOperator(graph, cfg.num_layers, dtype)
    table = init_embeddings(graph.num_nodes, cfg.d, cfg.seed, dtype, graph.num_users)
    adam = AdamState.zeros_like(table.E0)
    history = TrainHistory()
    best_E0 = table.E0.copy()
    edges = bundle.train
    since_best = 0
    kind = cfg.loss.similarity

    try:
        for epoch in range(1, cfg.epochs + 1):
            started = time.perf_counter()
            order = stream(cfg.seed, "sampling", epoch).permutation(len(edges))
            loss_sum = 0.0
            for b, lo in enumerate(range(0, len(edges), cfg.batch_size)):
                pos = edges[order[lo:lo + cfg.batch_size]]
                state = forward(op, table)
                batch = make_batch(graph, pos, cfg.loss, stream(cfg.seed, "sampling", epoch, b))
                buf = loss_grad(state, batch, cfg.loss)
                adam_step(table, backprop_to_initial(op, buf), adam, cfg)
                loss_sum += buf.loss_value * len(pos)
            record = {"epoch": epoch, "loss": loss_sum / max(1, len(edges)),
                      "recall20": None, "ndcg20": None}
            if epoch % cfg.eval_every == 0 or epoch == cfg.epochs:
                m = evaluate_all(forward(op, table), bundle, "valid", (20,), kind)
                record["recall20"], record["ndcg20"] = m.recall[20], m.ndcg[20]
                if m.ndcg[20] > history.best_ndcg:
                    history.best_ndcg, history.best_epoch = m.ndcg[20], epoch
                    best_E0 = table.E0.copy()
                    since_best = 0
                else:
                    since_best += 1
            history.records.append(record)
            history.seconds.append(time.perf_counter() - started)
            if progress is not None:
                progress(record)
            if not np.isfinite(record["loss"]):
                raise DivergenceError(f"non-finite epoch loss at epoch {epoch}")
            if since_best >= cfg.patience:
                history.stopped_early = True
                break
    except DivergenceError:
        _flush(history, out, cfg)
        raise

    table.E0 = best_E0
    table.touch()
    if out is not None:
        ckpt = save_checkpoint(table, out / "model.bin",
                               {"seed": cfg.seed, "best_epoch": history.best_epoch,
                                "config": cfg.to_flat()})
        history.checkpoint_path = str(ckpt)
    _flush(history, out, cfg)
    return table, history


def _grid_order(values) -> list[tuple]:
    pts = list(itertools.product(values, repeat=4))
    pts.sort(key=lambda a: (round(sum(abs(x - 1.0) for x in a), 9), a))
    return pts


def sweep_candidates(budget: int, seed: int, grid=(0.8, 1.0, 1.2),
                     low: float = 0.5, high: float = 1.5, step: float = 0.1) -> list[tuple]:
    """Alpha tuples in (U_U, U_I, I_U, I_I) order.

    The coarse grid comes first, ordered by distance from all-ones and then
    lexicographically; the remainder of the budget is filled with distinct
    seeded draws from the ``step`` lattice on ``[low, high]``.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    chosen = _grid_order(grid)[:budget]
    seen = set(chosen)
    lattice = np.round(np.arange(low, high + step / 2, step), 10)
    rng = stream(seed, "sweep")
    attempts = 0
    while len(chosen) < budget and attempts < 1000 * budget:
        attempts += 1
        cand = tuple(float(x) for x in rng.choice(lattice, size=4))
        if cand not in seen:
            seen.add(cand)
            chosen.append(cand)
    return chosen


def sweep_alpha(bundle, base: TrainConfig, budget: int = 100, seed: int | None = None,
                out_dir=None, progress: Callable[[dict], None] | None = None, **lattice) -> list[dict]:
    """Train one model per alpha tuple; results sorted by validation NDCG@20."""
    seed = base.seed if seed is None else seed
    results = []
    for alphas in sweep_candidates(budget, seed, **lattice):
        cfg = dataclasses.replace(base, loss=dataclasses.replace(base.loss, **dict(zip(ALPHA_ORDER, alphas))))
        _, hist = train(bundle, cfg)
        row = {"alphas": alphas, "ndcg20": hist.best_ndcg, "best_epoch": hist.best_epoch,
               "recall20": next((r["recall20"] for r in hist.records if r["epoch"] == hist.best_epoch), None)}
        results.append(row)
        if progress is not None:
            progress(row)
    results.sort(key=lambda r: (-r["ndcg20"], r["alphas"]))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(list(ALPHA_ORDER) + ["ndcg20", "recall20", "best_epoch"])
            for r in results:
                w.writerow([repr(a) for a in r["alphas"]] +
                           [repr(r["ndcg20"]), repr(r["recall20"]), r["best_epoch"]])
    return results
