"""LightGCN-style propagation with type-aware contrastive objectives, gradient
oracles, and training-free neighbor-pair studies."""

from .data import DatasetBundle, RawInteractions, load_bundle, load_interactions, save_bundle, split_dataset
from .errors import DataError, DivergenceError, MemoryBudgetError, StaleStateError
from .graph import InteractionGraph, NeighborhoodIndex, SimilarityOperator, build_graph, count_neighbor_pairs
from .losses import GradientBuffer, LossConfig, TrainBatch, backprop_to_initial, loss_grad
from .model import EmbeddingTable, PropagatedState, forward, init_embeddings, rank_topk, score, score_decomposed
from .training import TrainConfig, sweep_alpha, train

__version__ = "0.1.0"

__all__ = [
    "DataError", "DatasetBundle", "DivergenceError", "EmbeddingTable", "GradientBuffer",
    "InteractionGraph", "LossConfig", "MemoryBudgetError", "NeighborhoodIndex", "PropagatedState",
    "RawInteractions", "SimilarityOperator", "StaleStateError", "TrainBatch", "TrainConfig",
    "backprop_to_initial", "build_graph", "count_neighbor_pairs", "forward", "init_embeddings",
    "load_bundle", "load_interactions", "loss_grad", "rank_topk", "save_bundle", "score",
    "score_decomposed", "split_dataset", "sweep_alpha", "train",
]
