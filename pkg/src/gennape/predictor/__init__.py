"""Accuracy predictors built on top of graph embeddings."""

from .baseline import BaselineGNN, train_baseline_gnn
from .combine import CONSTITUENTS, gennape_combine, kt_softmax_weights, rank_normalize
from .ensemble import EnsembleModel, ensemble_predict, train_heads, weighted_sum
from .finetune import fine_tune, select_samples
from .pairwise import PairwiseModel, pairwise_score, sample_pairs, train_pairwise
from .training import FINE_TUNE, TrainConfig
from .transform import TransformStats, fit_transform_stats, inverse_transform, prune_mask, transform_label

__all__ = [
    "BaselineGNN",
    "CONSTITUENTS",
    "EnsembleModel",
    "FINE_TUNE",
    "PairwiseModel",
    "TrainConfig",
    "TransformStats",
    "ensemble_predict",
    "fine_tune",
    "fit_transform_stats",
    "gennape_combine",
    "inverse_transform",
    "kt_softmax_weights",
    "pairwise_score",
    "prune_mask",
    "rank_normalize",
    "sample_pairs",
    "select_samples",
    "train_baseline_gnn",
    "train_heads",
    "train_pairwise",
    "transform_label",
]
