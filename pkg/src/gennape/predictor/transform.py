"""FLOPs-aware label transform: y = zscore(A / (log10(F + 1) + 1)), F in gigaFLOPs."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

PRUNE_THRESHOLD = 0.80


@dataclass(frozen=True)
class TransformStats:
    mean: float
    std: float
    use_flops: bool = True
    prune_threshold: float = PRUNE_THRESHOLD

    def __post_init__(self):
        if not self.std > 0:
            raise ValueError("transform std must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def flops_divisor(flops_g) -> np.ndarray:
    return np.log10(np.asarray(flops_g, dtype=float) + 1.0) + 1.0


def raw_target(accuracy_pct, flops_g, use_flops: bool = True):
    acc = np.asarray(accuracy_pct, dtype=float)
    return acc / flops_divisor(flops_g) if use_flops else acc


def fit_transform_stats(accuracy_pct, flops_g, use_flops: bool = True) -> TransformStats:
    """Mean and std of the raw target over a training family (after pruning)."""
    raw = raw_target(accuracy_pct, flops_g, use_flops)
    return TransformStats(float(np.mean(raw)), float(np.std(raw)), use_flops)


def prune_mask(accuracy_fraction, threshold: float = PRUNE_THRESHOLD) -> np.ndarray:
    """True for records kept when fitting on the training family."""
    return np.asarray(accuracy_fraction, dtype=float) >= threshold


def transform_label(accuracy_pct, flops_g, stats: TransformStats):
    y = (raw_target(accuracy_pct, flops_g, stats.use_flops) - stats.mean) / stats.std
    return float(y) if np.ndim(y) == 0 else y


def inverse_transform(y, flops_g, stats: TransformStats):
    raw = np.asarray(y, dtype=float) * stats.std + stats.mean
    acc = raw * flops_divisor(flops_g) if stats.use_flops else raw
    return float(acc) if np.ndim(acc) == 0 else acc
