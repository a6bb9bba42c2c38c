"""Snapshot fine-tuning on a handful of labelled target-family samples."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import InsufficientSamples
from .baseline import BaselineGNN
from .ensemble import EnsembleModel
from .pairwise import PairwiseModel
from .training import FINE_TUNE, TrainConfig

N_SAMPLES = 50


def select_samples(n: int, seed: int, k: int = N_SAMPLES) -> np.ndarray:
    """Indices of the fine-tuning subset; depends only on (n, seed, k) so every variant sees the same graphs."""
    if n < 1:
        raise InsufficientSamples("no graphs to sample from")
    rng = np.random.default_rng([seed, 23])
    return np.sort(rng.choice(n, size=min(k, n), replace=False))


def fine_tune(model, inputs, labels, config: TrainConfig = FINE_TUNE, progress: Callable[[str], None] | None = None):
    """Return a trained copy; the given model is never modified.

    ``inputs`` are reduced feature vectors for the MLP models and graphs for
    the baseline. Pairwise models pair every sample with one random partner
    per epoch.
    """
    labels = np.asarray(labels, dtype=float)
    if len(labels) < 1:
        raise InsufficientSamples("fine-tuning needs at least one sample")
    if config.epochs == 0:
        return model.copy()
    if isinstance(model, PairwiseModel):
        if len(labels) < 2:
            raise InsufficientSamples("pairwise fine-tuning needs at least two samples")
        return model.fit(inputs, labels, config, pair_mode="partner", progress=progress)
    if isinstance(model, (EnsembleModel, BaselineGNN)):
        return model.fit(inputs, labels, config, progress)
    raise TypeError(f"cannot fine-tune {type(model).__name__}")
