"""Six-way rank-normalized combination of constituent predictors."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import ConstantInput, MismatchedLengths
from ..metrics import average_ranks, kendall_tau

CONSTITUENTS = ("cl+fcm+t", "cl+t", "pairwise+fcm", "pairwise", "baseline-gnn", "flops")


def rank_normalize(scores) -> np.ndarray:
    """Average ranks mapped onto [0, 1]; a constant or single-item list maps to 0.5."""
    s = np.asarray(scores, dtype=float)
    if s.size <= 1:
        return np.full(s.size, 0.5)
    return (average_ranks(s) - 1.0) / (s.size - 1)


def kt_softmax_weights(kts: Sequence[float]) -> np.ndarray:
    k = np.asarray(kts, dtype=float)
    e = np.exp(k - k.max())
    return e / e.sum()


def constituent_kts(scores: Sequence[Sequence[float]], ft_indices: Sequence[int], ft_labels) -> np.ndarray:
    """Kendall's tau of each constituent on the labelled subset; undefined tau counts as 0."""
    idx = np.asarray(ft_indices, dtype=int)
    out = []
    for s in scores:
        try:
            out.append(kendall_tau(np.asarray(s, dtype=float)[idx], ft_labels))
        except ConstantInput:
            out.append(0.0)
    return np.array(out)


def gennape_combine(
    scores: Sequence[Sequence[float]],
    mode: str = "zero_shot",
    ft_indices: Sequence[int] | None = None,
    ft_labels: Sequence[float] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Combined per-graph scores and the constituent weights.

    ``zero_shot`` weighs constituents equally; ``fine_tuned`` uses a softmax
    over each constituent's Kendall's tau on the labelled graphs
    ``ft_indices`` (positions into the score lists).
    """
    lists = [np.asarray(s, dtype=float) for s in scores]
    if not lists:
        raise ValueError("no constituents to combine")
    n = lists[0].size
    if any(s.size != n for s in lists):
        raise MismatchedLengths("every constituent must score the same graph list")
    if mode == "zero_shot":
        weights = np.full(len(lists), 1.0 / len(lists))
    elif mode == "fine_tuned":
        if ft_indices is None or ft_labels is None:
            raise ValueError("fine_tuned mode needs ft_indices and ft_labels")
        if len(ft_indices) != len(ft_labels):
            raise MismatchedLengths("ft_indices and ft_labels differ in length")
        weights = kt_softmax_weights(constituent_kts(lists, ft_indices, ft_labels))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    combined = np.zeros(n)
    for w, s in zip(weights, lists):
        combined += w * rank_normalize(s)
    return combined, weights
