"""Regression and ranking metrics: MAE, SRCC, Kendall's tau-b, NDCG@k, comparator mergesort."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .errors import ConstantInput, DegenerateLabels, MismatchedLengths


def _pair(preds, labels, min_len: int = 1) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(preds, dtype=float).ravel()
    y = np.asarray(labels, dtype=float).ravel()
    if p.shape != y.shape:
        raise MismatchedLengths(f"{p.size} predictions vs {y.size} labels")
    if p.size < min_len:
        raise ValueError(f"need at least {min_len} items, got {p.size}")
    return p, y


def mae(preds, labels) -> float:
    p, y = _pair(preds, labels)
    return float(np.mean(np.abs(p - y)))


def average_ranks(x) -> np.ndarray:
    """1-based ranks with ties sharing the mean of their positions."""
    x = np.asarray(x, dtype=float)
    order = np.argsort(x, kind="mergesort")
    sx = x[order]
    ranks = np.empty(x.size)
    start = 0
    while start < x.size:
        stop = start + 1
        while stop < x.size and sx[stop] == sx[start]:
            stop += 1
        ranks[order[start:stop]] = 0.5 * (start + stop - 1) + 1.0
        start = stop
    return ranks


def srcc(preds, labels) -> float:
    """Spearman correlation: Pearson correlation of average ranks."""
    p, y = _pair(preds, labels, 2)
    rp, ry = average_ranks(p), average_ranks(y)
    rp -= rp.mean()
    ry -= ry.mean()
    denom = math.sqrt(float(rp @ rp) * float(ry @ ry))
    if denom == 0.0:
        raise ConstantInput("SRCC is undefined when either input is constant")
    return float(np.clip((rp @ ry) / denom, -1.0, 1.0))


def kendall_tau(preds, labels, chunk: int = 1024) -> float:
    """Tie-adjusted Kendall tau-b."""
    p, y = _pair(preds, labels, 2)
    n = p.size
    s = 0.0
    tied_p = tied_y = 0.0
    for start in range(0, n, chunk):
        sl = slice(start, min(start + chunk, n))
        dp = np.sign(p[sl, None] - p[None, :])
        dy = np.sign(y[sl, None] - y[None, :])
        # keep only pairs (i, j) with i < j
        upper = np.arange(sl.start, sl.stop)[:, None] < np.arange(n)[None, :]
        s += float((dp * dy)[upper].sum())
        tied_p += float(((dp == 0) & upper).sum())
        tied_y += float(((dy == 0) & upper).sum())
    n0 = n * (n - 1) / 2
    denom = math.sqrt((n0 - tied_p) * (n0 - tied_y))
    if denom == 0.0:
        raise ConstantInput("Kendall's tau is undefined when either input is constant")
    return float(np.clip(s / denom, -1.0, 1.0))


def relevance(labels) -> np.ndarray:
    """Labels rescaled linearly onto [0, 20]."""
    y = np.asarray(labels, dtype=float)
    lo, hi = y.min(), y.max()
    if hi == lo:
        raise DegenerateLabels("relevance rescaling needs labels that are not all equal")
    return 20.0 * (y - lo) / (hi - lo)


def dcg(rels: np.ndarray, k: int) -> float:
    rels = np.asarray(rels, dtype=float)[:k]
    discounts = np.log2(np.arange(2, rels.size + 2))
    return float(np.sum((np.exp2(rels) - 1.0) / discounts))


def ndcg_at_k(preds, labels, k: int) -> float:
    p, y = _pair(preds, labels)
    if not 1 <= k <= p.size:
        raise ValueError(f"k={k} must be in [1, {p.size}]")
    rel = relevance(y)
    by_pred = np.argsort(-p, kind="stable")
    ideal = np.sort(rel)[::-1]
    return dcg(rel[by_pred], k) / dcg(ideal, k)


def rank_via_comparator(items: Sequence[Any], comparator: Callable[[Any, Any], float]) -> list[Any]:
    """Stable ascending mergesort; ``comparator(a, b) > 0`` means a sorts after b."""
    items = list(items)
    if len(items) <= 1:
        return items
    mid = len(items) // 2
    left = rank_via_comparator(items[:mid], comparator)
    right = rank_via_comparator(items[mid:], comparator)
    out = []
    i = j = 0
    while i < len(left) and j < len(right):
        if comparator(left[i], right[j]) <= 0:
            out.append(left[i])
            i += 1
        else:
            out.append(right[j])
            j += 1
    out.extend(left[i:])
    out.extend(right[j:])
    return out


@dataclass
class RankingReport:
    mae: float | None
    srcc: float
    kendall_tau: float
    ndcg: dict[int, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "mae": self.mae,
            "srcc": self.srcc,
            "kt": self.kendall_tau,
            "ndcg": {str(k): v for k, v in sorted(self.ndcg.items())},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def ranking_report(preds, labels, ks: Sequence[int] = (10, 50), with_mae: bool = True) -> RankingReport:
    p, y = _pair(preds, labels, 2)
    return RankingReport(
        mae=mae(p, y) if with_mae else None,
        srcc=srcc(p, y),
        kendall_tau=kendall_tau(p, y),
        ndcg={k: ndcg_at_k(p, y, k) for k in ks if k <= p.size},
    )
