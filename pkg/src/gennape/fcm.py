"""Feature reduction and Fuzzy C-Means soft clustering.

Embeddings are standardized per dimension and projected onto their leading
principal components; standardized FLOPs are appended after the projection.
Cluster centroids live in that joint space.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import DegenerateVariance, EmptyInput, GennapeError, InvalidFuzzifier
from .spectral import symmetric_eigh

log = logging.getLogger(__name__)

EPSILON = 1e-9
MAX_ITERS = 10_000
PCA_COMPONENTS = 32
GRID_C = tuple(range(10, 21))
GRID_M = (2.0, 2.5, 3.0, 3.5, 4.0)


# --------------------------------------------------------------------------- reduction


def pca_fit(x: np.ndarray, n_components: int) -> tuple[np.ndarray, np.ndarray]:
    """Mean and orthonormal basis (columns) of the top principal components.

    Components whose covariance eigenvalue is below 1e-12 are dropped, so the
    basis can have fewer than ``n_components`` columns.
    """
    x = np.asarray(x, dtype=float)
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / max(len(x) - 1, 1)
    vals, vecs = symmetric_eigh(cov)
    order = np.argsort(-vals, kind="stable")[:n_components]
    order = [i for i in order if vals[i] >= 1e-12]
    basis = vecs[:, order]
    # deterministic sign: largest-magnitude loading positive
    signs = np.sign(basis[np.argmax(np.abs(basis), axis=0), np.arange(basis.shape[1])])
    return mean, basis * np.where(signs == 0, 1.0, signs)


@dataclass
class FeatureReducer:
    emb_mean: np.ndarray
    emb_std: np.ndarray
    keep: np.ndarray  # bool mask over embedding dims
    pca_mean: np.ndarray
    basis: np.ndarray
    flops_mean: float
    flops_std: float
    use_flops: bool = True

    @property
    def dim(self) -> int:
        return self.basis.shape[1] + int(self.use_flops)

    def standardize(self, embeddings: np.ndarray) -> np.ndarray:
        e = np.asarray(embeddings, dtype=float)
        return (e[:, self.keep] - self.emb_mean[self.keep]) / self.emb_std[self.keep]

    def transform(self, embeddings: np.ndarray, flops: Sequence[float]) -> np.ndarray:
        z = (self.standardize(embeddings) - self.pca_mean) @ self.basis
        if not self.use_flops:
            return z
        f = (np.asarray(flops, dtype=float) - self.flops_mean) / self.flops_std
        return np.hstack([z, f[:, None]])

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {
            "emb_mean": self.emb_mean,
            "emb_std": self.emb_std,
            "keep": self.keep.astype(float),
            "pca_mean": self.pca_mean,
            "basis": self.basis,
            "flops": np.array([self.flops_mean, self.flops_std, float(self.use_flops)]),
        }

    @classmethod
    def from_arrays(cls, a: Mapping[str, np.ndarray]) -> "FeatureReducer":
        fm, fs, use = a["flops"]
        return cls(a["emb_mean"], a["emb_std"], a["keep"] > 0.5, a["pca_mean"], a["basis"], float(fm), float(fs), bool(use))


def fit_reducer(embeddings: np.ndarray, flops: Sequence[float], n_components: int = PCA_COMPONENTS) -> FeatureReducer:
    e = np.asarray(embeddings, dtype=float)
    f = np.asarray(flops, dtype=float)
    if e.ndim != 2 or e.shape[0] == 0 or e.shape[0] != f.shape[0]:
        raise EmptyInput("embeddings and flops must be non-empty and equally long")
    mean, std = e.mean(axis=0), e.std(axis=0)
    keep = std >= 1e-12
    if not keep.all():
        warnings.warn(
            DegenerateVariance(f"dropping {int((~keep).sum())} embedding dimensions with std < 1e-12"),
            stacklevel=2,
        )
    if not keep.any():
        raise DegenerateVariance("every embedding dimension is constant")
    safe_std = np.where(keep, std, 1.0)
    z = (e[:, keep] - mean[keep]) / safe_std[keep]
    pca_mean, basis = pca_fit(z, n_components)
    fmean, fstd = float(f.mean()), float(f.std())
    use_flops = fstd >= 1e-12
    if not use_flops:
        warnings.warn(DegenerateVariance("FLOPs are constant; dropping the FLOPs feature"), stacklevel=2)
        fstd = 1.0
    return FeatureReducer(mean, safe_std, keep, pca_mean, basis, fmean, fstd, use_flops)


def reduce_features(
    embeddings: np.ndarray,
    flops: Sequence[float],
    fit: bool,
    model: "FcmModel | FeatureReducer | None" = None,
    n_components: int = PCA_COMPONENTS,
) -> tuple[np.ndarray, FeatureReducer]:
    """Reduced feature vectors; statistics are fitted only when ``fit`` is true."""
    if fit:
        reducer = fit_reducer(embeddings, flops, n_components)
    else:
        reducer = model.reducer if isinstance(model, FcmModel) else model
        if reducer is None:
            raise ValueError("a fitted model is required when fit=False")
    return reducer.transform(embeddings, flops), reducer


# --------------------------------------------------------------------------- FCM


def squared_distances(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = x[:, None, :] - centroids[None, :, :]
    return np.einsum("ncd,ncd->nc", diff, diff)


def memberships_from_sqdist(d2: np.ndarray, m: float) -> np.ndarray:
    """Membership rows from squared distances; rows touching a centroid are hard-assigned."""
    d2 = np.atleast_2d(np.asarray(d2, dtype=float))
    u = np.empty_like(d2)
    zero = d2 <= 0.0
    hard = zero.any(axis=1)
    if hard.any():
        z = zero[hard].astype(float)
        u[hard] = z / z.sum(axis=1, keepdims=True)
    soft = ~hard
    if soft.any():
        logits = -np.log(d2[soft]) / (m - 1.0)
        logits -= logits.max(axis=1, keepdims=True)
        w = np.exp(logits)
        u[soft] = w / w.sum(axis=1, keepdims=True)
    return u


def memberships(x: np.ndarray, centroids: np.ndarray, m: float) -> np.ndarray:
    return memberships_from_sqdist(squared_distances(np.atleast_2d(x), centroids), m)


def update_centroids(x: np.ndarray, u: np.ndarray, m: float) -> np.ndarray:
    w = u**m
    return (w.T @ x) / w.sum(axis=0)[:, None]


def objective(x: np.ndarray, u: np.ndarray, centroids: np.ndarray, m: float) -> float:
    return float(np.sum(u**m * squared_distances(x, centroids)))


@dataclass
class FcmModel:
    centroids: np.ndarray
    m: float
    reducer: FeatureReducer | None = None
    eps: float = EPSILON
    max_iters: int = MAX_ITERS
    n_iter: int = 0
    objective_history: list[float] = field(default_factory=list)

    @property
    def C(self) -> int:
        return self.centroids.shape[0]

    def membership(self, x: np.ndarray) -> np.ndarray:
        return memberships(np.asarray(x, dtype=float), self.centroids, self.m)

    def to_arrays(self) -> dict[str, np.ndarray]:
        out = {"centroids": self.centroids, "params": np.array([self.m, self.eps, self.max_iters, self.n_iter])}
        if self.reducer is not None:
            out.update({f"reducer.{k}": v for k, v in self.reducer.to_arrays().items()})
        return out

    @classmethod
    def from_arrays(cls, a: Mapping[str, np.ndarray]) -> "FcmModel":
        m, eps, max_iters, n_iter = a["params"]
        red = {k[len("reducer."):]: v for k, v in a.items() if k.startswith("reducer.")}
        reducer = FeatureReducer.from_arrays(red) if red else None
        return cls(np.array(a["centroids"]), float(m), reducer, float(eps), int(max_iters), int(n_iter))


def single_cluster(dim: int, reducer: FeatureReducer | None = None) -> FcmModel:
    """Degenerate one-cluster model: every membership is exactly 1."""
    return FcmModel(np.zeros((1, dim)), 2.0, reducer)


def _kmeanspp_init(x: np.ndarray, c: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    chosen = [int(rng.integers(0, n))]
    d2 = squared_distances(x, x[chosen])[:, 0]
    for _ in range(1, c):
        probs = d2.copy()
        probs[chosen] = 0.0
        total = probs.sum()
        if total <= 0:
            remaining = np.setdiff1d(np.arange(n), chosen)
            nxt = int(remaining[rng.integers(0, remaining.size)])
        else:
            nxt = int(rng.choice(n, p=probs / total))
        chosen.append(nxt)
        d2 = np.minimum(d2, squared_distances(x, x[[nxt]])[:, 0])
    return x[chosen].copy()


def fcm_fit(
    features: np.ndarray,
    C: int,
    m: float,
    seed: int = 0,
    eps: float = EPSILON,
    max_iters: int = MAX_ITERS,
    reducer: FeatureReducer | None = None,
) -> FcmModel:
    """Alternate membership and centroid updates until max |dU| <= eps or max_iters."""
    x = np.asarray(features, dtype=float)
    if x.ndim != 2 or x.shape[0] == 0:
        raise EmptyInput("no feature vectors to cluster")
    if not 1 <= C <= x.shape[0]:
        raise EmptyInput(f"need at least C={C} feature vectors, got {x.shape[0]}")
    if not m > 1:
        raise InvalidFuzzifier(f"fuzzification coefficient must exceed 1, got {m}")
    # canonical row order makes the seeded initialization independent of input order
    x_sorted = x[np.lexsort(x.T[::-1])]
    centroids = _kmeanspp_init(x_sorted, C, np.random.default_rng(seed))
    u = memberships(x_sorted, centroids, m)
    history = [objective(x_sorted, u, centroids, m)]
    n_iter = 0
    for n_iter in range(1, max_iters + 1):
        centroids = update_centroids(x_sorted, u, m)
        history.append(objective(x_sorted, u, centroids, m))
        u_new = memberships(x_sorted, centroids, m)
        history.append(objective(x_sorted, u_new, centroids, m))
        if history[-1] > history[-3] + 1e-10 * max(1.0, abs(history[-3])):
            log.warning("FCM objective increased at iteration %d: %r -> %r", n_iter, history[-3], history[-1])
        delta = float(np.max(np.abs(u_new - u)))
        u = u_new
        if delta <= eps:
            break
    return FcmModel(centroids, float(m), reducer, eps, max_iters, n_iter, history)


def fcm_membership(x: np.ndarray, model: FcmModel) -> np.ndarray:
    """Membership row(s) of feature vector(s) x under a fitted model."""
    u = model.membership(x)
    return u[0] if np.ndim(x) == 1 else u


# --------------------------------------------------------------------------- grid search


@dataclass
class GridResult:
    C: int
    m: float
    model: FcmModel
    scores: dict[tuple[int, float], float | None]


def grid_search(
    train_features: np.ndarray,
    validation: Any,
    predictor_trainer: Callable[[FcmModel, Any], float],
    seed: int = 0,
    Cs: Iterable[int] = GRID_C,
    ms: Iterable[float] = GRID_M,
    reducer: FeatureReducer | None = None,
) -> GridResult:
    """Exhaustive (C, m) search maximizing the trainer's validation SRCC.

    Ties go to the smaller C, then the smaller m. A cell whose trainer raises
    is disqualified and recorded with score None.
    """
    best: tuple[float, int, float, FcmModel] | None = None
    scores: dict[tuple[int, float], float | None] = {}
    for c in sorted(Cs):
        for m in sorted(ms):
            try:
                model = fcm_fit(train_features, c, m, seed, reducer=reducer)
                score = float(predictor_trainer(model, validation))
            except GennapeError as exc:
                log.warning("grid cell C=%d m=%.1f failed: %s", c, m, exc)
                scores[(c, m)] = None
                continue
            scores[(c, m)] = score
            if best is None or score > best[0]:
                best = (score, c, m, model)
    if best is None:
        raise GennapeError("every grid cell failed")
    return GridResult(best[1], best[2], best[3], scores)
