"""Pairwise accuracy classifiers with an antisymmetric comparator.

Each cluster owns a latent MLP; a graph's latent vector is the membership
weighted sum of the cluster latents. The comparator is a single linear layer
over concatenated latents, antisymmetrized so logit(a, b) = -logit(b, a).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .. import autodiff as ad
from .. import nn
from ..autodiff import Tensor
from ..fcm import FcmModel
from ..metrics import rank_via_comparator
from .training import TrainConfig, fit_minibatch

HIDDEN = 128
HIDDEN_LAYERS = 4
LATENT = 16
ALL_PAIRS_LIMIT = 256
PAIRS_PER_ITEM = 64


def sample_pairs(labels: np.ndarray, rng: np.random.Generator | None, mode: str = "auto") -> np.ndarray:
    """Ordered index pairs (i, j), i != j.

    ``auto`` uses every ordered pair when there are at most 256 items and
    64 * N seeded random pairs otherwise. ``partner`` draws one random partner
    per item.
    """
    n = len(labels)
    if n < 2:
        return np.zeros((0, 2), dtype=int)
    if mode == "auto" and n <= ALL_PAIRS_LIMIT:
        i, j = np.nonzero(~np.eye(n, dtype=bool))
        return np.stack([i, j], axis=1)
    count = n if mode == "partner" else PAIRS_PER_ITEM * n
    first = np.arange(n) if mode == "partner" else rng.integers(0, n, size=count)
    # offset in [1, n) guarantees j != i
    second = (first + rng.integers(1, n, size=count)) % n
    return np.stack([first, second], axis=1)


def pair_targets(labels: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    """+1 if the first item is better, -1 if worse, 0 for ties (ignored by the loss)."""
    y = np.asarray(labels, dtype=float)
    return np.sign(y[pairs[:, 0]] - y[pairs[:, 1]])


@dataclass
class PairwiseModel:
    fcm: FcmModel | None
    arrays: dict[str, np.ndarray]
    hidden: int = HIDDEN
    hidden_layers: int = HIDDEN_LAYERS
    curve: list[float] = field(default_factory=list)

    @property
    def C(self) -> int:
        return 1 if self.fcm is None else self.fcm.C

    @property
    def n_layers(self) -> int:
        return self.hidden_layers + 1

    def copy(self) -> "PairwiseModel":
        return PairwiseModel(self.fcm, {k: v.copy() for k, v in self.arrays.items()}, self.hidden, self.hidden_layers)

    def latent_tensor(self, x: np.ndarray, params) -> Tensor:
        x = np.asarray(x, dtype=float)
        xs = np.broadcast_to(x, (self.C,) + x.shape)
        lat = nn.mlp(Tensor(xs), params, "lat", self.n_layers)  # (C, N, 16)
        if self.fcm is None:
            return lat[0]
        u = self.fcm.membership(x)
        return ad.tsum(lat * u.T[:, :, None], axis=0)

    def logit_tensor(self, la: Tensor, lb: Tensor, params) -> Tensor:
        w = params["cmp.w"]
        forward = ad.concat([la, lb], axis=-1) @ w
        backward = ad.concat([lb, la], axis=-1) @ w
        return forward - backward

    def latents(self, x: np.ndarray) -> np.ndarray:
        return self.latent_tensor(np.atleast_2d(x), _consts(self.arrays)).data

    def logit_from_latents(self, la: np.ndarray, lb: np.ndarray) -> float:
        w = self.arrays["cmp.w"]
        return float(np.concatenate([la, lb]) @ w - np.concatenate([lb, la]) @ w)

    def pairwise_score(self, xa: np.ndarray, xb: np.ndarray) -> float:
        lat = self.latents(np.vstack([xa, xb]))
        return self.logit_from_latents(lat[0], lat[1])

    def rank_scores(self, x: np.ndarray) -> np.ndarray:
        """Mergesort position of every item (0 = predicted worst)."""
        lat = self.latents(x)
        order = rank_via_comparator(range(len(lat)), lambda a, b: self.logit_from_latents(lat[a], lat[b]))
        scores = np.empty(len(lat))
        scores[np.asarray(order, dtype=int)] = np.arange(len(lat), dtype=float)
        return scores

    def loss_tensor(self, x: np.ndarray, pairs: np.ndarray, targets: np.ndarray, params) -> Tensor:
        uniq, inv = np.unique(pairs.ravel(), return_inverse=True)
        lat = self.latent_tensor(x[uniq], params)
        inv = inv.reshape(pairs.shape)
        logits = self.logit_tensor(lat[inv[:, 0]], lat[inv[:, 1]], params)
        weight = np.abs(targets)
        total = ad.tsum(ad.softplus(logits * (-targets)) * weight)
        return total * (1.0 / max(float(weight.sum()), 1.0))

    def fit(
        self,
        x: np.ndarray,
        y: np.ndarray,
        config: TrainConfig,
        pair_mode: str = "auto",
        progress: Callable[[str], None] | None = None,
    ) -> "PairwiseModel":
        """Continue training a copy with the logistic pair loss."""
        out = self.copy()
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        params = nn.to_parameters(out.arrays)
        n_pairs = len(sample_pairs(y, np.random.default_rng(0), pair_mode))
        cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}

        def loss(idx, epoch):
            if epoch not in cache:
                cache.clear()
                pairs = sample_pairs(y, np.random.default_rng([config.seed, 13, epoch]), pair_mode)
                cache[epoch] = (pairs, pair_targets(y, pairs))
            pairs, targets = cache[epoch]
            return out.loss_tensor(x, pairs[idx], targets[idx], params)

        out.curve = fit_minibatch(params, loss, n_pairs, config, progress, "pairwise")
        out.arrays = nn.to_arrays(params)
        return out


def _consts(arrays) -> dict[str, Tensor]:
    return {k: Tensor(v) for k, v in arrays.items()}


def init_pairwise(fcm: FcmModel | None, dim: int, seed: int = 0, hidden: int = HIDDEN, hidden_layers: int = HIDDEN_LAYERS) -> PairwiseModel:
    rng = np.random.default_rng([seed, 17])
    sizes = [dim] + [hidden] * hidden_layers + [LATENT]
    arrays = nn.init_mlp(rng, "lat", sizes, stack=1 if fcm is None else fcm.C)
    arrays["cmp.w"] = nn.glorot(rng, 2 * LATENT, 1)[:, 0]
    return PairwiseModel(fcm, arrays, hidden, hidden_layers)


def train_pairwise(
    features: np.ndarray,
    labels: np.ndarray,
    fcm: FcmModel | None,
    config: TrainConfig = TrainConfig(),
    progress: Callable[[str], None] | None = None,
    hidden: int = HIDDEN,
    hidden_layers: int = HIDDEN_LAYERS,
) -> PairwiseModel:
    features = np.asarray(features, dtype=float)
    model = init_pairwise(fcm, features.shape[1], config.seed, hidden, hidden_layers)
    return model.fit(features, labels, config, progress=progress)


def pairwise_score(xa: np.ndarray, xb: np.ndarray, model: PairwiseModel) -> float:
    """Comparator logit; positive means ``xa`` is predicted more accurate."""
    return model.pairwise_score(xa, xb)
