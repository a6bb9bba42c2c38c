"""MLP ensemble gated by fuzzy memberships: y' = sum_j U_j f_j(x)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .. import autodiff as ad
from .. import nn
from ..autodiff import Tensor
from ..fcm import FcmModel
from .training import TrainConfig, fit_minibatch

HIDDEN = 256
HIDDEN_LAYERS = 4


def weighted_sum(head_outputs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Combine per-head outputs (C,) or (C, N) with membership rows (C,) or (N, C)."""
    head_outputs = np.asarray(head_outputs, dtype=float)
    u = np.asarray(u, dtype=float)
    if head_outputs.ndim == 1:
        return float(np.dot(u, head_outputs))
    return np.einsum("nc,cn->n", u, head_outputs)


@dataclass
class EnsembleModel:
    """C stacked regressor heads; ``fcm=None`` is a single ungated head."""

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

    def copy(self) -> "EnsembleModel":
        return EnsembleModel(self.fcm, {k: v.copy() for k, v in self.arrays.items()}, self.hidden, self.hidden_layers)

    def heads_tensor(self, x: np.ndarray, params: Mapping[str, Tensor]) -> Tensor:
        """Every head's output, shape (C, N)."""
        xs = np.broadcast_to(np.asarray(x, dtype=float), (self.C,) + np.shape(x))
        out = nn.mlp(Tensor(xs), params, "head", self.n_layers)
        return ad.reshape(out, (self.C, np.shape(x)[0]))

    def memberships(self, x: np.ndarray) -> np.ndarray | None:
        return None if self.fcm is None else self.fcm.membership(x)

    def forward(self, x: np.ndarray, u: np.ndarray | None, params: Mapping[str, Tensor]) -> Tensor:
        heads = self.heads_tensor(x, params)
        if u is None:
            return heads[0]
        return ad.tsum(heads * np.asarray(u, dtype=float).T, axis=0)

    def head_outputs(self, x: np.ndarray) -> np.ndarray:
        return self.heads_tensor(np.atleast_2d(x), _consts(self.arrays)).data

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        heads = self.head_outputs(x)
        u = self.memberships(x)
        return heads[0].copy() if u is None else weighted_sum(heads, u)

    def loss_tensor(self, x, u, y, params) -> Tensor:
        pred = self.forward(x, u, params)
        return ad.tmean(ad.square(pred - np.asarray(y, dtype=float)))

    def fit(
        self,
        x: np.ndarray,
        y: np.ndarray,
        config: TrainConfig,
        progress: Callable[[str], None] | None = None,
    ) -> "EnsembleModel":
        """Continue training a copy on (x, y); the receiver is left untouched."""
        out = self.copy()
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        u = self.memberships(x)
        params = nn.to_parameters(out.arrays)

        def loss(idx, _epoch):
            return out.loss_tensor(x[idx], None if u is None else u[idx], y[idx], params)

        out.curve = fit_minibatch(params, loss, len(x), config, progress, "heads")
        out.arrays = nn.to_arrays(params)
        return out

    def to_arrays(self) -> dict[str, np.ndarray]:
        return dict(self.arrays)


def _consts(arrays: Mapping[str, np.ndarray]) -> dict[str, Tensor]:
    return {k: Tensor(v) for k, v in arrays.items()}


def init_ensemble(fcm: FcmModel | None, dim: int, seed: int = 0, hidden: int = HIDDEN, hidden_layers: int = HIDDEN_LAYERS) -> EnsembleModel:
    rng = np.random.default_rng([seed, 11])
    sizes = [dim] + [hidden] * hidden_layers + [1]
    return EnsembleModel(fcm, nn.init_mlp(rng, "head", sizes, stack=1 if fcm is None else fcm.C), hidden, hidden_layers)


def train_heads(
    features: np.ndarray,
    labels: np.ndarray,
    fcm: FcmModel | None,
    config: TrainConfig = TrainConfig(),
    progress: Callable[[str], None] | None = None,
    hidden: int = HIDDEN,
    hidden_layers: int = HIDDEN_LAYERS,
) -> EnsembleModel:
    """Fit one regressor head per cluster on membership-weighted squared error."""
    features = np.asarray(features, dtype=float)
    model = init_ensemble(fcm, features.shape[1], config.seed, hidden, hidden_layers)
    return model.fit(features, labels, config, progress)


def ensemble_predict(x: np.ndarray, ensemble: EnsembleModel):
    """Membership-weighted head prediction for one feature vector (or a batch)."""
    pred = ensemble.predict(x)
    return float(pred[0]) if np.ndim(x) == 1 else pred
