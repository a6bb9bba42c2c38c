"""Seeded mini-batch Adam loop shared by every trainable predictor."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable, Mapping

import numpy as np

from ..autodiff import Tensor
from ..errors import NonFiniteLoss
from ..nn import Adam


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    lr: float = 1e-4
    batch_size: int = 32
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


FINE_TUNE = TrainConfig(epochs=100, lr=1e-4, batch_size=1)


def fit_minibatch(
    params: Mapping[str, Tensor],
    loss_fn: Callable[[np.ndarray, int], Tensor],
    n: int,
    config: TrainConfig,
    progress: Callable[[str], None] | None = None,
    label: str = "train",
) -> list[float]:
    """Run Adam over shuffled mini-batches; ``loss_fn(indices, epoch)`` builds the batch loss.

    Returns the mean loss of every epoch.
    """
    opt = Adam(params.values(), lr=config.lr)
    rng = np.random.default_rng([config.seed, 7])
    curve = []
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            loss = loss_fn(idx, epoch)
            value = loss.item()
            if not np.isfinite(value):
                raise NonFiniteLoss(step, value)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(value)
            step += 1
        curve.append(float(np.mean(losses)) if losses else 0.0)
        if progress:
            progress(f"{label} epoch {epoch + 1}/{config.epochs} loss {curve[-1]:.6f}")
    return curve
