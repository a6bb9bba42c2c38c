"""Parameter initialization, MLP building blocks and the Adam optimizer."""

from __future__ import annotations

from typing import Iterable, Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def glorot(rng: np.random.Generator, *shape: int) -> np.ndarray:
    fan_in, fan_out = shape[-2], shape[-1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def he(rng: np.random.Generator, *shape: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / shape[-2]), size=shape)


def init_mlp(
    rng: np.random.Generator,
    prefix: str,
    sizes: list[int],
    stack: int | None = None,
) -> dict[str, np.ndarray]:
    """Weights for an MLP with layer widths ``sizes``; ``stack`` adds a leading head axis."""
    params = {}
    lead = () if stack is None else (stack,)
    for li, (fin, fout) in enumerate(zip(sizes[:-1], sizes[1:])):
        params[f"{prefix}.w{li}"] = he(rng, *lead, fin, fout)
        params[f"{prefix}.b{li}"] = np.zeros(lead + (1, fout) if stack else (fout,))
    return params


def mlp(x: Tensor, params: Mapping[str, Tensor], prefix: str, n_layers: int) -> Tensor:
    """ReLU MLP; the last layer is linear. Works for stacked heads when x is (C, B, d)."""
    h = x
    for li in range(n_layers):
        h = h @ params[f"{prefix}.w{li}"] + params[f"{prefix}.b{li}"]
        if li < n_layers - 1:
            h = ad.relu(h)
    return h


def to_parameters(arrays: Mapping[str, np.ndarray]) -> dict[str, Tensor]:
    return {k: ad.parameter(v) for k, v in arrays.items()}


def to_arrays(params: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    return {k: p.data.copy() for k, p in params.items()}


class Adam:
    def __init__(
        self,
        params: Iterable[Tensor],
        lr: float = 1e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self._tmp = [np.empty_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        """One bias-corrected Adam update, computed in place."""
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        step_size = self.lr / c1
        eps = self.eps * np.sqrt(c2)
        for p, m, v, tmp in zip(self.params, self.m, self.v, self._tmp):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            np.multiply(g, 1.0 - self.beta1, out=tmp)
            m += tmp
            v *= self.beta2
            np.multiply(g, g, out=tmp)
            tmp *= 1.0 - self.beta2
            v += tmp
            # lr * (m/c1) / (sqrt(v/c2) + eps) == (lr/c1) * m / ((sqrt(v) + eps*sqrt(c2)) / sqrt(c2))
            np.sqrt(v, out=tmp)
            tmp += eps
            np.divide(m, tmp, out=tmp)
            tmp *= step_size * np.sqrt(c2)
            p.data = p.data - tmp
