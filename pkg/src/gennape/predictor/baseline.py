"""End-to-end message-passing regressor on raw computation graphs."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .. import autodiff as ad
from .. import nn
from ..autodiff import Tensor
from ..encoder import FEATURE_DIM, GraphBatch, message_passing, node_features
from ..graph import ComputeGraph
from .training import TrainConfig, fit_minibatch

NODE_DIM = 32
GNN_LAYERS = 6
HEAD_SIZES = [NODE_DIM, 32, 32, 32, 1]


@dataclass
class BaselineGNN:
    arrays: dict[str, np.ndarray]
    node_dim: int = NODE_DIM
    layers: int = GNN_LAYERS
    curve: list[float] = field(default_factory=list)

    def copy(self) -> "BaselineGNN":
        return BaselineGNN({k: v.copy() for k, v in self.arrays.items()}, self.node_dim, self.layers)

    def forward(self, batch: GraphBatch, params) -> Tensor:
        h = batch.features @ params["embed.w"] + params["embed.b"]
        h = message_passing(h, batch, params, self.layers, prefix="gnn")
        pooled = ad.spmm(batch.pool, h)
        out = nn.mlp(pooled, params, "reg", len(HEAD_SIZES) - 1)
        return ad.reshape(out, (batch.n_graphs,))

    def predict(self, graphs: Sequence[ComputeGraph], chunk: int = 256) -> np.ndarray:
        consts = {k: Tensor(v) for k, v in self.arrays.items()}
        out = [
            self.forward(GraphBatch.from_graphs(graphs[s : s + chunk]), consts).data
            for s in range(0, len(graphs), chunk)
        ]
        return np.concatenate(out) if out else np.zeros(0)

    def fit(
        self,
        graphs: Sequence[ComputeGraph],
        labels: np.ndarray,
        config: TrainConfig,
        progress: Callable[[str], None] | None = None,
    ) -> "BaselineGNN":
        out = self.copy()
        graphs = list(graphs)
        y = np.asarray(labels, dtype=float)
        feats = [node_features(g) for g in graphs]
        params = nn.to_parameters(out.arrays)

        def loss(idx, _epoch):
            batch = GraphBatch.from_graphs([graphs[i] for i in idx], [feats[i] for i in idx])
            return ad.tmean(ad.square(out.forward(batch, params) - y[idx]))

        out.curve = fit_minibatch(params, loss, len(graphs), config, progress, "baseline")
        out.arrays = nn.to_arrays(params)
        return out


def init_baseline(seed: int = 0, node_dim: int = NODE_DIM, layers: int = GNN_LAYERS) -> BaselineGNN:
    rng = np.random.default_rng([seed, 19])
    arrays = {"embed.w": nn.glorot(rng, FEATURE_DIM, node_dim), "embed.b": np.zeros(node_dim)}
    for li in range(layers):
        for part in ("self", "in", "out"):
            arrays[f"gnn{li}.{part}"] = nn.glorot(rng, node_dim, node_dim)
        arrays[f"gnn{li}.b"] = np.zeros(node_dim)
    arrays.update(nn.init_mlp(rng, "reg", [node_dim] + HEAD_SIZES[1:]))
    return BaselineGNN(arrays, node_dim, layers)


def train_baseline_gnn(
    graphs: Sequence[ComputeGraph],
    labels: np.ndarray,
    config: TrainConfig = TrainConfig(),
    progress: Callable[[str], None] | None = None,
) -> BaselineGNN:
    return init_baseline(config.seed).fit(graphs, labels, config, progress)
