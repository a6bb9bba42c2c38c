"""Graph-level predictors: encoder + reducer + model + label transform, with persistence."""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import container
from .encoder import EncoderParams, encode_batch
from .fcm import FcmModel, FeatureReducer, fit_reducer, single_cluster
from .graph import ComputeGraph, compute_flops
from .predictor.baseline import BaselineGNN, train_baseline_gnn
from .predictor.ensemble import EnsembleModel, train_heads
from .predictor.finetune import fine_tune
from .predictor.pairwise import PairwiseModel, train_pairwise
from .predictor.training import FINE_TUNE, TrainConfig
from .predictor.transform import TransformStats, fit_transform_stats, inverse_transform, prune_mask, transform_label

VARIANTS = ("cl", "cl+t", "cl+fcm", "cl+fcm+t", "pairwise", "pairwise+fcm", "baseline-gnn", "flops")
REGRESSION = ("cl", "cl+t", "cl+fcm", "cl+fcm+t")


def uses_fcm(variant: str) -> bool:
    return variant.endswith("+fcm") or "+fcm+" in variant


def uses_transform(variant: str) -> bool:
    return variant.endswith("+t")


@dataclass
class GraphPredictor:
    """A fitted predictor that scores computation graphs.

    Regression variants score graphs by predicted accuracy in percent;
    pairwise variants by mergesort position; ``flops`` by gigaFLOPs.
    """

    variant: str
    encoder: EncoderParams | None = None
    reducer: FeatureReducer | None = None
    stats: TransformStats | None = None
    model: EnsembleModel | PairwiseModel | BaselineGNN | None = None

    def features(self, graphs: Sequence[ComputeGraph]) -> np.ndarray:
        emb = encode_batch(list(graphs), self.encoder)
        return self.reducer.transform(emb, [compute_flops(g) for g in graphs])

    def inputs(self, graphs: Sequence[ComputeGraph]):
        if isinstance(self.model, BaselineGNN):
            return list(graphs)
        return self.features(graphs)

    def targets(self, accuracy: Sequence[float], flops: Sequence[float]) -> np.ndarray:
        """Training labels from accuracy fractions and gigaFLOPs."""
        if self.variant.startswith("pairwise"):
            return np.asarray(accuracy, dtype=float)
        return np.asarray(transform_label(100.0 * np.asarray(accuracy, dtype=float), flops, self.stats))

    def predict_inputs(self, inputs, flops: Sequence[float]) -> np.ndarray:
        if isinstance(self.model, PairwiseModel):
            return self.model.rank_scores(inputs)
        raw = self.model.predict(inputs)
        return np.asarray(inverse_transform(raw, flops, self.stats), dtype=float)

    def predict(self, graphs: Sequence[ComputeGraph]) -> np.ndarray:
        graphs = list(graphs)
        flops = [compute_flops(g) for g in graphs]
        if self.variant == "flops":
            return np.asarray(flops, dtype=float)
        return self.predict_inputs(self.inputs(graphs), flops)

    __call__ = predict

    def fine_tuned(
        self,
        graphs: Sequence[ComputeGraph],
        accuracy: Sequence[float],
        config: TrainConfig = FINE_TUNE,
        progress: Callable[[str], None] | None = None,
    ) -> "GraphPredictor":
        """Snapshot fine-tuning; training-family transform statistics are kept."""
        if self.variant == "flops":
            return self
        graphs = list(graphs)
        flops = [compute_flops(g) for g in graphs]
        model = fine_tune(self.model, self.inputs(graphs), self.targets(accuracy, flops), config, progress)
        return replace(self, model=model)

    # -- persistence ------------------------------------------------------------------

    def to_container(self) -> tuple[dict[str, np.ndarray], dict]:
        arrays: dict[str, np.ndarray] = {}
        meta: dict = {"variant": self.variant}
        if self.encoder is not None:
            enc_arrays, enc_meta = self.encoder.to_container()
            arrays.update(container.with_prefix("encoder", enc_arrays))
            meta["encoder"] = enc_meta
        if self.reducer is not None:
            arrays.update(container.with_prefix("reducer", self.reducer.to_arrays()))
        if self.stats is not None:
            meta["transform"] = self.stats.to_dict()
        model = self.model
        if model is not None:
            arrays.update(container.with_prefix("model", model.arrays))
            info: dict = {"type": type(model).__name__}
            if isinstance(model, (EnsembleModel, PairwiseModel)):
                info.update(hidden=model.hidden, hidden_layers=model.hidden_layers, fcm=model.fcm is not None)
                if model.fcm is not None:
                    fcm_arrays = {k: v for k, v in model.fcm.to_arrays().items() if not k.startswith("reducer.")}
                    arrays.update(container.with_prefix("fcm", fcm_arrays))
            else:
                info.update(node_dim=model.node_dim, layers=model.layers)
            meta["model"] = info
        return arrays, meta

    @classmethod
    def from_container(cls, arrays, meta) -> "GraphPredictor":
        encoder = reducer = stats = model = None
        if "encoder" in meta:
            encoder = EncoderParams.from_container(container.section("encoder", arrays), meta["encoder"])
        red = container.section("reducer", arrays)
        if red:
            reducer = FeatureReducer.from_arrays(red)
        if "transform" in meta:
            stats = TransformStats(**meta["transform"])
        info = meta.get("model")
        if info is not None:
            marr = container.section("model", arrays)
            if info["type"] == "BaselineGNN":
                model = BaselineGNN(marr, info["node_dim"], info["layers"])
            else:
                fcm = None
                if info["fcm"]:
                    fcm = FcmModel.from_arrays(container.section("fcm", arrays))
                    fcm.reducer = reducer
                kind = EnsembleModel if info["type"] == "EnsembleModel" else PairwiseModel
                model = kind(fcm, marr, info["hidden"], info["hidden_layers"])
        return cls(meta["variant"], encoder, reducer, stats, model)


def save_predictor(path: str | Path, predictor: GraphPredictor) -> None:
    arrays, meta = predictor.to_container()
    container.save(path, arrays, meta)


def load_predictor(path: str | Path) -> GraphPredictor:
    arrays, meta = container.load(path)
    return GraphPredictor.from_container(arrays, meta)


@dataclass(frozen=True)
class ModelSizes:
    """Hidden sizes; defaults are the full-size models, tests shrink them."""

    head_hidden: int = 256
    head_layers: int = 4
    pair_hidden: int = 128
    pair_layers: int = 4


def train_predictor(
    variant: str,
    graphs: Sequence[ComputeGraph],
    accuracy: Sequence[float],
    encoder: EncoderParams | None = None,
    fcm: FcmModel | None = None,
    config: TrainConfig = TrainConfig(),
    sizes: ModelSizes = ModelSizes(),
    progress: Callable[[str], None] | None = None,
    embeddings: np.ndarray | None = None,
) -> GraphPredictor:
    """Fit one predictor variant on a training family.

    Records with accuracy below the prune threshold are dropped first. FCM
    variants need ``fcm`` (whose reducer defines the feature space); other
    embedding variants fit a reducer on the training embeddings.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {', '.join(VARIANTS)}")
    graphs = list(graphs)
    acc = np.asarray(accuracy, dtype=float)
    if variant == "flops":
        return GraphPredictor("flops")
    keep = prune_mask(acc)
    if not keep.any():
        raise ValueError("every training record falls below the prune threshold")
    graphs = [g for g, k in zip(graphs, keep) if k]
    acc = acc[keep]
    flops = np.array([compute_flops(g) for g in graphs])
    stats = fit_transform_stats(100.0 * acc, flops, use_flops=uses_transform(variant))
    if variant == "baseline-gnn":
        pred = GraphPredictor(variant, stats=stats)
        pred.model = train_baseline_gnn(graphs, pred.targets(acc, flops), config, progress)
        return pred
    if encoder is None:
        raise ValueError(f"variant {variant!r} needs a trained encoder")
    emb = encode_batch(graphs, encoder) if embeddings is None else np.asarray(embeddings)[keep]
    if uses_fcm(variant):
        if fcm is None or fcm.reducer is None:
            raise ValueError(f"variant {variant!r} needs a fitted FCM model with its reducer")
        reducer, gate = fcm.reducer, fcm
    else:
        reducer, gate = fit_reducer(emb, flops), None
    x = reducer.transform(emb, flops)
    pred = GraphPredictor(variant, encoder, reducer, stats)
    if variant.startswith("pairwise"):
        pred.model = train_pairwise(x, pred.targets(acc, flops), gate, config, progress, sizes.pair_hidden, sizes.pair_layers)
    else:
        pred.model = train_heads(x, pred.targets(acc, flops), gate, config, progress, sizes.head_hidden, sizes.head_layers)
    return pred


def degenerate_fcm(reducer: FeatureReducer) -> FcmModel:
    """One-cluster model over the reducer's feature space."""
    return single_cluster(reducer.dim, reducer)
