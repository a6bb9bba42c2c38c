"""Cross-family transfer experiment: pretrain on one synthetic family, rank another."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .encoder import EncoderConfig, EncoderParams, encode_batch, train_encoder
from .families import build_dataset, default_oracle
from .fcm import fcm_fit, fit_reducer
from .graph import compute_flops
from .metrics import srcc
from .pipeline import ModelSizes, train_predictor
from .predictor.finetune import select_samples
from .predictor.training import FINE_TUNE, TrainConfig


@dataclass(frozen=True)
class TransferConfig:
    train_family: str = "nb101_like"
    test_family: str = "hiaml_like"
    n_train: int = 2000
    n_test: int = 500
    data_seed: int = 0
    encoder: EncoderConfig = EncoderConfig()
    clusters: int = 16
    fuzzifier: float = 4.0
    variant: str = "cl+fcm+t"
    heads: TrainConfig = TrainConfig()
    fine_tune: TrainConfig = FINE_TUNE
    ft_samples: int = 50
    ft_seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    sizes: ModelSizes = ModelSizes()


@dataclass
class TransferResult:
    zero_shot_srcc: float
    per_seed: list[dict] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def fine_tuned_mean(self) -> float:
        return float(np.mean([r["fine_tuned"] for r in self.per_seed])) if self.per_seed else float("nan")

    def to_dict(self) -> dict:
        return {
            "zero_shot_srcc": self.zero_shot_srcc,
            "fine_tuned_mean": self.fine_tuned_mean,
            "per_seed": self.per_seed,
            "timings": self.timings,
        }


def run_transfer(
    cfg: TransferConfig = TransferConfig(),
    progress: Callable[[str], None] | None = None,
    encoder: EncoderParams | None = None,
) -> TransferResult:
    """Pretrain on the train family, then score zero-shot and per-seed fine-tuned SRCC on the test family.

    A pretrained ``encoder`` skips the contrastive pretraining stage.
    """
    timings: dict[str, float] = {}
    clock = time.perf_counter()

    def lap(name: str):
        nonlocal clock
        now = time.perf_counter()
        timings[name] = now - clock
        clock = now
        if progress:
            progress(f"{name}: {timings[name]:.1f}s")

    train = build_dataset(cfg.train_family, cfg.n_train, default_oracle(cfg.train_family), cfg.data_seed)
    test = build_dataset(cfg.test_family, cfg.n_test, default_oracle(cfg.test_family), cfg.data_seed + 1)
    lap("generate")
    graphs = [r.graph for r in train]
    acc = np.array([r.accuracy for r in train])
    if encoder is None:
        encoder, _ = train_encoder(graphs, cfg.encoder, progress=progress)
    lap("encoder")
    emb = encode_batch(graphs, encoder)
    flops = np.array([compute_flops(g) for g in graphs])
    reducer = fit_reducer(emb, flops)
    fcm = fcm_fit(reducer.transform(emb, flops), cfg.clusters, cfg.fuzzifier, cfg.encoder.seed, reducer=reducer)
    lap("cluster")
    pred = train_predictor(cfg.variant, graphs, acc, encoder, fcm, cfg.heads, cfg.sizes, progress, embeddings=emb)
    lap("predictor")
    test_graphs = [r.graph for r in test]
    test_acc = np.array([r.accuracy for r in test])
    zero = pred.predict(test_graphs)
    result = TransferResult(srcc(zero, test_acc), timings=timings)
    for seed in cfg.ft_seeds:
        idx = select_samples(len(test), seed, cfg.ft_samples)
        held = np.setdiff1d(np.arange(len(test)), idx)
        tuned = pred.fine_tuned([test_graphs[i] for i in idx], test_acc[idx], cfg.fine_tune)
        ft_scores = tuned.predict([test_graphs[i] for i in held])
        result.per_seed.append(
            {
                "seed": seed,
                "zero_shot": srcc(zero[held], test_acc[held]),
                "fine_tuned": srcc(ft_scores, test_acc[held]),
            }
        )
        if progress:
            progress(f"fine-tune seed {seed}: {result.per_seed[-1]}")
    lap("fine_tune")
    return result


def config_dict(cfg: TransferConfig) -> dict:
    return asdict(cfg)
