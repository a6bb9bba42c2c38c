"""Contrastive graph encoder.

Two branches read the same learned node embeddings: four first-order
message-passing layers and one two-head self-attention layer. Each branch is
mean-pooled to 64 values and the two are concatenated into a 128-value graph
embedding. Training pairs two dropout views of every graph in a batch and
weights the contrastive terms by a softmax over spectral distances.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from . import container, nn
from .autodiff import Tensor
from .errors import DegenerateProjection, NonFiniteLoss
from .graph import OP_KINDS, ComputeGraph, compute_flops
from .spectral import DEFAULT_Q, alpha_matrix, signature

KIND_INDEX = {k: i for i, k in enumerate(OP_KINDS)}
FEATURE_DIM = len(OP_KINDS) + 3 + 3 + 1 + 1


@dataclass(frozen=True)
class EncoderConfig:
    embed_dim: int = 128
    branch_dim: int = 64
    proj_dim: int = 32
    gnn_layers: int = 4
    attn_heads: int = 2
    dropout_rate: float = 0.1
    temperature: float = 0.05
    batch_size: int = 128
    q: int = DEFAULT_Q
    alpha_sign: int = 1
    aux_flops_weight: float = 1.0
    epochs: int = 40
    lr: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.embed_dim != 2 * self.branch_dim:
            raise ValueError("embed_dim must be twice branch_dim")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.alpha_sign not in (1, -1):
            raise ValueError("alpha_sign must be +1 or -1")
        if self.branch_dim % self.attn_heads:
            raise ValueError("branch_dim must be divisible by attn_heads")


@dataclass
class EncoderParams:
    config: EncoderConfig
    arrays: dict[str, np.ndarray]
    flops_stats: tuple[float, float] = (0.0, 1.0)

    def tensors(self) -> dict[str, Tensor]:
        return nn.to_parameters(self.arrays)

    def copy(self) -> "EncoderParams":
        return EncoderParams(self.config, {k: v.copy() for k, v in self.arrays.items()}, self.flops_stats)

    def to_container(self) -> tuple[dict[str, np.ndarray], dict]:
        meta = {"config": asdict(self.config), "flops_stats": list(self.flops_stats)}
        return dict(self.arrays), meta

    @classmethod
    def from_container(cls, arrays: Mapping[str, np.ndarray], meta: Mapping) -> "EncoderParams":
        return cls(EncoderConfig(**meta["config"]), dict(arrays), tuple(meta["flops_stats"]))


def init_params(config: EncoderConfig) -> EncoderParams:
    rng = np.random.default_rng(config.seed)
    d, e, p = config.branch_dim, config.embed_dim, config.proj_dim
    arrays: dict[str, np.ndarray] = {
        "embed.w": nn.glorot(rng, FEATURE_DIM, d),
        "embed.b": np.zeros(d),
    }
    for li in range(config.gnn_layers):
        arrays[f"gnn{li}.self"] = nn.glorot(rng, d, d)
        arrays[f"gnn{li}.in"] = nn.glorot(rng, d, d)
        arrays[f"gnn{li}.out"] = nn.glorot(rng, d, d)
        arrays[f"gnn{li}.b"] = np.zeros(d)
    for name in ("q", "k", "v", "o"):
        arrays[f"attn.{name}"] = nn.glorot(rng, d, d)
    arrays["attn.bo"] = np.zeros(d)
    arrays.update(nn.init_mlp(rng, "proj", [e, e, p]))
    arrays.update(nn.init_mlp(rng, "aux", [e, d, 1]))
    return EncoderParams(config, arrays)


# --------------------------------------------------------------------------- features


def node_features(cg: ComputeGraph) -> np.ndarray:
    """One-hot op kind, log-scaled input/output HWC, log weight count, bias flag."""
    feats = np.zeros((cg.n, FEATURE_DIM))
    base = len(OP_KINDS)
    for i, nd in enumerate(cg.nodes):
        feats[i, KIND_INDEX[nd.kind]] = 1.0
        feats[i, base : base + 3] = np.log1p(nd.input_shape.as_list())
        feats[i, base + 3 : base + 6] = np.log1p(nd.output_shape.as_list())
        feats[i, base + 6] = math.log1p(nd.weight_count)
        feats[i, base + 7] = float(nd.has_bias)
    return feats


def _mean_aggregator(rows: list[int], cols: list[int], m: int) -> sp.csr_matrix:
    adj = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(m, m))
    deg = np.asarray(adj.sum(axis=1)).ravel()
    inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    return sp.diags(inv) @ adj


@dataclass
class GraphBatch:
    """Block-diagonal packing of several graphs for one forward pass."""

    features: np.ndarray  # (M, F)
    agg_in: sp.csr_matrix  # (M, M) mean over predecessors
    agg_out: sp.csr_matrix  # (M, M) mean over successors
    pool: sp.csr_matrix  # (B, M) mean over each graph's nodes
    pad_index: np.ndarray  # (B, n_max) rows into features, padded with 0
    pad_mask: np.ndarray  # (B, n_max) True for real nodes
    sizes: list[int] = field(default_factory=list)

    @property
    def n_graphs(self) -> int:
        return self.pool.shape[0]

    @classmethod
    def from_graphs(cls, graphs: Sequence[ComputeGraph], features: Sequence[np.ndarray] | None = None):
        if features is None:
            features = [node_features(g) for g in graphs]
        sizes = [g.n for g in graphs]
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        m = int(offsets[-1])
        src, dst = [], []
        for g, off in zip(graphs, offsets):
            for s, d in g.edges:
                src.append(s + off)
                dst.append(d + off)
        agg_in = _mean_aggregator(dst, src, m)
        agg_out = _mean_aggregator(src, dst, m)
        b = len(graphs)
        pool_rows = np.repeat(np.arange(b), sizes)
        pool_vals = np.repeat([1.0 / s for s in sizes], sizes)
        pool = sp.csr_matrix((pool_vals, (pool_rows, np.arange(m))), shape=(b, m))
        n_max = max(sizes)
        pad_index = np.zeros((b, n_max), dtype=int)
        pad_mask = np.zeros((b, n_max), dtype=bool)
        for gi, (size, off) in enumerate(zip(sizes, offsets)):
            pad_index[gi, :size] = np.arange(off, off + size)
            pad_mask[gi, :size] = True
        return cls(np.vstack(features), agg_in, agg_out, pool, pad_index, pad_mask, sizes)


# --------------------------------------------------------------------------- forward


def embed_nodes(batch: GraphBatch, params: Mapping[str, Tensor]) -> Tensor:
    return batch.features @ params["embed.w"] + params["embed.b"]


def message_passing(h: Tensor, batch: GraphBatch, params: Mapping[str, Tensor], layers: int, prefix="gnn") -> Tensor:
    for li in range(layers):
        h = ad.relu(
            h @ params[f"{prefix}{li}.self"]
            + ad.spmm(batch.agg_in, h) @ params[f"{prefix}{li}.in"]
            + ad.spmm(batch.agg_out, h) @ params[f"{prefix}{li}.out"]
            + params[f"{prefix}{li}.b"]
        )
    return h


def attention(
    h: Tensor,
    batch: GraphBatch,
    params: Mapping[str, Tensor],
    heads: int,
    dropout_rate: float = 0.0,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """One residual multi-head self-attention layer over each graph's nodes, mean-pooled."""
    b, n_max = batch.pad_index.shape
    d = h.shape[-1]
    dh = d // heads
    x = ad.reshape(ad.take(h, batch.pad_index.ravel()), (b, n_max, d))

    def split(t: Tensor) -> Tensor:
        return ad.transpose(ad.reshape(t, (b, n_max, heads, dh)), (0, 2, 1, 3))

    qh = split(x @ params["attn.q"])
    kh = split(x @ params["attn.k"])
    vh = split(x @ params["attn.v"])
    scores = (qh @ ad.swapaxes(kh, -1, -2)) * (1.0 / math.sqrt(dh))
    key_mask = np.broadcast_to(batch.pad_mask[:, None, None, :], scores.shape)
    weights = ad.dropout(ad.softmax(scores, axis=-1, mask=key_mask), dropout_rate, rng)
    mixed = ad.reshape(ad.transpose(weights @ vh, (0, 2, 1, 3)), (b, n_max, d))
    out = x + mixed @ params["attn.o"] + params["attn.bo"]
    mask = batch.pad_mask[:, :, None].astype(float)
    counts = batch.pad_mask.sum(axis=1, keepdims=True).astype(float)
    return ad.tsum(out * mask, axis=1) * (1.0 / counts)


def encode_tensor(
    batch: GraphBatch,
    params: Mapping[str, Tensor],
    config: EncoderConfig,
    rng: np.random.Generator | None = None,
) -> Tensor:
    h0 = ad.dropout(embed_nodes(batch, params), config.dropout_rate, rng)
    gnn = ad.spmm(batch.pool, message_passing(h0, batch, params, config.gnn_layers))
    att = attention(h0, batch, params, config.attn_heads, config.dropout_rate, rng)
    return ad.concat([gnn, att], axis=-1)


def _arrays_as_constants(params: EncoderParams) -> dict[str, Tensor]:
    return {k: Tensor(v) for k, v in params.arrays.items()}


def encode_batch(
    graphs: Sequence[ComputeGraph],
    params: EncoderParams,
    dropout_seed: int | None = None,
    chunk: int = 256,
) -> np.ndarray:
    """Embeddings for many graphs, shape (len(graphs), embed_dim)."""
    consts = _arrays_as_constants(params)
    out = []
    for start in range(0, len(graphs), chunk):
        part = graphs[start : start + chunk]
        rng = None if dropout_seed is None else np.random.default_rng([dropout_seed, start])
        out.append(encode_tensor(GraphBatch.from_graphs(part), consts, params.config, rng).data)
    return np.vstack(out) if out else np.zeros((0, params.config.embed_dim))


def encode(
    cg: ComputeGraph,
    params: EncoderParams,
    config: EncoderConfig | None = None,
    dropout_seed: int | None = None,
) -> np.ndarray:
    """Embedding of one graph. ``dropout_seed=None`` is inference mode (no dropout)."""
    if config is not None and config != params.config:
        params = EncoderParams(config, params.arrays, params.flops_stats)
    return encode_batch([cg], params, dropout_seed)[0]


# --------------------------------------------------------------------------- projection and loss


def project_tensor(h: Tensor, params: Mapping[str, Tensor]) -> Tensor:
    raw = nn.mlp(h, params, "proj", 2)
    norms = np.sqrt((raw.data * raw.data).sum(axis=-1))
    if np.any(norms < 1e-12):
        raise DegenerateProjection("projection vector has (near-)zero norm")
    return ad.l2_normalize(raw, axis=-1)


def project(h: np.ndarray, params: EncoderParams) -> np.ndarray:
    h = np.asarray(h, dtype=float)
    if not np.all(np.isfinite(h)):
        raise ValueError("embedding must be finite")
    return project_tensor(Tensor(h), _arrays_as_constants(params)).data


def similarity(z_i: np.ndarray, z_j: np.ndarray, temperature: float) -> float:
    return float(np.dot(z_i, z_j) / temperature)


def cl_loss_tensor(z: Tensor, alphas: np.ndarray, temperature: float) -> Tensor:
    """-sum_i sum_{l != i} alpha[i, l] * log softmax_{r != i}(sim(z_i, z_r))[l]."""
    n = z.shape[0]
    sims = (z @ ad.transpose(z)) * (1.0 / temperature)
    off_diag = ~np.eye(n, dtype=bool)
    log_norm = ad.logsumexp(sims, axis=1, mask=off_diag)
    log_prob = sims - ad.reshape(log_norm, (n, 1))
    weights = np.where(off_diag, alphas, 0.0)
    return -ad.tsum(log_prob * weights)


def cl_loss(projections: np.ndarray, alphas: np.ndarray, temperature: float) -> tuple[float, np.ndarray]:
    """Loss value and its gradient with respect to the projections."""
    z = ad.parameter(projections)
    loss = cl_loss_tensor(z, np.asarray(alphas, dtype=float), temperature)
    loss.backward()
    return loss.item() + 0.0, z.grad  # normalizes -0.0


def batch_alphas(signatures: np.ndarray, sign: int) -> np.ndarray:
    """Alpha rows for a 2N batch where views i and i+N share a signature."""
    return alpha_matrix(np.vstack([signatures, signatures]), sign)


# --------------------------------------------------------------------------- training


def _flops_targets(graphs: Sequence[ComputeGraph]) -> tuple[np.ndarray, tuple[float, float]]:
    logf = np.log(np.array([compute_flops(g) for g in graphs]) + 1e-12)
    mu, sd = float(logf.mean()), float(logf.std())
    sd = sd if sd > 1e-12 else 1.0
    return (logf - mu) / sd, (mu, sd)


def batch_objective(
    batch: GraphBatch,
    params: Mapping[str, Tensor],
    config: EncoderConfig,
    signatures: np.ndarray,
    flops_targets: np.ndarray,
    seed_seq: Sequence[int],
) -> tuple[Tensor, float, float]:
    """Normalized contrastive loss plus weighted FLOPs regression for one batch."""
    views = [
        encode_tensor(batch, params, config, np.random.default_rng([*seed_seq, v])) for v in (0, 1)
    ]
    h = ad.concat(views, axis=0)
    z = project_tensor(h, params)
    n2 = z.shape[0]
    cl = cl_loss_tensor(z, batch_alphas(signatures, config.alpha_sign), config.temperature)
    total = cl * (1.0 / n2)
    aux_value = 0.0
    if config.aux_flops_weight > 0:
        pred = ad.reshape(nn.mlp(h, params, "aux", 2), (n2,))
        target = np.concatenate([flops_targets, flops_targets])
        aux = ad.tmean(ad.square(pred - target))
        aux_value = aux.item()
        total = total + aux * config.aux_flops_weight
    return total, cl.item(), aux_value


def train_encoder(
    dataset: Sequence[ComputeGraph],
    config: EncoderConfig = EncoderConfig(),
    signatures: np.ndarray | None = None,
    progress: Callable[[str], None] | None = None,
) -> tuple[EncoderParams, list[dict]]:
    """Fit encoder weights; returns the params and a per-epoch log.

    Log entry 0 is the loss of the initial weights over the epoch-1 batches;
    entry k (k >= 1) is the mean training loss during epoch k.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    graphs = list(dataset)
    if signatures is None:
        signatures = np.array([signature(g, config.q) for g in graphs])
    signatures = np.asarray(signatures, dtype=float)
    feats = [node_features(g) for g in graphs]
    targets, flops_stats = _flops_targets(graphs)
    result = init_params(config)
    result.flops_stats = flops_stats
    params = result.tensors()
    trainable = [p for k, p in params.items() if config.aux_flops_weight > 0 or not k.startswith("aux.")]
    opt = nn.Adam(trainable, lr=config.lr)
    order_rng = np.random.default_rng([config.seed, 1])
    n = len(graphs)
    log: list[dict] = []
    batch_counter = 0
    orders = [order_rng.permutation(n) for _ in range(config.epochs)]

    def batches(order):
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            if len(idx) < 2:
                continue
            yield idx, GraphBatch.from_graphs([graphs[i] for i in idx], [feats[i] for i in idx])

    if config.epochs > 0:
        vals = []
        for bi, (idx, batch) in enumerate(batches(orders[0])):
            total, cl, aux = batch_objective(batch, params, config, signatures[idx], targets[idx], (config.seed, 0, bi))
            vals.append((total.item(), cl, aux))
        log.append(_epoch_entry(0, vals))
    for epoch in range(1, config.epochs + 1):
        vals = []
        for bi, (idx, batch) in enumerate(batches(orders[epoch - 1])):
            total, cl, aux = batch_objective(
                batch, params, config, signatures[idx], targets[idx], (config.seed, epoch, bi)
            )
            if not np.isfinite(total.item()):
                raise NonFiniteLoss(batch_counter, total.item())
            opt.zero_grad()
            total.backward()
            opt.step()
            vals.append((total.item(), cl, aux))
            batch_counter += 1
        log.append(_epoch_entry(epoch, vals))
        if progress:
            progress(f"encoder epoch {epoch}/{config.epochs} loss {log[-1]['loss']:.5f}")
    result.arrays = nn.to_arrays(params)
    return result, log


def _epoch_entry(epoch: int, vals: list[tuple[float, float, float]]) -> dict:
    arr = np.array(vals) if vals else np.zeros((1, 3))
    return {"epoch": epoch, "loss": float(arr[:, 0].mean()), "cl": float(arr[:, 1].mean()), "aux": float(arr[:, 2].mean())}


def save_params(path, params: EncoderParams) -> None:
    arrays, meta = params.to_container()
    container.save(path, container.with_prefix("encoder", arrays), {"encoder": meta})


def load_params(path) -> EncoderParams:
    arrays, meta = container.load(path)
    return EncoderParams.from_container(container.section("encoder", arrays), meta["encoder"])


def with_config(params: EncoderParams, **changes) -> EncoderParams:
    return EncoderParams(replace(params.config, **changes), params.arrays, params.flops_stats)
