"""Synthetic architecture families and a deterministic accuracy oracle.

Four generators build computation graphs following the backbone rules of
NAS-Bench-101-style cells, HiAML, Inception and Two-Path networks. Blocks in
the three block-structured families end in an ``identity`` marker node, which
is what :func:`block_segments` uses to recover the block structure.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import GenerationExhausted
from .graph import (
    OP_KINDS,
    ComputeGraph,
    NodeAttrs,
    OpKind,
    TensorShape,
    build_graph,
    compute_flops,
    graph_from_dict,
    graph_to_dict,
    longest_path_length,
    structure_key,
)
from .spectral import signature


class FamilyKind(str, enum.Enum):
    NB101_LIKE = "nb101_like"
    HIAML_LIKE = "hiaml_like"
    INCEPTION_LIKE = "inception_like"
    TWOPATH_LIKE = "twopath_like"


FAMILY_IDS = {k: i for i, k in enumerate(FamilyKind)}
IMAGE = TensorShape(32, 32, 3)
NUM_CLASSES = 10
HIAML_LIBRARY_SEED = 14
HIAML_LIBRARY_SIZE = 14

CONV_OPS = ("conv3x3", "conv5x5", "dwsep3x3", "dwsep5x5", "mbconv3")
SUPP_OPS = ("conv1x1", "maxpool3x3", "avgpool3x3")
HIAML_OPS = ("conv3x3", "conv1x1", "dwsep3x3", "conv5x5")
NB101_OPS = ("conv3x3", "conv1x1", "maxpool3x3")


# --------------------------------------------------------------------------- graph assembly


class _Builder:
    def __init__(self, image: TensorShape = IMAGE):
        self.nodes: list[NodeAttrs] = [NodeAttrs(OpKind.INPUT, image, image)]
        self.edges: list[tuple[int, int]] = []

    def shape_of(self, idx: int) -> TensorShape:
        return self.nodes[idx].output_shape

    def add(self, kind: OpKind, preds: Sequence[int], out: TensorShape, weight=None, bias=False) -> int:
        if kind == OpKind.CONCAT:
            first = self.shape_of(preds[0])
            in_shape = TensorShape(first.height, first.width, sum(self.shape_of(p).channels for p in preds))
        else:
            in_shape = self.shape_of(preds[0])
        self.nodes.append(NodeAttrs(kind, in_shape, out, weight, bias))
        idx = len(self.nodes) - 1
        self.edges.extend((p, idx) for p in preds)
        return idx

    def unary(self, kind: OpKind, src: int) -> int:
        return self.add(kind, [src], self.shape_of(src))

    def conv(self, src: int, k: int, out_c: int, stride: int = 1, bias: bool = False) -> int:
        s = self.shape_of(src)
        out = TensorShape(-(-s.height // stride), -(-s.width // stride), out_c)
        return self.add(OpKind.CONV2D, [src], out, (k, k, s.channels, out_c), bias)

    def depthwise(self, src: int, k: int, stride: int = 1) -> int:
        s = self.shape_of(src)
        out = TensorShape(-(-s.height // stride), -(-s.width // stride), s.channels)
        return self.add(OpKind.DEPTHWISE_CONV2D, [src], out, (k, k, s.channels, 1))

    def pool(self, src: int, kind: OpKind, stride: int = 1) -> int:
        s = self.shape_of(src)
        return self.add(kind, [src], TensorShape(-(-s.height // stride), -(-s.width // stride), s.channels))

    def conv_bn_act(self, src: int, k: int, out_c: int, stride: int = 1, act=OpKind.RELU) -> int:
        x = self.unary(OpKind.BATCH_NORM, self.conv(src, k, out_c, stride))
        return self.unary(act, x) if act is not None else x

    def merge(self, kind: OpKind, preds: Sequence[int]) -> int:
        if len(preds) == 1:
            return preds[0]
        if kind == OpKind.CONCAT:
            first = self.shape_of(preds[0])
            out = TensorShape(first.height, first.width, sum(self.shape_of(p).channels for p in preds))
            return self.add(OpKind.CONCAT, preds, out)
        return self.add(kind, preds, self.shape_of(preds[0]))

    def marker(self, src: int) -> int:
        return self.unary(OpKind.IDENTITY, src)

    def operator(self, src: int, op: str, out_c: int, stride: int = 1) -> int:
        """Emit a bundle of primitive ops (e.g. Conv3x3-BN-ReLU) mapping src to (H/stride, out_c)."""
        cin = self.shape_of(src).channels
        if op in ("conv1x1", "conv3x3", "conv5x5"):
            return self.conv_bn_act(src, int(op[-1]), out_c, stride)
        if op in ("dwsep3x3", "dwsep5x5"):
            x = self.unary(OpKind.RELU, self.unary(OpKind.BATCH_NORM, self.depthwise(src, int(op[-1]), stride)))
            return self.conv_bn_act(x, 1, out_c)
        if op == "mbconv3":
            x = self.conv_bn_act(src, 1, 3 * cin, act=OpKind.SWISH)
            x = self.unary(OpKind.SWISH, self.unary(OpKind.BATCH_NORM, self.depthwise(x, 3, stride)))
            return self.conv_bn_act(x, 1, out_c, act=None)
        if op in ("maxpool3x3", "avgpool3x3"):
            kind = OpKind.MAX_POOL if op.startswith("max") else OpKind.AVG_POOL
            x = self.pool(src, kind, stride)
            return self.conv_bn_act(x, 1, out_c) if out_c != cin else x
        raise ValueError(f"unknown operator {op!r}")

    def head(self, src: int) -> int:
        g = self.add(OpKind.GLOBAL_AVG_POOL, [src], TensorShape(1, 1, self.shape_of(src).channels))
        c = self.shape_of(g).channels
        fc = self.add(OpKind.LINEAR, [g], TensorShape(1, 1, NUM_CLASSES), (c, NUM_CLASSES), True)
        return self.add(OpKind.OUTPUT, [fc], self.shape_of(fc))

    def build(self, name: str) -> ComputeGraph:
        return build_graph(self.nodes, self.edges, name)


def _sample_dag(rng: np.random.Generator, n_ops: int, extra_edge_p: float, max_edges: int | None = None):
    """Random DAG over vertices 0 (input), 1..n_ops, n_ops+1 (output) with every vertex on a path."""
    out_v = n_ops + 1
    edges = set()
    for j in range(1, n_ops + 1):
        edges.add((int(rng.integers(0, j)), j))
    for j in range(1, out_v + 1):
        for i in range(0, j):
            if (i, j) not in edges and not (i == 0 and j == out_v) and rng.random() < extra_edge_p:
                if max_edges is None or len(edges) < max_edges:
                    edges.add((i, j))
    for i in range(1, n_ops + 1):
        if not any(s == i for s, _ in edges):
            edges.add((i, out_v))
    return sorted(edges)


# --------------------------------------------------------------------------- nb101_like


def _nb101_graph(rng: np.random.Generator, name: str) -> ComputeGraph:
    n_ops = int(rng.integers(1, 6))
    ops = [NB101_OPS[int(rng.integers(0, 3))] for _ in range(n_ops)]
    dag = _sample_dag(rng, n_ops, 0.25, max_edges=9)
    b = _Builder()
    x = b.conv_bn_act(0, 3, 128)
    for stack in range(3):
        channels = 128 * 2**stack
        if stack:
            x = b.pool(x, OpKind.MAX_POOL, 2)
            x = b.conv_bn_act(x, 1, channels)
        x = _nb101_cell(b, x, ops, dag, channels)
    b.head(x)
    return b.build(name)


def _nb101_cell(b: _Builder, src: int, ops: list[str], dag, channels: int) -> int:
    out_v = len(ops) + 1
    value = {0: src}
    for v in range(1, out_v + 1):
        preds = [value[s] for s, d in dag if d == v]
        if v == out_v:
            merged = b.merge(OpKind.CONCAT, preds)
            return b.conv_bn_act(merged, 1, channels) if len(preds) > 1 else merged
        x = b.merge(OpKind.ADD, preds)
        value[v] = b.operator(x, ops[v - 1], channels)
    raise AssertionError("unreachable")


# --------------------------------------------------------------------------- hiaml_like


@dataclass(frozen=True)
class BlockTemplate:
    ops: tuple[str, ...]
    dag: tuple[tuple[int, int], ...]  # over 0=in, 1..k ops, k+1=out


def hiaml_block_library() -> list[BlockTemplate]:
    """The fixed 14-template block library: seeded DAGs of up to 4 operators."""
    rng = np.random.default_rng(HIAML_LIBRARY_SEED)
    lib: list[BlockTemplate] = []
    seen = set()
    while len(lib) < HIAML_LIBRARY_SIZE:
        k = int(rng.integers(1, 5))
        ops = tuple(HIAML_OPS[int(rng.integers(0, len(HIAML_OPS)))] for _ in range(k))
        dag = _sample_dag(rng, k, 0.3)
        # an operator reads either the block input alone or other operators only
        dag = [(s, d) for s, d in dag if not (s == 0 and any(s2 != 0 and d2 == d for s2, d2 in dag))]
        tmpl = BlockTemplate(ops, tuple(dag))
        if tmpl not in seen:
            seen.add(tmpl)
            lib.append(tmpl)
    return lib


def _dag_block(b: _Builder, src: int, tmpl: BlockTemplate, channels: int, stride: int) -> int:
    """Instantiate a template; operators fed by the block input do the stride and channel change."""
    out_v = len(tmpl.ops) + 1
    value = {0: src}
    for v in range(1, out_v + 1):
        preds = [value[s] for s, d in tmpl.dag if d == v]
        if v == out_v:
            return b.marker(b.merge(OpKind.ADD, preds))
        if preds == [src]:
            value[v] = b.operator(src, tmpl.ops[v - 1], channels, stride)
        else:
            value[v] = b.operator(b.merge(OpKind.ADD, preds), tmpl.ops[v - 1], channels)
    raise AssertionError("unreachable")


_LIBRARY_CACHE: list[BlockTemplate] = []


def _hiaml_graph(rng: np.random.Generator, name: str) -> ComputeGraph:
    if not _LIBRARY_CACHE:
        _LIBRARY_CACHE.extend(hiaml_block_library())
    b = _Builder()
    x = b.marker(b.conv_bn_act(0, 3, 32, stride=2))
    channels = 32
    for stage in range(4):
        tmpl = _LIBRARY_CACHE[int(rng.integers(0, HIAML_LIBRARY_SIZE))]
        reduce = stage in (1, 3)
        if reduce:
            channels *= 2
        for rep in range(2):
            x = _dag_block(b, x, tmpl, channels, 2 if (reduce and rep == 0) else 1)
    b.head(x)
    return b.build(name)


# --------------------------------------------------------------------------- inception_like


def _sample_path_ops(rng: np.random.Generator) -> list[str]:
    length = int(rng.integers(1, 5))
    n_supp = 0 if length == 1 else int(rng.integers(0, 2))
    ops = [CONV_OPS[int(rng.integers(0, len(CONV_OPS)))] for _ in range(length - n_supp)]
    ops += [SUPP_OPS[int(rng.integers(0, len(SUPP_OPS)))] for _ in range(n_supp)]
    ops = [ops[i] for i in rng.permutation(len(ops))]
    if ops[0] in ("maxpool3x3", "avgpool3x3"):
        ops[0], ops[1] = ops[1], ops[0]
    return ops


def _inception_block(b: _Builder, src: int, paths: list[list[str]], channels: int, stride: int) -> int:
    widths = [channels // len(paths)] * len(paths)
    widths[0] += channels - sum(widths)
    ends = []
    for ops, width in zip(paths, widths):
        x = b.operator(src, ops[0], width, stride)
        for op in ops[1:]:
            x = b.operator(x, op, width)
        ends.append(x)
    first = b.shape_of(ends[0])
    cat = b.add(OpKind.CONCAT, ends, TensorShape(first.height, first.width, channels))
    return b.marker(cat)


def _inception_graph(rng: np.random.Generator, name: str) -> ComputeGraph:
    b = _Builder()
    x = b.marker(b.conv_bn_act(0, 3, 32))
    channels = 32
    for _stage in range(3):
        n_paths = int(rng.integers(1, 5))
        paths = [_sample_path_ops(rng) for _ in range(n_paths)]
        n_blocks = int(rng.integers(2, 5))
        channels *= 2
        for rep in range(n_blocks):
            x = _inception_block(b, x, paths, channels, 2 if rep == 0 else 1)
    b.head(x)
    return b.build(name)


# --------------------------------------------------------------------------- twopath_like


def _twopath_graph(rng: np.random.Generator, name: str) -> ComputeGraph:
    b = _Builder()
    x = b.conv_bn_act(0, 3, 32)
    stem = b.marker(b.conv_bn_act(x, 3, 32, stride=2))
    ends = []
    for _path in range(2):
        n_blocks = int(rng.integers(2, 5))
        reducing = set(rng.choice(n_blocks, size=2, replace=False).tolist())
        channels = 32
        y = stem
        for blk in range(n_blocks):
            ops = [
                (CONV_OPS + SUPP_OPS)[int(rng.integers(0, len(CONV_OPS) + len(SUPP_OPS)))]
                for _ in range(int(rng.integers(1, 4)))
            ]
            stride = 1
            if blk in reducing:
                stride = 2
                channels *= 2
            y = b.operator(y, ops[0], channels, stride)
            for op in ops[1:]:
                y = b.operator(y, op, channels)
            y = b.marker(y)
        ends.append(y)
    merged = b.merge(OpKind.CONCAT, ends)
    b.head(merged)
    return b.build(name)


_GENERATORS = {
    FamilyKind.NB101_LIKE: _nb101_graph,
    FamilyKind.HIAML_LIKE: _hiaml_graph,
    FamilyKind.INCEPTION_LIKE: _inception_graph,
    FamilyKind.TWOPATH_LIKE: _twopath_graph,
}


def generate(kind: FamilyKind | str, n: int, seed: int) -> list[ComputeGraph]:
    """n distinct graphs of the given family, deterministic in (kind, n, seed)."""
    kind = FamilyKind(kind)
    if n < 1:
        raise ValueError("n must be at least 1")
    make = _GENERATORS[kind]
    fid = FAMILY_IDS[kind]
    graphs: list[ComputeGraph] = []
    seen: set[bytes] = set()
    attempts = 0
    while len(graphs) < n:
        if attempts >= 100 * n:
            raise GenerationExhausted(f"{kind.value}: only {len(graphs)} unique graphs after {attempts} samples")
        idx = len(graphs)
        rng = np.random.default_rng([seed, fid, idx, attempts])
        attempts += 1
        cg = make(rng, f"{kind.value}-{seed}-{idx:05d}")
        key = structure_key(cg)
        if key in seen:
            continue
        seen.add(key)
        graphs.append(cg)
    return graphs


# --------------------------------------------------------------------------- structure predicates


def block_segments(cg: ComputeGraph) -> list[list[int]]:
    """Node indices of each block, split at identity marker nodes (markers excluded).

    The segment before the first marker (input and stem) and the one after the
    last marker (the head) are not blocks and are dropped.
    """
    markers = [i for i, nd in enumerate(cg.nodes) if nd.kind == OpKind.IDENTITY]
    return [list(range(a + 1, b)) for a, b in zip(markers[:-1], markers[1:])]


def block_pattern(cg: ComputeGraph, segment: Sequence[int]) -> tuple:
    """Kind sequence plus edges relative to the block start; shapes ignored."""
    start = segment[0]
    members = set(segment)
    kinds = tuple(cg.nodes[i].kind.value for i in segment)
    edges = []
    for s, d in cg.edges:
        if d in members:
            edges.append((s - start if s in members else -1, d - start))
    return kinds, tuple(sorted(edges))


def hiaml_stages(cg: ComputeGraph) -> list[list[list[int]]]:
    segs = block_segments(cg)
    return [segs[i : i + 2] for i in range(0, len(segs), 2)]


def is_hiaml_structure(cg: ComputeGraph) -> bool:
    """4 stages of exactly 2 structurally identical blocks."""
    segs = block_segments(cg)
    if len(segs) != 8:
        return False
    return all(block_pattern(cg, segs[2 * s]) == block_pattern(cg, segs[2 * s + 1]) for s in range(4))


def count_backbone_paths(cg: ComputeGraph) -> int:
    """Number of block paths leaving the stem marker; 1 for a sequential backbone."""
    first_marker = next(i for i, nd in enumerate(cg.nodes) if nd.kind == OpKind.IDENTITY)
    return len(cg.successors[first_marker])


def is_twopath_structure(cg: ComputeGraph) -> bool:
    """Two block paths that leave the stem marker and meet only at one concat merge."""
    first_marker = next(i for i, nd in enumerate(cg.nodes) if nd.kind == OpKind.IDENTITY)
    if len(cg.successors[first_marker]) != 2:
        return False
    merges = [
        i for i, nd in enumerate(cg.nodes)
        if nd.kind == OpKind.CONCAT and all(cg.nodes[p].kind == OpKind.IDENTITY for p in cg.predecessors[i])
    ]
    if len(merges) != 1 or len(cg.predecessors[merges[0]]) != 2:
        return False
    # each path is a chain of blocks: no other multi-input nodes between stem and merge
    between = [i for i in range(first_marker + 1, merges[0]) if len(cg.predecessors[i]) > 1]
    return not between


def inception_paths_per_block(cg: ComputeGraph) -> list[int]:
    out = []
    for seg in block_segments(cg):
        cat = [i for i in seg if cg.nodes[i].kind == OpKind.CONCAT]
        out.append(len(cg.predecessors[cat[-1]]) if cat else 1)
    return out


# --------------------------------------------------------------------------- accuracy oracle


@dataclass(frozen=True)
class OracleConfig:
    depth_weight: float = 0.0
    log_flops_weight: float = 0.0
    fiedler_weight: float = 0.0
    op_weights: dict[str, float] = field(default_factory=dict)
    bias: float = 0.0
    noise_std: float = 0.0
    lo: float = 0.0
    hi: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.lo < self.hi <= 1.0):
            raise ValueError("oracle range must satisfy 0 <= lo < hi <= 1")
        for k in self.op_weights:
            OpKind(k)

    def to_dict(self) -> dict:
        return asdict(self)


def oracle_features(cg: ComputeGraph) -> dict[str, float | dict[str, float]]:
    sig = signature(cg, 2)
    counts = {k.value: 0 for k in OP_KINDS}
    for nd in cg.nodes:
        counts[nd.kind.value] += 1
    return {
        "depth": float(longest_path_length(cg)),
        "log_flops": math.log10(compute_flops(cg) + 1e-9),
        "fiedler": float(sig[1]) if cg.n > 1 else 0.0,
        "ops": {k: v / cg.n for k, v in counts.items()},
    }


def _graph_noise(cg: ComputeGraph, oracle: OracleConfig) -> float:
    if oracle.noise_std == 0:
        return 0.0
    digest = hashlib.sha256(structure_key(cg)).digest()
    rng = np.random.default_rng([oracle.seed, int.from_bytes(digest[:8], "little")])
    return float(rng.normal(0.0, oracle.noise_std))


def oracle_accuracy(cg: ComputeGraph, oracle: OracleConfig) -> float:
    """Logistic squash of a weighted feature sum plus per-graph noise, mapped into [lo, hi]."""
    f = oracle_features(cg)
    score = (
        oracle.bias
        + oracle.depth_weight * f["depth"]
        + oracle.log_flops_weight * f["log_flops"]
        + oracle.fiedler_weight * f["fiedler"]
        + sum(w * f["ops"][k] for k, w in oracle.op_weights.items())
        + _graph_noise(cg, oracle)
    )
    squashed = 0.5 * (1.0 + math.tanh(0.5 * score))
    return oracle.lo + (oracle.hi - oracle.lo) * squashed


# --------------------------------------------------------------------------- datasets


@dataclass(frozen=True)
class DatasetRecord:
    graph: ComputeGraph
    accuracy: float
    flops_g: float


def record_to_line(rec: DatasetRecord) -> str:
    return json.dumps(
        {"graph": graph_to_dict(rec.graph), "accuracy": rec.accuracy, "flops_g": rec.flops_g},
        separators=(",", ":"),
    )


def write_dataset(path: str | Path, records: Sequence[DatasetRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(record_to_line(rec) + "\n")


def read_dataset(path: str | Path) -> list[DatasetRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                out.append(DatasetRecord(graph_from_dict(obj["graph"]), float(obj["accuracy"]), float(obj["flops_g"])))
    return out


def build_dataset(
    kind: FamilyKind | str,
    n: int,
    oracle: OracleConfig,
    seed: int,
    path: str | Path | None = None,
) -> list[DatasetRecord]:
    kind = FamilyKind(kind)
    records = [DatasetRecord(g, oracle_accuracy(g, oracle), compute_flops(g)) for g in generate(kind, n, seed)]
    if path is not None:
        write_dataset(path, records)
        manifest = {"kind": kind.value, "n": n, "seed": seed, "oracle": oracle.to_dict()}
        Path(str(path) + ".manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return records


# One shared labeling rule; families differ only in centering, range and seed.
_SHARED_WEIGHTS = dict(
    depth_weight=0.03,
    log_flops_weight=2.0,
    fiedler_weight=100.0,
    op_weights={"conv2d": 8.0, "max_pool": -4.0},
    noise_std=0.2,
)
_FAMILY_ORACLES = {
    FamilyKind.NB101_LIKE: dict(bias=-3.27, lo=0.80, hi=0.9409, seed=101),
    FamilyKind.HIAML_LIKE: dict(bias=-1.68, lo=0.9111, hi=0.9344, seed=202),
    FamilyKind.INCEPTION_LIKE: dict(bias=-5.23, lo=0.8, hi=0.95, seed=303),
    FamilyKind.TWOPATH_LIKE: dict(bias=-0.34, lo=0.8, hi=0.93, seed=404),
}


def default_oracle(kind: FamilyKind | str) -> OracleConfig:
    return OracleConfig(**_SHARED_WEIGHTS, **_FAMILY_ORACLES[FamilyKind(kind)])
