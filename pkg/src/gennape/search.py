"""Mutation-based local search over computation graphs."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import EmptyFrontier, ValidationError
from .graph import MERGE_KINDS, ComputeGraph, NodeAttrs, OpKind, TensorShape, build_graph, compute_flops, structure_key

MAX_TRIES = 20
ACTIVATIONS = (OpKind.RELU, OpKind.SWISH, OpKind.SIGMOID, OpKind.TANH)
VOCABULARY = (
    OpKind.CONV2D,
    OpKind.DEPTHWISE_CONV2D,
    OpKind.BATCH_NORM,
    *ACTIVATIONS,
    OpKind.MAX_POOL,
    OpKind.AVG_POOL,
    OpKind.IDENTITY,
    OpKind.LINEAR,
    OpKind.GLOBAL_AVG_POOL,
)
SPATIAL_KINDS = frozenset({OpKind.CONV2D, OpKind.DEPTHWISE_CONV2D, OpKind.MAX_POOL, OpKind.AVG_POOL})

Predictor = Callable[[Sequence[ComputeGraph]], np.ndarray]


@dataclass(frozen=True)
class SearchConfig:
    iterations: int = 6
    top_k: int = 8
    mutations_per_parent: int = 16
    flops_budget: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        if self.top_k < 1 or self.mutations_per_parent < 0:
            raise ValueError("top_k must be positive and mutations_per_parent non-negative")


@dataclass
class Candidate:
    graph: ComputeGraph
    predicted: float
    flops: float


@dataclass
class SearchResult:
    best: Candidate
    frontier: list[Candidate]
    trajectory: list[dict] = field(default_factory=list)


# --------------------------------------------------------------------------- mutation


def _stride(src: TensorShape, dst: TensorShape) -> int | None:
    for s in range(1, max(src.height, src.width) + 1):
        if -(-src.height // s) == dst.height and -(-src.width // s) == dst.width:
            return s
    return None


def _chain_paths(cg: ComputeGraph) -> list[int]:
    """Nodes that may start a replaceable path: single-in, single-out, not I/O or merge."""
    preds, succs = cg.predecessors, cg.successors
    return [
        i
        for i, nd in enumerate(cg.nodes)
        if nd.kind not in (OpKind.INPUT, OpKind.OUTPUT) and nd.kind not in MERGE_KINDS
        and len(preds[i]) == 1 and len(succs[i]) == 1
    ]


def _extend(cg: ComputeGraph, start: int, length: int, eligible: set[int]) -> list[int]:
    path = [start]
    while len(path) < length:
        nxt = cg.successors[path[-1]][0]
        if nxt not in eligible:
            break
        path.append(nxt)
    return path


def _make_node(kind: OpKind, si: TensorShape, so: TensorShape, rng: np.random.Generator) -> NodeAttrs:
    if kind == OpKind.CONV2D:
        k = int(rng.choice([1, 3, 5]))
        return NodeAttrs(kind, si, so, (k, k, si.channels, so.channels))
    if kind == OpKind.DEPTHWISE_CONV2D:
        k = int(rng.choice([3, 5]))
        return NodeAttrs(kind, si, so, (k, k, si.channels, 1))
    if kind == OpKind.LINEAR:
        return NodeAttrs(kind, si, so, (si.channels, so.channels), has_bias=True)
    return NodeAttrs(kind, si, so)


def sample_chain(in_shape: TensorShape, out_shape: TensorShape, length: int, rng: np.random.Generator) -> list[NodeAttrs] | None:
    """A chain of ``length`` ops mapping in_shape to out_shape, or None if the draw is infeasible."""
    kinds = [VOCABULARY[int(i)] for i in rng.integers(0, len(VOCABULARY), size=length)]
    spatial = (in_shape.height, in_shape.width) != (out_shape.height, out_shape.width)
    channels = in_shape.channels != out_shape.channels
    gap = spatial and (out_shape.height, out_shape.width) == (1, 1)
    flat = (in_shape.height, in_shape.width, out_shape.height, out_shape.width) == (1, 1, 1, 1)

    def can_change(kind: OpKind) -> bool:
        if kind == OpKind.GLOBAL_AVG_POOL:
            return gap and not channels
        if kind == OpKind.LINEAR:
            return flat
        if kind == OpKind.CONV2D:
            return True
        if kind in SPATIAL_KINDS:
            return not channels
        return not (spatial or channels)

    def can_keep(kind: OpKind, shp: TensorShape) -> bool:
        if kind == OpKind.GLOBAL_AVG_POOL:
            return (shp.height, shp.width) == (1, 1)
        if kind == OpKind.LINEAR:
            return (shp.height, shp.width) == (1, 1)
        return True

    if not (spatial or channels):
        changer = None
    else:
        slots = [i for i, k in enumerate(kinds) if can_change(k)]
        if not slots:
            return None
        changer = slots[int(rng.integers(0, len(slots)))]
    stride = _stride(in_shape, out_shape) if spatial else 1
    if stride is None:
        return None
    chain = []
    cur = in_shape
    for i, kind in enumerate(kinds):
        if i == changer:
            nxt = out_shape
        else:
            if not can_keep(kind, cur):
                return None
            nxt = cur
        chain.append(_make_node(kind, cur, nxt, rng))
        cur = nxt
    return chain


def replace_path(cg: ComputeGraph, path: Sequence[int], chain: Sequence[NodeAttrs]) -> ComputeGraph:
    """Swap the linear path ``path`` for ``chain`` and revalidate the result."""
    removed = set(path)
    keep = [i for i in range(cg.n) if i not in removed]
    remap = {old: new for new, old in enumerate(keep)}
    nodes = [cg.nodes[i] for i in keep] + list(chain)
    first = len(keep)
    edges = [(remap[s], remap[d]) for s, d in cg.edges if s not in removed and d not in removed]
    pred = remap[cg.predecessors[path[0]][0]]
    succ = remap[cg.successors[path[-1]][0]]
    ids = list(range(first, first + len(chain)))
    edges.append((pred, ids[0]))
    edges.extend(zip(ids[:-1], ids[1:]))
    edges.append((ids[-1], succ))
    return build_graph(nodes, edges, cg.name)


def mutate(cg: ComputeGraph, rng: np.random.Generator) -> ComputeGraph:
    """Replace a random 1-3 op path with a fresh shape-compatible 1-3 op chain.

    Returns ``cg`` itself when 20 consecutive draws are infeasible.
    """
    starts = _chain_paths(cg)
    if not starts:
        return cg
    eligible = set(starts)
    for _ in range(MAX_TRIES):
        start = starts[int(rng.integers(0, len(starts)))]
        path = _extend(cg, start, int(rng.integers(1, 4)), eligible)
        in_shape = cg.nodes[path[0]].input_shape
        out_shape = cg.nodes[path[-1]].output_shape
        chain = sample_chain(in_shape, out_shape, int(rng.integers(1, 4)), rng)
        if chain is None:
            continue
        try:
            return replace_path(cg, path, chain)
        except ValidationError:
            continue
    return cg


# --------------------------------------------------------------------------- local search


def _rank_key(c: Candidate, order: int):
    return (-c.predicted, c.flops, order)


def local_search(seed_cg: ComputeGraph, predictor: Predictor, config: SearchConfig = SearchConfig()) -> SearchResult:
    """Elitist top-k local search; FLOPs break score ties and cap candidates when budgeted."""
    budget = config.flops_budget
    seed_flops = compute_flops(seed_cg)
    if budget is not None and seed_flops > budget:
        raise EmptyFrontier(f"seed graph uses {seed_flops:.6g} GFLOPs, above the budget {budget:.6g}")
    seed_score = float(np.asarray(predictor([seed_cg]), dtype=float)[0])
    frontier = [Candidate(seed_cg, seed_score, seed_flops)]
    seen = {structure_key(seed_cg)}
    trajectory = [{"iter": 0, "name": seed_cg.name, "score": seed_score, "flops_g": seed_flops, "kept": True}]
    for it in range(1, config.iterations + 1):
        children: list[ComputeGraph] = []
        for pi, parent in enumerate(frontier):
            for mi in range(config.mutations_per_parent):
                rng = np.random.default_rng([config.seed, it, pi, mi])
                child = mutate(parent.graph, rng)
                key = structure_key(child)
                if key in seen:
                    continue
                seen.add(key)
                children.append(child.renamed(f"{seed_cg.name}/i{it}p{pi}m{mi}"))
        if not children:
            continue
        scores = np.asarray(predictor(children), dtype=float)
        cands = [Candidate(g, float(s), compute_flops(g)) for g, s in zip(children, scores)]
        pool = [(c, i) for i, c in enumerate(frontier + cands) if budget is None or c.flops <= budget]
        pool.sort(key=lambda t: _rank_key(*t))
        kept = pool[: config.top_k]
        kept_ids = {id(c) for c, _ in kept}
        frontier = [c for c, _ in kept]
        for c in cands:
            trajectory.append(
                {"iter": it, "name": c.graph.name, "score": c.predicted, "flops_g": c.flops, "kept": id(c) in kept_ids}
            )
    return SearchResult(frontier[0], frontier, trajectory)


def write_trajectory(path: str | Path, trajectory: Sequence[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in trajectory:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
