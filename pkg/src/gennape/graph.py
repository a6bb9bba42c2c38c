"""Computation-graph IR: atomic operator nodes with HWC shape annotations.

A :class:`ComputeGraph` is only ever produced by :func:`build_graph` (or
:func:`deserialize`, which goes through it), so every instance in circulation
is validated and stored in canonical node order: topological, ties broken by
the original index.
"""

from __future__ import annotations

import enum
import heapq
import json
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Any, Iterable, Sequence

import numpy as np

from .errors import CycleError, ParseError, ShapeMismatch, TopologyError, ValidationError


class OpKind(str, enum.Enum):
    INPUT = "input"
    OUTPUT = "output"
    CONV2D = "conv2d"
    DEPTHWISE_CONV2D = "depthwise_conv2d"
    LINEAR = "linear"
    BATCH_NORM = "batch_norm"
    RELU = "relu"
    SWISH = "swish"
    SIGMOID = "sigmoid"
    TANH = "tanh"
    MAX_POOL = "max_pool"
    AVG_POOL = "avg_pool"
    GLOBAL_AVG_POOL = "global_avg_pool"
    ADD = "add"
    CONCAT = "concat"
    MEAN = "mean"
    IDENTITY = "identity"


OP_KINDS: tuple[OpKind, ...] = tuple(OpKind)
WEIGHTED_KINDS = frozenset({OpKind.CONV2D, OpKind.DEPTHWISE_CONV2D, OpKind.LINEAR})
MERGE_KINDS = frozenset({OpKind.ADD, OpKind.MEAN, OpKind.CONCAT})
SHAPE_PRESERVING = frozenset(
    {
        OpKind.BATCH_NORM,
        OpKind.RELU,
        OpKind.SWISH,
        OpKind.SIGMOID,
        OpKind.TANH,
        OpKind.IDENTITY,
        OpKind.ADD,
        OpKind.MEAN,
        OpKind.CONCAT,
        OpKind.INPUT,
        OpKind.OUTPUT,
    }
)


@dataclass(frozen=True)
class TensorShape:
    height: int
    width: int
    channels: int

    def __post_init__(self):
        for v in (self.height, self.width, self.channels):
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1:
                raise ShapeMismatch(f"tensor dimensions must be positive integers, got {self.as_list()}")

    @property
    def numel(self) -> int:
        return self.height * self.width * self.channels

    def as_list(self) -> list[int]:
        return [self.height, self.width, self.channels]


@dataclass(frozen=True)
class NodeAttrs:
    kind: OpKind
    input_shape: TensorShape
    output_shape: TensorShape
    weight_shape: tuple[int, ...] | None = None
    has_bias: bool = False

    def __post_init__(self):
        if not isinstance(self.kind, OpKind):
            object.__setattr__(self, "kind", OpKind(self.kind))
        if self.weight_shape is not None:
            object.__setattr__(self, "weight_shape", tuple(int(d) for d in self.weight_shape))

    @property
    def weight_count(self) -> int:
        return math.prod(self.weight_shape) if self.weight_shape else 0


def shape(h: int, w: int, c: int) -> TensorShape:
    return TensorShape(h, w, c)


@dataclass(frozen=True)
class ComputeGraph:
    nodes: tuple[NodeAttrs, ...]
    edges: tuple[tuple[int, int], ...]
    name: str = ""

    @property
    def n(self) -> int:
        return len(self.nodes)

    @cached_property
    def predecessors(self) -> tuple[tuple[int, ...], ...]:
        preds: list[list[int]] = [[] for _ in self.nodes]
        for s, d in self.edges:
            preds[d].append(s)
        return tuple(tuple(p) for p in preds)

    @cached_property
    def successors(self) -> tuple[tuple[int, ...], ...]:
        succ: list[list[int]] = [[] for _ in self.nodes]
        for s, d in self.edges:
            succ[s].append(d)
        return tuple(tuple(p) for p in succ)

    @property
    def input_index(self) -> int:
        return 0

    @property
    def output_index(self) -> int:
        return self.n - 1

    def renamed(self, name: str) -> "ComputeGraph":
        return ComputeGraph(self.nodes, self.edges, name)


# --------------------------------------------------------------------------- validation


def _spatial_reduction_ok(src: TensorShape, dst: TensorShape) -> bool:
    """True if dst's spatial dims equal ceil(src / s) for one common stride s."""
    for s in range(1, max(src.height, src.width) + 1):
        if dst.height == -(-src.height // s) and dst.width == -(-src.width // s):
            return True
    return False


def _check_node(i: int, node: NodeAttrs) -> None:
    k, si, so = node.kind, node.input_shape, node.output_shape
    ws = node.weight_shape
    if (k in WEIGHTED_KINDS) != (ws is not None):
        raise ShapeMismatch(f"node {i} ({k.value}): weight_shape must be present iff the op has weights")
    if ws is None and node.has_bias:
        raise ShapeMismatch(f"node {i} ({k.value}): has_bias requires a weight tensor")
    if ws is not None and any(d < 1 for d in ws):
        raise ShapeMismatch(f"node {i}: weight dimensions must be positive")

    def fail(msg: str):
        raise ShapeMismatch(f"node {i} ({k.value}): {msg}; in={si.as_list()} out={so.as_list()} w={ws}")

    if k in SHAPE_PRESERVING:
        if si != so:
            fail("output shape must equal input shape")
    elif k == OpKind.CONV2D:
        if len(ws) != 4 or ws[2] != si.channels or ws[3] != so.channels:
            fail("conv weight must be [kh, kw, c_in, c_out]")
        if not _spatial_reduction_ok(si, so):
            fail("no integer stride maps input to output spatially")
    elif k == OpKind.DEPTHWISE_CONV2D:
        if len(ws) != 4 or ws[2] != si.channels or ws[3] != 1 or si.channels != so.channels:
            fail("depthwise weight must be [kh, kw, c, 1] with c_in == c_out")
        if not _spatial_reduction_ok(si, so):
            fail("no integer stride maps input to output spatially")
    elif k == OpKind.LINEAR:
        if len(ws) != 2 or ws[0] != si.channels or ws[1] != so.channels:
            fail("linear weight must be [in, out]")
        if (si.height, si.width, so.height, so.width) != (1, 1, 1, 1):
            fail("linear operates on 1x1 spatial tensors")
    elif k in (OpKind.MAX_POOL, OpKind.AVG_POOL):
        if si.channels != so.channels or not _spatial_reduction_ok(si, so):
            fail("pooling keeps channels and reduces spatially by an integer stride")
    elif k == OpKind.GLOBAL_AVG_POOL:
        if so != TensorShape(1, 1, si.channels):
            fail("global pooling output must be 1x1xC")


def _stable_topological_order(n: int, edges: Sequence[tuple[int, int]]) -> list[int]:
    indeg = [0] * n
    succ: list[list[int]] = [[] for _ in range(n)]
    for s, d in edges:
        succ[s].append(d)
        indeg[d] += 1
    heap = [i for i in range(n) if indeg[i] == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        u = heapq.heappop(heap)
        order.append(u)
        for v in succ[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                heapq.heappush(heap, v)
    if len(order) != n:
        raise CycleError(f"edges do not form a DAG ({n - len(order)} nodes on or behind a cycle)")
    return order


def build_graph(
    nodes: Sequence[NodeAttrs], edges: Iterable[Sequence[int]], name: str = ""
) -> ComputeGraph:
    """Validate nodes and edges and return a canonically ordered graph."""
    nodes = list(nodes)
    n = len(nodes)
    if n == 0:
        raise TopologyError("graph has no nodes")
    edge_list: list[tuple[int, int]] = []
    seen = set()
    for e in edges:
        if len(e) != 2:
            raise TopologyError(f"edge {e!r} is not a (src, dst) pair")
        s, d = int(e[0]), int(e[1])
        if not (0 <= s < n and 0 <= d < n):
            raise TopologyError(f"edge ({s}, {d}) references a node outside [0, {n})")
        if s == d:
            raise CycleError(f"self-loop on node {s}")
        if (s, d) in seen:
            raise TopologyError(f"duplicate edge ({s}, {d})")
        seen.add((s, d))
        edge_list.append((s, d))

    for i, node in enumerate(nodes):
        if not isinstance(node, NodeAttrs):
            raise ValidationError(f"node {i} is not a NodeAttrs")
        _check_node(i, node)

    order = _stable_topological_order(n, edge_list)

    inputs = [i for i, nd in enumerate(nodes) if nd.kind == OpKind.INPUT]
    outputs = [i for i, nd in enumerate(nodes) if nd.kind == OpKind.OUTPUT]
    if len(inputs) != 1:
        raise TopologyError(f"expected exactly one input node, found {len(inputs)}")
    if len(outputs) != 1:
        raise TopologyError(f"expected exactly one output node, found {len(outputs)}")

    preds: list[list[int]] = [[] for _ in range(n)]
    succ: list[list[int]] = [[] for _ in range(n)]
    for s, d in edge_list:
        preds[d].append(s)
        succ[s].append(d)
    src, sink = inputs[0], outputs[0]
    if preds[src]:
        raise TopologyError("input node must have in-degree 0")
    if succ[sink]:
        raise TopologyError("output node must have out-degree 0")

    def reach(start: int, adj: list[list[int]]) -> set[int]:
        stack, seen_ = [start], {start}
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if v not in seen_:
                    seen_.add(v)
                    stack.append(v)
        return seen_

    on_path = reach(src, succ) & reach(sink, preds)
    if len(on_path) != n:
        missing = sorted(set(range(n)) - on_path)
        raise TopologyError(f"nodes {missing} are not on any input-to-output path")

    for i, node in enumerate(nodes):
        p = preds[i]
        if node.kind == OpKind.INPUT:
            continue
        if node.kind not in MERGE_KINDS and len(p) != 1:
            raise TopologyError(f"node {i} ({node.kind.value}) takes exactly one input, has {len(p)}")
        if node.kind == OpKind.CONCAT:
            ins = [nodes[j].output_shape for j in p]
            want = node.input_shape
            if any((s.height, s.width) != (want.height, want.width) for s in ins) or sum(
                s.channels for s in ins
            ) != want.channels:
                raise ShapeMismatch(
                    f"concat node {i} expects {want.as_list()}, inputs give {[s.as_list() for s in ins]}"
                )
        else:
            for j in p:
                if nodes[j].output_shape != node.input_shape:
                    raise ShapeMismatch(
                        f"edge ({j}, {i}): {nodes[j].output_shape.as_list()} "
                        f"not consumable by {node.kind.value} expecting {node.input_shape.as_list()}"
                    )

    pos = {old: new for new, old in enumerate(order)}
    new_nodes = tuple(nodes[old] for old in order)
    new_edges = tuple(sorted((pos[s], pos[d]) for s, d in edge_list))
    return ComputeGraph(new_nodes, new_edges, str(name))


# --------------------------------------------------------------------------- FLOPs


def node_flops(node: NodeAttrs) -> int:
    k, so = node.kind, node.output_shape
    out_hw = so.height * so.width
    if k == OpKind.CONV2D:
        kh, kw, cin, cout = node.weight_shape
        f = 2 * kh * kw * cin * cout * out_hw
        bias = cout * out_hw
    elif k == OpKind.DEPTHWISE_CONV2D:
        kh, kw, c, _ = node.weight_shape
        f = 2 * kh * kw * c * out_hw
        bias = c * out_hw
    elif k == OpKind.LINEAR:
        fin, fout = node.weight_shape
        f = 2 * fin * fout
        bias = fout
    elif k in (OpKind.CONCAT, OpKind.IDENTITY, OpKind.INPUT, OpKind.OUTPUT):
        return 0
    else:
        # batch norm, activations, add, mean, all pooling: one per output element
        return so.numel
    return f + (bias if node.has_bias else 0)


def compute_flops(cg: ComputeGraph) -> float:
    """Total forward-pass FLOPs in gigaFLOPs."""
    return sum(node_flops(nd) for nd in cg.nodes) / 1e9


# --------------------------------------------------------------------------- adjacency


def adjacency_from_edges(n: int, edges: Iterable[Sequence[int]]) -> np.ndarray:
    a = np.zeros((n, n), dtype=float)
    for s, d in edges:
        if s != d:
            a[s, d] = 1.0
            a[d, s] = 1.0
    return a


def undirected_adjacency(cg: ComputeGraph) -> np.ndarray:
    return adjacency_from_edges(cg.n, cg.edges)


def longest_path_length(cg: ComputeGraph) -> int:
    """Number of edges on the longest input-to-output path."""
    depth = [0] * cg.n
    for s, d in cg.edges:  # edges are sorted by src, and nodes are topological
        depth[d] = max(depth[d], depth[s] + 1)
    return max(depth)


# --------------------------------------------------------------------------- serialization


def graph_to_dict(cg: ComputeGraph) -> dict[str, Any]:
    return {
        "name": cg.name,
        "nodes": [
            {
                "kind": nd.kind.value,
                "in": nd.input_shape.as_list(),
                "out": nd.output_shape.as_list(),
                "weight": list(nd.weight_shape) if nd.weight_shape is not None else None,
                "bias": bool(nd.has_bias),
            }
            for nd in cg.nodes
        ],
        "edges": [[s, d] for s, d in cg.edges],
    }


def _int_list(v: Any, what: str, length: int | None = None) -> list[int]:
    if not isinstance(v, list) or not all(isinstance(x, int) and not isinstance(x, bool) for x in v):
        raise ParseError(f"{what} must be a list of integers")
    if length is not None and len(v) != length:
        raise ParseError(f"{what} must have length {length}")
    return v


def graph_from_dict(obj: Any) -> ComputeGraph:
    if not isinstance(obj, dict):
        raise ParseError("graph must be a JSON object")
    for key in ("name", "nodes", "edges"):
        if key not in obj:
            raise ParseError(f"missing key {key!r}")
    if not isinstance(obj["name"], str):
        raise ParseError("name must be a string")
    if not isinstance(obj["nodes"], list) or not isinstance(obj["edges"], list):
        raise ParseError("nodes and edges must be lists")
    nodes = []
    for i, raw in enumerate(obj["nodes"]):
        if not isinstance(raw, dict):
            raise ParseError(f"node {i} must be an object")
        try:
            kind = OpKind(raw["kind"])
            si = _int_list(raw["in"], f"node {i} 'in'", 3)
            so = _int_list(raw["out"], f"node {i} 'out'", 3)
            w = raw["weight"]
            bias = raw["bias"]
        except KeyError as exc:
            raise ParseError(f"node {i} missing key {exc.args[0]!r}") from None
        except ValueError:
            raise ParseError(f"node {i} has unknown kind {raw.get('kind')!r}") from None
        if w is not None:
            w = tuple(_int_list(w, f"node {i} 'weight'"))
        if not isinstance(bias, bool):
            raise ParseError(f"node {i} 'bias' must be a boolean")
        nodes.append(NodeAttrs(kind, TensorShape(*si), TensorShape(*so), w, bias))
    edges = [tuple(_int_list(e, "edge", 2)) for e in obj["edges"]]
    return build_graph(nodes, edges, obj["name"])


def _dumps(obj: Any) -> bytes:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False).encode("utf-8")


def serialize(cg: ComputeGraph) -> bytes:
    return _dumps(graph_to_dict(cg))


def _loads(data: bytes) -> Any:
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"invalid UTF-8: {exc.reason}", exc.start) from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, len(text[: exc.pos].encode("utf-8"))) from None


def deserialize(data: bytes) -> ComputeGraph:
    return graph_from_dict(_loads(data))


def structure_key(cg: ComputeGraph) -> bytes:
    """Serialized form with the name blanked; equal keys mean identical architectures."""
    return serialize(cg.renamed(""))
