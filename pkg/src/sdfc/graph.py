"""Streaming dataflow graph: nodes, FIFO channels, line/window buffers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .affine import GenericOp, PayloadExpr, TensorDecl
from .analysis import (
    PURE_PARALLEL,
    REGULAR_REDUCTION,
    SLIDING_WINDOW,
    KernelClass,
    classify_iterators,
    classify_kernel,
    window_extents,
)
from .model import GRAPH_INPUT, LayerGraph, lower_graph
from .resources import Loop, LoopNest


class GraphError(ValueError):
    pass


# --- buffers ---------------------------------------------------------------


@dataclass
class LineBuffer:
    owner: str
    rows: int            # K - 1 along the slid axis
    row_length: int      # input extent along the fastest-varying slid axis
    channels_dim: int    # replication across input-channel lanes
    element_bits: int = 8
    partition_loop: str | None = "c"
    name: str = "line_buf"
    kind: str = "line"
    holds_stream_data: bool = True

    def elements(self) -> int:
        return self.rows * self.row_length * self.channels_dim

    def bits(self) -> int:
        return self.elements() * self.element_bits


@dataclass
class WindowBuffer:
    owner: str
    shape: tuple[int, ...]
    replication: int = 1
    element_bits: int = 8
    partition_loop: str | None = "c"
    name: str = "window_buf"
    kind: str = "window"
    holds_stream_data: bool = True

    def elements(self) -> int:
        n = self.replication
        for e in self.shape:
            n *= e
        return n

    def bits(self) -> int:
        return self.elements() * self.element_bits


@dataclass
class DataLineBuffer:
    owner: str
    length: int
    element_bits: int = 8
    partition_loop: str | None = None
    name: str = "data_line"
    kind: str = "data_line"
    holds_stream_data: bool = True

    def elements(self) -> int:
        return self.length

    def bits(self) -> int:
        return self.length * self.element_bits


@dataclass
class WeightBuffer:
    owner: str
    weight_name: str
    shape: tuple[int, ...]
    element_bits: int = 8
    partition_loop: str | None = None
    name: str = "weights"
    kind: str = "weight"
    holds_stream_data: bool = False

    def elements(self) -> int:
        n = 1
        for e in self.shape:
            n *= e
        return n

    def bits(self) -> int:
        return self.elements() * self.element_bits


def line_buffer_bits(lb: LineBuffer) -> int:
    """rows * row_length * element_bits * replication; 0 for a degenerate window."""
    if lb.rows <= 0:
        return 0
    return lb.bits()


# --- graph types -----------------------------------------------------------


@dataclass
class StreamChannel:
    cid: str
    element_bits: int
    width: int            # kappa: parallel stream lanes
    depth: int            # tokens per lane
    producer: tuple[str, int]   # (node_id, port)
    consumer: tuple[str, int]


@dataclass
class StreamNode:
    node_id: str
    kind: str  # "source" | "sink" | "broadcast" | "compute"
    layer_kind: str | None = None
    kernel_class: KernelClass | None = None
    params: dict = field(default_factory=dict)
    nest: LoopNest | None = None
    buffers: list = field(default_factory=list)
    in_channels: list[str] = field(default_factory=list)
    out_channels: list[str] = field(default_factory=list)
    in_lane_loop: str | None = None
    out_lane_loop: str | None = None
    weight_name: str | None = None
    input_shapes: list[tuple[int, ...]] = field(default_factory=list)
    output_shape: tuple[int, ...] | None = None
    payload: PayloadExpr | None = None

    def stream_buffer_elements(self) -> int:
        """Elements held in stream-data buffers (weights are parameters, not data)."""
        return sum(b.elements() for b in self.buffers if b.holds_stream_data)


@dataclass
class StreamGraph:
    nodes: dict[str, StreamNode]
    channels: dict[str, StreamChannel]
    weights: dict[str, np.ndarray]
    input_decl: TensorDecl
    output_shape: tuple[int, ...]
    tensor_shapes: dict[str, tuple[int, ...]]
    source_id: str
    sink_id: str

    def compute_nodes(self) -> list[StreamNode]:
        return [n for n in self.nodes.values() if n.kind == "compute"]

    def node_successors(self, node_id: str) -> list[tuple[str, str]]:
        """(channel_id, consumer_node_id) pairs."""
        out = []
        for cid in self.nodes[node_id].out_channels:
            out.append((cid, self.channels[cid].consumer[0]))
        return out


# --- construction ----------------------------------------------------------


def _conv_nest(trips: dict[str, int]) -> LoopNest:
    loops = [
        Loop("f", trips["f"], "parallel"),
        Loop("c", trips["c"], "reduction"),
        Loop("kh", trips["kh"], "reduction"),
        Loop("kw", trips["kw"], "reduction"),
        Loop("n", trips["n"], "parallel", unrollable=False),
        Loop("oh", trips["oh"], "parallel", unrollable=False),
        Loop("ow", trips["ow"], "parallel", unrollable=False),
    ]
    return LoopNest(loops, pipeline_level=len(loops) - 1)


def _make_compute_node(op: GenericOp, layer, in_shapes, out_shape, kclass: KernelClass
                       ) -> StreamNode:
    node = StreamNode(
        node_id=op.op_id,
        kind="compute",
        layer_kind=layer.kind,
        kernel_class=kclass,
        params=dict(layer.params),
        input_shapes=[tuple(s) for s in in_shapes],
        output_shape=tuple(out_shape),
        weight_name=layer.weight_name(),
        payload=op.payload,
    )
    if layer.kind == "conv2d":
        n, c, h, w = in_shapes[0]
        _, f, oh, ow = out_shape
        kh, kw = layer.params["kernel_h"], layer.params["kernel_w"]
        node.nest = _conv_nest({"f": f, "c": c, "kh": kh, "kw": kw,
                                "n": n, "oh": oh, "ow": ow})
        node.in_lane_loop, node.out_lane_loop = "c", "f"
        if kclass.kind == SLIDING_WINDOW:
            sets = classify_iterators(op)
            extents = dict(window_extents(op, sets))  # dim -> window size
            if kh > 1:
                node.buffers.append(LineBuffer(op.op_id, rows=kh - 1, row_length=w,
                                               channels_dim=c))
            node.buffers.append(WindowBuffer(op.op_id, shape=(kh, kw), replication=c))
        else:
            node.buffers.append(DataLineBuffer(op.op_id, length=c, partition_loop="c"))
        node.buffers.append(WeightBuffer(op.op_id, layer.weight_name(),
                                         shape=(f, c, kh, kw), partition_loop="f",
                                         name="w"))
    elif layer.kind == "linear":
        m, k = in_shapes[0]
        nf = out_shape[1]
        node.nest = LoopNest([
            Loop("m", m, "parallel", unrollable=False),
            Loop("n", nf, "parallel"),
            Loop("k", k, "reduction"),
        ], pipeline_level=2)
        node.in_lane_loop, node.out_lane_loop = "k", "n"
        node.buffers.append(DataLineBuffer(op.op_id, length=k, partition_loop="k"))
        node.buffers.append(WeightBuffer(op.op_id, layer.weight_name(), shape=(k, nf),
                                         partition_loop="n", name="w"))
    else:
        # pure parallel: consume-compute-produce, no stream-data buffers
        shape = tuple(out_shape)
        if len(shape) == 4:
            n, f, h, w = shape
            node.nest = LoopNest([
                Loop("f", f, "parallel"),
                Loop("n", n, "parallel", unrollable=False),
                Loop("h", h, "parallel", unrollable=False),
                Loop("w", w, "parallel", unrollable=False),
            ], pipeline_level=3)
            node.in_lane_loop = node.out_lane_loop = "f"
        else:
            m, k = shape
            node.nest = LoopNest([
                Loop("m", m, "parallel", unrollable=False),
                Loop("k", k, "parallel"),
            ], pipeline_level=1)
            node.in_lane_loop = node.out_lane_loop = "k"
        if layer.kind == "bias_add":
            node.buffers.append(WeightBuffer(op.op_id, layer.weight_name(),
                                             shape=(shape[1],), partition_loop="f",
                                             name="bias"))
    return node


def _lane_extent(shape: tuple[int, ...]) -> int:
    """Extent of the channel/feature axis carried innermost on a stream."""
    return shape[1] if len(shape) == 4 else shape[-1]


def build_stream_graph(layer_graph: LayerGraph,
                       ops: list[GenericOp] | None = None,
                       classes: dict[str, KernelClass] | None = None) -> StreamGraph:
    """One StreamNode per op, point-to-point FIFOs, broadcast on fan-out."""
    if ops is None:
        ops = lower_graph(layer_graph)
    if classes is None:
        classes = {op.op_id: classify_kernel(op) for op in ops}
    shapes = layer_graph.shapes

    nodes: dict[str, StreamNode] = {}
    source = StreamNode("source", "source", output_shape=layer_graph.input_decl.shape)
    nodes["source"] = source
    for op in ops:
        layer = layer_graph.layer(op.op_id)
        in_shapes = [shapes[src] for src in layer.inputs]
        nodes[op.op_id] = _make_compute_node(op, layer, in_shapes, shapes[op.op_id],
                                             classes[op.op_id])
    sink = StreamNode("sink", "sink", output_shape=layer_graph.output_shape)
    nodes["sink"] = sink

    # Tensor producers and consumers. The sink consumes the graph output.
    producer_of = {GRAPH_INPUT: "source"}
    for layer in layer_graph.layers:
        producer_of[layer.name] = layer.name
    consumers_of: dict[str, list[tuple[str, int]]] = {GRAPH_INPUT: []}
    for layer in layer_graph.layers:
        consumers_of[layer.name] = []
    for layer in layer_graph.layers:
        for port, src in enumerate(layer.inputs):
            consumers_of[src].append((layer.name, port))
    consumers_of[layer_graph.output_layer].append(("sink", 0))

    channels: dict[str, StreamChannel] = {}
    tensor_shapes = dict(shapes)

    def add_channel(cid: str, producer: tuple[str, int], consumer: tuple[str, int],
                    lane: int) -> None:
        channels[cid] = StreamChannel(cid, element_bits=8, width=lane, depth=2,
                                      producer=producer, consumer=consumer)
        nodes[producer[0]].out_channels.append(cid)
        nodes[consumer[0]].in_channels.append(cid)

    for tensor, users in consumers_of.items():
        if not users:
            raise GraphError(f"tensor {tensor!r} has no consumer")
        prod = producer_of[tensor]
        lane = _lane_extent(shapes[tensor] if tensor != GRAPH_INPUT
                            else layer_graph.input_decl.shape)
        if len(users) == 1:
            cons_id, port = users[0]
            add_channel(f"ch_{tensor}", (prod, 0), (cons_id, port), lane)
        else:
            bid = f"bcast_{tensor}"
            nodes[bid] = StreamNode(bid, "broadcast",
                                    output_shape=shapes.get(tensor,
                                                            layer_graph.input_decl.shape))
            # Reinsert sink last to keep topological node order.
            nodes["sink"] = nodes.pop("sink")
            add_channel(f"ch_{tensor}", (prod, 0), (bid, 0), lane)
            for k, (cons_id, port) in enumerate(users):
                add_channel(f"ch_{tensor}_{k}", (bid, k), (cons_id, port), lane)

    # Input ports of multi-input nodes must line up with layer input order.
    for node in nodes.values():
        node.in_channels.sort(key=lambda cid: channels[cid].consumer[1])

    # Broadcast nodes were appended after their consumers; restore a
    # topological node order (deterministic: stable Kahn walk).
    indeg = {nid: 0 for nid in nodes}
    for ch in channels.values():
        indeg[ch.consumer[0]] += 1
    ready = [nid for nid, d in indeg.items() if d == 0]
    topo: list[str] = []
    while ready:
        nid = ready.pop(0)
        topo.append(nid)
        for cid in nodes[nid].out_channels:
            nxt = channels[cid].consumer[0]
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                ready.append(nxt)
    if len(topo) != len(nodes):
        raise GraphError("stream graph is not acyclic")
    nodes = {nid: nodes[nid] for nid in topo}

    return StreamGraph(
        nodes=nodes,
        channels=channels,
        weights=layer_graph.weights,
        input_decl=layer_graph.input_decl,
        output_shape=layer_graph.output_shape,
        tensor_shapes=tensor_shapes,
        source_id="source",
        sink_id="sink",
    )


# --- FIFO sizing -----------------------------------------------------------


def _paths_between(graph: StreamGraph, start: str, end: str) -> list[list[str]]:
    """All channel paths start -> end (DAG, desk-scale graphs)."""
    paths: list[list[str]] = []

    def walk(node_id: str, acc: list[str]) -> None:
        if node_id == end:
            paths.append(list(acc))
            return
        for cid, nxt in graph.node_successors(node_id):
            walk(nxt, acc + [cid])

    walk(start, [])
    return paths


def size_fifo_depths(graph: StreamGraph, first_output: dict[str, int],
                     margin: int = 2) -> dict[str, int]:
    """Depth per channel: margin everywhere, plus slack on short fork branches.

    The short branch of a fork-join pair buffers the tokens the fork emits
    (one per cycle) while the long branch produces its first token.
    """
    depths = {cid: margin for cid in graph.channels}
    forks = [n.node_id for n in graph.nodes.values() if len(n.out_channels) > 1]
    joins = [n.node_id for n in graph.nodes.values() if len(n.in_channels) > 1]
    for fork in forks:
        for join in joins:
            paths = _paths_between(graph, fork, join)
            if len(paths) < 2:
                continue
            latencies = []
            for path in paths:
                inner = [graph.channels[cid].consumer[0] for cid in path[:-1]]
                lat = 0
                for nid in inner:
                    if nid not in first_output:
                        raise GraphError(f"no first-output estimate for node {nid!r}")
                    lat += first_output[nid]
                latencies.append(lat)
            longest = max(latencies)
            for path, lat in zip(paths, latencies):
                slack = longest - lat
                if slack > 0:
                    for cid in path:
                        depths[cid] = max(depths[cid], slack + margin)
    return depths


def apply_fifo_depths(graph: StreamGraph, depths: dict[str, int]) -> None:
    for cid, d in depths.items():
        graph.channels[cid].depth = d


# --- serialization ---------------------------------------------------------


def graph_to_json(graph: StreamGraph) -> dict:
    nodes = []
    for n in graph.nodes.values():
        entry = {
            "id": n.node_id,
            "kind": n.kind,
            "layer_kind": n.layer_kind,
            "class": n.kernel_class.kind if n.kernel_class else None,
            "in_channels": list(n.in_channels),
            "out_channels": list(n.out_channels),
            "buffers": [
                {"name": b.name, "kind": b.kind, "elements": b.elements(),
                 "bits": b.bits(), "partition_loop": b.partition_loop}
                for b in n.buffers
            ],
        }
        if n.nest is not None:
            entry["loops"] = [
                {"name": l.name, "trip": l.trip, "kind": l.kind,
                 "unrollable": l.unrollable, "unroll": n.nest.u(l.name)}
                for l in n.nest.loops
            ]
            entry["pipeline_level"] = n.nest.pipeline_level
        nodes.append(entry)
    chans = [
        {"id": c.cid, "element_bits": c.element_bits, "width": c.width,
         "depth": c.depth, "producer": list(c.producer), "consumer": list(c.consumer)}
        for c in graph.channels.values()
    ]
    return {"nodes": nodes, "channels": chans}
