"""Layer-graph ingestion: parse the JSON model format and lower to generic ops."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from .affine import (
    Add,
    AffineExpr,
    ClampToI8,
    ConstInt,
    GenericOp,
    IndexingMap,
    InputRef,
    IteratorKind,
    Max,
    Mul,
    OutputAcc,
    TensorDecl,
    validate_op,
)

P = IteratorKind.PARALLEL
R = IteratorKind.REDUCTION

GRAPH_INPUT = "input"

LAYER_KINDS = ("conv2d", "relu", "linear", "elementwise_add", "bias_add")

_PARAM_KEYS = {
    "conv2d": {"out_ch", "in_ch", "kernel_h", "kernel_w", "stride", "dilation"},
    "relu": set(),
    "linear": {"in_features", "out_features"},
    "elementwise_add": set(),
    "bias_add": {"features"},
}


class ModelError(ValueError):
    """Raised for malformed model files or inconsistent layer graphs."""


@dataclass
class LayerSpec:
    name: str
    kind: str
    params: dict
    inputs: list[str]

    def weight_name(self) -> str | None:
        if self.kind in ("conv2d", "linear"):
            return f"{self.name}.weight"
        if self.kind == "bias_add":
            return f"{self.name}.bias"
        return None


@dataclass
class LayerGraph:
    layers: list[LayerSpec]
    input_decl: TensorDecl
    weights: dict[str, np.ndarray]
    output_layer: str
    shapes: dict[str, tuple[int, ...]] = field(default_factory=dict)

    def layer(self, name: str) -> LayerSpec:
        for l in self.layers:
            if l.name == name:
                return l
        raise KeyError(name)

    def consumers(self, tensor: str) -> list[LayerSpec]:
        return [l for l in self.layers if tensor in l.inputs]

    @property
    def output_shape(self) -> tuple[int, ...]:
        return self.shapes[self.output_layer]


def _require_keys(obj: dict, allowed: set[str], required: set[str], where: str) -> None:
    extra = set(obj) - allowed
    if extra:
        raise ModelError(f"{where}: unknown fields {sorted(extra)}")
    missing = required - set(obj)
    if missing:
        raise ModelError(f"{where}: missing fields {sorted(missing)}")


def _weight_shape(layer: LayerSpec) -> tuple[int, ...]:
    p = layer.params
    if layer.kind == "conv2d":
        return (p["out_ch"], p["in_ch"], p["kernel_h"], p["kernel_w"])
    if layer.kind == "linear":
        return (p["in_features"], p["out_features"])
    if layer.kind == "bias_add":
        return (p["features"],)
    raise AssertionError(layer.kind)


def conv_out_extent(n: int, k: int, stride: int, dilation: int) -> int:
    """Valid-padding output extent."""
    out = (n - dilation * (k - 1) - 1) // stride + 1
    if out < 1:
        raise ModelError(
            f"output extent < 1 for input {n}, kernel {k}, stride {stride}, dilation {dilation}"
        )
    return out


def infer_shapes(graph: LayerGraph) -> dict[str, tuple[int, ...]]:
    """Output shape per tensor name, topological walk over the layer list."""
    shapes: dict[str, tuple[int, ...]] = {GRAPH_INPUT: graph.input_decl.shape}
    for layer in graph.layers:
        in_shapes = []
        for src in layer.inputs:
            if src not in shapes:
                raise ModelError(f"layer {layer.name}: predecessor {src!r} does not resolve")
            in_shapes.append(shapes[src])
        shapes[layer.name] = _layer_output_shape(layer, in_shapes)
    return shapes


def _layer_output_shape(layer: LayerSpec, in_shapes: list[tuple[int, ...]]) -> tuple[int, ...]:
    p = layer.params
    if layer.kind == "conv2d":
        (n, c, h, w) = in_shapes[0]
        if c != p["in_ch"]:
            raise ModelError(f"layer {layer.name}: input has {c} channels, expected {p['in_ch']}")
        oh = conv_out_extent(h, p["kernel_h"], p["stride"], p["dilation"])
        ow = conv_out_extent(w, p["kernel_w"], p["stride"], p["dilation"])
        return (n, p["out_ch"], oh, ow)
    if layer.kind == "linear":
        (m, k) = in_shapes[0]
        if k != p["in_features"]:
            raise ModelError(f"layer {layer.name}: input has {k} features, expected {p['in_features']}")
        return (m, p["out_features"])
    if layer.kind == "relu":
        return in_shapes[0]
    if layer.kind == "bias_add":
        if in_shapes[0][1] != p["features"]:
            raise ModelError(f"layer {layer.name}: feature extent mismatch")
        return in_shapes[0]
    if layer.kind == "elementwise_add":
        if in_shapes[0] != in_shapes[1]:
            raise ModelError(
                f"layer {layer.name}: operand shapes differ: {in_shapes[0]} vs {in_shapes[1]}"
            )
        return in_shapes[0]
    raise ModelError(f"layer {layer.name}: unsupported kind {layer.kind!r}")


def _make_weight(name: str, spec, shape: tuple[int, ...]) -> np.ndarray:
    if isinstance(spec, dict):
        _require_keys(spec, {"shape", "data"}, {"shape"}, f"weight {name}")
        declared = tuple(spec["shape"])
        if declared != shape:
            raise ModelError(f"weight {name}: declared shape {declared}, layer implies {shape}")
        data = spec.get("data")
    else:
        data = spec
    if isinstance(data, str):
        if not data.startswith("random:"):
            raise ModelError(f"weight {name}: unknown data spec {data!r}")
        seed = int(data.split(":", 1)[1])
        rng = np.random.default_rng(seed)
        return rng.integers(-128, 128, size=shape, dtype=np.int8)
    arr = np.asarray(data, dtype=np.int64)
    if arr.shape != shape:
        raise ModelError(f"weight {name}: data shape {arr.shape}, expected {shape}")
    if arr.size and (arr.max() > 127 or arr.min() < -128):
        raise ModelError(f"weight {name}: values outside i8 range")
    return arr.astype(np.int8)


def build_graph(doc: dict, where: str = "<model>") -> LayerGraph:
    _require_keys(doc, {"input", "layers", "weights"}, {"input", "layers"}, where)
    inp = doc["input"]
    _require_keys(inp, {"shape", "dtype"}, {"shape", "dtype"}, f"{where}: input")
    if inp["dtype"] != "i8":
        raise ModelError(f"{where}: dtype must be 'i8', got {inp['dtype']!r}")
    input_decl = TensorDecl(GRAPH_INPUT, tuple(inp["shape"]), 8)

    layers: list[LayerSpec] = []
    names: set[str] = set()
    for i, ld in enumerate(doc["layers"]):
        _require_keys(ld, {"name", "kind", "params", "inputs"}, {"name", "kind", "inputs"},
                      f"{where}: layers[{i}]")
        name, kind = ld["name"], ld["kind"]
        if name in names or name == GRAPH_INPUT:
            raise ModelError(f"{where}: duplicate layer name {name!r}")
        names.add(name)
        if kind not in LAYER_KINDS:
            raise ModelError(f"{where}: layer {name}: unknown kind {kind!r}")
        params = dict(ld.get("params", {}))
        if kind == "conv2d":
            params.setdefault("stride", 1)
            params.setdefault("dilation", 1)
        if set(params) != _PARAM_KEYS[kind]:
            raise ModelError(
                f"{where}: layer {name}: params must be {sorted(_PARAM_KEYS[kind])}, "
                f"got {sorted(params)}"
            )
        for key, v in params.items():
            if not isinstance(v, int) or v < 1:
                raise ModelError(f"{where}: layer {name}: param {key} must be a positive integer")
        inputs = list(ld["inputs"])
        want = 2 if kind == "elementwise_add" else 1
        if len(inputs) != want:
            raise ModelError(f"{where}: layer {name}: expects {want} input(s), got {len(inputs)}")
        layers.append(LayerSpec(name, kind, params, inputs))

    # Predecessors must already be defined: the layer list is in topological
    # order, which also rules out cycles.
    defined = {GRAPH_INPUT}
    for layer in layers:
        for src in layer.inputs:
            if src not in defined:
                if src in names:
                    raise ModelError(f"{where}: layer {layer.name}: cycle or forward reference to {src!r}")
                raise ModelError(f"{where}: layer {layer.name}: unknown input {src!r}")
        defined.add(layer.name)

    consumed = {src for l in layers for src in l.inputs}
    outputs = [l.name for l in layers if l.name not in consumed]
    if len(outputs) != 1:
        raise ModelError(f"{where}: expected exactly one graph output, found {outputs}")
    if GRAPH_INPUT not in consumed:
        raise ModelError(f"{where}: graph input is never consumed")

    weights: dict[str, np.ndarray] = {}
    wdoc = doc.get("weights", {})
    for layer in layers:
        wname = layer.weight_name()
        if wname is None:
            continue
        shape = _weight_shape(layer)
        if wname in wdoc:
            weights[wname] = _make_weight(wname, wdoc[wname], shape)
        else:
            raise ModelError(f"{where}: missing weight {wname!r}")
    extra_w = set(wdoc) - set(weights)
    if extra_w:
        raise ModelError(f"{where}: weights {sorted(extra_w)} belong to no layer")

    graph = LayerGraph(layers, input_decl, weights, outputs[0])
    graph.shapes = infer_shapes(graph)
    return graph


def parse_model(path: Union[str, Path]) -> LayerGraph:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ModelError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from e
    return build_graph(doc, where=str(path))


# --- lowering to generic ops ----------------------------------------------

MAC_PAYLOAD = ClampToI8(Add(OutputAcc(), Mul(InputRef(0), InputRef(1))))


def _identity(num_dims: int) -> IndexingMap:
    return IndexingMap(num_dims, tuple(AffineExpr.dim(d) for d in range(num_dims)))


def _conv_spatial_expr(out_dim: int, red_dim: int, stride: int, dilation: int,
                       kernel: int) -> AffineExpr:
    # trip-1 kernel terms always evaluate to 0 and are dropped so degenerate
    # windows collapse to plain strided access
    if kernel == 1:
        return AffineExpr.dim(out_dim, stride)
    return AffineExpr.comb(out_dim, stride, red_dim, dilation)


def lower_layer(layer: LayerSpec, input_shapes: list[tuple[int, ...]],
                input_refs: list[str]) -> GenericOp:
    """Lower one layer to a GenericOp over its named input tensors."""
    p = layer.params
    out_shape = _layer_output_shape(layer, input_shapes)
    if layer.kind == "conv2d":
        n, c, h, w = input_shapes[0]
        _, f, oh, ow = out_shape
        s, dil, kh, kw = p["stride"], p["dilation"], p["kernel_h"], p["kernel_w"]
        # dims: d0=n d1=f d2=oh d3=ow d4=c d5=kh d6=kw
        in_map = IndexingMap(7, (
            AffineExpr.dim(0),
            AffineExpr.dim(4),
            _conv_spatial_expr(2, 5, s, dil, kh),
            _conv_spatial_expr(3, 6, s, dil, kw),
        ))
        w_map = IndexingMap(7, (AffineExpr.dim(1), AffineExpr.dim(4),
                                AffineExpr.dim(5), AffineExpr.dim(6)))
        out_map = IndexingMap(7, (AffineExpr.dim(0), AffineExpr.dim(1),
                                  AffineExpr.dim(2), AffineExpr.dim(3)))
        return GenericOp(
            op_id=layer.name,
            inputs=((input_refs[0], in_map), (layer.weight_name(), w_map)),
            output=(layer.name, out_map),
            iterator_kinds=(P, P, P, P, R, R, R),
            trip_counts=(n, f, oh, ow, c, kh, kw),
            payload=MAC_PAYLOAD,
        )
    if layer.kind == "linear":
        m, k = input_shapes[0]
        nf = p["out_features"]
        # dims: d0=m d1=n d2=k
        in_map = IndexingMap(3, (AffineExpr.dim(0), AffineExpr.dim(2)))
        w_map = IndexingMap(3, (AffineExpr.dim(2), AffineExpr.dim(1)))
        out_map = IndexingMap(3, (AffineExpr.dim(0), AffineExpr.dim(1)))
        return GenericOp(
            op_id=layer.name,
            inputs=((input_refs[0], in_map), (layer.weight_name(), w_map)),
            output=(layer.name, out_map),
            iterator_kinds=(P, P, R),
            trip_counts=(m, nf, k),
            payload=MAC_PAYLOAD,
        )
    rank = len(input_shapes[0])
    ident = _identity(rank)
    kinds = (P,) * rank
    if layer.kind == "relu":
        return GenericOp(layer.name, ((input_refs[0], ident),), (layer.name, ident),
                         kinds, input_shapes[0], Max(InputRef(0), ConstInt(0)))
    if layer.kind == "elementwise_add":
        return GenericOp(layer.name, ((input_refs[0], ident), (input_refs[1], ident)),
                         (layer.name, ident), kinds, input_shapes[0],
                         ClampToI8(Add(InputRef(0), InputRef(1))))
    if layer.kind == "bias_add":
        bias_map = IndexingMap(rank, (AffineExpr.dim(1),))
        return GenericOp(layer.name, ((input_refs[0], ident), (layer.weight_name(), bias_map)),
                         (layer.name, ident), kinds, input_shapes[0],
                         ClampToI8(Add(InputRef(0), InputRef(1))))
    raise ModelError(f"layer {layer.name}: unsupported kind {layer.kind!r}")


def lower_graph(graph: LayerGraph) -> list[GenericOp]:
    """Lower every layer; the result list is in topological order."""
    ops: list[GenericOp] = []
    for layer in graph.layers:
        in_shapes = [graph.shapes[src] for src in layer.inputs]
        op = lower_layer(layer, in_shapes, layer.inputs)
        diags = validate_op(op)
        if diags:
            raise ModelError(f"lowering produced an invalid op: {diags}")
        ops.append(op)
    return ops
