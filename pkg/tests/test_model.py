import copy
import json

import numpy as np
import pytest

from sdfc.affine import AffineExpr, IteratorKind, is_identity_map
from sdfc.benchmarks import build, conv_relu, residual
from sdfc.model import (
    ModelError,
    build_graph,
    conv_out_extent,
    lower_graph,
    parse_model,
)


def test_conv_out_extent():
    assert conv_out_extent(32, 3, 1, 1) == 30
    assert conv_out_extent(32, 3, 2, 1) == 15
    assert conv_out_extent(32, 3, 1, 2) == 28
    assert conv_out_extent(5, 5, 1, 1) == 1
    with pytest.raises(ModelError):
        conv_out_extent(3, 5, 1, 1)


def test_shape_inference_conv_relu():
    g = build_graph(conv_relu(size=32, in_ch=3, out_ch=8))
    assert g.shapes["input"] == (1, 3, 32, 32)
    assert g.shapes["conv1"] == (1, 8, 30, 30)
    assert g.shapes["relu1"] == (1, 8, 30, 30)
    assert g.output_layer == "relu1"


def test_random_weights_are_deterministic():
    a = build_graph(conv_relu(seed=7)).weights["conv1.weight"]
    b = build_graph(conv_relu(seed=7)).weights["conv1.weight"]
    c = build_graph(conv_relu(seed=8)).weights["conv1.weight"]
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert a.dtype == np.int8


def test_explicit_weight_data_round_trip(tmp_path):
    doc = conv_relu(size=8, in_ch=1, out_ch=1)
    doc["weights"]["conv1.weight"] = {
        "shape": [1, 1, 3, 3],
        "data": [[[[1, 0, 0], [0, 1, 0], [0, 0, 1]]]],
    }
    path = tmp_path / "m.json"
    path.write_text(json.dumps(doc))
    g = parse_model(path)
    assert g.weights["conv1.weight"][0, 0, 0, 0] == 1


@pytest.mark.parametrize(
    "mutate, message",
    [
        (lambda d: d["input"].__setitem__("dtype", "f32"), "dtype"),
        (lambda d: d["layers"][0].__setitem__("kind", "pool"), "unknown kind"),
        (lambda d: d["weights"].pop("conv1.weight"), "missing weight"),
        (lambda d: d["layers"][0]["params"].pop("in_ch"), "params"),
        (lambda d: d["layers"][0].__setitem__("inputs", ["relu1"]), "cycle or forward"),
        (lambda d: d["layers"][1].__setitem__("inputs", ["nope"]), "unknown input"),
    ],
)
def test_build_graph_rejects_malformed_docs(mutate, message):
    doc = copy.deepcopy(conv_relu())
    mutate(doc)
    with pytest.raises(ModelError, match=message):
        build_graph(doc)


def test_graph_must_have_single_output():
    doc = copy.deepcopy(conv_relu())
    doc["layers"].append({"name": "relu2", "kind": "relu", "params": {},
                          "inputs": ["conv1"]})
    with pytest.raises(ModelError, match="one graph output"):
        build_graph(doc)


def test_all_benchmarks_build():
    for name in ("conv_relu", "cascade_conv", "residual", "linear", "feed_forward"):
        g = build_graph(build(name))
        assert g.layers


def test_conv_lowering_indexing_maps():
    g = build_graph(conv_relu())
    op = lower_graph(g)[0]
    assert op.trip_counts == (1, 8, 30, 30, 3, 3, 3)
    assert op.iterator_kinds[:4] == (IteratorKind.PARALLEL,) * 4
    assert op.iterator_kinds[4:] == (IteratorKind.REDUCTION,) * 3
    in_map = op.inputs[0][1]
    # the spatial accesses combine one output dim and one kernel dim
    assert in_map.results[2] == AffineExpr.comb(2, 1, 5, 1)
    assert in_map.results[3] == AffineExpr.comb(3, 1, 6, 1)
    w_map = op.inputs[1][1]
    assert [e.dims() for e in w_map.results] == [(1,), (4,), (5,), (6,)]


def test_degenerate_kernel_term_is_dropped():
    g = build_graph(residual())
    conv2 = lower_graph(g)[2]
    assert conv2.op_id == "conv2"
    spatial = conv2.inputs[0][1].results[2]
    assert spatial.is_single_dim()  # 1x1 kernel: no window term survives


def test_strided_dilated_lowering():
    doc = conv_relu(size=16)
    doc["layers"][0]["params"].update({"stride": 2, "dilation": 2})
    g = build_graph(doc)
    op = lower_graph(g)[0]
    assert g.shapes["conv1"] == (1, 8, conv_out_extent(16, 3, 2, 2),
                                 conv_out_extent(16, 3, 2, 2))
    assert op.inputs[0][1].results[2] == AffineExpr.comb(2, 2, 5, 2)


def test_pointwise_layers_use_identity_maps():
    g = build_graph(residual())
    ops = {op.op_id: op for op in lower_graph(g)}
    assert is_identity_map(ops["relu1"].inputs[0][1])
    assert is_identity_map(ops["add1"].output[1])
