import pytest

from sdfc.benchmarks import build
from sdfc.graph import (
    GraphError,
    LineBuffer,
    StreamGraph,
    apply_fifo_depths,
    build_stream_graph,
    graph_to_json,
    line_buffer_bits,
    size_fifo_depths,
)
from sdfc.model import build_graph


def _graph(name, **kw) -> StreamGraph:
    return build_stream_graph(build_graph(build(name, **kw)))


def test_conv_relu_topology():
    g = _graph("conv_relu")
    assert set(g.nodes) == {"source", "conv1", "relu1", "sink"}
    assert set(g.channels) == {"ch_input", "ch_conv1", "ch_relu1"}
    assert g.channels["ch_conv1"].producer[0] == "conv1"
    assert g.channels["ch_conv1"].consumer[0] == "relu1"


def test_fan_out_inserts_broadcast():
    g = _graph("residual")
    assert "bcast_conv1" in g.nodes
    b = g.nodes["bcast_conv1"]
    assert b.in_channels == ["ch_conv1"]
    assert sorted(b.out_channels) == ["ch_conv1_0", "ch_conv1_1"]
    # node order stays topological: every channel's producer precedes its consumer
    order = {nid: i for i, nid in enumerate(g.nodes)}
    for ch in g.channels.values():
        assert order[ch.producer[0]] < order[ch.consumer[0]]


def test_join_input_ports_follow_layer_order():
    g = _graph("residual")
    add = g.nodes["add1"]
    assert [g.channels[c].consumer[1] for c in add.in_channels] == [0, 1]
    # port 0 carries conv2's output, port 1 the bypass
    assert g.channels[add.in_channels[0]].producer[0] == "conv2"


def test_sliding_conv_buffer_budget():
    g = _graph("conv_relu", size=32, in_ch=3)
    conv = g.nodes["conv1"]
    k, n, lanes = 3, 32, 3
    expected = ((k - 1) * n + k * k) * lanes
    assert conv.stream_buffer_elements() == expected


def test_one_by_one_conv_keeps_a_channel_line_only():
    g = _graph("residual")
    conv2 = g.nodes["conv2"]
    stream_bufs = [b for b in conv2.buffers if b.holds_stream_data]
    assert [b.kind for b in stream_bufs] == ["data_line"]
    assert stream_bufs[0].elements() == 8  # one value per input channel


def test_weight_buffers_do_not_count_as_stream_data():
    g = _graph("conv_relu")
    conv = g.nodes["conv1"]
    weight = [b for b in conv.buffers if b.kind == "weight"]
    assert weight and not weight[0].holds_stream_data


def test_line_buffer_bits_degenerate():
    lb = LineBuffer("x", rows=0, row_length=32, channels_dim=3)
    assert line_buffer_bits(lb) == 0
    lb = LineBuffer("x", rows=2, row_length=32, channels_dim=3)
    assert line_buffer_bits(lb) == 2 * 32 * 3 * 8


def test_no_buffer_scales_with_tensor_area():
    # buffers must stay O(K*N), never O(N^2)
    for size in (16, 32):
        g = _graph("conv_relu", size=size)
        area = size * size
        for node in g.compute_nodes():
            assert node.stream_buffer_elements() < area


def test_fifo_depths_default_margin():
    g = _graph("conv_relu")
    depths = size_fifo_depths(g, {nid: 1 for nid in g.nodes})
    assert set(depths.values()) == {2}


def test_fifo_depths_pad_short_branch():
    g = _graph("residual")
    first = {nid: 1 for nid in g.nodes}
    first["relu1"] = 5
    first["conv2"] = 12
    depths = size_fifo_depths(g, first)
    assert depths["ch_conv1_1"] == (5 + 12) + 2  # slack + margin
    assert depths["ch_conv1_0"] == 2
    apply_fifo_depths(g, depths)
    assert g.channels["ch_conv1_1"].depth == 19


def test_fifo_sizing_requires_latencies_for_inner_nodes():
    g = _graph("residual")
    with pytest.raises(GraphError):
        size_fifo_depths(g, {})


def test_graph_to_json_shape():
    g = _graph("residual")
    doc = graph_to_json(g)
    ids = {n["id"] for n in doc["nodes"]}
    assert "bcast_conv1" in ids and "conv1" in ids
    conv = next(n for n in doc["nodes"] if n["id"] == "conv1")
    assert conv["class"] == "sliding_window"
    assert {l["name"] for l in conv["loops"]} == {"f", "c", "kh", "kw", "n", "oh", "ow"}
    chans = {c["id"]: c for c in doc["channels"]}
    assert chans["ch_input"]["consumer"][0] == "conv1"


def test_lane_loops_recorded_for_codegen():
    g = _graph("feed_forward")
    fc1 = g.nodes["fc1"]
    assert fc1.in_lane_loop == "k"
    assert fc1.out_lane_loop == "n"
    conv = _graph("conv_relu").nodes["conv1"]
    assert (conv.in_lane_loop, conv.out_lane_loop) == ("c", "f")
