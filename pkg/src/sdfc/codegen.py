"""HLS source emission for a finalized stream graph, plus the design manifest."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

import numpy as np

from .graph import StreamGraph, StreamNode

_IDENT = re.compile(r"[^0-9A-Za-z_]")


def _ident(name: str) -> str:
    s = _IDENT.sub("_", name)
    return s if s and not s[0].isdigit() else f"n_{s}"


def _init_list(arr: np.ndarray) -> str:
    return ", ".join(str(int(v)) for v in arr.reshape(-1))


def _storage_impl(bits: int, partitions: int) -> str:
    return "bram" if bits // max(1, partitions) > 4096 else "lutram"


@dataclass
class EmittedDesign:
    name: str
    top_function: str
    node_functions: list[tuple[str, str]]
    manifest: dict = field(default_factory=dict)

    @property
    def source(self) -> str:
        parts = [_HEADER.format(name=self.name)]
        parts += [text for _, text in self.node_functions]
        parts.append(self.top_function)
        return "\n".join(parts)


_HEADER = """\
// {name}: streaming dataflow accelerator (generated)
#include <hls_stream.h>
#include <ap_int.h>
#include <stdint.h>

typedef int8_t data_t;
typedef int32_t acc_t;

static inline data_t clamp_i8(acc_t v) {{
    if (v > 127) return 127;
    if (v < -128) return -128;
    return (data_t) v;
}}
"""


def _bus_type(width: int) -> str:
    return "data_t" if width == 1 else f"ap_int<{8 * width}>"


def _lane_unpack(var: str, bus: str, width: int, indent: str) -> list[str]:
    if width == 1:
        return [f"{indent}data_t {var}[1];", f"{indent}{var}[0] = {bus};"]
    return [
        f"{indent}data_t {var}[{width}];",
        f"{indent}for (int l = 0; l < {width}; ++l) {{",
        f"{indent}#pragma HLS UNROLL",
        f"{indent}    {var}[l] = (data_t) {bus}.range(8 * l + 7, 8 * l);",
        f"{indent}}}",
    ]


def _lane_pack(bus_ty: str, var: str, vals: str, width: int, indent: str) -> list[str]:
    if width == 1:
        return [f"{indent}{bus_ty} {var} = {vals}[0];"]
    return [
        f"{indent}{bus_ty} {var} = 0;",
        f"{indent}for (int l = 0; l < {width}; ++l) {{",
        f"{indent}#pragma HLS UNROLL",
        f"{indent}    {var}.range(8 * l + 7, 8 * l) = {vals}[l];",
        f"{indent}}}",
    ]


def _buffer_decls(node: StreamNode, weights: dict[str, np.ndarray],
                  buffer_rows: list[dict]) -> list[str]:
    """Declarations + pragmas for a node's local buffers; records manifest rows."""
    lines: list[str] = []
    nest = node.nest
    for buf in node.buffers:
        factor = nest.u(buf.partition_loop) if (nest and buf.partition_loop) else 1
        if buf.kind == "weight":
            data = weights[buf.weight_name]
            dims = "".join(f"[{e}]" for e in buf.shape)
            lines.append(f"    static const data_t {buf.name}{dims} = {{ "
                         f"{_init_list(data)} }};")
            storage = _storage_impl(buf.bits(), factor)
        elif buf.kind == "line":
            lines.append(f"    static data_t {buf.name}"
                         f"[{buf.rows}][{buf.row_length}][{buf.channels_dim}];")
            storage = _storage_impl(buf.bits(), factor)
        elif buf.kind == "window":
            dims = "".join(f"[{e}]" for e in buf.shape) + f"[{buf.replication}]"
            lines.append(f"    data_t {buf.name}{dims};")
            lines.append(f"#pragma HLS ARRAY_PARTITION variable={buf.name} complete dim=0")
            buffer_rows.append({"name": f"{node.node_id}.{buf.name}",
                                "bits": buf.bits(), "partitions": buf.elements(),
                                "storage": "registers"})
            continue
        else:  # data_line
            lines.append(f"    static data_t {buf.name}[{buf.length}];")
            storage = _storage_impl(buf.bits(), factor)
        if factor > 1:
            lines.append(f"#pragma HLS ARRAY_PARTITION variable={buf.name} "
                         f"cyclic factor={factor} dim=1")
        lines.append(f"#pragma HLS BIND_STORAGE variable={buf.name} "
                     f"type=ram_2p impl={storage}")
        buffer_rows.append({"name": f"{node.node_id}.{buf.name}",
                            "bits": buf.bits(), "partitions": factor,
                            "storage": storage})
    return lines


def _unroll_pragma(node: StreamNode, loop: str) -> list[str]:
    u = node.nest.u(loop) if node.nest else 1
    return [f"#pragma HLS UNROLL factor={u}"] if u > 1 else []


def _emit_conv(node: StreamNode, graph: StreamGraph, buffer_rows) -> str:
    fn = _ident(node.node_id)
    in_w = graph.channels[node.in_channels[0]].width
    out_w = graph.channels[node.out_channels[0]].width
    _, c, h, w = node.input_shapes[0]
    _, f, oh, ow = node.output_shape
    p = node.params
    kh, kw, s, dil = p["kernel_h"], p["kernel_w"], p["stride"], p["dilation"]
    span_h, span_w = dil * (kh - 1), dil * (kw - 1)
    sliding = node.kernel_class.kind == "sliding_window"

    L: list[str] = []
    L.append(f"static void {fn}(hls::stream<{_bus_type(in_w)}> &s_in, "
             f"hls::stream<{_bus_type(out_w)}> &s_out) {{")
    L += _buffer_decls(node, graph.weights, buffer_rows)
    L.append(f"    ROW: for (int y = 0; y < {h}; ++y) {{")
    L.append(f"    COL: for (int x = 0; x < {w}; ++x) {{")
    L.append(f"        RD: for (int c0 = 0; c0 < {c}; c0 += {in_w}) {{")
    L.append(f"            {_bus_type(in_w)} bus = s_in.read();")
    L += _lane_unpack("px", "bus", in_w, "            ")
    if sliding:
        # shift the window left, refill its last column from the line buffer,
        # then retire the oldest line-buffer row with the fresh pixel
        L.append("            SHIFT: for (int l = 0; l < %d; ++l) {" % in_w)
        L.append("            #pragma HLS UNROLL")
        L.append(f"                int ch = c0 + l;")
        if kh > 1:
            L.append(f"                for (int r = 0; r < {kh - 1}; ++r)")
            L.append(f"                    window_buf[r][{kw - 1}][ch] = line_buf[r][x][ch];")
            L.append(f"                for (int r = 0; r < {kh - 2}; ++r)")
            L.append(f"                    line_buf[r][x][ch] = line_buf[r + 1][x][ch];")
            L.append(f"                line_buf[{kh - 2}][x][ch] = px[l];")
        L.append(f"                for (int r = 0; r < {kh}; ++r)")
        L.append(f"                    for (int q = 0; q < {kw - 1}; ++q)")
        L.append(f"                        window_buf[r][q][ch] = window_buf[r][q + 1][ch];")
        L.append(f"                window_buf[{kh - 1}][{kw - 1}][ch] = px[l];")
        L.append("            }")
    else:
        L.append(f"            for (int l = 0; l < {in_w}; ++l) {{")
        L.append("            #pragma HLS UNROLL")
        L.append(f"                {node.buffers[0].name}[c0 + l] = px[l];")
        L.append("            }")
    L.append("        }")
    cond = (f"y >= {span_h} && x >= {span_w} && "
            f"(y - {span_h}) % {s} == 0 && (x - {span_w}) % {s} == 0")
    L.append(f"        if ({cond}) {{")
    L.append(f"        OC: for (int f0 = 0; f0 < {f}; f0 += {out_w}) {{")
    L.append("        #pragma HLS PIPELINE II=1")
    L.append(f"            data_t res[{out_w}];")
    L.append(f"            LANE: for (int j = 0; j < {out_w}; ++j) {{")
    L.append("            #pragma HLS UNROLL")
    L.append("                acc_t acc = 0;")
    L.append(f"                MC: for (int c = 0; c < {c}; ++c) {{")
    L += _unroll_pragma(node, "c")
    L.append(f"                MH: for (int r = 0; r < {kh}; ++r) {{")
    L += _unroll_pragma(node, "kh")
    L.append(f"                MW: for (int q = 0; q < {kw}; ++q) {{")
    L += _unroll_pragma(node, "kw")
    src = "window_buf[r][q][c]" if sliding else f"{node.buffers[0].name}[c]"
    L.append(f"                    acc += (acc_t) {src} * w[f0 + j][c][r][q];")
    L.append("                }}}")
    L.append("                res[j] = clamp_i8(acc);")
    L.append("            }")
    L += _lane_pack(_bus_type(out_w), "obus", "res", out_w, "            ")
    L.append("            s_out.write(obus);")
    L.append("        }")
    L.append("        }")
    L.append("    }")
    L.append("    }")
    L.append("}")
    L.append("")
    return "\n".join(L)


def _emit_linear(node: StreamNode, graph: StreamGraph, buffer_rows) -> str:
    fn = _ident(node.node_id)
    in_w = graph.channels[node.in_channels[0]].width
    out_w = graph.channels[node.out_channels[0]].width
    m, k = node.input_shapes[0]
    nf = node.output_shape[1]
    L: list[str] = []
    L.append(f"static void {fn}(hls::stream<{_bus_type(in_w)}> &s_in, "
             f"hls::stream<{_bus_type(out_w)}> &s_out) {{")
    L += _buffer_decls(node, graph.weights, buffer_rows)
    L.append(f"    ROWS: for (int i = 0; i < {m}; ++i) {{")
    L.append(f"        RD: for (int k0 = 0; k0 < {k}; k0 += {in_w}) {{")
    L.append(f"            {_bus_type(in_w)} bus = s_in.read();")
    L += _lane_unpack("px", "bus", in_w, "            ")
    L.append(f"            for (int l = 0; l < {in_w}; ++l) {{")
    L.append("            #pragma HLS UNROLL")
    L.append("                data_line[k0 + l] = px[l];")
    L.append("            }")
    L.append("        }")
    L.append(f"        OUT: for (int n0 = 0; n0 < {nf}; n0 += {out_w}) {{")
    L.append("        #pragma HLS PIPELINE II=1")
    L.append(f"            data_t res[{out_w}];")
    L.append(f"            LANE: for (int j = 0; j < {out_w}; ++j) {{")
    L.append("            #pragma HLS UNROLL")
    L.append("                acc_t acc = 0;")
    L.append(f"                DOT: for (int kk = 0; kk < {k}; ++kk) {{")
    L += _unroll_pragma(node, "k")
    L.append("                    acc += (acc_t) data_line[kk] * w[kk][n0 + j];")
    L.append("                }")
    L.append("                res[j] = clamp_i8(acc);")
    L.append("            }")
    L += _lane_pack(_bus_type(out_w), "obus", "res", out_w, "            ")
    L.append("            s_out.write(obus);")
    L.append("        }")
    L.append("    }")
    L.append("}")
    L.append("")
    return "\n".join(L)


def _pointwise_expr(node: StreamNode, args: list[str]) -> str:
    if node.layer_kind == "relu":
        return f"({args[0]} > 0 ? {args[0]} : (data_t) 0)"
    if node.layer_kind == "elementwise_add":
        return f"clamp_i8((acc_t) {args[0]} + (acc_t) {args[1]})"
    if node.layer_kind == "bias_add":
        return f"clamp_i8((acc_t) {args[0]} + (acc_t) bias[f0 + l])"
    raise ValueError(f"no pointwise template for {node.layer_kind}")


def _emit_pointwise(node: StreamNode, graph: StreamGraph, buffer_rows) -> str:
    fn = _ident(node.node_id)
    widths = [graph.channels[cid].width for cid in node.in_channels]
    out_w = graph.channels[node.out_channels[0]].width
    shape = node.output_shape
    feat = shape[1] if len(shape) == 4 else shape[-1]
    total = int(np.prod(shape))
    args = ", ".join(
        f"hls::stream<{_bus_type(wd)}> &s_in{i}" for i, wd in enumerate(widths)
    ) + f", hls::stream<{_bus_type(out_w)}> &s_out"
    L: list[str] = []
    L.append(f"static void {fn}({args}) {{")
    L += _buffer_decls(node, graph.weights, buffer_rows)
    L.append(f"    int f0 = 0;")
    L.append(f"    TOK: for (int t = 0; t < {total}; t += {out_w}) {{")
    L.append("    #pragma HLS PIPELINE II=1")
    for i, wd in enumerate(widths):
        L.append(f"        {_bus_type(wd)} bus{i} = s_in{i}.read();")
        L += _lane_unpack(f"px{i}", f"bus{i}", wd, "        ")
    L.append(f"        data_t res[{out_w}];")
    L.append(f"        LANE: for (int l = 0; l < {out_w}; ++l) {{")
    L.append("        #pragma HLS UNROLL")
    expr = _pointwise_expr(node, [f"px{i}[l]" for i in range(len(widths))])
    L.append(f"            res[l] = {expr};")
    L.append("        }")
    L += _lane_pack(_bus_type(out_w), "obus", "res", out_w, "        ")
    L.append("        s_out.write(obus);")
    L.append(f"        f0 = (f0 + {out_w}) % {feat};")
    L.append("    }")
    L.append("}")
    L.append("")
    return "\n".join(L)


def _emit_broadcast(node: StreamNode, graph: StreamGraph) -> str:
    fn = _ident(node.node_id)
    in_w = graph.channels[node.in_channels[0]].width
    total = int(np.prod(node.output_shape))
    outs = ", ".join(f"hls::stream<{_bus_type(in_w)}> &s_out{i}"
                     for i in range(len(node.out_channels)))
    L = [f"static void {fn}(hls::stream<{_bus_type(in_w)}> &s_in, {outs}) {{"]
    L.append(f"    TOK: for (int t = 0; t < {total}; t += {in_w}) {{")
    L.append("    #pragma HLS PIPELINE II=1")
    L.append(f"        {_bus_type(in_w)} v = s_in.read();")
    for i in range(len(node.out_channels)):
        L.append(f"        s_out{i}.write(v);")
    L.append("    }")
    L.append("}")
    L.append("")
    return "\n".join(L)


def _emit_top(graph: StreamGraph, name: str) -> str:
    src_cid = graph.nodes[graph.source_id].out_channels[0]
    sink_cid = graph.nodes[graph.sink_id].in_channels[0]
    in_w = graph.channels[src_cid].width
    out_w = graph.channels[sink_cid].width
    L = [f"void {_ident(name)}_top(hls::stream<{_bus_type(in_w)}> &s_in, "
         f"hls::stream<{_bus_type(out_w)}> &s_out) {{"]
    L.append("#pragma HLS DATAFLOW")
    internal = [c for c in graph.channels.values()
                if c.cid not in (src_cid, sink_cid)]
    for ch in internal:
        L.append(f"    static hls::stream<{_bus_type(ch.width)}> "
                 f"{_ident(ch.cid)}(\"{ch.cid}\");")
        L.append(f"#pragma HLS STREAM variable={_ident(ch.cid)} depth={ch.depth}")
    # the boundary streams carry depth pragmas too, on the caller-facing ports
    L.append(f"#pragma HLS STREAM variable=s_in depth={graph.channels[src_cid].depth}")
    L.append(f"#pragma HLS STREAM variable=s_out depth={graph.channels[sink_cid].depth}")

    def port(cid: str) -> str:
        if cid == src_cid:
            return "s_in"
        if cid == sink_cid:
            return "s_out"
        return _ident(cid)

    for node in graph.nodes.values():
        if node.kind in ("source", "sink"):
            continue
        args = [port(cid) for cid in node.in_channels] + \
               [port(cid) for cid in node.out_channels]
        L.append(f"    {_ident(node.node_id)}({', '.join(args)});")
    L.append("}")
    L.append("")
    return "\n".join(L)


def emit(graph: StreamGraph, name: str = "design") -> EmittedDesign:
    """Deterministic source + manifest for a finalized graph."""
    buffer_rows: list[dict] = []
    funcs: list[tuple[str, str]] = []
    for node in graph.nodes.values():
        if node.kind in ("source", "sink"):
            continue
        if node.kind == "broadcast":
            funcs.append((node.node_id, _emit_broadcast(node, graph)))
        elif node.layer_kind == "conv2d":
            funcs.append((node.node_id, _emit_conv(node, graph, buffer_rows)))
        elif node.layer_kind == "linear":
            funcs.append((node.node_id, _emit_linear(node, graph, buffer_rows)))
        else:
            funcs.append((node.node_id, _emit_pointwise(node, graph, buffer_rows)))
    top = _emit_top(graph, name)
    design = EmittedDesign(name=name, top_function=top, node_functions=funcs)

    counts: dict[str, int] = {}
    for kind in re.findall(r"#pragma HLS (\w+)", design.source):
        counts[kind] = counts.get(kind, 0) + 1
    design.manifest = {
        "pragmas": dict(sorted(counts.items())),
        "streams": [
            {"id": ch.cid, "depth": ch.depth, "lanes": ch.width}
            for ch in sorted(graph.channels.values(), key=lambda c: c.cid)
        ],
        "buffers": sorted(buffer_rows, key=lambda b: b["name"]),
    }
    return design


def render_manifest(design: EmittedDesign) -> str:
    return json.dumps(design.manifest, indent=2, sort_keys=True) + "\n"
