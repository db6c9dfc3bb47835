"""Functional execution: dense reference oracle and bounded-FIFO streaming run."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .affine import (
    ClampToI8,
    GenericOp,
    I32_MAX,
    I32_MIN,
    IteratorKind,
    eval_payload,
    payload_uses_acc,
)
from .graph import StreamGraph, StreamNode
from .model import LayerGraph, lower_graph


class SimError(RuntimeError):
    pass


class LivelockError(SimError):
    pass


# --- dense reference executor ----------------------------------------------


def _vec_eval(expr, slabs, acc):
    """Vectorized payload evaluation over aligned numpy slabs."""
    from . import affine as A

    if isinstance(expr, A.InputRef):
        return slabs[expr.index]
    if isinstance(expr, A.OutputAcc):
        if acc is None:
            raise SimError("payload references accumulator outside a reduction")
        return acc
    if isinstance(expr, A.ConstInt):
        return expr.value
    if isinstance(expr, A.Mul):
        return _vec_eval(expr.lhs, slabs, acc) * _vec_eval(expr.rhs, slabs, acc)
    if isinstance(expr, A.Add):
        return _vec_eval(expr.lhs, slabs, acc) + _vec_eval(expr.rhs, slabs, acc)
    if isinstance(expr, A.Max):
        return np.maximum(_vec_eval(expr.lhs, slabs, acc), _vec_eval(expr.rhs, slabs, acc))
    if isinstance(expr, A.ClampToI8):
        return np.clip(_vec_eval(expr.operand, slabs, acc), -128, 127)
    raise TypeError(f"unknown payload node {expr!r}")


def _check_i32(arr) -> None:
    if np.size(arr) and (np.max(arr) > I32_MAX or np.min(arr) < I32_MIN):
        raise OverflowError("i32 accumulator overflow in dense execution")


def execute_op(op: GenericOp, tensors: dict[str, np.ndarray]) -> np.ndarray:
    """Dense evaluation of one generic op over int64 working precision."""
    out_dims = []
    for expr in op.output[1].results:
        if not expr.is_single_dim():
            raise SimError(f"{op.op_id}: composite output expression")
        out_dims.append(expr.terms[0][0])
    out_shape = tuple(op.trip_counts[d] for d in out_dims)

    red_dims = [d for d in range(op.num_dims)
                if op.iterator_kinds[d] is IteratorKind.REDUCTION]
    red_space = [tuple()] if not red_dims else [
        tuple(p) for p in np.ndindex(*[op.trip_counts[d] for d in red_dims])
    ]

    def aligned_slab(tensor: np.ndarray, imap, rvals: dict[int, int]) -> np.ndarray:
        vectors = []
        axis_par: list[int | None] = []
        for expr in imap.results:
            offset = expr.constant
            par_dim = None
            coeff_p = 0
            for d, c in expr.terms:
                if op.iterator_kinds[d] is IteratorKind.REDUCTION:
                    offset += c * rvals[d]
                else:
                    par_dim, coeff_p = d, c
            if par_dim is None:
                vectors.append(np.array([offset]))
            else:
                vectors.append(coeff_p * np.arange(op.trip_counts[par_dim]) + offset)
            axis_par.append(par_dim)
        slab = tensor.astype(np.int64)[np.ix_(*vectors)]
        # reorder/broadcast to the output-dim axis layout
        src_axes = {d: i for i, d in enumerate(axis_par) if d is not None}
        perm, keep = [], []
        for d in out_dims:
            if d in src_axes:
                perm.append(src_axes[d])
        extra = [i for i in range(slab.ndim) if axis_par[i] is None or axis_par[i] not in out_dims]
        slab = np.transpose(slab, perm + extra)
        slab = slab.reshape(slab.shape[:len(perm)] + (1,) * 0 + tuple(
            1 for _ in extra)) if extra else slab
        # expand to full out rank with singleton axes for absent dims
        full = []
        it = iter(range(len(perm)))
        for d in out_dims:
            if d in src_axes:
                full.append(slab.shape[next(it)])
            else:
                full.append(1)
        return slab.reshape(tuple(full))

    uses_acc = payload_uses_acc(op.payload)
    root_clamp = isinstance(op.payload, ClampToI8)
    interior = op.payload.operand if (root_clamp and uses_acc) else op.payload

    acc = np.zeros(out_shape, dtype=np.int64)
    if uses_acc:
        for rpoint in red_space:
            rvals = dict(zip(red_dims, rpoint))
            slabs = [aligned_slab(tensors[name], imap, rvals) for name, imap in op.inputs]
            acc = _vec_eval(interior, slabs, acc)
            _check_i32(acc)
        if root_clamp:
            acc = np.clip(acc, -128, 127)
    else:
        if red_space != [tuple()]:
            raise SimError(f"{op.op_id}: reduction dims but payload has no accumulator")
        slabs = [aligned_slab(tensors[name], imap, {}) for name, imap in op.inputs]
        acc = np.broadcast_to(_vec_eval(op.payload, slabs, None), out_shape).copy()
        _check_i32(acc)
    if acc.size and (acc.max() > 127 or acc.min() < -128):
        raise SimError(f"{op.op_id}: stored value escapes i8 range without a clamp")
    return acc.astype(np.int8)


def run_reference(graph: LayerGraph, input_tensor: np.ndarray) -> np.ndarray:
    """Dense, in-order execution of the lowered op graph."""
    if tuple(input_tensor.shape) != graph.input_decl.shape:
        raise SimError(
            f"input shape {input_tensor.shape} != declared {graph.input_decl.shape}"
        )
    tensors: dict[str, np.ndarray] = {"input": np.asarray(input_tensor, dtype=np.int8)}
    tensors.update(graph.weights)
    for op in lower_graph(graph):
        tensors[op.op_id] = execute_op(op, tensors)
    return tensors[graph.output_layer]


# --- streaming executor ------------------------------------------------------
#
# Token order on every channel is row-major with the channel/feature axis
# innermost: rank-4 tensors stream as (n, h, w, c), rank-2 as (m, k).


def to_stream(arr: np.ndarray) -> np.ndarray:
    if arr.ndim == 4:
        return arr.transpose(0, 2, 3, 1).reshape(-1)
    if arr.ndim == 2:
        return arr.reshape(-1)
    raise SimError(f"unsupported tensor rank {arr.ndim}")


def from_stream(flat: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if len(shape) == 4:
        n, c, h, w = shape
        return flat.reshape(n, h, w, c).transpose(0, 3, 1, 2)
    if len(shape) == 2:
        return flat.reshape(shape)
    raise SimError(f"unsupported tensor rank {len(shape)}")


@dataclass
class SimTrace:
    max_occupancy: dict[str, int]
    first_output: dict[str, int]
    completion: dict[str, int]
    busy_steps: dict[str, int]
    tokens_produced: dict[str, int]
    tokens_consumed: dict[str, int]
    total_steps: int
    deadlock: dict | None = None


class _Chan:
    __slots__ = ("cid", "width", "capacity", "buf", "max_occ", "produced", "consumed")

    def __init__(self, cid: str, width: int, depth: int):
        self.cid = cid
        self.width = width
        self.capacity = width * depth
        self.buf: list[int] = []
        self.max_occ = 0
        self.produced = 0
        self.consumed = 0

    def can_read(self) -> bool:
        return len(self.buf) >= self.width

    def can_write(self) -> bool:
        return len(self.buf) + self.width <= self.capacity

    def read(self) -> list[int]:
        vals, self.buf = self.buf[: self.width], self.buf[self.width:]
        self.consumed += self.width
        return vals

    def write(self, vals) -> None:
        self.buf.extend(int(v) for v in vals)
        self.produced += self.width
        occ = math.ceil(len(self.buf) / self.width)
        if occ > self.max_occ:
            self.max_occ = occ


def _clamp(v: int) -> int:
    return -128 if v < -128 else (127 if v > 127 else int(v))


def _node_parallelism(node: StreamNode) -> dict[str, int]:
    """Effective unroll per loop, honoring full unrolls inside the pipeline."""
    out = {}
    if node.nest:
        for i, loop in enumerate(node.nest.loops):
            out[loop.name] = node.nest.u_eff(i)
    return out


def _source_proc(node: StreamNode, chans, input_tensor: np.ndarray):
    cid = node.out_channels[0]
    seq = to_stream(input_tensor).tolist()
    w = chans[cid].width
    for i in range(0, len(seq), w):
        yield ("write", cid, seq[i:i + w])


def _sink_proc(node: StreamNode, chans, collected: list[int]):
    cid = node.in_channels[0]
    total = 1
    for e in node.output_shape:
        total *= e
    w = chans[cid].width
    for _ in range(total // w):
        vals = yield ("read", cid)
        collected.extend(vals)


def _broadcast_proc(node: StreamNode, chans, tokens: int):
    in_cid = node.in_channels[0]
    outs = tuple(node.out_channels)
    w = chans[in_cid].width
    for _ in range(tokens // w):
        yield ("bcast", in_cid, outs)


def _map_proc(node: StreamNode, chans, weights):
    """Pure-parallel consume-compute-produce node."""
    in_cids = node.in_channels
    out_cid = node.out_channels[0]
    w = chans[out_cid].width
    shape = node.output_shape
    feat = shape[1] if len(shape) == 4 else shape[-1]
    total = 1
    for e in shape:
        total *= e
    if node.layer_kind == "relu":
        fn = lambda vals: [v if v > 0 else 0 for v in vals]
        for _ in range(total // w):
            yield ("map", in_cids[0], out_cid, fn)
    elif node.layer_kind == "elementwise_add":
        fn = lambda a, b: [_clamp(x + y) for x, y in zip(a, b)]
        for _ in range(total // w):
            yield ("zip", in_cids[0], in_cids[1], out_cid, fn)
    elif node.layer_kind == "bias_add":
        bias = weights[node.weight_name].astype(np.int64)
        pos = 0
        for _ in range(total // w):
            f0 = pos
            fn = (lambda vals, f0=f0:
                  [_clamp(v + int(bias[(f0 + j) % feat])) for j, v in enumerate(vals)])
            yield ("map", in_cids[0], out_cid, fn)
            pos = (pos + w) % feat
    else:
        raise SimError(f"no streaming executor for pure-parallel {node.layer_kind}")


def _conv_proc(node: StreamNode, chans, weights):
    """Conv over a row ring buffer; handles 1x1 (regular reduction) uniformly."""
    in_cid, out_cid = node.in_channels[0], node.out_channels[0]
    k_in, k_out = chans[in_cid].width, chans[out_cid].width
    nb, c, h, w = node.input_shapes[0]
    _, f, oh_n, ow_n = node.output_shape
    p = node.params
    kh, kw, s, dil = p["kernel_h"], p["kernel_w"], p["stride"], p["dilation"]
    wt = weights[node.weight_name].astype(np.int64)  # (f, c, kh, kw)
    par = _node_parallelism(node)
    u_mac = par.get("c", 1) * par.get("kh", 1) * par.get("kw", 1)
    macs = c * kh * kw
    work = math.ceil(macs / u_mac)
    span_h, span_w = dil * (kh - 1), dil * (kw - 1)
    rows = span_h + 1  # retained input rows

    for _ in range(nb):
        buf = np.zeros((c, rows, w), dtype=np.int64)
        for hh in range(h):
            row = hh % rows
            for ww in range(w):
                for c0 in range(0, c, k_in):
                    vals = yield ("read", in_cid)
                    buf[c0:c0 + k_in, row, ww] = vals
                if hh < span_h or (hh - span_h) % s or ww < span_w or (ww - span_w) % s:
                    continue
                oh, ow = (hh - span_h) // s, (ww - span_w) // s
                if oh >= oh_n or ow >= ow_n:
                    continue
                ring = [(hh - span_h + dil * i) % rows for i in range(kh)]
                window = buf[:, ring, :][:, :, ww - span_w: ww - span_w + span_w + 1: dil]
                for f0 in range(0, f, k_out):
                    if work > 1:
                        yield ("work", work - 1)
                    acc = np.tensordot(wt[f0:f0 + k_out], window, axes=3)
                    yield ("write", out_cid, [_clamp(v) for v in acc])


def _linear_proc(node: StreamNode, chans, weights):
    in_cid, out_cid = node.in_channels[0], node.out_channels[0]
    k_in, k_out = chans[in_cid].width, chans[out_cid].width
    m, k = node.input_shapes[0]
    nf = node.output_shape[1]
    wt = weights[node.weight_name].astype(np.int64)  # (k, nf)
    par = _node_parallelism(node)
    work = math.ceil(k / par.get("k", 1))
    for _ in range(m):
        line = np.zeros(k, dtype=np.int64)
        for k0 in range(0, k, k_in):
            vals = yield ("read", in_cid)
            line[k0:k0 + k_in] = vals
        for n0 in range(0, nf, k_out):
            if work > 1:
                yield ("work", work - 1)
            acc = line @ wt[:, n0:n0 + k_out]
            yield ("write", out_cid, [_clamp(v) for v in acc])


def _build_proc(node: StreamNode, chans, graph: StreamGraph,
                input_tensor: np.ndarray, sink_store: list[int]):
    if node.kind == "source":
        return _source_proc(node, chans, input_tensor)
    if node.kind == "sink":
        return _sink_proc(node, chans, sink_store)
    if node.kind == "broadcast":
        shape = graph.tensor_shapes.get(node.node_id.removeprefix("bcast_"))
        if shape is None:
            shape = node.output_shape
        tokens = 1
        for e in shape:
            tokens *= e
        return _broadcast_proc(node, chans, tokens)
    if node.layer_kind == "conv2d":
        return _conv_proc(node, chans, graph.weights)
    if node.layer_kind == "linear":
        return _linear_proc(node, chans, graph.weights)
    return _map_proc(node, chans, graph.weights)


def _blocked_channel(action, chans) -> str | None:
    """Which channel the pending action is blocked on, if any."""
    kind = action[0]
    if kind == "read":
        return action[1] if not chans[action[1]].can_read() else None
    if kind == "write":
        return action[1] if not chans[action[1]].can_write() else None
    if kind == "map":
        if not chans[action[1]].can_read():
            return action[1]
        return action[2] if not chans[action[2]].can_write() else None
    if kind == "zip":
        for cid in (action[1], action[2]):
            if not chans[cid].can_read():
                return cid
        return action[3] if not chans[action[3]].can_write() else None
    if kind == "bcast":
        if not chans[action[1]].can_read():
            return action[1]
        for cid in action[2]:
            if not chans[cid].can_write():
                return cid
        return None
    return None


def default_step_limit(graph: StreamGraph) -> int:
    total = 1000
    for node in graph.compute_nodes():
        if node.nest:
            space = 1
            for loop in node.nest.loops:
                space *= loop.trip
            total += space
        for shape in node.input_shapes:
            n = 1
            for e in shape:
                n *= e
            total += n
    return 100 * total


def run_stream(graph: StreamGraph, input_tensor: np.ndarray,
               step_limit: int | None = None,
               depth_override: int | None = None,
               node_order: list[str] | None = None
               ) -> tuple[np.ndarray | None, SimTrace]:
    """Discrete-step KPN execution over bounded blocking FIFOs.

    Each step, every node performs at most one token-granularity action.
    Returns the assembled output (None on deadlock) and the trace.
    """
    if tuple(input_tensor.shape) != graph.input_decl.shape:
        raise SimError(
            f"input shape {input_tensor.shape} != declared {graph.input_decl.shape}"
        )
    if step_limit is None:
        step_limit = default_step_limit(graph)

    chans = {
        c.cid: _Chan(c.cid, c.width,
                     c.depth if depth_override is None else depth_override)
        for c in graph.channels.values()
    }
    order = node_order or list(graph.nodes)
    sink_store: list[int] = []
    procs = {nid: _build_proc(graph.nodes[nid], chans, graph, input_tensor, sink_store)
             for nid in order}

    pending: dict[str, tuple | None] = {}
    busy: dict[str, int] = {nid: 0 for nid in order}
    busy_steps = {nid: 0 for nid in order}
    first_output: dict[str, int] = {}
    completion: dict[str, int] = {}

    def advance(nid: str, send_val) -> None:
        try:
            pending[nid] = procs[nid].send(send_val)
        except StopIteration:
            pending[nid] = None
            completion[nid] = step

    step = 0
    for nid in order:
        advance(nid, None)

    live = [nid for nid in order if pending[nid] is not None]
    while live:
        step += 1
        if step > step_limit:
            raise LivelockError(f"no completion within {step_limit} steps")
        progressed = False
        for nid in live:
            action = pending[nid]
            if busy[nid] > 0:
                busy[nid] -= 1
                busy_steps[nid] += 1
                progressed = True
                continue
            kind = action[0]
            if kind == "work":
                busy[nid] = action[1] - 1
                busy_steps[nid] += 1
                progressed = True
                advance(nid, None)
                continue
            if _blocked_channel(action, chans) is not None:
                continue
            if kind == "read":
                vals = chans[action[1]].read()
                advance(nid, vals)
            elif kind == "write":
                chans[action[1]].write(action[2])
                first_output.setdefault(nid, step)
                advance(nid, None)
            elif kind == "map":
                chans[action[2]].write(action[3](chans[action[1]].read()))
                first_output.setdefault(nid, step)
                advance(nid, None)
            elif kind == "zip":
                chans[action[3]].write(
                    action[4](chans[action[1]].read(), chans[action[2]].read()))
                first_output.setdefault(nid, step)
                advance(nid, None)
            elif kind == "bcast":
                vals = chans[action[1]].read()
                for cid in action[2]:
                    chans[cid].write(vals)
                first_output.setdefault(nid, step)
                advance(nid, None)
            else:
                raise SimError(f"unknown action {action!r} from node {nid}")
            busy_steps[nid] += 1
            progressed = True
        live = [nid for nid in live if pending[nid] is not None or busy[nid] > 0]
        if live and not progressed:
            blocked = sorted(live)
            blocked_on = sorted({
                ch for nid in blocked
                if (ch := _blocked_channel(pending[nid], chans)) is not None
            })
            trace = _make_trace(chans, first_output, completion, busy_steps, step,
                                deadlock={"blocked_nodes": blocked,
                                          "blocked_channels": blocked_on})
            return None, trace

    trace = _make_trace(chans, first_output, completion, busy_steps, step, deadlock=None)
    out = from_stream(np.array(sink_store, dtype=np.int64), graph.output_shape)
    return out.astype(np.int8), trace


def _make_trace(chans, first_output, completion, busy_steps, step, deadlock) -> SimTrace:
    return SimTrace(
        max_occupancy={cid: ch.max_occ for cid, ch in chans.items()},
        first_output=dict(first_output),
        completion=dict(completion),
        busy_steps=dict(busy_steps),
        tokens_produced={cid: ch.produced for cid, ch in chans.items()},
        tokens_consumed={cid: ch.consumed for cid, ch in chans.items()},
        total_steps=step,
        deadlock=deadlock,
    )


def measure_first_output(trace: SimTrace, node_id: str) -> int:
    if node_id not in trace.first_output:
        raise SimError(f"node {node_id!r} produced no output")
    return trace.first_output[node_id]
