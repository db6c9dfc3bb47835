"""Resource-constrained unroll/stream-width search over the dataflow graph."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .affine import PayloadExpr
from .graph import StreamGraph, apply_fifo_depths, size_fifo_depths
from .resources import (
    CostTable,
    LoopNest,
    ResourceBudget,
    estimate_bram,
    estimate_cycles,
    estimate_dsp,
)


class DseError(ValueError):
    pass


def divisors(n: int) -> list[int]:
    if n < 1:
        raise ValueError(f"trip count must be positive, got {n}")
    return [d for d in range(1, n + 1) if n % d == 0]


@dataclass
class DseNode:
    node_id: str
    nest: LoopNest
    payload: PayloadExpr | None = None
    buffers: list = field(default_factory=list)


@dataclass
class DseProblem:
    """Unroll selection over several loop nests with optional coupled loops.

    A coupling ((node_a, loop_a), (node_b, loop_b)) forces equal unroll factors;
    it models a stream whose producer and consumer lane widths must match.
    """
    nodes: list[DseNode]
    couplings: list[tuple[tuple[str, str], tuple[str, str]]] = field(default_factory=list)

    def node(self, node_id: str) -> DseNode:
        for n in self.nodes:
            if n.node_id == node_id:
                return n
        raise DseError(f"unknown node {node_id!r}")


@dataclass
class Metrics:
    total_cycles: int
    per_node_cycles: dict[str, int]
    dsp: int
    bram: int


@dataclass
class DseResult:
    unroll: dict[str, dict[str, int]]   # node -> loop -> factor
    metrics: Metrics
    feasible: bool
    explored: int
    channel_widths: dict[str, int] = field(default_factory=dict)


# --- variable classes (union-find over coupled loops) ------------------------


def _build_classes(problem: DseProblem) -> list[tuple[list[tuple[str, str]], list[int]]]:
    """Coupled-loop equivalence classes with their shared divisor domains."""
    keys: list[tuple[str, str]] = []
    trip: dict[tuple[str, str], int] = {}
    for node in problem.nodes:
        for loop in node.nest.loops:
            if loop.unrollable:
                key = (node.node_id, loop.name)
                keys.append(key)
                trip[key] = loop.trip

    parent = {k: k for k in keys}

    def find(k):
        while parent[k] != k:
            parent[k] = parent[parent[k]]
            k = parent[k]
        return k

    for a, b in problem.couplings:
        if a not in parent or b not in parent:
            raise DseError(f"coupling references unknown or fixed loop: {a} ~ {b}")
        parent[find(a)] = find(b)

    groups: dict[tuple[str, str], list[tuple[str, str]]] = {}
    for k in keys:
        groups.setdefault(find(k), []).append(k)

    classes = []
    for root in sorted(groups):
        members = sorted(groups[root])
        domain = set(divisors(trip[members[0]]))
        for m in members[1:]:
            domain &= set(divisors(trip[m]))
        if not domain:
            raise DseError(f"coupled loops {members} share no common unroll factor")
        classes.append((members, sorted(domain)))
    return classes


def _unroll_maps(problem: DseProblem, classes, values: list[int]
                 ) -> dict[str, dict[str, int]]:
    unroll: dict[str, dict[str, int]] = {n.node_id: {} for n in problem.nodes}
    for (members, _), v in zip(classes, values):
        for node_id, loop_name in members:
            unroll[node_id][loop_name] = v
    return unroll


def evaluate(problem: DseProblem, unroll: dict[str, dict[str, int]],
             costs: CostTable) -> Metrics:
    total = 0
    per_node = {}
    dsp = 0
    bram = 0
    for node in problem.nodes:
        nest = LoopNest(node.nest.loops, node.nest.pipeline_level,
                        dict(unroll.get(node.node_id, {})))
        diags = nest.validate()
        if diags:
            raise DseError(f"{node.node_id}: " + "; ".join(diags))
        cycles, _ = estimate_cycles(nest, costs)
        per_node[node.node_id] = cycles
        total += cycles
        dsp += estimate_dsp(node.payload, nest, costs)
        bram += estimate_bram(node.buffers, lambda name: nest.u(name) if name else 1)
    return Metrics(total, per_node, dsp, bram)


def check_feasible(problem: DseProblem, unroll: dict[str, dict[str, int]],
                   budget: ResourceBudget, costs: CostTable) -> list[str]:
    """Violation diagnostics for a candidate assignment (empty = feasible)."""
    diags: list[str] = []
    for node in problem.nodes:
        nest = LoopNest(node.nest.loops, node.nest.pipeline_level,
                        dict(unroll.get(node.node_id, {})))
        diags += [f"{node.node_id}: {d}" for d in nest.validate()]
    for a, b in problem.couplings:
        ua = unroll.get(a[0], {}).get(a[1], 1)
        ub = unroll.get(b[0], {}).get(b[1], 1)
        if ua != ub:
            diags.append(f"coupled loops {a} ~ {b} have unequal factors {ua} != {ub}")
    if not diags:
        m = evaluate(problem, unroll, costs)
        if m.dsp > budget.dsp:
            diags.append(f"DSP estimate {m.dsp} exceeds budget {budget.dsp}")
        if m.bram > budget.bram:
            diags.append(f"BRAM estimate {m.bram} exceeds budget {budget.bram}")
    return diags


# --- exact search ------------------------------------------------------------


def solve(problem: DseProblem, budget: ResourceBudget,
          costs: CostTable | None = None) -> DseResult:
    """Minimize total estimated cycles subject to DSP and BRAM budgets.

    Exhaustive branch-and-bound over the divisor lattice of each coupled-loop
    class. Cycles fall and resources grow monotonically with every factor, so
    partial assignments are bounded by filling the remaining classes with
    their domain maximum (for cycles) or 1 (for resources).
    """
    costs = costs or CostTable()
    classes = _build_classes(problem)
    n_classes = len(classes)
    explored = 0

    best_metrics: Metrics | None = None
    best_values: list[int] | None = None

    def metrics_for(values: list[int]) -> Metrics:
        return evaluate(problem, _unroll_maps(problem, classes, values), costs)

    def recurse(idx: int, values: list[int]) -> None:
        nonlocal explored, best_metrics, best_values
        if best_metrics is not None:
            optimistic = values + [classes[i][1][-1] for i in range(idx, n_classes)]
            if metrics_for(optimistic).total_cycles >= best_metrics.total_cycles:
                return
        cheapest = values + [1] * (n_classes - idx)
        m_min = metrics_for(cheapest)
        if m_min.dsp > budget.dsp or m_min.bram > budget.bram:
            return
        if idx == n_classes:
            explored += 1
            m = m_min
            if best_metrics is None or m.total_cycles < best_metrics.total_cycles:
                best_metrics, best_values = m, list(values)
            return
        for v in classes[idx][1]:
            recurse(idx + 1, values + [v])

    recurse(0, [])
    if best_values is None:
        floor = metrics_for([1] * n_classes)
        binding = []
        if floor.dsp > budget.dsp:
            binding.append(f"DSP Constr: minimum estimate {floor.dsp} > budget {budget.dsp}")
        if floor.bram > budget.bram:
            binding.append(f"BRAM Constr: minimum estimate {floor.bram} > budget {budget.bram}")
        detail = "; ".join(binding) or "no assignment satisfies the coupled-loop domains"
        raise DseError(f"infeasible ({detail})")
    unroll = _unroll_maps(problem, classes, best_values)
    return DseResult(unroll=unroll, metrics=best_metrics, feasible=True,
                     explored=explored)


# --- stream-graph adapter -----------------------------------------------------


def problem_from_graph(graph: StreamGraph) -> DseProblem:
    """One DseNode per compute node; couple lane loops across every channel."""
    nodes = [DseNode(n.node_id, n.nest, n.payload, n.buffers)
             for n in graph.compute_nodes()]
    problem = DseProblem(nodes)

    def lane_key(node_id: str, producing: bool) -> tuple[str, str] | None:
        node = graph.nodes[node_id]
        if node.kind != "compute":
            return None
        loop = node.out_lane_loop if producing else node.in_lane_loop
        return (node_id, loop) if loop else None

    # Broadcast nodes pass widths through; walk to the channel's compute ends.
    def upstream(cid: str) -> tuple[str, str] | None:
        prod, _ = graph.channels[cid].producer
        if graph.nodes[prod].kind == "broadcast":
            return upstream(graph.nodes[prod].in_channels[0])
        return lane_key(prod, producing=True)

    for ch in graph.channels.values():
        a = upstream(ch.cid)
        cons, _ = ch.consumer
        if graph.nodes[cons].kind == "broadcast":
            continue  # handled by the downstream channels' upstream() walk
        b = lane_key(cons, producing=False)
        if a and b and a != b:
            problem.couplings.append((a, b))
    return problem


def warmup_tokens(node, k_in: int) -> int:
    """Read steps a compute node performs before its first output token."""
    if node.layer_kind == "conv2d":
        _, c, _, w = node.input_shapes[0]
        p = node.params
        span_h = p["dilation"] * (p["kernel_h"] - 1)
        span_w = p["dilation"] * (p["kernel_w"] - 1)
        return (span_h * w + span_w + 1) * math.ceil(c / k_in)
    if node.layer_kind == "linear":
        k = node.input_shapes[0][1]
        return math.ceil(k / k_in)
    return 1


def estimate_first_outputs(graph: StreamGraph, costs: CostTable) -> dict[str, int]:
    """Per-node first-output latency estimate, in steps. Plumbing nodes cost 1."""
    out: dict[str, int] = {}
    for node in graph.nodes.values():
        if node.kind != "compute":
            out[node.node_id] = 1
            continue
        k_in = graph.channels[node.in_channels[0]].width if node.in_channels else 1
        _, first = estimate_cycles(node.nest, costs,
                                   warmup_tokens=warmup_tokens(node, k_in))
        out[node.node_id] = first
    return out


def finalize(graph: StreamGraph, result: DseResult,
             costs: CostTable | None = None, margin: int = 2) -> DseResult:
    """Write the chosen factors into the graph, set stream widths, size FIFOs."""
    costs = costs or CostTable()
    for node_id, factors in result.unroll.items():
        graph.nodes[node_id].nest.unroll = dict(factors)

    def width_for(cid: str) -> int:
        ch = graph.channels[cid]
        cons = graph.nodes[ch.consumer[0]]
        if cons.kind == "compute" and cons.in_lane_loop:
            return cons.nest.u(cons.in_lane_loop)
        if cons.kind == "broadcast":
            return width_for(cons.out_channels[0])
        prod = graph.nodes[ch.producer[0]]
        if prod.kind == "compute" and prod.out_lane_loop:
            return prod.nest.u(prod.out_lane_loop)
        if prod.kind == "broadcast":
            return width_for(prod.in_channels[0])
        return 1

    for ch in graph.channels.values():
        ch.width = width_for(ch.cid)
        result.channel_widths[ch.cid] = ch.width

    first = estimate_first_outputs(graph, costs)
    depths = size_fifo_depths(graph, first, margin=margin)
    apply_fifo_depths(graph, depths)
    return result
