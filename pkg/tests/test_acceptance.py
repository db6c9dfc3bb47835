"""Acceptance gate: end-to-end properties checked against independent oracles.

Each test prints a CRITERION line so the suite doubles as a report.
"""

import json
import math
import re
import time

import numpy as np
import pytest

from oracles import exhaustive_dse, random_generic_op, sliding_window_oracle
from sdfc.affine import Add, ClampToI8, InputRef, Mul, OutputAcc
from sdfc.analysis import detect_sliding_window
from sdfc.benchmarks import build
from sdfc.cli import main
from sdfc.codegen import emit
from sdfc.dse import (
    DseError,
    DseNode,
    DseProblem,
    DseResult,
    Metrics,
    check_feasible,
    finalize,
    problem_from_graph,
    solve,
)
from sdfc.graph import build_stream_graph
from sdfc.model import build_graph
from sdfc.resources import CostTable, ResourceBudget, dsp_efficiency, estimate_cycles
from sdfc.sim import run_reference, run_stream

BENCHMARKS = ("conv_relu", "cascade_conv", "residual", "linear", "feed_forward")
COSTS = CostTable()
KV260 = ResourceBudget(dsp=1248, bram=288)
MAC = ClampToI8(Add(OutputAcc(), Mul(InputRef(0), InputRef(1))))


def _rand_input(lgraph, seed):
    rng = np.random.default_rng(seed)
    return rng.integers(-128, 128, size=lgraph.input_decl.shape, dtype=np.int8)


def _finalized(name, budget=KV260, unit_lanes=False, **kw):
    lgraph = build_graph(build(name, **kw))
    graph = build_stream_graph(lgraph)
    if unit_lanes:
        unroll = {n.node_id: {l.name: 1 for l in n.nest.loops if l.unrollable}
                  for n in graph.compute_nodes()}
        finalize(graph, DseResult(unroll, Metrics(0, {}, 0, 0), True, 0), COSTS)
    else:
        finalize(graph, solve(problem_from_graph(graph), budget, COSTS), COSTS)
    return lgraph, graph


def test_criterion_01_streaming_equals_dense_over_seeds():
    start = time.monotonic()
    checked = 0
    for name in BENCHMARKS:
        lgraph, graph = _finalized(name)
        for seed in range(20):
            x = _rand_input(lgraph, seed)
            out, trace = run_stream(graph, x)
            assert trace.deadlock is None, (name, seed)
            assert np.array_equal(out, run_reference(lgraph, x)), (name, seed)
            checked += 1
    elapsed = time.monotonic() - start
    assert elapsed < 60.0
    print(f"\nCRITERION 1 PASS: stream == dense on {checked} runs "
          f"({len(BENCHMARKS)} kernels x 20 seeds) in {elapsed:.1f}s")


def test_criterion_02_sliding_window_detection_vs_oracle():
    start = time.monotonic()
    rng = np.random.default_rng(20260823)
    disagreements = 0
    for _ in range(500):
        op = random_generic_op(rng)
        if detect_sliding_window(op) != sliding_window_oracle(op):
            disagreements += 1
    elapsed = time.monotonic() - start
    assert disagreements == 0
    assert elapsed < 10.0
    print(f"\nCRITERION 2 PASS: detection == access-pattern oracle on 500 "
          f"random ops, 0 disagreements, {elapsed:.1f}s")


def test_criterion_03_dse_exactness_vs_exhaustive():
    from sdfc.resources import Loop, LoopNest

    start = time.monotonic()
    rng = np.random.default_rng(7)
    trips = [4, 6, 8, 12]
    solved = 0
    for _ in range(50):
        nodes = []
        for i in range(int(rng.integers(1, 3))):
            loops = [Loop(f"u{j}", int(rng.choice(trips)), "parallel")
                     for j in range(int(rng.integers(1, 4)))]
            loops.append(Loop("s", int(rng.choice(trips)), "parallel",
                              unrollable=False))
            nodes.append(DseNode(f"n{i}", LoopNest(loops, len(loops) - 1), MAC))
        problem = DseProblem(nodes)
        if len(nodes) == 2 and rng.random() < 0.5:
            problem.couplings.append(
                (("n0", nodes[0].nest.loops[0].name),
                 ("n1", nodes[1].nest.loops[0].name)))
        budget = ResourceBudget(dsp=int(rng.integers(1, 80)), bram=288)
        best, _ = exhaustive_dse(problem, budget, COSTS)
        if best is None:
            with pytest.raises(DseError):
                solve(problem, budget, COSTS)
        else:
            res = solve(problem, budget, COSTS)
            assert res.metrics.total_cycles == best
            assert check_feasible(problem, res.unroll, budget, COSTS) == []
        solved += 1
    elapsed = time.monotonic() - start
    assert elapsed < 30.0
    print(f"\nCRITERION 3 PASS: solver == exhaustive enumeration on {solved} "
          f"random problems in {elapsed:.1f}s")


def test_criterion_04_zero_intermediate_invariant():
    static_array = re.compile(
        r"\bstatic\s+(?:const\s+)?\w+\s+(\w+)((?:\[\d+\])+)\s*(?:=|;)")
    checked_nodes = 0
    for name in BENCHMARKS:
        lgraph, graph = _finalized(name)
        for node in graph.compute_nodes():
            if node.kernel_class.kind != "sliding_window":
                continue
            k = node.params["kernel_h"]
            n = node.input_shapes[0][3]
            lanes = node.input_shapes[0][1]
            expected = ((k - 1) * n + k * k) * lanes
            assert node.stream_buffer_elements() == expected, node.node_id
            checked_nodes += 1
        tensor_sizes = {int(np.prod(s)) for s in lgraph.shapes.values()}
        source = emit(graph, name=name).source
        for m in static_array.finditer(source):
            size = math.prod(int(x) for x in re.findall(r"\[(\d+)\]", m.group(2)))
            assert size not in tensor_sizes, (name, m.group(1), size)
    assert checked_nodes >= 4
    print(f"\nCRITERION 4 PASS: (K-1)*N + K^2 elements per lane on "
          f"{checked_nodes} sliding-window nodes; no emitted storage array "
          f"matches an inter-node tensor size")


def test_criterion_05_size_invariance():
    results = {}
    for size in (32, 224):
        lgraph = build_graph(build("conv_relu", size=size))
        graph = build_stream_graph(lgraph)
        res = solve(problem_from_graph(graph), KV260, COSTS)
        results[size] = (res.metrics.bram, res.metrics.dsp, res.unroll)
    assert results[32][0] == results[224][0]  # BRAM, exact equality
    assert results[32][1] == results[224][1]  # DSP, exact equality
    print(f"\nCRITERION 5 PASS: 32x32 and 224x224 both estimate "
          f"BRAM={results[32][0]}, DSP={results[32][1]}")


def test_criterion_06_budget_sweep_monotonicity(capsys):
    dsps, cycles = [], []
    for budget in (1248, 250, 50):
        code = main(["dse", "--model", "conv_relu", "--dsp", str(budget)])
        out = capsys.readouterr().out
        assert code == 0
        est = json.loads(out)["estimates"]
        assert est["dsp"] <= budget
        dsps.append(est["dsp"])
        cycles.append(est["cycles_total"])
    assert dsps == sorted(dsps, reverse=True)
    assert cycles == sorted(cycles)
    with capsys.disabled():
        print(f"\nCRITERION 6 PASS: budgets 1248/250/50 -> DSP {dsps}, "
              f"cycles {cycles}")


def test_criterion_07_deadlock_handling():
    lgraph, graph = _finalized("residual", unit_lanes=True)
    completed = 0
    for seed in range(20):
        out, trace = run_stream(graph, _rand_input(lgraph, seed))
        assert trace.deadlock is None, seed
        assert out is not None
        completed += 1
    # forcing every FIFO to depth 1 must deadlock (not livelock) and the
    # starved bypass channel of the fork-join diamond must be identified
    out, trace = run_stream(graph, _rand_input(lgraph, 99), depth_override=1)
    assert out is None
    assert trace.deadlock is not None
    assert "ch_conv1_1" in trace.deadlock["blocked_channels"]
    print(f"\nCRITERION 7 PASS: residual completed on {completed}/20 seeds "
          f"with computed depths; depth=1 deadlocks on bypass ch_conv1_1")


def test_criterion_08_cycle_model_sanity_band():
    worst = 0.0
    checked = 0
    for name in BENCHMARKS:
        lgraph, graph = _finalized(name, unit_lanes=True)
        out, trace = run_stream(graph, _rand_input(lgraph, 0))
        assert trace.deadlock is None
        for node in graph.compute_nodes():
            est, _ = estimate_cycles(node.nest, COSTS)
            sim = trace.busy_steps[node.node_id]
            err = abs(est - sim) / sim
            assert err <= 0.25, (name, node.node_id, est, sim, err)
            worst = max(worst, err)
            checked += 1
    print(f"\nCRITERION 8 PASS: |estimate - simulated| / simulated <= 25% on "
          f"{checked} nodes at kappa=1 (worst {worst:.1%})")


def test_criterion_09_dsp_efficiency_formula():
    value = dsp_efficiency(504, 246, 5)
    assert abs(value - 10.24) <= 0.01
    print(f"\nCRITERION 9 PASS: dsp_efficiency(504, 246, 5) = {value}")


def test_criterion_10_end_to_end_determinism(tmp_path, capsys):
    dirs = [tmp_path / "run_a", tmp_path / "run_b"]
    for d in dirs:
        code = main(["all", "--model", "residual", "--seed", "11",
                     "--out", str(d)])
        capsys.readouterr()
        assert code == 0
    files = sorted(p.name for p in dirs[0].iterdir())
    assert {"residual.cpp", "residual.manifest.json", "dse.json",
            "graph.json", "simulation.json", "analysis.json"} <= set(files)
    for f in files:
        assert (dirs[0] / f).read_bytes() == (dirs[1] / f).read_bytes(), f
    with capsys.disabled():
        print(f"\nCRITERION 10 PASS: two `all` runs byte-identical across "
              f"{len(files)} artifacts")
