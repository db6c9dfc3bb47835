"""Command-line driver: analyze / dse / emit / simulate / all."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import benchmarks
from .analysis import classify_iterators, classify_kernel, window_extents
from .codegen import emit, render_manifest
from .dse import DseError, finalize, problem_from_graph, solve
from .graph import build_stream_graph, graph_to_json
from .model import LayerGraph, ModelError, build_graph, lower_graph, parse_model
from .resources import CostTable, ResourceBudget
from .sim import run_reference, run_stream

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_MISMATCH = 3


def _load_model(spec: str, seed: int) -> LayerGraph:
    path = Path(spec)
    if path.exists():
        return parse_model(path)
    if spec in benchmarks.BENCHMARKS:
        return build_graph(benchmarks.build(spec, seed=seed), where=spec)
    raise ModelError(
        f"model {spec!r}: no such file and not a built-in benchmark "
        f"({sorted(benchmarks.BENCHMARKS)})"
    )


def _design_name(spec: str) -> str:
    stem = Path(spec).stem
    return "".join(ch if ch.isalnum() or ch == "_" else "_" for ch in stem) or "design"


def _dump(doc: dict, out_dir: Path | None, filename: str, quiet: bool = False) -> str:
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / filename).write_text(text)
    if not quiet:
        sys.stdout.write(text)
    return text


def analyze_report(lgraph: LayerGraph) -> dict:
    entries = []
    for op in lower_graph(lgraph):
        kclass = classify_kernel(op)
        sets = classify_iterators(op)
        entry = {
            "op": op.op_id,
            "class": kclass.kind,
            "axes": [{"stride": s, "dilation": d} for s, d in kclass.axes],
            "P": sorted(sets.parallel),
            "R": sorted(sets.reduction),
            "O": [str(e) for e in sets.composite],
            "W": sorted(sets.window),
            "window_extents": [list(x) for x in window_extents(op, sets)],
        }
        entries.append(entry)
    return {"ops": entries}


def _build_design(lgraph: LayerGraph, budget: ResourceBudget, costs: CostTable):
    """Full middle-of-pipeline: stream graph, DSE, finalization."""
    graph = build_stream_graph(lgraph)
    problem = problem_from_graph(graph)
    result = solve(problem, budget, costs)
    finalize(graph, result, costs)
    return graph, result


def dse_report(graph, result) -> dict:
    return {
        "unroll": {n: dict(sorted(f.items())) for n, f in sorted(result.unroll.items())},
        "kappa": dict(sorted(result.channel_widths.items())),
        "depths": {cid: ch.depth for cid, ch in sorted(graph.channels.items())},
        "estimates": {
            "cycles_total": result.metrics.total_cycles,
            "cycles_per_node": dict(sorted(result.metrics.per_node_cycles.items())),
            "dsp": result.metrics.dsp,
            "bram": result.metrics.bram,
        },
        "optimal": result.feasible,
        "explored": result.explored,
    }


def simulate_report(lgraph: LayerGraph, graph, seed: int,
                    check_reference: bool) -> tuple[dict, np.ndarray | None, dict | None]:
    rng = np.random.default_rng(seed)
    x = rng.integers(-128, 128, size=lgraph.input_decl.shape, dtype=np.int8)
    out, trace = run_stream(graph, x)
    report = {
        "seed": seed,
        "total_steps": trace.total_steps,
        "deadlock": trace.deadlock,
        "max_occupancy": dict(sorted(trace.max_occupancy.items())),
        "first_output": dict(sorted(trace.first_output.items())),
    }
    trace_doc = {
        "max_occupancy": report["max_occupancy"],
        "first_output": report["first_output"],
        "completion": dict(sorted(trace.completion.items())),
        "busy_steps": dict(sorted(trace.busy_steps.items())),
        "total_steps": trace.total_steps,
        "deadlock": trace.deadlock,
    }
    if out is None:
        report["match"] = False
        return report, None, trace_doc
    if check_reference:
        ref = run_reference(lgraph, x)
        report["match"] = bool(np.array_equal(out, ref))
    else:
        report["match"] = None
    return report, out, trace_doc


def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", required=True,
                        help="model JSON path or built-in benchmark name")
    common.add_argument("--dsp", type=int, default=1248, help="DSP budget")
    common.add_argument("--bram", type=int, default=288, help="BRAM18K block budget")
    common.add_argument("--out", type=Path, default=None, help="artifact directory")
    common.add_argument("--seed", type=int, default=0,
                        help="seed for generated weights and simulation inputs")
    common.add_argument("--config", type=Path, default=None,
                        help="JSON cost-table overrides (dsp_costs, pipeline_depth, ii)")

    parser = argparse.ArgumentParser(
        prog="sdfc", description="streaming dataflow compiler for int8 layer graphs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", parents=[common], help="classify kernels")
    p.add_argument("--dump-graph", action="store_true",
                   help="also emit the stream graph as JSON")
    sub.add_parser("dse", parents=[common], help="solve unroll/width selection")
    sub.add_parser("emit", parents=[common], help="generate HLS source + manifest")
    p = sub.add_parser("simulate", parents=[common], help="run the streaming executor")
    p.add_argument("--trace", type=Path, default=None, help="write SimTrace JSON here")
    p.add_argument("--check-reference", action="store_true",
                   help="also run the dense executor and compare")
    p = sub.add_parser("all", parents=[common], help="full pipeline with all artifacts")
    p.add_argument("--dump-graph", action="store_true")
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    costs = CostTable()
    if args.config is not None:
        costs = CostTable.from_config(json.loads(args.config.read_text()))
    try:
        budget = ResourceBudget(dsp=args.dsp, bram=args.bram)
        lgraph = _load_model(args.model, args.seed)
    except (ModelError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    name = _design_name(args.model)
    out_dir = args.out

    if args.command == "analyze":
        _dump(analyze_report(lgraph), out_dir, "analysis.json")
        if args.dump_graph:
            _dump(graph_to_json(build_stream_graph(lgraph)), out_dir, "graph.json")
        return EXIT_OK

    try:
        graph, result = _build_design(lgraph, budget, costs)
    except DseError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE

    if args.command == "dse":
        _dump(dse_report(graph, result), out_dir, "dse.json")
        return EXIT_OK

    if args.command == "emit":
        design = emit(graph, name=name)
        target = out_dir or Path(".")
        target.mkdir(parents=True, exist_ok=True)
        (target / f"{name}.cpp").write_text(design.source)
        (target / f"{name}.manifest.json").write_text(render_manifest(design))
        print(f"wrote {target / (name + '.cpp')} and manifest")
        return EXIT_OK

    if args.command == "simulate":
        report, out, trace_doc = simulate_report(lgraph, graph, args.seed,
                                                 args.check_reference)
        if args.trace is not None:
            args.trace.parent.mkdir(parents=True, exist_ok=True)
            args.trace.write_text(json.dumps(trace_doc, indent=2, sort_keys=True) + "\n")
        _dump(report, out_dir, "simulation.json")
        if out is None:
            print("error: stream execution deadlocked", file=sys.stderr)
            return EXIT_MISMATCH
        if args.check_reference and not report["match"]:
            print("error: stream output differs from dense reference", file=sys.stderr)
            return EXIT_MISMATCH
        return EXIT_OK

    # all: every artifact, reference check mandatory
    quiet = out_dir is not None
    _dump(analyze_report(lgraph), out_dir, "analysis.json", quiet=quiet)
    _dump(graph_to_json(graph), out_dir, "graph.json", quiet=quiet)
    _dump(dse_report(graph, result), out_dir, "dse.json", quiet=quiet)
    design = emit(graph, name=name)
    target = out_dir or Path(".")
    target.mkdir(parents=True, exist_ok=True)
    (target / f"{name}.cpp").write_text(design.source)
    (target / f"{name}.manifest.json").write_text(render_manifest(design))
    report, out, _ = simulate_report(lgraph, graph, args.seed, check_reference=True)
    _dump(report, out_dir, "simulation.json", quiet=quiet)
    if out is None:
        print("error: stream execution deadlocked", file=sys.stderr)
        return EXIT_MISMATCH
    if not report["match"]:
        print("error: stream output differs from dense reference", file=sys.stderr)
        return EXIT_MISMATCH
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
