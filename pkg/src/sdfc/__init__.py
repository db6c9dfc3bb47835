"""Streaming dataflow compiler for int8 layer graphs.

Pipeline: parse a JSON layer model, lower layers to affine generic ops,
classify kernels from their indexing maps, build a fully streaming dataflow
graph with line buffers, solve a resource-constrained unroll/stream-width
search, size FIFOs against deadlock, emit HLS-annotated source, and verify
the stream semantics against a dense reference executor.
"""

from .affine import AffineExpr, GenericOp, IndexingMap, IteratorKind, TensorDecl
from .analysis import (
    PURE_PARALLEL,
    REGULAR_REDUCTION,
    SLIDING_WINDOW,
    IteratorSets,
    KernelClass,
    classify_iterators,
    classify_kernel,
    detect_sliding_window,
)
from .codegen import EmittedDesign, emit, render_manifest
from .dse import (
    DseNode,
    DseProblem,
    DseResult,
    check_feasible,
    finalize,
    problem_from_graph,
    solve,
)
from .graph import StreamGraph, build_stream_graph, size_fifo_depths
from .model import LayerGraph, ModelError, build_graph, lower_graph, parse_model
from .resources import (
    BRAM18K_BITS,
    CostTable,
    Loop,
    LoopNest,
    ResourceBudget,
    dsp_efficiency,
    estimate_bram,
    estimate_cycles,
    estimate_dsp,
)
from .sim import SimTrace, measure_first_output, run_reference, run_stream

__version__ = "0.1.0"
