import numpy as np
import pytest

from oracles import random_generic_op, sliding_window_oracle
from sdfc.affine import (
    Add,
    AffineExpr,
    ClampToI8,
    GenericOp,
    IndexingMap,
    InputRef,
    IteratorKind,
    Mul,
    OutputAcc,
)
from sdfc.analysis import (
    PURE_PARALLEL,
    REGULAR_REDUCTION,
    SLIDING_WINDOW,
    AnalysisError,
    KernelClass,
    classify_iterators,
    classify_kernel,
    detect_sliding_window,
    window_extents,
)
from sdfc.benchmarks import build
from sdfc.model import build_graph, lower_graph

P = IteratorKind.PARALLEL
R = IteratorKind.REDUCTION

MAC = ClampToI8(Add(OutputAcc(), Mul(InputRef(0), InputRef(1))))


def _benchmark_ops(name):
    g = build_graph(build(name))
    return {op.op_id: op for op in lower_graph(g)}


def test_conv_classifies_as_sliding_window_on_both_spatial_axes():
    op = _benchmark_ops("conv_relu")["conv1"]
    kc = classify_kernel(op)
    assert kc.kind == SLIDING_WINDOW
    assert kc.axes == ((1, 1), (1, 1))


def test_strided_dilated_conv_reports_parameters():
    doc = build("conv_relu", size=16)
    doc["layers"][0]["params"].update({"stride": 2, "dilation": 2})
    op = lower_graph(build_graph(doc))[0]
    assert classify_kernel(op).axes == ((2, 2), (2, 2))


def test_one_by_one_conv_is_regular_reduction():
    op = _benchmark_ops("residual")["conv2"]
    assert classify_kernel(op).kind == REGULAR_REDUCTION


def test_linear_is_regular_reduction():
    op = _benchmark_ops("linear")["fc1"]
    assert classify_kernel(op).kind == REGULAR_REDUCTION


def test_pointwise_ops_are_pure_parallel():
    ops = _benchmark_ops("residual")
    assert classify_kernel(ops["relu1"]).kind == PURE_PARALLEL
    assert classify_kernel(ops["add1"]).kind == PURE_PARALLEL


def test_constant_offset_disqualifies_sliding_window():
    # same structure as a 1-D window access, but with an offset baked in
    m_in = IndexingMap(2, (AffineExpr.comb(0, 1, 1, 1, constant=1),))
    m_out = IndexingMap(2, (AffineExpr.dim(0),))
    op = GenericOp("off", (("x", m_in),), ("off", m_out), (P, R), (4, 3), MAC)
    assert detect_sliding_window(op) == (False, [])
    assert classify_kernel(op).kind == REGULAR_REDUCTION


def test_all_parallel_op_never_slides():
    m = IndexingMap(2, (AffineExpr.comb(0, 1, 1, 1),))
    m_out = IndexingMap(2, (AffineExpr.dim(0), AffineExpr.dim(1)))
    op = GenericOp("pp", (("x", m),), ("pp", m_out), (P, P), (4, 4),
                   ClampToI8(Add(InputRef(0), InputRef(0))))
    assert detect_sliding_window(op) == (False, [])


def test_iterator_sets_for_conv():
    op = _benchmark_ops("conv_relu")["conv1"]
    sets = classify_iterators(op)
    assert sets.parallel == frozenset({0, 1})       # batch, out-channel
    assert sets.reduction == frozenset({4, 5, 6})   # in-channel, kh, kw
    assert sets.window == frozenset({2, 3})         # slid output dims
    assert len(sets.composite) == 2
    extents = window_extents(op, sets)
    assert sorted(extents) == [(2, 3), (3, 3)]


def test_iterator_sets_for_pure_parallel_merges_window_into_parallel():
    op = _benchmark_ops("conv_relu")["relu1"]
    sets = classify_iterators(op)
    assert sets.window == frozenset()
    assert sets.parallel == frozenset(range(4))


def test_visit_count_is_linear_in_result_expressions():
    op = _benchmark_ops("conv_relu")["conv1"]
    counter = [0]
    classify_iterators(op, visit_counter=counter)
    total_results = sum(len(m.results) for m in op.all_maps())
    assert counter[0] == total_results


def test_window_extents_rejects_inconsistent_sets():
    op = _benchmark_ops("conv_relu")["conv1"]
    sets = classify_iterators(op)
    bad = type(sets)(parallel=sets.parallel | sets.window,
                     reduction=sets.reduction, composite=sets.composite,
                     window=frozenset())
    with pytest.raises(AnalysisError):
        window_extents(op, bad)


def test_kernel_class_validation():
    with pytest.raises(ValueError):
        KernelClass(SLIDING_WINDOW, axes=())
    with pytest.raises(ValueError):
        KernelClass(PURE_PARALLEL, axes=((1, 1),))
    with pytest.raises(ValueError):
        KernelClass(SLIDING_WINDOW, axes=((0, 1),))


def test_detection_matches_access_pattern_oracle_sample():
    rng = np.random.default_rng(1234)
    for _ in range(100):
        op = random_generic_op(rng)
        assert detect_sliding_window(op) == sliding_window_oracle(op)
