"""Kernel classification and iterator-set extraction from indexing maps."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

from .affine import AffineExpr, GenericOp, IteratorKind

PURE_PARALLEL = "pure_parallel"
REGULAR_REDUCTION = "regular_reduction"
SLIDING_WINDOW = "sliding_window"


@dataclass(frozen=True)
class KernelClass:
    kind: str
    # per window axis: (stride, dilation); empty unless sliding window
    axes: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        if self.kind == SLIDING_WINDOW:
            if not self.axes:
                raise ValueError("sliding window class requires at least one axis")
            if any(s < 1 or d < 1 for s, d in self.axes):
                raise ValueError(f"stride/dilation must be >= 1: {self.axes}")
        elif self.axes:
            raise ValueError(f"{self.kind} carries no window axes")


@dataclass(frozen=True)
class IteratorSets:
    parallel: frozenset[int]          # P
    reduction: frozenset[int]         # R
    composite: tuple[AffineExpr, ...]  # O, in map-result order
    window: frozenset[int]            # W

    def __post_init__(self):
        if self.parallel & self.reduction or self.parallel & self.window \
                or self.reduction & self.window:
            raise ValueError("P, R, W must be pairwise disjoint")
        for e in self.composite:
            if len(e.terms) != 2:
                raise ValueError(f"composite expression {e} does not have 2 terms")


class AnalysisError(ValueError):
    pass


def _sliding_axis(expr: AffineExpr, kinds) -> tuple[int, int] | None:
    """(stride, dilation) if the expression is parallel+reduction, else None.

    A nonzero constant offset is never produced by valid-padding lowering and
    disqualifies the match.
    """
    if len(expr.terms) != 2 or expr.constant != 0:
        return None
    (d_a, c_a), (d_b, c_b) = expr.terms
    k_a, k_b = kinds[d_a], kinds[d_b]
    if {k_a, k_b} != {IteratorKind.PARALLEL, IteratorKind.REDUCTION}:
        return None
    if k_a is IteratorKind.PARALLEL:
        return (c_a, c_b)
    return (c_b, c_a)


def detect_sliding_window(op: GenericOp) -> tuple[bool, list[tuple[int, int]]]:
    """Find sliding-window access axes across all input maps.

    Every matching axis is collected (a 2-D convolution slides along two),
    each contributing its (stride, dilation) pair.
    """
    if all(k is IteratorKind.PARALLEL for k in op.iterator_kinds):
        return (False, [])
    axes: list[tuple[int, int]] = []
    for _, m in op.inputs:
        for expr in m.results:
            hit = _sliding_axis(expr, op.iterator_kinds)
            if hit is not None:
                axes.append(hit)
    return (bool(axes), axes)


def classify_kernel(op: GenericOp) -> KernelClass:
    is_sliding, axes = detect_sliding_window(op)
    if is_sliding:
        return KernelClass(SLIDING_WINDOW, tuple(axes))
    if any(k is IteratorKind.REDUCTION for k in op.iterator_kinds):
        for _, m in op.inputs:
            for expr in m.results:
                if len(expr.terms) == 2:
                    kinds = {op.iterator_kinds[d] for d in expr.dims()}
                    if len(kinds) == 1:
                        warnings.warn(
                            f"{op.op_id}: composite expression {expr} combines two "
                            f"{next(iter(kinds)).value} iterators; treating as regular reduction"
                        )
        return KernelClass(REGULAR_REDUCTION)
    return KernelClass(PURE_PARALLEL)


def classify_iterators(op: GenericOp, visit_counter: list[int] | None = None) -> IteratorSets:
    """Partition loop dimensions into (P, R, O, W) sets.

    Each map result expression is inspected exactly once; `visit_counter`,
    when given, accumulates the number of inspected expressions so tests can
    assert the linear-time bound.
    """
    parallel: set[int] = set()
    reduction: set[int] = set()
    composite: list[AffineExpr] = []
    window: set[int] = set()
    kinds = op.iterator_kinds

    def visit():
        if visit_counter is not None:
            visit_counter[0] += 1

    for _, m in op.inputs:
        for expr in m.results:
            visit()
            if expr.is_single_dim():
                d = expr.terms[0][0]
                if kinds[d] is IteratorKind.PARALLEL:
                    parallel.add(d)
                else:
                    reduction.add(d)
            else:
                composite.append(expr)
    for expr in op.output[1].results:
        visit()
        if expr.is_single_dim():
            d = expr.terms[0][0]
            if kinds[d] is IteratorKind.PARALLEL and d not in parallel:
                window.add(d)
        else:
            raise AnalysisError(f"{op.op_id}: composite expression {expr} in output map")

    # Dims indexed only by the output map are broadcast lanes; they landed in
    # W above but behave as plain parallel lanes when nothing slides over them.
    if not composite:
        parallel |= window
        window = set()

    return IteratorSets(frozenset(parallel), frozenset(reduction),
                        tuple(composite), frozenset(window))


def window_extents(op: GenericOp, sets: IteratorSets) -> list[tuple[int, int]]:
    """(output_dim, window_size) per composite axis; size = reduction trip count."""
    out: list[tuple[int, int]] = []
    for expr in sets.composite:
        par_dim = red_dim = None
        for d, _ in expr.terms:
            if op.iterator_kinds[d] is IteratorKind.PARALLEL:
                par_dim = d
            else:
                red_dim = d
        if par_dim is None or red_dim is None:
            raise AnalysisError(f"{op.op_id}: expression {expr} is not a window access")
        if par_dim not in sets.window:
            raise AnalysisError(
                f"{op.op_id}: parallel term d{par_dim} of {expr} is not a window dimension"
            )
        out.append((par_dim, op.trip_counts[red_dim]))
    return out
