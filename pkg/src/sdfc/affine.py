"""Symbolic loop iterators, affine access expressions and generic tensor ops."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence, Union


class IteratorKind(Enum):
    PARALLEL = "parallel"
    REDUCTION = "reduction"


@dataclass(frozen=True)
class AffineExpr:
    """Linear access expression: sum of coeff*dim terms plus a constant.

    Restricted to at most two iterator terms; richer expressions are out of
    the supported analysis grammar and rejected on construction.
    """

    terms: tuple[tuple[int, int], ...]  # (dim_index, coeff)
    constant: int = 0

    def __post_init__(self):
        if len(self.terms) > 2:
            raise ValueError(f"affine expression has {len(self.terms)} terms, at most 2 supported")
        dims = [d for d, _ in self.terms]
        if len(set(dims)) != len(dims):
            raise ValueError(f"duplicate dimension in affine expression: {dims}")
        for d, c in self.terms:
            if d < 0:
                raise ValueError(f"negative dimension index {d}")
            if c < 1:
                raise ValueError(f"coefficient must be >= 1, got {c} on d{d}")

    @staticmethod
    def dim(d: int, coeff: int = 1) -> "AffineExpr":
        return AffineExpr(terms=((d, coeff),))

    @staticmethod
    def comb(d_a: int, c_a: int, d_b: int, c_b: int, constant: int = 0) -> "AffineExpr":
        return AffineExpr(terms=((d_a, c_a), (d_b, c_b)), constant=constant)

    def is_single_dim(self) -> bool:
        return len(self.terms) == 1 and self.constant == 0

    def dims(self) -> tuple[int, ...]:
        return tuple(d for d, _ in self.terms)

    def __str__(self) -> str:
        parts = [f"{c}*d{d}" if c != 1 else f"d{d}" for d, c in self.terms]
        if self.constant or not parts:
            parts.append(str(self.constant))
        return " + ".join(parts)


def eval_affine(expr: AffineExpr, iter_values: Sequence[int]) -> int:
    """Evaluate an affine expression against concrete iterator values."""
    total = expr.constant
    for d, c in expr.terms:
        if d >= len(iter_values):
            raise ValueError(f"no value supplied for d{d} (got {len(iter_values)} values)")
        total += c * iter_values[d]
    return total


@dataclass(frozen=True)
class IndexingMap:
    num_dims: int
    results: tuple[AffineExpr, ...]

    def referenced_dims(self) -> set[int]:
        out: set[int] = set()
        for r in self.results:
            out.update(r.dims())
        return out


def is_identity_map(m: IndexingMap) -> bool:
    """True iff the map is (d0, d1, ..., d_{n-1}) with unit coefficients."""
    if len(m.results) != m.num_dims:
        return False
    for i, r in enumerate(m.results):
        if r.constant != 0 or r.terms != ((i, 1),):
            return False
    return True


# --- payload expressions -------------------------------------------------
#
# Element semantics: i8 operands, i32 accumulation, saturating clamp to i8
# at the final store.

I8_MIN, I8_MAX = -128, 127
I32_MIN, I32_MAX = -(2**31), 2**31 - 1


@dataclass(frozen=True)
class InputRef:
    index: int


@dataclass(frozen=True)
class OutputAcc:
    pass


@dataclass(frozen=True)
class ConstInt:
    value: int


@dataclass(frozen=True)
class Mul:
    lhs: "PayloadExpr"
    rhs: "PayloadExpr"


@dataclass(frozen=True)
class Add:
    lhs: "PayloadExpr"
    rhs: "PayloadExpr"


@dataclass(frozen=True)
class Max:
    lhs: "PayloadExpr"
    rhs: "PayloadExpr"


@dataclass(frozen=True)
class ClampToI8:
    operand: "PayloadExpr"


PayloadExpr = Union[InputRef, OutputAcc, ConstInt, Mul, Add, Max, ClampToI8]


def clamp_i8(v: int) -> int:
    return max(I8_MIN, min(I8_MAX, v))


def payload_count(expr: PayloadExpr, kind: type) -> int:
    """Number of payload nodes of the given type (used for DSP costing)."""
    n = 1 if isinstance(expr, kind) else 0
    for f in ("lhs", "rhs", "operand"):
        child = getattr(expr, f, None)
        if child is not None:
            n += payload_count(child, kind)
    return n


def payload_uses_acc(expr: PayloadExpr) -> bool:
    if isinstance(expr, OutputAcc):
        return True
    for f in ("lhs", "rhs", "operand"):
        child = getattr(expr, f, None)
        if child is not None and payload_uses_acc(child):
            return True
    return False


def eval_payload(expr: PayloadExpr, inputs: Sequence[int], acc: int | None) -> int:
    if isinstance(expr, InputRef):
        return inputs[expr.index]
    if isinstance(expr, OutputAcc):
        if acc is None:
            raise ValueError("payload references the accumulator but none is live")
        return acc
    if isinstance(expr, ConstInt):
        return expr.value
    if isinstance(expr, Mul):
        v = eval_payload(expr.lhs, inputs, acc) * eval_payload(expr.rhs, inputs, acc)
    elif isinstance(expr, Add):
        v = eval_payload(expr.lhs, inputs, acc) + eval_payload(expr.rhs, inputs, acc)
    elif isinstance(expr, Max):
        v = max(eval_payload(expr.lhs, inputs, acc), eval_payload(expr.rhs, inputs, acc))
    elif isinstance(expr, ClampToI8):
        v = clamp_i8(eval_payload(expr.operand, inputs, acc))
    else:
        raise TypeError(f"unknown payload node {expr!r}")
    if not (I32_MIN <= v <= I32_MAX):
        raise OverflowError(f"i32 accumulator overflow: {v}")
    return v


# --- tensors and generic ops ---------------------------------------------


@dataclass(frozen=True)
class TensorDecl:
    name: str
    shape: tuple[int, ...]
    element_bits: int = 8

    def __post_init__(self):
        if not self.shape:
            raise ValueError(f"tensor {self.name} has empty shape")
        if any(e < 1 for e in self.shape):
            raise ValueError(f"tensor {self.name} has non-positive extent: {self.shape}")
        if self.element_bits not in (8, 32):
            raise ValueError(f"element_bits must be 8 or 32, got {self.element_bits}")

    def num_elements(self) -> int:
        n = 1
        for e in self.shape:
            n *= e
        return n


@dataclass(frozen=True)
class GenericOp:
    op_id: str
    inputs: tuple[tuple[str, IndexingMap], ...]
    output: tuple[str, IndexingMap]
    iterator_kinds: tuple[IteratorKind, ...]
    trip_counts: tuple[int, ...]
    payload: PayloadExpr

    @property
    def num_dims(self) -> int:
        return len(self.iterator_kinds)

    def all_maps(self) -> tuple[IndexingMap, ...]:
        return tuple(m for _, m in self.inputs) + (self.output[1],)


def validate_op(op: GenericOp) -> list[str]:
    """Check all GenericOp invariants; each violation yields one diagnostic."""
    diags: list[str] = []
    n = op.num_dims
    if len(op.trip_counts) != n:
        diags.append(f"{op.op_id}: trip_counts length {len(op.trip_counts)} != num_dims {n}")
    if any(t < 1 for t in op.trip_counts):
        diags.append(f"{op.op_id}: non-positive trip count in {op.trip_counts}")
    seen: set[int] = set()
    for which, m in [(f"input {i}", im) for i, (_, im) in enumerate(op.inputs)] + [
        ("output", op.output[1])
    ]:
        if m.num_dims != n:
            diags.append(f"{op.op_id}: {which} map has num_dims {m.num_dims}, expected {n}")
        for r in m.results:
            for d in r.dims():
                if d >= n:
                    diags.append(f"{op.op_id}: {which} map references d{d}, num_dims is {n}")
                else:
                    seen.add(d)
    missing = set(range(n)) - seen
    if missing:
        diags.append(f"{op.op_id}: dimensions {sorted(missing)} appear in no indexing map")
    for r in op.output[1].results:
        for d in r.dims():
            if d < n and op.iterator_kinds[d] is IteratorKind.REDUCTION:
                diags.append(f"{op.op_id}: output map references reduction dim d{d}")
    return diags
