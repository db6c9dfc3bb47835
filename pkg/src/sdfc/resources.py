"""Cycle, DSP and BRAM estimation for dataflow nodes under unroll choices."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .affine import Add, ClampToI8, Max, Mul, PayloadExpr, payload_count

BRAM18K_BITS = 18432


@dataclass(frozen=True)
class Loop:
    name: str
    trip: int
    kind: str  # "parallel" | "reduction"
    # streaming loops carry the token order and cannot be unrolled
    unrollable: bool = True


@dataclass
class LoopNest:
    loops: list[Loop]
    pipeline_level: int | None = None   # index into loops, or None
    unroll: dict[str, int] = field(default_factory=dict)

    def u(self, name: str) -> int:
        return self.unroll.get(name, 1)

    def u_eff(self, idx: int) -> int:
        """Model unroll factor: loops strictly inside the pipeline are fully unrolled."""
        loop = self.loops[idx]
        if self.pipeline_level is not None and idx > self.pipeline_level:
            return loop.trip
        return self.u(loop.name)

    def validate(self) -> list[str]:
        diags = []
        for i, loop in enumerate(self.loops):
            u = self.u(loop.name)
            if u < 1 or loop.trip % u != 0:
                diags.append(f"loop {loop.name}: unroll {u} does not divide trip {loop.trip}")
            if self.pipeline_level is not None and i > self.pipeline_level and u not in (1, loop.trip):
                diags.append(
                    f"loop {loop.name}: inside pipeline level {self.pipeline_level}, "
                    f"must be fully unrolled"
                )
        return diags


@dataclass
class CostTable:
    dsp_costs: dict[str, int] = field(
        default_factory=lambda: {"mul": 1, "add": 0, "max": 0, "clamp": 0}
    )
    pipeline_depth: int = 4   # fill latency D_fill
    ii: int = 1

    @staticmethod
    def from_config(doc: dict) -> "CostTable":
        ct = CostTable()
        ct.dsp_costs.update(doc.get("dsp_costs", {}))
        ct.pipeline_depth = doc.get("pipeline_depth", ct.pipeline_depth)
        ct.ii = doc.get("ii", ct.ii)
        return ct


@dataclass(frozen=True)
class ResourceBudget:
    dsp: int = 1248
    bram: int = 288

    def __post_init__(self):
        if self.dsp < 0 or self.bram < 0:
            raise ValueError("budget must be non-negative")


def estimate_cycles(nest: LoopNest, costs: CostTable, warmup_tokens: int = 0
                    ) -> tuple[int, int]:
    """(total_cycles, first_output_cycle) for one node.

    Pipelined region: D_fill + II*(T_eff - 1); loops outside the pipeline
    multiply the region latency. Without a pipeline each iteration pays the
    full datapath depth.
    """
    d_fill = costs.pipeline_depth
    first_output = warmup_tokens + d_fill
    if nest.pipeline_level is None:
        total = d_fill
        for i, loop in enumerate(nest.loops):
            total *= loop.trip // nest.u_eff(i)
        return total, first_output
    outer = 1
    t_eff = 1
    for i, loop in enumerate(nest.loops):
        factor = loop.trip // nest.u_eff(i)
        if i < nest.pipeline_level:
            outer *= factor
        else:
            t_eff *= factor
    total = outer * (d_fill + costs.ii * (t_eff - 1))
    return total, first_output


def payload_dsp_per_iteration(payload: PayloadExpr | None, costs: CostTable) -> int:
    if payload is None:
        return 0
    return (
        costs.dsp_costs.get("mul", 0) * payload_count(payload, Mul)
        + costs.dsp_costs.get("add", 0) * payload_count(payload, Add)
        + costs.dsp_costs.get("max", 0) * payload_count(payload, Max)
        + costs.dsp_costs.get("clamp", 0) * payload_count(payload, ClampToI8)
    )


def estimate_dsp(payload: PayloadExpr | None, nest: LoopNest, costs: CostTable) -> int:
    per_iter = payload_dsp_per_iteration(payload, costs)
    if per_iter == 0:
        return 0
    total = per_iter
    for i in range(len(nest.loops)):
        total *= nest.u_eff(i)
    return total


def estimate_bram(buffers: Iterable, partition_factor: Callable[[str | None], int]) -> int:
    """BRAM18K blocks over buffers; each partition rounds up separately.

    `partition_factor` maps a buffer's partition loop name to its unroll.
    """
    blocks = 0
    for buf in buffers:
        bits = buf.bits()
        if bits == 0:
            continue
        p = max(1, partition_factor(buf.partition_loop))
        blocks += p * math.ceil(math.ceil(bits / p) / BRAM18K_BITS)
    return blocks


def fifo_bram_blocks(channels: Iterable) -> int:
    """Informational only: streams are costed outside the BRAM budget."""
    blocks = 0
    for ch in channels:
        bits = ch.width * ch.depth * ch.element_bits
        blocks += math.ceil(bits / BRAM18K_BITS)
    return blocks


def dsp_efficiency(speedup: float, dsp_compare: float, dsp_baseline: float) -> float:
    if dsp_baseline <= 0 or dsp_compare <= 0:
        raise ValueError("DSP counts must be positive")
    return round(speedup / (dsp_compare / dsp_baseline), 2)
