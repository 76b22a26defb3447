"""Domain types for low-rank adapters and merge plans.

Adapter matrices are stored as float32 (matching adapter-file precision);
all products accumulate in float64.  Every type is immutable after
construction, so unrestricted concurrent use is safe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import (
    ConstraintViolation,
    DimensionMismatch,
    EmptyPlan,
    InvalidRates,
    UnknownAdapter,
)

#: Absolute tolerance on the orthogonal capacity constraint sum(1 - p_j) <= 1.
#: Absorbs decimal-literal rounding of rates arriving as CLI strings.
CONSTRAINT_TOL = 1e-9


class MergeStrategy(str, Enum):
    DIRECT = "direct"
    MC_DROPOUT = "dropout"
    ORTHOGONAL = "orthogonal"


def _frozen_f32(value, shape: tuple[int, int], what: str) -> np.ndarray:
    arr = np.array(value, dtype=np.float32, order="C", copy=True)
    if arr.shape != shape:
        raise DimensionMismatch(f"{what} must have shape {shape}, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{what} contains non-finite entries")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class LowRankAdapter:
    """One adapter's factor pair; its dense update is ``scale * factor_b @ factor_a``."""

    name: str
    d_in: int
    d_out: int
    rank: int
    factor_a: np.ndarray  # (rank, d_in) float32
    factor_b: np.ndarray  # (d_out, rank) float32
    scale: float = 1.0

    def __post_init__(self) -> None:
        for dim_name in ("d_in", "d_out", "rank"):
            if int(getattr(self, dim_name)) < 1:
                raise DimensionMismatch(f"{dim_name} must be a positive integer")
        if self.rank > min(self.d_in, self.d_out):
            raise DimensionMismatch(
                f"rank {self.rank} exceeds min(d_in, d_out) = {min(self.d_in, self.d_out)}"
            )
        if not math.isfinite(self.scale):
            raise ValueError("scale must be finite")
        object.__setattr__(
            self, "factor_a", _frozen_f32(self.factor_a, (self.rank, self.d_in), "factor_a")
        )
        object.__setattr__(
            self, "factor_b", _frozen_f32(self.factor_b, (self.d_out, self.rank), "factor_b")
        )


@dataclass(frozen=True)
class BaseLayer:
    """Frozen base weight; ``weight=None`` means the base contribution is zero."""

    weight: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.weight is not None:
            w = np.array(self.weight, dtype=np.float32, order="C", copy=True)
            if w.ndim != 2:
                raise DimensionMismatch(f"base weight must be a matrix, got ndim={w.ndim}")
            if not np.isfinite(w).all():
                raise ValueError("base weight contains non-finite entries")
            w.flags.writeable = False
            object.__setattr__(self, "weight", w)


@dataclass(frozen=True)
class PlanEntry:
    adapter: str
    weight: float = 1.0
    dropout: float = 0.0


@dataclass(frozen=True)
class MergePlan:
    """Ordered adapter references with merge weights, dropout rates, and a seed."""

    entries: tuple[PlanEntry, ...]
    strategy: MergeStrategy = MergeStrategy.DIRECT
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", tuple(self.entries))
        object.__setattr__(self, "strategy", MergeStrategy(self.strategy))

    @property
    def weights(self) -> tuple[float, ...]:
        return tuple(e.weight for e in self.entries)

    @property
    def rates(self) -> tuple[float, ...]:
        return tuple(e.dropout for e in self.entries)


def check_rates(rates: Sequence[float]) -> None:
    """Each dropout rate must lie in [0, 1]."""
    for j, p in enumerate(rates):
        if not (math.isfinite(p) and 0.0 <= p <= 1.0):
            raise InvalidRates(f"dropout rate p_{j + 1} = {p!r} outside [0, 1]")


def check_orthogonal_capacity(rates: Sequence[float]) -> None:
    """Enforce sum(1 - p_j) <= 1 (+ tolerance) for orthogonal plans."""
    check_rates(rates)
    keep_sum = math.fsum(1.0 - p for p in rates)
    if keep_sum > 1.0 + CONSTRAINT_TOL:
        raise ConstraintViolation(
            f"sum of keep rates sum(1-p) = {keep_sum:.12g} exceeds 1; "
            "orthogonal merging cannot allocate more than the full output"
        )


def validate_plan(
    plan: MergePlan, adapters: Sequence[LowRankAdapter]
) -> list[LowRankAdapter]:
    """Check all plan invariants; returns the referenced adapters in plan order.

    Direct and Monte-Carlo dropout plans skip the capacity constraint; the
    orthogonal strategy additionally requires sum(1 - p_j) <= 1 + 1e-9.
    """
    if len(plan.entries) == 0:
        raise EmptyPlan("merge plan has no entries")
    by_name = {a.name: a for a in adapters}
    resolved = []
    for entry in plan.entries:
        if entry.adapter not in by_name:
            raise UnknownAdapter(f"plan references unknown adapter {entry.adapter!r}")
        resolved.append(by_name[entry.adapter])
        if not math.isfinite(entry.weight):
            raise InvalidRates(f"weight for {entry.adapter!r} is not finite")
    d_in, d_out = resolved[0].d_in, resolved[0].d_out
    for a in resolved[1:]:
        if (a.d_in, a.d_out) != (d_in, d_out):
            raise DimensionMismatch(
                f"adapter {a.name!r} has dims ({a.d_in}, {a.d_out}), expected ({d_in}, {d_out})"
            )
    check_rates(plan.rates)
    if plan.strategy is MergeStrategy.ORTHOGONAL:
        check_orthogonal_capacity(plan.rates)
    return resolved


def apply_adapter(adapter: LowRankAdapter, h: np.ndarray) -> np.ndarray:
    """scale * B (A h), computed factor-by-factor in float64.

    Never materializes the d_out x d_in product; cost O((d_in + d_out) * rank).
    """
    h = np.asarray(h, dtype=np.float64)
    if h.shape != (adapter.d_in,):
        raise DimensionMismatch(
            f"input has length {h.shape}, adapter {adapter.name!r} expects ({adapter.d_in},)"
        )
    t = adapter.factor_a.astype(np.float64) @ h
    return adapter.scale * (adapter.factor_b.astype(np.float64) @ t)


def materialize_delta(adapter: LowRankAdapter) -> np.ndarray:
    """Dense ``scale * B @ A`` in float64.  Debugging and oracle use only."""
    return adapter.scale * (
        adapter.factor_b.astype(np.float64) @ adapter.factor_a.astype(np.float64)
    )
