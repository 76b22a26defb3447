"""Combining base output and adapter outputs under the three merge strategies.

The shared recipe: compute raw adapter outputs x_j = scale_j * B_j A_j h,
transform them (identity / independent dropout / chained orthogonal dropout),
then return ``W h + sum_j w_j y_j``.  Dropout transforms rescale by
1/(1 - p_j) so each y_j matches x_j in expectation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import masks as masks_mod
from . import rng
from .errors import DimensionMismatch, EmptyPlan, InvalidRate
from .masks import MaskSet
from .model import (
    BaseLayer,
    LowRankAdapter,
    MergePlan,
    MergeStrategy,
    PlanEntry,
    apply_adapter,
    check_orthogonal_capacity,
    check_rates,
    validate_plan,
)


@dataclass(frozen=True)
class MergeOutput:
    """Merged vector plus the per-adapter contributions that built it.

    ``contributions[j]`` is y_j: post-mask, post-rescale, pre-weight.  The
    output always equals ``base_part + sum_j weights[j] * contributions[j]``.
    """

    output: np.ndarray  # (d_out,) float64
    base_part: np.ndarray  # (d_out,) float64
    contributions: np.ndarray  # (k, d_out) float64
    weights: tuple[float, ...]
    mask_set: MaskSet | None = None

    def __post_init__(self) -> None:
        for name in ("output", "base_part", "contributions"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)


def _raw_outputs(
    adapters: Sequence[LowRankAdapter], h: np.ndarray
) -> np.ndarray:
    if len(adapters) == 0:
        raise EmptyPlan("no adapters to merge")
    d_in, d_out = adapters[0].d_in, adapters[0].d_out
    for a in adapters[1:]:
        if (a.d_in, a.d_out) != (d_in, d_out):
            raise DimensionMismatch(
                f"adapter {a.name!r} has dims ({a.d_in}, {a.d_out}), expected ({d_in}, {d_out})"
            )
    return np.stack([apply_adapter(a, h) for a in adapters])


def _base_part(base: BaseLayer | None, h: np.ndarray, d_out: int) -> np.ndarray:
    if base is None or base.weight is None:
        return np.zeros(d_out, dtype=np.float64)
    w = base.weight
    if w.shape != (d_out, len(h)):
        raise DimensionMismatch(
            f"base weight has shape {w.shape}, expected ({d_out}, {len(h)})"
        )
    return w.astype(np.float64) @ np.asarray(h, dtype=np.float64)


def _check_weights(weights: Sequence[float], k: int) -> np.ndarray:
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (k,):
        raise DimensionMismatch(f"need {k} weights, got shape {weights.shape}")
    return weights


def _combine(base_part, contributions, weights, mask_set) -> MergeOutput:
    output = base_part + weights @ contributions
    return MergeOutput(
        output=output,
        base_part=base_part,
        contributions=contributions,
        weights=tuple(float(w) for w in weights),
        mask_set=mask_set,
    )


def merge_direct(
    base: BaseLayer | None,
    adapters: Sequence[LowRankAdapter],
    weights: Sequence[float],
    h: np.ndarray,
) -> MergeOutput:
    """Deterministic weighted sum: W h + sum_j w_j x_j.  Seed-independent."""
    raw = _raw_outputs(adapters, h)
    weights = _check_weights(weights, raw.shape[0])
    return _combine(_base_part(base, h, raw.shape[1]), raw, weights, None)


def merge_mc_dropout(
    base: BaseLayer | None,
    adapters: Sequence[LowRankAdapter],
    weights: Sequence[float],
    rates: Sequence[float],
    h: np.ndarray,
    stream_keys: Sequence[rng.StreamKey],
) -> MergeOutput:
    """Independent dropout on each adapter output: y_j = (z^(j) * x_j) / (1 - p_j)."""
    check_rates(rates)
    raw = _raw_outputs(adapters, h)
    k, d_out = raw.shape
    weights = _check_weights(weights, k)
    if len(rates) != k:
        raise DimensionMismatch(f"need {k} rates, got {len(rates)}")
    for j, (p, w) in enumerate(zip(rates, weights)):
        if p == 1.0 and w != 0.0:
            raise InvalidRate(
                f"p_{j + 1} = 1 with nonzero weight: rescale 1/(1-p) is undefined"
            )
    mask_set = masks_mod.sample_mc_masks(rates, d_out, stream_keys)
    contributions = _rescaled(mask_set, raw)
    return _combine(_base_part(base, h, d_out), contributions, weights, mask_set)


def merge_orthogonal(
    base: BaseLayer | None,
    adapters: Sequence[LowRankAdapter],
    weights: Sequence[float],
    rates: Sequence[float],
    h: np.ndarray,
    stream_keys: Sequence[rng.StreamKey],
) -> MergeOutput:
    """Chained-mask merge; contributions are pairwise orthogonal, exactly."""
    check_orthogonal_capacity(rates)
    raw = _raw_outputs(adapters, h)
    k, d_out = raw.shape
    weights = _check_weights(weights, k)
    if len(rates) != k:
        raise DimensionMismatch(f"need {k} rates, got {len(rates)}")
    mask_set = masks_mod.sample_orthogonal_masks(rates, d_out, stream_keys)
    contributions = _rescaled(mask_set, raw)
    return _combine(_base_part(base, h, d_out), contributions, weights, mask_set)


def _rescaled(mask_set: MaskSet, raw: np.ndarray) -> np.ndarray:
    """y_j = (m^(j) * x_j) / (1 - p_j); a rate of 1 keeps nothing, so y_j = 0."""
    out = np.zeros_like(raw)
    for j, p in enumerate(mask_set.dropout_rates):
        if p == 1.0:
            continue
        out[j] = (mask_set.masks[j] * raw[j]) / (1.0 - p)
    return out


def run_plan(
    plan: MergePlan,
    adapters: Sequence[LowRankAdapter],
    h: np.ndarray,
    base: BaseLayer | None = None,
    layer_index: int = 0,
    sample_index: int = 0,
) -> MergeOutput:
    """Validate a plan and run its strategy with keys derived from the plan seed."""
    resolved = validate_plan(plan, adapters)
    if plan.strategy is MergeStrategy.DIRECT:
        return merge_direct(base, resolved, plan.weights, h)
    keys = masks_mod.default_stream_keys(
        len(resolved), plan.seed, layer_index, sample_index
    )
    if plan.strategy is MergeStrategy.MC_DROPOUT:
        return merge_mc_dropout(base, resolved, plan.weights, plan.rates, h, keys)
    return merge_orthogonal(base, resolved, plan.weights, plan.rates, h, keys)


def audited_merge(
    adapters: Sequence[LowRankAdapter],
    base: BaseLayer | None,
    h: np.ndarray,
    strategy: MergeStrategy | str,
    rates: Sequence[float] | None,
    weights: Sequence[float] | None,
    seed: int,
) -> tuple[MergeOutput, dict]:
    """Plan-and-run with defaulting shared by the CLI and the HTTP service.

    Missing rates default to 0 (keep everything), missing weights to 1.
    Returns the merge result and its audit document, so both frontends emit
    byte-identical artifacts for identical inputs.
    """
    k = len(adapters)
    rates = [0.0] * k if rates is None else [float(p) for p in rates]
    weights = [1.0] * k if weights is None else [float(w) for w in weights]
    if len(rates) != k or len(weights) != k:
        raise DimensionMismatch(
            f"pack has {k} adapters; got {len(rates)} rates and {len(weights)} weights"
        )
    plan = MergePlan(
        entries=tuple(
            PlanEntry(adapter=a.name, weight=w, dropout=p)
            for a, w, p in zip(adapters, weights, rates)
        ),
        strategy=MergeStrategy(strategy),
        seed=int(seed),
    )
    result = run_plan(plan, adapters, h, base=base)
    return result, audit_payload(result, rates, seed, plan.strategy)


def audit_payload(
    result: MergeOutput,
    rates: Sequence[float],
    seed: int,
    strategy: MergeStrategy,
) -> dict:
    """The audit document written next to every CLI merge output.

    Contains everything needed to re-check the orthogonality guarantee from
    artifacts alone.
    """
    return {
        "base_part": [float(v) for v in result.base_part],
        "contributions": [[float(v) for v in row] for row in result.contributions],
        "masks": None
        if result.mask_set is None
        else [[int(v) for v in row] for row in result.mask_set.masks],
        "output": [float(v) for v in result.output],
        "rates": [float(p) for p in rates],
        "seed": int(seed),
        "strategy": MergeStrategy(strategy).value,
        "weights": [float(w) for w in result.weights],
    }
