"""Bernoulli mask sampling: independent dropout masks and chained orthogonal masks.

The orthogonal construction keeps a running "still unclaimed" accumulator.
Adapter j draws z^(j) with a conditional keep probability q_j; its effective
mask is ``m^(j) = acc * z^(j)`` and the accumulator shrinks to
``acc * (1 - z^(j))``.  Masks produced this way are pairwise disjoint by
construction, while each m^(j) is still marginally Bernoulli(1 - p_j).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import rng
from .errors import DimensionMismatch, InvalidRates
from .model import check_orthogonal_capacity, check_rates

#: Computed keep probabilities within this distance outside [0, 1] are clamped;
#: anything further out signals a violated capacity constraint upstream.
Q_TOL = 1e-9


@dataclass(frozen=True)
class MaskSet:
    """k binary masks over d coordinates, plus the raw draws that built them."""

    masks: np.ndarray  # (k, d) uint8
    raw_draws: np.ndarray  # (k, d) uint8
    keep_probs: tuple[float, ...]
    dropout_rates: tuple[float, ...]

    def __post_init__(self) -> None:
        for name in ("masks", "raw_draws"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.uint8)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def k(self) -> int:
        return self.masks.shape[0]

    @property
    def d_out(self) -> int:
        return self.masks.shape[1]


def keep_probability(j: int, rates: Sequence[float]) -> float:
    """Conditional Bernoulli parameter q_j of the chained draw for adapter j (1-based).

    q_1 = 1 - p_1 and, for j >= 2, q_j = (1 - p_j) / D_j with
    D_j = (sum_{l<j} p_l) - (j - 2), i.e. one minus the keep rates already
    allocated.  D_j = 0 only when the capacity is fully consumed, which
    forces p_j = 1; the continuous limit q_j = 0 is returned there.
    """
    if not 1 <= j <= len(rates):
        raise ValueError(f"j = {j} out of range 1..{len(rates)}")
    check_rates(rates)
    if j == 1:
        return 1.0 - rates[0]
    denom = math.fsum(rates[:j - 1]) - (j - 2)
    if abs(denom) <= Q_TOL:
        return 0.0
    q = (1.0 - rates[j - 1]) / denom
    if q < -Q_TOL or q > 1.0 + Q_TOL:
        raise InvalidRates(
            f"keep probability q_{j} = {q:.12g} outside [0, 1]; "
            "rates violate the orthogonal capacity constraint"
        )
    return min(max(q, 0.0), 1.0)


def keep_probabilities(rates: Sequence[float]) -> tuple[float, ...]:
    return tuple(keep_probability(j, rates) for j in range(1, len(rates) + 1))


def _check_sampling_args(rates, d_out, stream_keys) -> None:
    if d_out < 1:
        raise DimensionMismatch(f"d_out must be positive, got {d_out}")
    if len(stream_keys) != len(rates):
        raise DimensionMismatch(
            f"need one stream key per rate: got {len(stream_keys)} keys for {len(rates)} rates"
        )


def sample_mc_masks(
    rates: Sequence[float], d_out: int, stream_keys: Sequence[rng.StreamKey]
) -> MaskSet:
    """Independent dropout masks: m^(j) = z^(j) with z_i ~ Bernoulli(1 - p_j)."""
    check_rates(rates)
    _check_sampling_args(rates, d_out, stream_keys)
    keep = tuple(1.0 - p for p in rates)
    states = rng.states_for_keys(stream_keys)
    z = rng.bernoulli_matrix(states, np.array(keep), d_out)
    return MaskSet(masks=z, raw_draws=z, keep_probs=keep, dropout_rates=tuple(rates))


def sample_orthogonal_masks(
    rates: Sequence[float], d_out: int, stream_keys: Sequence[rng.StreamKey]
) -> MaskSet:
    """Chained disjoint masks; raises ConstraintViolation before any sampling."""
    check_orthogonal_capacity(rates)
    _check_sampling_args(rates, d_out, stream_keys)
    qs = keep_probabilities(rates)
    states = rng.states_for_keys(stream_keys)
    z = rng.bernoulli_matrix(states, np.array(qs), d_out)
    masks = chain_draws(z)
    return MaskSet(masks=masks, raw_draws=z, keep_probs=qs, dropout_rates=tuple(rates))


def chain_draws(z: np.ndarray) -> np.ndarray:
    """Apply the accumulator loop to raw draws: m^(j) = acc * z^(j), acc *= 1 - z^(j).

    Accepts (k, d) or (n, k, d) draw arrays and returns masks of equal shape.
    """
    z = np.asarray(z, dtype=np.uint8)
    masks = np.empty_like(z)
    k_axis = z.ndim - 2
    acc = np.ones(z.shape[:k_axis] + z.shape[k_axis + 1:], dtype=np.uint8)
    for j in range(z.shape[k_axis]):
        zj = z[..., j, :] if k_axis else z[j]
        mj = acc & zj
        if k_axis:
            masks[..., j, :] = mj
        else:
            masks[j] = mj
        acc &= 1 - zj
    return masks


def default_stream_keys(
    k: int, seed: int, layer_index: int = 0, sample_index: int = 0
) -> list[rng.StreamKey]:
    """One key per adapter index, the layout used by the CLI and service."""
    return [
        rng.StreamKey(seed=seed, layer_index=layer_index,
                      sample_index=sample_index, adapter_index=j)
        for j in range(k)
    ]


def sample_mask_batch(
    rates: Sequence[float],
    d_out: int,
    seed: int,
    sample_indices: Sequence[int] | np.ndarray,
    orthogonal: bool,
    layer_index: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Masks and raw draws for many sample indices at once: shape (n, k, d).

    Bit-identical to calling the per-sample functions with
    ``default_stream_keys(k, seed, layer_index, s)`` for each s.
    """
    rates = list(rates)
    k = len(rates)
    if d_out < 1:
        raise DimensionMismatch(f"d_out must be positive, got {d_out}")
    if orthogonal:
        check_orthogonal_capacity(rates)
        qs = np.array(keep_probabilities(rates))
    else:
        check_rates(rates)
        qs = 1.0 - np.array(rates, dtype=np.float64)
    samples = np.asarray(sample_indices, dtype=np.uint64)
    n = samples.shape[0]
    grid_samples = np.repeat(samples, k)
    grid_adapters = np.tile(np.arange(k, dtype=np.uint64), n)
    states = rng.derive_states(seed, layer_index, grid_samples, grid_adapters)
    z = rng.bernoulli_matrix(states, np.tile(qs, n), d_out).reshape(n, k, d_out)
    masks = chain_draws(z) if orthogonal else z
    return masks, z


def sample_dump(
    rates: Sequence[float],
    d_out: int,
    samples: int,
    strategy: str,
    seed: int,
) -> dict:
    """Sample ``samples`` mask sets and build the dump document.

    With samples > 1 the sets are concatenated sample-major, so the dump
    holds samples * k mask rows; samples = 1 is the plain one-set schema.
    Shared by the CLI and the HTTP service so their bytes agree.
    """
    if strategy not in ("dropout", "orthogonal"):
        raise ValueError(
            f"strategy must be 'dropout' or 'orthogonal' for mask sampling, got {strategy!r}"
        )
    if samples < 1:
        raise DimensionMismatch(f"samples must be positive, got {samples}")
    orthogonal = strategy == "orthogonal"
    masks, _ = sample_mask_batch(rates, d_out, seed, range(samples), orthogonal)
    keep = (
        keep_probabilities(rates) if orthogonal else tuple(1.0 - p for p in rates)
    )
    rows = masks.reshape(samples * len(list(rates)), d_out)
    return dump_payload(rates, keep, rows, seed)


def dump_payload(
    rates: Sequence[float],
    keep_probs: Sequence[float],
    mask_rows: Sequence[Sequence[int]],
    seed: int,
) -> dict:
    """The mask dump document written by the CLI and returned by the service."""
    return {
        "keep_probs": [float(q) for q in keep_probs],
        "masks": [[int(v) for v in row] for row in mask_rows],
        "rates": [float(p) for p in rates],
        "seed": int(seed),
    }
