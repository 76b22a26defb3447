"""Statistical certification suites for the mask-sampling guarantees.

Three suites check, from samples alone, that the chained construction
delivers what it promises:

* consistency: every mask keeps each coordinate with marginal probability
  1 - p_j, checked by pooled frequency against a 4-sigma binomial radius;
* orthogonality: masks in one set are pairwise disjoint, checked by exact
  integer dot products (pass requires a max of exactly zero);
* unbiasedness: the mean of many stochastic merges matches the
  deterministic weighted sum in relative L2.

The interference analyzer reports pairwise geometry (cosines, norm ratios,
the Pythagorean residual of the weighted sum) per strategy so alignment
between adapter outputs can be inspected rather than guessed.

Suites are deterministic for a given config and seed regardless of
ORTHMERGE_THREADS: work is chunked by sample index, each chunk derives its
own streams, and partial results are reduced in chunk order.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import rng
from .errors import DimensionMismatch, InvalidRate
from .masks import default_stream_keys, sample_mask_batch
from .merge import merge_direct, merge_mc_dropout, merge_orthogonal
from .model import (
    BaseLayer,
    LowRankAdapter,
    MergePlan,
    MergeStrategy,
    PlanEntry,
    check_orthogonal_capacity,
    check_rates,
    apply_adapter,
    validate_plan,
)
from .pack import canonical_json

_CHUNK_CELLS = 1 << 23  # cap on samples * k * d_out held in memory per chunk
_FIXTURE_LAYER = 0x5F17  # layer namespace for synthesized adapters, distinct from mask layers


def thread_count() -> int:
    """Worker count from ORTHMERGE_THREADS: unset = 1, 0 = all cores."""
    raw = os.environ.get("ORTHMERGE_THREADS")
    if raw is None:
        return 1
    n = int(raw)
    if n < 0:
        raise ValueError(f"ORTHMERGE_THREADS must be >= 0, got {n}")
    return n if n > 0 else (os.cpu_count() or 1)


def _sample_chunks(n_samples: int, k: int, d_out: int) -> list[np.ndarray]:
    per = max(1, _CHUNK_CELLS // max(1, k * d_out))
    return [
        np.arange(lo, min(lo + per, n_samples), dtype=np.uint64)
        for lo in range(0, n_samples, per)
    ]


def _map_chunks(fn: Callable, chunks: list) -> list:
    workers = thread_count()
    if workers <= 1 or len(chunks) <= 1:
        return [fn(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, chunks))


@dataclass(frozen=True)
class VerifyReport:
    """Outcome of one suite: named statistics plus the config that produced them."""

    suite: str
    trials: int
    passed: bool
    statistics: dict
    config: dict

    def to_payload(self) -> dict:
        return {
            "config": self.config,
            "passed": self.passed,
            "statistics": self.statistics,
            "suite": self.suite,
            "trials": self.trials,
        }

    def to_json(self) -> bytes:
        return canonical_json(self.to_payload())


def run_consistency_suite(
    rates: Sequence[float], d_out: int, n_samples: int, seed: int
) -> VerifyReport:
    """Pooled keep frequency of each chained mask vs its marginal 1 - p_j.

    Passes iff every |freq_j - (1 - p_j)| <= 4 * sqrt(p_j (1 - p_j) / (N d)).
    The radius is four binomial sigmas, so a hundred-check suite stays under
    a 1% spurious-failure budget.
    """
    rates = [float(p) for p in rates]
    check_orthogonal_capacity(rates)
    if n_samples < 1 or d_out < 1:
        raise DimensionMismatch("n_samples and d_out must be positive")
    k = len(rates)

    def count(chunk: np.ndarray) -> np.ndarray:
        masks, _ = sample_mask_batch(rates, d_out, seed, chunk, orthogonal=True)
        return masks.sum(axis=(0, 2), dtype=np.int64)

    keeps = sum(_map_chunks(count, _sample_chunks(n_samples, k, d_out)))
    pooled = n_samples * d_out
    stats: dict = {}
    passed = True
    for j, p in enumerate(rates, start=1):
        freq = float(keeps[j - 1] / pooled)
        bound = 4.0 * math.sqrt(p * (1.0 - p) / pooled)
        passed = passed and abs(freq - (1.0 - p)) <= bound
        stats[f"keep_freq_{j:02d}"] = freq
        stats[f"keep_bound_{j:02d}"] = bound
        stats[f"keep_target_{j:02d}"] = 1.0 - p
    config = {"d_out": d_out, "n_samples": n_samples, "rates": rates, "seed": seed}
    return VerifyReport("consistency", n_samples, passed, stats, config)


def run_orthogonality_suite(
    rates: Sequence[float],
    d_out: int,
    n_samples: int,
    seed: int,
    mask_kind: str = "orthogonal",
) -> VerifyReport:
    """Max pairwise mask dot product over all sampled sets; passes iff exactly 0.

    ``mask_kind="mc"`` runs the same check on independent dropout masks, the
    negative control that proves the checker can fail.
    """
    rates = [float(p) for p in rates]
    if mask_kind not in ("orthogonal", "mc"):
        raise ValueError(f"mask_kind must be 'orthogonal' or 'mc', got {mask_kind!r}")
    orthogonal = mask_kind == "orthogonal"
    if orthogonal:
        check_orthogonal_capacity(rates)
    else:
        check_rates(rates)
    if n_samples < 1 or d_out < 1:
        raise DimensionMismatch("n_samples and d_out must be positive")
    k = len(rates)

    def max_dot(chunk: np.ndarray) -> float:
        masks, _ = sample_mask_batch(rates, d_out, seed, chunk, orthogonal=orthogonal)
        if k < 2:
            return 0.0
        # 0/1 entries and d_out < 2^53 keep these float dot products exact
        m = masks.astype(np.float64)
        gram = m @ m.transpose(0, 2, 1)
        gram[:, np.arange(k), np.arange(k)] = 0.0
        return float(gram.max())

    worst = max(_map_chunks(max_dot, _sample_chunks(n_samples, k, d_out)))
    n_pairs = k * (k - 1) // 2
    stats = {"max_pair_dot": worst, "n_pairs": float(n_pairs)}
    config = {
        "d_out": d_out,
        "mask_kind": mask_kind,
        "n_samples": n_samples,
        "rates": rates,
        "seed": seed,
    }
    return VerifyReport("orthogonality", n_samples, worst == 0.0, stats, config)


def run_unbiasedness_suite(
    plan: MergePlan,
    adapters: Sequence[LowRankAdapter],
    h: np.ndarray,
    n_samples: int,
    base: BaseLayer | None = None,
    layer_index: int = 0,
) -> VerifyReport:
    """Relative L2 gap between the mean of n stochastic merges and the direct merge.

    Passes iff the gap is <= max(0.01, 5 / sqrt(n)).  Sample s uses the same
    streams as ``run_plan(..., sample_index=s)``, so the mean here is the mean
    of exactly those merge outputs; mask contributions are accumulated as
    integer counts, which keeps the p = 0 degeneracy at error exactly zero.
    """
    if n_samples < 1:
        raise DimensionMismatch("n_samples must be positive")
    resolved = validate_plan(plan, adapters)
    weights = np.asarray(plan.weights, dtype=np.float64)
    rates = list(plan.rates)
    direct = merge_direct(base, resolved, weights, h)
    k, d_out = direct.contributions.shape

    if plan.strategy is MergeStrategy.DIRECT:
        mean_output = direct.output
    else:
        for j, (p, w) in enumerate(zip(rates, weights)):
            if p == 1.0 and w != 0.0:
                raise InvalidRate(
                    f"p_{j + 1} = 1 with nonzero weight: rescale 1/(1-p) is undefined"
                )
        orthogonal = plan.strategy is MergeStrategy.ORTHOGONAL

        def count(chunk: np.ndarray) -> np.ndarray:
            masks, _ = sample_mask_batch(
                rates, d_out, plan.seed, chunk, orthogonal, layer_index
            )
            return masks.sum(axis=0, dtype=np.int64)

        counts = sum(_map_chunks(count, _sample_chunks(n_samples, k, d_out)))
        mean_contribs = np.zeros((k, d_out), dtype=np.float64)
        for j, p in enumerate(rates):
            if p == 1.0:
                continue
            mean_contribs[j] = (counts[j] / n_samples) * direct.contributions[j] / (1.0 - p)
        mean_output = direct.base_part + weights @ mean_contribs

    gap = float(np.linalg.norm(mean_output - direct.output))
    ref = float(np.linalg.norm(direct.output))
    rel = gap / ref if ref > 0.0 else (0.0 if gap == 0.0 else math.inf)
    threshold = max(0.01, 5.0 / math.sqrt(n_samples))
    stats = {
        "direct_norm": ref,
        "mean_norm": float(np.linalg.norm(mean_output)),
        "rel_l2_error": rel,
        "threshold": threshold,
    }
    config = {
        "d_out": d_out,
        "k": k,
        "n_samples": n_samples,
        "rates": rates,
        "seed": plan.seed,
        "strategy": plan.strategy.value,
        "weights": [float(w) for w in weights],
    }
    return VerifyReport("unbiasedness", n_samples, rel <= threshold, stats, config)


def _cosine(a: np.ndarray, b: np.ndarray) -> float | None:
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return None
    return float(np.dot(a, b) / (na * nb))


def _pair_stats(contribs: np.ndarray, weights: np.ndarray) -> dict:
    k = contribs.shape[0]
    cosines = [
        {"cosine": _cosine(contribs[a], contribs[b]), "i": a, "j": b}
        for a in range(k)
        for b in range(a + 1, k)
    ]
    norm_sum = float(sum(np.linalg.norm(row) for row in contribs))
    ratio = (
        float(np.linalg.norm(contribs.sum(axis=0)) / norm_sum) if norm_sum > 0.0 else None
    )
    weighted = weights[:, None] * contribs
    lhs = float(np.dot(weighted.sum(axis=0), weighted.sum(axis=0)))
    rhs = float(sum(np.dot(row, row) for row in weighted))
    residual = abs(lhs - rhs) / rhs if rhs > 0.0 else 0.0
    return {"cosines": cosines, "norm_ratio": ratio, "pythagorean_residual": residual}


@dataclass(frozen=True)
class InterferenceReport:
    """Pairwise geometry of adapter contributions, per input and strategy.

    Each record carries cosines of the raw outputs x_j, then cosines, the
    norm ratio ||sum y|| / sum ||y||, and the relative Pythagorean residual
    | ||sum w y||^2 - sum ||w y||^2 | / sum ||w y||^2 for every strategy.
    Cosines involving a zero contribution are reported as None, never NaN.
    """

    n_adapters: int
    weights: tuple[float, ...]
    rates: tuple[float, ...]
    seed: int
    records: tuple[dict, ...]

    def to_payload(self) -> dict:
        return {
            "n_adapters": self.n_adapters,
            "rates": list(self.rates),
            "records": list(self.records),
            "seed": self.seed,
            "weights": list(self.weights),
        }

    def to_json(self) -> bytes:
        return canonical_json(self.to_payload())


def analyze_interference(
    adapters: Sequence[LowRankAdapter],
    weights: Sequence[float] | None,
    rates: Sequence[float] | None,
    inputs: Sequence[np.ndarray],
    seed: int,
) -> InterferenceReport:
    """Compare contribution geometry across all three strategies.

    Input i uses sample index i for its mask streams, so the dropout and
    orthogonal rows of one record share the same underlying draws (a paired
    comparison).  Direct rows equal the raw-output geometry by construction.
    Omitted weights default to 1; omitted rates default to 1 - 1/k, the
    capacity-filling split, so the orthogonal strategy is always runnable.
    """
    k = len(adapters)
    if weights is None:
        weights = [1.0] * k
    if rates is None:
        rates = [1.0 - 1.0 / k] * k if k else []
    if len(weights) != k or len(rates) != k:
        raise DimensionMismatch(
            f"{k} adapters need {k} weights and rates, got {len(weights)}/{len(rates)}"
        )
    check_rates(rates)
    w = np.asarray(weights, dtype=np.float64)
    records = []
    for i, h in enumerate(inputs):
        keys = default_stream_keys(k, seed, 0, i)
        raw = np.stack([apply_adapter(a, h) for a in adapters])
        by_strategy = {
            "direct": merge_direct(None, adapters, w, h).contributions,
            "dropout": merge_mc_dropout(None, adapters, w, rates, h, keys).contributions,
            "orthogonal": merge_orthogonal(None, adapters, w, rates, h, keys).contributions,
        }
        records.append(
            {
                "input_index": i,
                "raw_cosines": _pair_stats(raw, w)["cosines"],
                "strategies": {
                    name: _pair_stats(contribs, w)
                    for name, contribs in by_strategy.items()
                },
            }
        )
    return InterferenceReport(
        n_adapters=k,
        weights=tuple(float(x) for x in weights),
        rates=tuple(float(p) for p in rates),
        seed=int(seed),
        records=tuple(records),
    )


def run_selected_suites(
    rates: Sequence[float],
    d_out: int,
    n_samples: int,
    seed: int,
    suite: str = "all",
    force_mc: bool = False,
) -> list[VerifyReport]:
    """Suite wiring shared by the CLI and the HTTP service.

    ``suite`` picks one of consistency / orthogonality / unbiasedness or all
    three; unbiasedness runs once per stochastic strategy on a synthesized
    fixture.  ``force_mc`` narrows the run to the orthogonality check over
    independent dropout masks, the negative control.
    """
    if suite not in ("all", "consistency", "orthogonality", "unbiasedness"):
        raise ValueError(f"unknown suite {suite!r}")
    if force_mc:
        return [run_orthogonality_suite(rates, d_out, n_samples, seed, "mc")]
    reports = []
    if suite in ("all", "consistency"):
        reports.append(run_consistency_suite(rates, d_out, n_samples, seed))
    if suite in ("all", "orthogonality"):
        reports.append(run_orthogonality_suite(rates, d_out, n_samples, seed))
    if suite in ("all", "unbiasedness"):
        k = len(list(rates))
        adapters, h = synthesize_fixture(k, d_out, d_out, min(4, d_out), seed)
        for strategy in (MergeStrategy.MC_DROPOUT, MergeStrategy.ORTHOGONAL):
            plan = MergePlan(
                entries=tuple(
                    PlanEntry(adapter=a.name, weight=1.0, dropout=float(p))
                    for a, p in zip(adapters, rates)
                ),
                strategy=strategy,
                seed=seed,
            )
            reports.append(run_unbiasedness_suite(plan, adapters, h, n_samples))
    return reports


def _uniform_block(seed: int, adapter_index: int, block: int, shape: tuple) -> np.ndarray:
    key = rng.StreamKey(
        seed=seed,
        layer_index=_FIXTURE_LAYER + block,
        sample_index=0,
        adapter_index=adapter_index,
    )
    state = np.array([rng.derive_state(key)], dtype=np.uint64)
    u = rng.uniform_matrix(state, int(np.prod(shape)))
    return (2.0 * u - 1.0).reshape(shape)


def synthesize_fixture(
    k: int, d_in: int, d_out: int, rank: int, seed: int
) -> tuple[list[LowRankAdapter], np.ndarray]:
    """Deterministic pseudo-random adapters plus an input vector.

    Lets verification and benchmarking run self-contained: the same (k, dims,
    seed) always yields the same fixture, on any machine.
    """
    adapters = [
        LowRankAdapter(
            name=f"synth{j:02d}",
            d_in=d_in,
            d_out=d_out,
            rank=rank,
            factor_a=_uniform_block(seed, j, 0, (rank, d_in)),
            factor_b=_uniform_block(seed, j, 1, (d_out, rank)),
        )
        for j in range(k)
    ]
    h = _uniform_block(seed, 0, 2, (d_in,))
    return adapters, h
