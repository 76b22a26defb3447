"""Microbenchmark for merge cost as a function of adapter count.

Times complete merge calls (raw outputs, mask sampling where the strategy
uses it, rescale, combine) on synthesized fixtures.  Rates are p = 1 - 1/k
so every k fills the orthogonal capacity exactly.  Each timing repeat runs
an auto-calibrated batch of calls with distinct sample indices; reported
numbers are per-call nanoseconds.
"""

from __future__ import annotations

import csv
import io
import statistics
import time
from dataclasses import dataclass
from typing import Callable, Sequence

from . import rng
from .masks import default_stream_keys
from .merge import merge_direct, merge_mc_dropout, merge_orthogonal
from .model import MergeStrategy
from .verify import synthesize_fixture

CSV_COLUMNS = ("k", "d_out", "strategy", "mean_ns", "stddev_ns")

_BENCH_D_IN = 64
_BENCH_RANK = 4


@dataclass(frozen=True)
class BenchRow:
    k: int
    d_out: int
    strategy: str
    mean_ns: float
    stddev_ns: float


def _time_call(fn: Callable[[int], object], repeats: int, target_ns: int) -> tuple[float, float]:
    fn(0)
    # calibrate batch size from the fastest of three probe calls; a single
    # probe can hit a scheduler hiccup and shrink batches into noise
    estimate = None
    for i in range(3):
        start = time.perf_counter_ns()
        fn(1 + i)
        probe = max(time.perf_counter_ns() - start, 1)
        estimate = probe if estimate is None else min(estimate, probe)
    iters = max(1, min(1_000_000, target_ns // estimate))
    per_call = []
    counter = 4
    for _ in range(repeats):
        start = time.perf_counter_ns()
        for _ in range(iters):
            fn(counter)
            counter += 1
        per_call.append((time.perf_counter_ns() - start) / iters)
    mean = statistics.fmean(per_call)
    spread = statistics.stdev(per_call) if len(per_call) > 1 else 0.0
    return mean, spread


def run_bench(
    dims: Sequence[int],
    k_values: Sequence[int],
    repeats: int = 5,
    seed: int = 0,
    target_ns: int = 10_000_000,
) -> list[BenchRow]:
    """One row per (d_out, k, strategy), strategies in fixed order."""
    if repeats < 1:
        raise ValueError("repeats must be positive")
    rng.warm_up()
    rows = []
    for d_out in dims:
        for k in k_values:
            adapters, h = synthesize_fixture(k, _BENCH_D_IN, d_out, _BENCH_RANK, seed)
            weights = [1.0] * k
            rates = [1.0 - 1.0 / k] * k

            def call_direct(i: int, _a=adapters, _w=weights, _h=h):
                return merge_direct(None, _a, _w, _h)

            def call_dropout(i: int, _a=adapters, _w=weights, _r=rates, _h=h, _k=k):
                keys = default_stream_keys(_k, seed, 0, i)
                return merge_mc_dropout(None, _a, _w, _r, _h, keys)

            def call_orthogonal(i: int, _a=adapters, _w=weights, _r=rates, _h=h, _k=k):
                keys = default_stream_keys(_k, seed, 0, i)
                return merge_orthogonal(None, _a, _w, _r, _h, keys)

            for strategy, fn in (
                (MergeStrategy.DIRECT, call_direct),
                (MergeStrategy.MC_DROPOUT, call_dropout),
                (MergeStrategy.ORTHOGONAL, call_orthogonal),
            ):
                mean, spread = _time_call(fn, repeats, target_ns)
                rows.append(BenchRow(k, d_out, strategy.value, mean, spread))
    return rows


def write_csv(rows: Sequence[BenchRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow([row.k, row.d_out, row.strategy, row.mean_ns, row.stddev_ns])
    return buf.getvalue()


def read_csv(text: str) -> list[BenchRow]:
    reader = csv.DictReader(io.StringIO(text))
    return [
        BenchRow(
            k=int(r["k"]),
            d_out=int(r["d_out"]),
            strategy=r["strategy"],
            mean_ns=float(r["mean_ns"]),
            stddev_ns=float(r["stddev_ns"]),
        )
        for r in reader
    ]


def linear_fit_r2(xs: Sequence[float], ys: Sequence[float]) -> tuple[float, float, float]:
    """Least-squares fit y = a + b x; returns (a, b, r_squared)."""
    if len(xs) != len(ys) or len(xs) < 2:
        raise ValueError("need at least two matching points")
    mx = statistics.fmean(xs)
    my = statistics.fmean(ys)
    sxx = sum((x - mx) ** 2 for x in xs)
    if sxx == 0.0:
        raise ValueError("all x values identical")
    b = sum((x - mx) * (y - my) for x, y in zip(xs, ys)) / sxx
    a = my - b * mx
    ss_res = sum((y - (a + b * x)) ** 2 for x, y in zip(xs, ys))
    ss_tot = sum((y - my) ** 2 for y in ys)
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return a, b, r2
