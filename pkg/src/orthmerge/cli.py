"""Command-line surface: sampling, merging, verification, analysis, benchmarking.

Exit codes are a stable contract: 0 success, 1 a verification suite failed,
2 validation error (bad rates, dims, weights, plan), 3 I/O error (missing or
malformed files).  Every command that takes --seed writes bit-identical
output files for identical invocations.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .bench import linear_fit_r2, run_bench, write_csv
from .errors import (
    ConstraintViolation,
    DimensionMismatch,
    EmptyPlan,
    InvalidRates,
    OrthmergeError,
    PackError,
    ParseError,
    UnknownAdapter,
)
from .masks import sample_dump
from .merge import audited_merge
from .model import BaseLayer, MergeStrategy
from .pack import canonical_json, load_adapter_pack, load_matrix, load_vector, write_file_atomic
from .verify import analyze_interference, run_selected_suites

_VALIDATION_ERRORS = (
    InvalidRates,
    ConstraintViolation,
    DimensionMismatch,
    EmptyPlan,
    UnknownAdapter,
    ValueError,
)
_IO_ERRORS = (PackError, ParseError, OSError)


def _float_list(text: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",") if part != ""]
    except ValueError:
        raise ValueError(f"expected a comma-separated list of numbers, got {text!r}")


def _int_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part != ""]
    except ValueError:
        raise ValueError(f"expected a comma-separated list of integers, got {text!r}")


def _k_range(text: str) -> list[int]:
    if ".." in text:
        lo_text, hi_text = text.split("..", 1)
        lo, hi = int(lo_text), int(hi_text)
        if hi < lo:
            raise ValueError(f"empty range {text!r}")
        return list(range(lo, hi + 1))
    return _int_list(text)


def _emit(payload_bytes: bytes, out: str | None) -> None:
    if out is None:
        sys.stdout.write(payload_bytes.decode("utf-8") + "\n")
    else:
        write_file_atomic(out, payload_bytes)


def _read_text(path: str) -> str:
    with open(path, "r", encoding="utf-8") as f:
        return f.read()


def _read_bytes(path: str) -> bytes:
    with open(path, "rb") as f:
        return f.read()


def cmd_sample_masks(args: argparse.Namespace) -> int:
    payload = sample_dump(args.rates, args.dim, args.samples, args.strategy, args.seed)
    _emit(canonical_json(payload), args.out)
    return 0


def _load_inputs(args: argparse.Namespace) -> tuple[list, BaseLayer | None, np.ndarray]:
    adapters = load_adapter_pack(_read_bytes(args.adapters))
    base = None
    if args.base is not None:
        base = BaseLayer(weight=load_matrix(_read_text(args.base)))
    h = load_vector(_read_text(args.input))
    return adapters, base, h


def cmd_merge(args: argparse.Namespace) -> int:
    adapters, base, h = _load_inputs(args)
    result, audit = audited_merge(
        adapters, base, h, args.strategy, args.rates, args.weights, args.seed
    )
    write_file_atomic(args.out, canonical_json([float(v) for v in result.output]))
    audit_path = args.audit if args.audit is not None else args.out + ".audit.json"
    write_file_atomic(audit_path, canonical_json(audit))
    return 0


def cmd_verify(args: argparse.Namespace) -> int:
    reports = run_selected_suites(
        args.rates, args.dim, args.samples, args.seed, args.suite, args.force_mc
    )
    passed = all(r.passed for r in reports)
    payload = {"passed": passed, "reports": [r.to_payload() for r in reports]}
    _emit(canonical_json(payload), args.out)
    return 0 if passed else 1


def cmd_analyze(args: argparse.Namespace) -> int:
    adapters = load_adapter_pack(_read_bytes(args.adapters))
    inputs = load_matrix(_read_text(args.inputs))
    report = analyze_interference(
        adapters, args.weights, args.rates, list(inputs), args.seed
    )
    _emit(report.to_json(), args.out)
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    rows = run_bench(args.dims, args.k_range, repeats=args.repeats, seed=args.seed)
    _emit(write_csv(rows).encode("utf-8"), args.out)
    if args.fit:
        for d_out in args.dims:
            series = [r for r in rows if r.d_out == d_out and r.strategy == "orthogonal"]
            if len(series) >= 2:
                a, b, r2 = linear_fit_r2(
                    [r.k for r in series], [r.mean_ns for r in series]
                )
                print(
                    f"orthogonal d_out={d_out}: mean_ns = {a:.1f} + {b:.1f} * k, "
                    f"R^2 = {r2:.4f}",
                    file=sys.stderr,
                )
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port, log_level=args.log_level)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="orthmerge",
        description="Merge low-rank adapter outputs with orthogonal dropout masks.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("sample-masks", help="sample a mask set and write the JSON dump")
    p.add_argument("--rates", type=_float_list, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--samples", type=int, default=1)
    p.add_argument(
        "--strategy", choices=["dropout", "orthogonal"], default="orthogonal"
    )
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_sample_masks)

    p = sub.add_parser("merge", help="merge adapter outputs for one input vector")
    p.add_argument("--adapters", required=True, help="adapter pack file")
    p.add_argument("--base", default=None, help="optional base weight matrix (JSON)")
    p.add_argument("--input", required=True, help="input vector h (JSON)")
    p.add_argument(
        "--strategy", choices=[s.value for s in MergeStrategy], default="direct"
    )
    p.add_argument("--rates", type=_float_list, default=None)
    p.add_argument("--weights", type=_float_list, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--audit", default=None, help="audit path (default: OUT.audit.json)")
    p.set_defaults(fn=cmd_merge)

    p = sub.add_parser("verify", help="run statistical certification suites")
    p.add_argument("--rates", type=_float_list, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument(
        "--suite",
        choices=["all", "consistency", "orthogonality", "unbiasedness"],
        default="all",
    )
    p.add_argument(
        "--force-mc",
        action="store_true",
        help="run the orthogonality check on independent dropout masks (negative control)",
    )
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("analyze", help="report contribution geometry per strategy")
    p.add_argument("--adapters", required=True)
    p.add_argument("--inputs", required=True, help="JSON matrix, one input per row")
    p.add_argument("--rates", type=_float_list, default=None)
    p.add_argument("--weights", type=_float_list, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_analyze)

    p = sub.add_parser("bench", help="time merge calls and write a CSV")
    p.add_argument("--dims", type=_int_list, default=[4096])
    p.add_argument("--k-range", type=_k_range, default=list(range(1, 11)))
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.add_argument("--fit", action="store_true", help="print the linear fit to stderr")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--log-level", default="info")
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except _IO_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except _VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OrthmergeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
