"""HTTP facade over the library: sampling, merging, verification, analysis.

Every response body is the same canonical JSON (alphabetical keys, compact
separators) the CLI writes to files, emitted as raw bytes so clients can
compare artifacts byte for byte.  Domain errors map to HTTP 400 with
``{"error": <type>, "message": <detail>}``.
"""

from __future__ import annotations

import base64
import binascii

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from . import __version__
from .errors import OrthmergeError, ParseError, RaggedRows
from .masks import sample_dump
from .merge import audited_merge
from .model import BaseLayer
from .pack import canonical_json, load_adapter_pack
from .verify import analyze_interference, run_selected_suites


class SampleMasksRequest(BaseModel):
    rates: list[float]
    dim: int
    samples: int = 1
    strategy: str = "orthogonal"
    seed: int = 0


class MergeRequest(BaseModel):
    pack_b64: str
    input: list[float]
    base: list[list[float]] | None = None
    strategy: str = "direct"
    rates: list[float] | None = None
    weights: list[float] | None = None
    seed: int = 0


class VerifyRequest(BaseModel):
    rates: list[float]
    dim: int
    samples: int = 10_000
    seed: int = 0
    suite: str = "all"
    force_mc: bool = False


class AnalyzeRequest(BaseModel):
    pack_b64: str
    inputs: list[list[float]]
    rates: list[float] | None = None
    weights: list[float] | None = None
    seed: int = 0


def _decode_pack(pack_b64: str) -> bytes:
    try:
        return base64.b64decode(pack_b64, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise ParseError(f"pack_b64 is not valid base64: {exc}") from exc


def _matrix(rows: list[list[float]], what: str) -> np.ndarray:
    widths = {len(row) for row in rows}
    if len(widths) > 1:
        raise RaggedRows(f"{what} rows have differing lengths {sorted(widths)}")
    width = widths.pop() if widths else 0
    return np.array(rows, dtype=np.float64).reshape(len(rows), width)


def _canonical(payload) -> Response:
    return Response(content=canonical_json(payload), media_type="application/json")


def create_app() -> FastAPI:
    app = FastAPI(title="orthmerge", version=__version__)

    @app.exception_handler(OrthmergeError)
    async def domain_error(request: Request, exc: OrthmergeError) -> JSONResponse:
        return JSONResponse(
            status_code=400,
            content={"error": type(exc).__name__, "message": str(exc)},
        )

    @app.exception_handler(ValueError)
    async def value_error(request: Request, exc: ValueError) -> JSONResponse:
        return JSONResponse(
            status_code=400, content={"error": "ValueError", "message": str(exc)}
        )

    @app.get("/health")
    async def health() -> dict:
        return {"status": "ok", "version": __version__}

    @app.post("/sample-masks")
    async def sample_masks(req: SampleMasksRequest) -> Response:
        return _canonical(
            sample_dump(req.rates, req.dim, req.samples, req.strategy, req.seed)
        )

    @app.post("/merge")
    async def merge(req: MergeRequest) -> Response:
        adapters = load_adapter_pack(_decode_pack(req.pack_b64))
        base = None
        if req.base is not None:
            base = BaseLayer(weight=_matrix(req.base, "base"))
        h = np.asarray(req.input, dtype=np.float64)
        _, audit = audited_merge(
            adapters, base, h, req.strategy, req.rates, req.weights, req.seed
        )
        return _canonical(audit)

    @app.post("/verify")
    async def verify(req: VerifyRequest) -> Response:
        reports = run_selected_suites(
            req.rates, req.dim, req.samples, req.seed, req.suite, req.force_mc
        )
        passed = all(r.passed for r in reports)
        return _canonical(
            {"passed": passed, "reports": [r.to_payload() for r in reports]}
        )

    @app.post("/analyze")
    async def analyze(req: AnalyzeRequest) -> Response:
        adapters = load_adapter_pack(_decode_pack(req.pack_b64))
        inputs = list(_matrix(req.inputs, "inputs"))
        report = analyze_interference(
            adapters, req.weights, req.rates, inputs, req.seed
        )
        return _canonical(report.to_payload())

    return app
