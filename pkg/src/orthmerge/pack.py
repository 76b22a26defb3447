"""Bit-exact adapter container and the JSON text forms used by the CLI.

Container layout::

    bytes 0..7    magic "LRPK0001"
    bytes 8..15   header length, 64-bit little-endian unsigned
    header        UTF-8 JSON (alphabetical keys, no insignificant whitespace)
    payload       concatenated row-major little-endian float32 tensors,
                  each starting at an 8-byte-aligned payload offset

The header has exactly two top-level keys.  ``adapters`` lists metadata
objects ``{d_in, d_out, name, rank, scale}``; ``tensors`` lists tensor
descriptors ``{dtype, name, nbytes, offset, shape}``.  Tensors appear in
adapter order, factor A before factor B, so adapter i owns tensors 2i and
2i+1.  Offsets are relative to the start of the payload.
"""

from __future__ import annotations

import json
import math
import os
import struct
import tempfile
import warnings
from typing import Sequence

import numpy as np

from .errors import (
    BadMagic,
    NonFinite,
    NonFiniteTensor,
    ParseError,
    RaggedRows,
    ShapeMismatch,
    TruncatedFile,
)
from .model import LowRankAdapter

MAGIC = b"LRPK0001"
ALIGNMENT = 8

_ADAPTER_KEYS = {"d_in", "d_out", "name", "rank", "scale"}
_TENSOR_KEYS = {"dtype", "name", "nbytes", "offset", "shape"}


def _is_int(value) -> bool:
    # bool is an int subclass; header fields must be plain integers
    return isinstance(value, int) and not isinstance(value, bool)


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    return value


def canonical_json(obj) -> bytes:
    """Compact JSON with alphabetical keys; the byte-stable form used everywhere."""
    return json.dumps(
        _jsonable(obj), sort_keys=True, separators=(",", ":"), allow_nan=False
    ).encode("utf-8")


def write_file_atomic(path: str | os.PathLike, data: bytes) -> None:
    """Write via a temp file in the same directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".orthmerge-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def _align(n: int) -> int:
    return (n + ALIGNMENT - 1) // ALIGNMENT * ALIGNMENT


def save_adapter_pack(adapters: Sequence[LowRankAdapter]) -> bytes:
    """Canonical, deterministic serialization of a list of adapters."""
    tensors = []
    chunks = []
    offset = 0
    for adapter in adapters:
        for suffix, arr in (("factor_a", adapter.factor_a), ("factor_b", adapter.factor_b)):
            raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
            tensors.append(
                {
                    "dtype": "f32",
                    "name": f"{adapter.name}.{suffix}",
                    "nbytes": len(raw),
                    "offset": offset,
                    "shape": list(arr.shape),
                }
            )
            chunks.append(raw)
            end = offset + len(raw)
            padded = _align(end)
            chunks.append(b"\x00" * (padded - end))
            offset = padded
    header = canonical_json(
        {
            "adapters": [
                {
                    "d_in": a.d_in,
                    "d_out": a.d_out,
                    "name": a.name,
                    "rank": a.rank,
                    "scale": float(a.scale),
                }
                for a in adapters
            ],
            "tensors": tensors,
        }
    )
    return MAGIC + struct.pack("<Q", len(header)) + header + b"".join(chunks)


def _require_keys(obj: dict, expected: set, what: str, strict: bool) -> None:
    missing = expected - obj.keys()
    if missing:
        raise ParseError(f"{what} missing keys {sorted(missing)}")
    unknown = obj.keys() - expected
    if unknown:
        if strict:
            raise ParseError(f"{what} has unknown keys {sorted(unknown)}")
        warnings.warn(f"{what} has unknown keys {sorted(unknown)}; ignoring", stacklevel=3)


def load_adapter_pack(data: bytes, strict: bool = True) -> list[LowRankAdapter]:
    """Parse a container; every header claim is validated against the actual
    byte count before any tensor is read."""
    if len(data) < len(MAGIC):
        raise TruncatedFile(f"file has {len(data)} bytes, shorter than the magic")
    if data[: len(MAGIC)] != MAGIC:
        raise BadMagic(f"expected magic {MAGIC!r}, got {bytes(data[:len(MAGIC)])!r}")
    if len(data) < 16:
        raise TruncatedFile("file ends before the header length field")
    (header_len,) = struct.unpack("<Q", data[8:16])
    if 16 + header_len > len(data):
        raise TruncatedFile(
            f"header claims {header_len} bytes but only {len(data) - 16} remain"
        )
    try:
        header = json.loads(data[16 : 16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"header is not valid JSON: {exc}") from exc
    if not isinstance(header, dict):
        raise ParseError("header must be a JSON object")
    _require_keys(header, {"adapters", "tensors"}, "header", strict)
    meta, tensors = header["adapters"], header["tensors"]
    if not isinstance(meta, list) or not isinstance(tensors, list):
        raise ParseError("header 'adapters' and 'tensors' must be arrays")
    payload = data[16 + header_len :]

    specs = []
    prev_end = 0
    for idx, t in enumerate(tensors):
        if not isinstance(t, dict):
            raise ParseError(f"tensor {idx} must be an object")
        _require_keys(t, _TENSOR_KEYS, f"tensor {idx}", strict)
        if t["dtype"] != "f32":
            raise ParseError(f"tensor {idx} has unsupported dtype {t['dtype']!r}")
        shape = t["shape"]
        if (
            not isinstance(shape, list)
            or len(shape) != 2
            or not all(_is_int(s) and s > 0 for s in shape)
        ):
            raise ParseError(f"tensor {idx} shape must be two positive integers")
        offset, nbytes = t["offset"], t["nbytes"]
        if not _is_int(offset) or not _is_int(nbytes):
            raise ParseError(f"tensor {idx} offset/nbytes must be integers")
        if nbytes != shape[0] * shape[1] * 4:
            raise ShapeMismatch(
                f"tensor {idx} declares shape {shape} ({shape[0] * shape[1] * 4} bytes) "
                f"but nbytes = {nbytes}"
            )
        if offset % ALIGNMENT != 0:
            raise ShapeMismatch(f"tensor {idx} offset {offset} is not 8-byte aligned")
        if offset < prev_end:
            raise ShapeMismatch(
                f"tensor {idx} offset {offset} overlaps or reorders previous tensors"
            )
        if offset + nbytes > len(payload):
            raise ShapeMismatch(
                f"tensor {idx} needs bytes [{offset}, {offset + nbytes}) "
                f"but payload has only {len(payload)}"
            )
        prev_end = offset + nbytes
        specs.append((offset, nbytes, (shape[0], shape[1])))

    if len(tensors) != 2 * len(meta):
        raise ShapeMismatch(
            f"{len(meta)} adapters require {2 * len(meta)} tensors, header lists {len(tensors)}"
        )

    adapters = []
    for i, m in enumerate(meta):
        if not isinstance(m, dict):
            raise ParseError(f"adapter {i} must be an object")
        _require_keys(m, _ADAPTER_KEYS, f"adapter {i}", strict)
        d_in, d_out, rank = m["d_in"], m["d_out"], m["rank"]
        if not all(_is_int(v) and v > 0 for v in (d_in, d_out, rank)):
            raise ParseError(f"adapter {i} dims must be positive integers")
        scale = m["scale"]
        if (
            isinstance(scale, bool)
            or not isinstance(scale, (int, float))
            or not math.isfinite(scale)
        ):
            raise ParseError(f"adapter {i} scale must be a finite number")
        a_spec, b_spec = specs[2 * i], specs[2 * i + 1]
        if a_spec[2] != (rank, d_in):
            raise ShapeMismatch(
                f"adapter {i} factor A shape {a_spec[2]} != (rank, d_in) = ({rank}, {d_in})"
            )
        if b_spec[2] != (d_out, rank):
            raise ShapeMismatch(
                f"adapter {i} factor B shape {b_spec[2]} != (d_out, rank) = ({d_out}, {rank})"
            )
        factors = []
        for offset, nbytes, shape in (a_spec, b_spec):
            arr = np.frombuffer(payload[offset : offset + nbytes], dtype="<f4").reshape(shape)
            if not np.isfinite(arr).all():
                raise NonFiniteTensor(f"adapter {i} tensor at offset {offset} has NaN/Inf")
            factors.append(arr)
        adapters.append(
            LowRankAdapter(
                name=str(m["name"]),
                d_in=d_in,
                d_out=d_out,
                rank=rank,
                factor_a=factors[0],
                factor_b=factors[1],
                scale=float(m["scale"]),
            )
        )
    return adapters


def _parse_json(text: str):
    def reject_constant(name: str):
        raise NonFinite(f"non-finite literal {name!r} in numeric input")

    try:
        return json.loads(text, parse_constant=reject_constant)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}") from exc


def _as_number(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ParseError(f"{where} is not a number: {value!r}")
    if not math.isfinite(value):
        raise NonFinite(f"{where} is not finite: {value!r}")
    return float(value)


def load_vector(text: str) -> np.ndarray:
    """Parse a JSON array of finite numbers into a float64 vector."""
    doc = _parse_json(text)
    if not isinstance(doc, list):
        raise ParseError("vector input must be a JSON array")
    return np.array(
        [_as_number(v, f"element {i}") for i, v in enumerate(doc)], dtype=np.float64
    )


def load_matrix(text: str) -> np.ndarray:
    """Parse a JSON array-of-arrays of finite numbers into a float64 matrix."""
    doc = _parse_json(text)
    if not isinstance(doc, list) or not all(isinstance(row, list) for row in doc):
        raise ParseError("matrix input must be a JSON array of arrays")
    widths = {len(row) for row in doc}
    if len(widths) > 1:
        raise RaggedRows(f"rows have differing lengths {sorted(widths)}")
    rows = [
        [_as_number(v, f"entry ({i},{j})") for j, v in enumerate(row)]
        for i, row in enumerate(doc)
    ]
    width = widths.pop() if widths else 0
    return np.array(rows, dtype=np.float64).reshape(len(rows), width)
