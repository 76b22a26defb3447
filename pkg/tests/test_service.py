"""HTTP service endpoints and their byte parity with CLI artifacts."""

from __future__ import annotations

import base64
import json

import pytest
from fastapi.testclient import TestClient
from packcases import small_adapter, valid_pack_bytes

from orthmerge import __version__, save_adapter_pack
from orthmerge.cli import main
from orthmerge.service import create_app


@pytest.fixture(scope="module")
def client():
    with TestClient(create_app()) as c:
        yield c


def b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


class TestHealth:
    def test_reports_version(self, client):
        resp = client.get("/health")
        assert resp.status_code == 200
        assert resp.json() == {"status": "ok", "version": __version__}


class TestSampleMasks:
    def test_matches_cli_bytes(self, client, tmp_path):
        out = tmp_path / "masks.json"
        assert main([
            "sample-masks", "--rates", "0.5,0.5", "--dim", "8",
            "--strategy", "orthogonal", "--seed", "7", "--out", str(out),
        ]) == 0
        resp = client.post(
            "/sample-masks",
            json={"rates": [0.5, 0.5], "dim": 8, "strategy": "orthogonal", "seed": 7},
        )
        assert resp.status_code == 200
        assert resp.headers["content-type"] == "application/json"
        assert resp.content == out.read_bytes()

    def test_capacity_violation_is_400(self, client):
        resp = client.post("/sample-masks", json={"rates": [0.5, 0.4], "dim": 8})
        assert resp.status_code == 400
        body = resp.json()
        assert body["error"] == "ConstraintViolation"
        assert "sum(1-p)" in body["message"]

    def test_unknown_strategy_is_400(self, client):
        resp = client.post(
            "/sample-masks", json={"rates": [0.5], "dim": 4, "strategy": "direct"}
        )
        assert resp.status_code == 400
        assert resp.json()["error"] == "ValueError"

    def test_missing_field_is_422(self, client):
        assert client.post("/sample-masks", json={"rates": [0.5]}).status_code == 422


class TestMerge:
    def test_matches_cli_audit_bytes(self, client, tmp_path):
        pack = save_adapter_pack(
            [small_adapter(name="p0", fill=0.5), small_adapter(name="p1", fill=-1.5)]
        )
        pack_path = tmp_path / "pack.lrpk"
        pack_path.write_bytes(pack)
        h_path = tmp_path / "h.json"
        h_path.write_text("[1.0, 2.0]")
        out = tmp_path / "merged.json"
        audit = tmp_path / "audit.json"
        assert main([
            "merge", "--adapters", str(pack_path), "--input", str(h_path),
            "--strategy", "orthogonal", "--rates", "0.5,0.5",
            "--weights", "1,1", "--seed", "3",
            "--out", str(out), "--audit", str(audit),
        ]) == 0
        resp = client.post(
            "/merge",
            json={
                "pack_b64": b64(pack),
                "input": [1.0, 2.0],
                "strategy": "orthogonal",
                "rates": [0.5, 0.5],
                "weights": [1.0, 1.0],
                "seed": 3,
            },
        )
        assert resp.status_code == 200
        assert resp.content == audit.read_bytes()
        doc = json.loads(resp.content)
        assert doc["output"] == json.loads(out.read_text())

    def test_base_matrix_participates(self, client):
        pack = valid_pack_bytes()
        resp = client.post(
            "/merge",
            json={
                "pack_b64": b64(pack),
                "input": [1.0, 0.0],
                "base": [[1.0, 0.0], [0.0, 1.0]],
                "weights": [0.0],
            },
        )
        assert resp.status_code == 200
        assert resp.json()["output"] == [1.0, 0.0]

    def test_bad_base64_is_400(self, client):
        resp = client.post("/merge", json={"pack_b64": "@@@", "input": [1.0]})
        assert resp.status_code == 400
        assert resp.json()["error"] == "ParseError"

    def test_malformed_pack_is_400(self, client):
        resp = client.post(
            "/merge", json={"pack_b64": b64(b"LRPK0000junk"), "input": [1.0]}
        )
        assert resp.status_code == 400
        assert resp.json()["error"] == "BadMagic"

    def test_ragged_base_is_400(self, client):
        resp = client.post(
            "/merge",
            json={
                "pack_b64": b64(valid_pack_bytes()),
                "input": [1.0, 0.0],
                "base": [[1.0, 0.0], [1.0]],
            },
        )
        assert resp.status_code == 400
        assert resp.json()["error"] == "RaggedRows"

    def test_rate_count_mismatch_is_400(self, client):
        resp = client.post(
            "/merge",
            json={
                "pack_b64": b64(valid_pack_bytes()),
                "input": [1.0, 0.0],
                "rates": [0.5, 0.5],
            },
        )
        assert resp.status_code == 400
        assert resp.json()["error"] == "DimensionMismatch"


class TestVerify:
    def test_matches_cli_bytes_and_passes(self, client, tmp_path):
        out = tmp_path / "report.json"
        assert main([
            "verify", "--rates", "0.5,0.5", "--dim", "32",
            "--samples", "300", "--seed", "1", "--out", str(out),
        ]) == 0
        resp = client.post(
            "/verify", json={"rates": [0.5, 0.5], "dim": 32, "samples": 300, "seed": 1}
        )
        assert resp.status_code == 200
        assert resp.content == out.read_bytes()
        assert resp.json()["passed"] is True

    def test_negative_control_reports_failure(self, client):
        resp = client.post(
            "/verify",
            json={"rates": [0.5, 0.5], "dim": 10_000, "samples": 4, "force_mc": True},
        )
        assert resp.status_code == 200
        body = resp.json()
        assert body["passed"] is False
        assert body["reports"][0]["config"]["mask_kind"] == "mc"

    def test_unknown_suite_is_400(self, client):
        resp = client.post(
            "/verify", json={"rates": [0.5], "dim": 8, "suite": "everything"}
        )
        assert resp.status_code == 400


class TestAnalyze:
    def test_matches_cli_bytes(self, client, tmp_path):
        pack = save_adapter_pack(
            [small_adapter(name="p0", fill=0.5), small_adapter(name="p1", fill=-1.5)]
        )
        pack_path = tmp_path / "pack.lrpk"
        pack_path.write_bytes(pack)
        inputs_path = tmp_path / "inputs.json"
        inputs_path.write_text("[[1.0, 0.0], [0.5, 0.5]]")
        out = tmp_path / "report.json"
        assert main([
            "analyze", "--adapters", str(pack_path), "--inputs", str(inputs_path),
            "--rates", "0.5,0.5", "--seed", "4", "--out", str(out),
        ]) == 0
        resp = client.post(
            "/analyze",
            json={
                "pack_b64": b64(pack),
                "inputs": [[1.0, 0.0], [0.5, 0.5]],
                "rates": [0.5, 0.5],
                "seed": 4,
            },
        )
        assert resp.status_code == 200
        assert resp.content == out.read_bytes()

    def test_defaults_match_cli_defaults(self, client, tmp_path):
        pack = valid_pack_bytes()
        pack_path = tmp_path / "pack.lrpk"
        pack_path.write_bytes(pack)
        inputs_path = tmp_path / "inputs.json"
        inputs_path.write_text("[[2.0, 3.0]]")
        out = tmp_path / "report.json"
        assert main([
            "analyze", "--adapters", str(pack_path), "--inputs", str(inputs_path),
            "--out", str(out),
        ]) == 0
        resp = client.post(
            "/analyze", json={"pack_b64": b64(pack), "inputs": [[2.0, 3.0]]}
        )
        assert resp.content == out.read_bytes()
