"""Certification suites: consistency, orthogonality, unbiasedness, interference."""

from __future__ import annotations

import math

import numpy as np
import pytest

from orthmerge import (
    ConstraintViolation,
    DimensionMismatch,
    InvalidRate,
    LowRankAdapter,
    MergePlan,
    PlanEntry,
    analyze_interference,
    run_consistency_suite,
    run_orthogonality_suite,
    run_selected_suites,
    run_unbiasedness_suite,
    synthesize_fixture,
)
import orthmerge.verify as verify_mod
from orthmerge.verify import thread_count


def plan_for(rates, strategy, weights=None, seed=0, names=None):
    weights = weights or [1.0] * len(rates)
    names = names or [f"synth{j:02d}" for j in range(len(rates))]
    return MergePlan(
        entries=tuple(
            PlanEntry(adapter=n, weight=w, dropout=p)
            for n, w, p in zip(names, weights, rates)
        ),
        strategy=strategy,
        seed=seed,
    )


class TestConsistencySuite:
    def test_complement_pair_frequencies_inside_binomial_radius(self):
        report = run_consistency_suite([0.5, 0.5], 100, 1000, 0)
        assert report.passed
        for j in (1, 2):
            freq = report.statistics[f"keep_freq_{j:02d}"]
            target = report.statistics[f"keep_target_{j:02d}"]
            bound = report.statistics[f"keep_bound_{j:02d}"]
            assert abs(freq - target) <= bound

    def test_full_dropout_keeps_exactly_nothing(self):
        report = run_consistency_suite([1.0], 50, 200, 0)
        assert report.passed
        assert report.statistics["keep_freq_01"] == 0.0
        assert report.statistics["keep_target_01"] == 0.0

    def test_ten_adapters_at_point_nine(self):
        report = run_consistency_suite([0.9] * 10, 100, 2000, 1)
        assert report.passed
        assert len([k for k in report.statistics if k.startswith("keep_freq_")]) == 10

    def test_capacity_checked(self):
        with pytest.raises(ConstraintViolation):
            run_consistency_suite([0.5, 0.4], 10, 10, 0)

    def test_positive_sizes_required(self):
        with pytest.raises(DimensionMismatch):
            run_consistency_suite([0.5], 0, 10, 0)
        with pytest.raises(DimensionMismatch):
            run_consistency_suite([0.5], 10, 0, 0)

    def test_payload_schema(self):
        report = run_consistency_suite([0.5, 0.5], 8, 10, 3)
        payload = report.to_payload()
        assert set(payload) == {"config", "passed", "statistics", "suite", "trials"}
        assert payload["suite"] == "consistency"
        assert payload["trials"] == 10
        assert payload["config"] == {
            "d_out": 8, "n_samples": 10, "rates": [0.5, 0.5], "seed": 3,
        }

    def test_bytes_stable_across_thread_counts(self, monkeypatch):
        monkeypatch.setattr(verify_mod, "_CHUNK_CELLS", 1 << 10)
        monkeypatch.delenv("ORTHMERGE_THREADS", raising=False)
        serial = run_consistency_suite([0.5, 0.5], 64, 300, 3).to_json()
        monkeypatch.setenv("ORTHMERGE_THREADS", "4")
        assert run_consistency_suite([0.5, 0.5], 64, 300, 3).to_json() == serial


class TestOrthogonalitySuite:
    def test_chained_masks_pass_with_exact_zero(self):
        report = run_orthogonality_suite([0.5, 0.5], 64, 200, 0)
        assert report.passed
        assert report.statistics["max_pair_dot"] == 0.0
        assert report.statistics["n_pairs"] == 1.0

    def test_single_mask_is_vacuously_orthogonal(self):
        report = run_orthogonality_suite([0.3], 64, 50, 0)
        assert report.passed
        assert report.statistics["max_pair_dot"] == 0.0

    def test_independent_masks_fail_the_same_check(self):
        report = run_orthogonality_suite([0.5, 0.5], 10_000, 4, 0, mask_kind="mc")
        assert not report.passed
        assert report.statistics["max_pair_dot"] >= 1.0
        assert report.config["mask_kind"] == "mc"

    def test_unknown_mask_kind(self):
        with pytest.raises(ValueError):
            run_orthogonality_suite([0.5], 8, 4, 0, mask_kind="direct")

    def test_mc_kind_skips_capacity_constraint(self):
        report = run_orthogonality_suite([0.2, 0.2], 100, 4, 0, mask_kind="mc")
        assert not report.passed


class TestUnbiasednessSuite:
    def test_zero_rates_give_error_exactly_zero(self):
        adapters, h = synthesize_fixture(3, 16, 16, 4, 0)
        plan = plan_for([0.0] * 3, "dropout")
        report = run_unbiasedness_suite(plan, adapters, h, 50)
        assert report.passed
        assert report.statistics["rel_l2_error"] == 0.0

    def test_orthogonal_thirds_converge(self):
        adapters, h = synthesize_fixture(3, 64, 64, 4, 2)
        plan = plan_for([2.0 / 3.0] * 3, "orthogonal", seed=2)
        report = run_unbiasedness_suite(plan, adapters, h, 20_000)
        assert report.passed
        assert report.statistics["rel_l2_error"] <= report.statistics["threshold"]

    def test_heavy_dropout_on_single_adapter_converges(self):
        adapters, h = synthesize_fixture(1, 64, 64, 4, 5)
        plan = plan_for([0.9], "dropout", seed=5)
        report = run_unbiasedness_suite(plan, adapters, h, 20_000)
        assert report.passed

    def test_threshold_floors_at_one_percent(self):
        adapters, h = synthesize_fixture(1, 8, 8, 2, 0)
        plan = plan_for([0.0], "dropout")
        tight = run_unbiasedness_suite(plan, adapters, h, 1_000_000)
        assert tight.statistics["threshold"] == 0.01
        loose = run_unbiasedness_suite(plan, adapters, h, 100)
        assert loose.statistics["threshold"] == 0.5

    def test_unit_rate_with_nonzero_weight_rejected(self):
        adapters, h = synthesize_fixture(1, 8, 8, 2, 0)
        with pytest.raises(InvalidRate):
            run_unbiasedness_suite(plan_for([1.0], "dropout"), adapters, h, 10)

    def test_unit_rate_with_zero_weight_contributes_nothing(self):
        adapters, h = synthesize_fixture(2, 8, 8, 2, 0)
        plan = plan_for([1.0, 0.0], "orthogonal", weights=[0.0, 1.0])
        report = run_unbiasedness_suite(plan, adapters, h, 2000)
        assert report.passed

    def test_direct_strategy_is_its_own_mean(self):
        adapters, h = synthesize_fixture(2, 8, 8, 2, 0)
        report = run_unbiasedness_suite(plan_for([0.0, 0.0], "direct"), adapters, h, 5)
        assert report.statistics["rel_l2_error"] == 0.0

    def test_bytes_stable_across_thread_counts(self, monkeypatch):
        adapters, h = synthesize_fixture(2, 32, 32, 4, 7)
        plan = plan_for([0.5, 0.5], "orthogonal", seed=7)
        monkeypatch.setattr(verify_mod, "_CHUNK_CELLS", 1 << 10)
        monkeypatch.delenv("ORTHMERGE_THREADS", raising=False)
        serial = run_unbiasedness_suite(plan, adapters, h, 400).to_json()
        monkeypatch.setenv("ORTHMERGE_THREADS", "3")
        assert run_unbiasedness_suite(plan, adapters, h, 400).to_json() == serial


class TestAnalyzeInterference:
    def identical_pair(self):
        gen = np.random.default_rng(4)
        a = gen.standard_normal((2, 6)).astype(np.float32)
        b = gen.standard_normal((16, 2)).astype(np.float32)
        return [
            LowRankAdapter(name=f"t{j}", d_in=6, d_out=16, rank=2,
                           factor_a=a, factor_b=b)
            for j in range(2)
        ]

    def test_identical_adapters_interfere_directly_but_not_orthogonally(self):
        adapters = self.identical_pair()
        h = np.random.default_rng(5).standard_normal(6)
        report = analyze_interference(adapters, [1.0, 1.0], [0.5, 0.5], [h], 0)
        record = report.records[0]
        direct_cos = record["strategies"]["direct"]["cosines"][0]["cosine"]
        orth_cos = record["strategies"]["orthogonal"]["cosines"][0]["cosine"]
        assert abs(direct_cos - 1.0) <= 1e-12
        assert orth_cos == 0.0

    def test_geometrically_disjoint_outputs_have_zero_direct_cosine(self):
        first = LowRankAdapter(name="x", d_in=1, d_out=2, rank=1,
                               factor_a=np.ones((1, 1), np.float32),
                               factor_b=np.array([[1.0], [0.0]], np.float32))
        second = LowRankAdapter(name="y", d_in=1, d_out=2, rank=1,
                                factor_a=np.ones((1, 1), np.float32),
                                factor_b=np.array([[0.0], [1.0]], np.float32))
        report = analyze_interference([first, second], [1.0, 1.0], [0.5, 0.5],
                                      [np.ones(1)], 0)
        assert report.records[0]["raw_cosines"][0]["cosine"] == 0.0
        assert report.records[0]["strategies"]["direct"]["cosines"][0]["cosine"] == 0.0

    def test_zero_contribution_reports_none_not_nan(self):
        adapters = self.identical_pair()
        h = np.random.default_rng(6).standard_normal(6)
        report = analyze_interference(adapters, [0.0, 1.0], [1.0, 0.0], [h], 0)
        strategies = report.records[0]["strategies"]
        assert strategies["orthogonal"]["cosines"][0]["cosine"] is None
        assert strategies["dropout"]["cosines"][0]["cosine"] is None

    def test_orthogonal_pythagorean_residual_is_tiny(self):
        gen = np.random.default_rng(7)
        adapters, _ = synthesize_fixture(3, 12, 48, 3, 9)
        inputs = [gen.standard_normal(12) for _ in range(5)]
        report = analyze_interference(
            adapters, [0.7, -1.2, 2.0], [2.0 / 3.0] * 3, inputs, 3
        )
        for record in report.records:
            assert record["strategies"]["orthogonal"]["pythagorean_residual"] <= 1e-6

    def test_payload_schema_and_determinism(self):
        adapters, h = synthesize_fixture(2, 8, 8, 2, 1)
        report = analyze_interference(adapters, [1.0, 1.0], [0.5, 0.5], [h], 1)
        payload = report.to_payload()
        assert set(payload) == {"n_adapters", "rates", "records", "seed", "weights"}
        again = analyze_interference(adapters, [1.0, 1.0], [0.5, 0.5], [h], 1)
        assert report.to_json() == again.to_json()

    def test_count_mismatch(self):
        adapters, h = synthesize_fixture(2, 8, 8, 2, 1)
        with pytest.raises(DimensionMismatch):
            analyze_interference(adapters, [1.0], [0.5, 0.5], [h], 0)


class TestThreadCount:
    def test_unset_means_serial(self, monkeypatch):
        monkeypatch.delenv("ORTHMERGE_THREADS", raising=False)
        assert thread_count() == 1

    def test_zero_means_all_cores(self, monkeypatch):
        monkeypatch.setenv("ORTHMERGE_THREADS", "0")
        assert thread_count() >= 1

    def test_explicit_count(self, monkeypatch):
        monkeypatch.setenv("ORTHMERGE_THREADS", "3")
        assert thread_count() == 3

    def test_negative_rejected(self, monkeypatch):
        monkeypatch.setenv("ORTHMERGE_THREADS", "-1")
        with pytest.raises(ValueError):
            thread_count()


class TestRunSelectedSuites:
    def test_all_runs_every_suite(self):
        reports = run_selected_suites([0.5, 0.5], 16, 300, 0)
        assert [r.suite for r in reports] == [
            "consistency", "orthogonality", "unbiasedness", "unbiasedness",
        ]
        assert reports[2].config["strategy"] == "dropout"
        assert reports[3].config["strategy"] == "orthogonal"
        assert all(r.passed for r in reports)

    def test_single_suite_selection(self):
        reports = run_selected_suites([0.5, 0.5], 16, 50, 0, suite="orthogonality")
        assert [r.suite for r in reports] == ["orthogonality"]

    def test_force_mc_is_the_negative_control(self):
        reports = run_selected_suites([0.5, 0.5], 10_000, 4, 0, force_mc=True)
        assert len(reports) == 1
        assert reports[0].config["mask_kind"] == "mc"
        assert not reports[0].passed

    def test_unknown_suite_name(self):
        with pytest.raises(ValueError):
            run_selected_suites([0.5], 8, 4, 0, suite="everything")


class TestSynthesizeFixture:
    def test_deterministic_and_seed_sensitive(self):
        first_a, first_h = synthesize_fixture(2, 8, 8, 2, 0)
        second_a, second_h = synthesize_fixture(2, 8, 8, 2, 0)
        other_a, _ = synthesize_fixture(2, 8, 8, 2, 1)
        assert np.array_equal(first_h, second_h)
        assert np.array_equal(first_a[0].factor_a, second_a[0].factor_a)
        assert not np.array_equal(first_a[0].factor_a, other_a[0].factor_a)

    def test_shapes_and_range(self):
        adapters, h = synthesize_fixture(3, 5, 7, 2, 4)
        assert len(adapters) == 3
        assert adapters[0].factor_a.shape == (2, 5)
        assert adapters[0].factor_b.shape == (7, 2)
        assert h.shape == (5,)
        assert float(np.abs(h).max()) < 1.0
