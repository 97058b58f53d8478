"""SLA metrics and report assembly."""

from datetime import datetime, timedelta

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rancast.dataset import Normalizer
from rancast.errors import DataError, MissingModelError
from rancast.evaluate import test_loss as compute_test_loss
from rancast.evaluate import (
    SKIPPED,
    EvalCell,
    build_report,
    evaluate_predictions,
    overprovisioning_volume,
    report_to_json,
    sla_violation_rate,
    write_plot_source,
    write_report_tables,
)

IDENTITY = Normalizer(("F10",), np.array([0.0]), np.array([1.0]))


class TestViolationRate:
    def test_all_over(self):
        actual = np.arange(5.0)
        assert sla_violation_rate(actual + 1, actual) == 0.0

    def test_all_under(self):
        actual = np.arange(5.0)
        assert sla_violation_rate(actual - 1, actual) == 100.0

    def test_hand_count(self):
        assert sla_violation_rate([3, 5, 2], [4, 4, 4]) == pytest.approx(200 / 3)

    def test_exact_hits_are_not_violations(self):
        assert sla_violation_rate([4.0, 4.0], [4.0, 4.0]) == 0.0

    def test_errors(self):
        with pytest.raises(DataError):
            sla_violation_rate([1], [1, 2])
        with pytest.raises(DataError):
            sla_violation_rate([], [])

    @given(st.lists(st.floats(-100, 100), min_size=1, max_size=50), st.floats(0.001, 10))
    @settings(max_examples=50, deadline=None)
    def test_uniform_inflation_never_raises_rate(self, values, eps):
        actual = np.asarray(values)
        rng = np.random.default_rng(0)
        pred = actual + rng.normal(0, 1, len(actual))
        assert sla_violation_rate(pred + eps, actual) <= sla_violation_rate(pred, actual)

    @given(st.lists(st.floats(-100, 100), min_size=1, max_size=50))
    @settings(max_examples=50, deadline=None)
    def test_rate_plus_complement_is_100(self, values):
        actual = np.asarray(values)
        rng = np.random.default_rng(1)
        pred = actual + rng.normal(0, 1, len(actual))
        rate = sla_violation_rate(pred, actual)
        non_violation = 100.0 * np.count_nonzero(pred - actual >= 0) / len(actual)
        assert rate + non_violation == 100.0


class TestVolume:
    def test_hand_count(self):
        assert overprovisioning_volume([5, 3, 6], [4, 4, 4]) == (1.0, 1.5)

    def test_perfect_prediction(self):
        assert overprovisioning_volume([4, 4], [4, 4]) == (0.0, 0.0)

    def test_constant_overshoot(self):
        uncond, cond = overprovisioning_volume([7, 7], [4, 4])
        assert uncond == cond == 3.0


class TestTestLoss:
    def test_zero_for_perfect(self):
        assert compute_test_loss([1, 2], [1, 2], IDENTITY, 19.0) == 0.0

    def test_weight_one_is_mae(self):
        pred = np.array([1.0, 4.0, 2.0])
        actual = np.array([2.0, 2.0, 2.0])
        assert compute_test_loss(pred, actual, IDENTITY, 1.0) == pytest.approx(
            np.mean(np.abs(pred - actual)))

    def test_matches_pointwise_summation(self):
        rng = np.random.default_rng(2)
        pred = rng.uniform(0, 100, 200)
        actual = rng.uniform(0, 100, 200)
        norm = Normalizer(("F10",), np.array([50.0]), np.array([25.0]))
        w = 7.0
        total = 0.0
        for p, a in zip(pred, actual):
            e = (p - 50) / 25 - (a - 50) / 25
            total += w * abs(e) if e <= 0 else e
        assert compute_test_loss(pred, actual, norm, w) == pytest.approx(total / 200, abs=1e-12)


def tiny_cell(seed=0):
    rng = np.random.default_rng(seed)
    pred = rng.uniform(10, 20, 50)
    actual = rng.uniform(10, 20, 50)
    return evaluate_predictions(pred, actual, IDENTITY, 19.0)


def full_results(variants, slas, horizons):
    return {
        (v, s, h): tiny_cell(hash((i, j, k)) % 1000)
        for i, v in enumerate(variants)
        for j, s in enumerate(slas)
        for k, h in enumerate(horizons)
    }


VARIANTS = ("univariate", "ran", "peak", "handover", "all")
SLAS = (0.03, 0.05)
HORIZONS = (1, 2, 4, 8, 24)


class TestReport:
    def test_grid_completeness(self):
        report = build_report(full_results(VARIANTS, SLAS, HORIZONS),
                              VARIANTS, SLAS, HORIZONS)
        count = sum(
            1
            for v in VARIANTS
            for s in ("0.03", "0.05")
            for h in map(str, HORIZONS)
            if report["results"][v][s][h] != SKIPPED
        )
        assert count == 5 * 2 * 5

    def test_missing_cell_rejected(self):
        results = full_results(VARIANTS, SLAS, HORIZONS)
        del results[("peak", 0.05, 8)]
        with pytest.raises(MissingModelError):
            build_report(results, VARIANTS, SLAS, HORIZONS)

    def test_explicit_skip_allowed(self):
        results = full_results(VARIANTS, SLAS, HORIZONS)
        results[("peak", 0.05, 8)] = SKIPPED
        report = build_report(results, VARIANTS, SLAS, HORIZONS)
        assert report["results"]["peak"]["0.05"]["8"] == SKIPPED

    def test_reference_rows_embedded(self):
        report = build_report(full_results(VARIANTS, SLAS, HORIZONS),
                              VARIANTS, SLAS, HORIZONS)
        ref = report["reference_benchmark"]
        assert ref["single_step"]["univariate"]["0.05"] == [0.44, 36.92]
        assert ref["single_step"]["handover"]["0.03"] == [0.44, 38.08]
        assert ref["multi_step_loss_sla_0.05"]["univariate"][-1] == 0.91

    def test_regeneration_is_byte_identical(self, tmp_path):
        results = full_results(VARIANTS, SLAS, HORIZONS)
        a = report_to_json(build_report(results, VARIANTS, SLAS, HORIZONS,
                                        metadata={"config_hash": "deadbeef"}))
        b = report_to_json(build_report(results, VARIANTS, SLAS, HORIZONS,
                                        metadata={"config_hash": "deadbeef"}))
        assert a.encode() == b.encode()

        report = build_report(results, VARIANTS, SLAS, HORIZONS)
        write_report_tables(report, tmp_path / "r1")
        write_report_tables(report, tmp_path / "r2")
        for name in ("single_step.csv", "multi_step.csv"):
            assert (tmp_path / "r1" / name).read_bytes() == (tmp_path / "r2" / name).read_bytes()

    def test_tables_have_full_grid(self, tmp_path):
        report = build_report(full_results(VARIANTS, SLAS, HORIZONS),
                              VARIANTS, SLAS, HORIZONS)
        single, multi = write_report_tables(report, tmp_path)
        assert len(single.read_text().strip().split("\n")) == 1 + 5 * 2
        assert len(multi.read_text().strip().split("\n")) == 1 + 5 * 2 * 5

    def test_plot_source_columns(self, tmp_path):
        start = datetime(2024, 1, 1)
        timestamps = [start + timedelta(hours=i) for i in range(4)]
        actual = np.arange(4.0)
        preds = {"univariate": actual + 1, "handover": actual + 2}
        path = write_plot_source(tmp_path / "p.csv", timestamps, actual, preds)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "timestamp,actual,pred_univariate,pred_handover"
        assert lines[1].startswith("2024-01-01T00:00:00,0.0,1.0,2.0")
