"""SLA metrics and the cross-variant evaluation report.

Losses are reported in normalized target units; violation rates as
percentages; overprovisioning volumes in raw units under both averaging
conventions (over all instants, and over overprovisioned instants only).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import TARGET_LABEL, Normalizer
from .errors import DataError, MissingModelError
from .loss import wmae

# Reference single-step benchmark for the GU14 cell: (loss, volume) per
# variant and SLA target, embedded verbatim as report annotations.
REFERENCE_SINGLE_STEP = {
    "univariate": {"0.03": [0.50, 42.61], "0.05": [0.44, 36.92]},
    "ran": {"0.03": [0.49, 42.74], "0.05": [0.43, 37.65]},
    "peak": {"0.03": [0.46, 39.23], "0.05": [0.42, 34.75]},
    "handover": {"0.03": [0.44, 38.08], "0.05": [0.39, 31.28]},
    "all": {"0.03": [0.48, 39.55], "0.05": [0.41, 33.23]},
}

# Reference multi-step test losses for the GU14 cell at the 5% SLA target,
# per horizon {1, 2, 4, 8, 24}.
REFERENCE_MULTI_STEP_LOSS = {
    "univariate": [0.44, 0.61, 0.70, 0.87, 0.91],
    "ran": [0.43, 0.49, 0.56, 0.77, 1.00],
    "peak": [0.42, 0.66, 0.48, 0.65, 0.82],
    "handover": [0.39, 0.46, 0.57, 0.89, 1.07],
    "all": [0.41, 0.54, 0.59, 0.69, 0.95],
}

REFERENCE_MULTI_STEP_HORIZONS = (1, 2, 4, 8, 24)

REPORT_SCHEMA_VERSION = 1


def _check_pair(pred, actual):
    pred = np.asarray(pred, dtype=float)
    actual = np.asarray(actual, dtype=float)
    if pred.shape != actual.shape or pred.ndim != 1:
        raise DataError(f"prediction/actual shape mismatch: {pred.shape} vs {actual.shape}")
    if len(pred) == 0:
        raise DataError("empty prediction series")
    return pred, actual


def sla_violation_rate(pred, actual) -> float:
    """Percentage of instants where the forecast falls strictly below the
    actual demand. Exact hits are not violations."""
    pred, actual = _check_pair(pred, actual)
    return float(100.0 * np.count_nonzero(pred - actual < 0) / len(pred))


def overprovisioning_volume(pred, actual) -> tuple[float, float]:
    """Mean positive prediction error, both unconditional (over all instants,
    the quantity the loss optimizes) and conditional on overprovisioning."""
    pred, actual = _check_pair(pred, actual)
    over = np.maximum(pred - actual, 0.0)
    positive = over[over > 0]
    conditional = float(positive.mean()) if len(positive) else 0.0
    return float(over.mean()), conditional


def test_loss(pred, actual, normalizer: Normalizer, w: float) -> float:
    """Mean weighted absolute error in normalized target units."""
    pred, actual = _check_pair(pred, actual)
    pn = normalizer.transform_values(TARGET_LABEL, pred)
    an = normalizer.transform_values(TARGET_LABEL, actual)
    return float(np.mean(wmae(pn - an, w)))


@dataclass(frozen=True)
class EvalCell:
    """Metrics of one (variant, SLA target, horizon) grid entry."""

    loss: float
    violation_rate_pct: float
    volume_mean: float
    volume_conditional: float
    mae: float
    mse: float
    n: int

    def to_dict(self) -> dict:
        return {
            "loss": self.loss,
            "violation_rate_pct": self.violation_rate_pct,
            "volume_mean": self.volume_mean,
            "volume_conditional": self.volume_conditional,
            "mae": self.mae,
            "mse": self.mse,
            "n": self.n,
        }


SKIPPED = "skipped"


def evaluate_predictions(pred, actual, normalizer: Normalizer, w: float) -> EvalCell:
    pred, actual = _check_pair(pred, actual)
    volume_mean, volume_cond = overprovisioning_volume(pred, actual)
    err = pred - actual
    return EvalCell(
        loss=test_loss(pred, actual, normalizer, w),
        violation_rate_pct=sla_violation_rate(pred, actual),
        volume_mean=volume_mean,
        volume_conditional=volume_cond,
        mae=float(np.mean(np.abs(err))),
        mse=float(np.mean(err**2)),
        n=len(pred),
    )


def _sla_key(sla: float) -> str:
    return format(sla, ".2f")


def build_report(results: dict, variants, sla_targets, horizons,
                 calibration: dict | None = None, metadata: dict | None = None) -> dict:
    """Assemble the full metric grid into a serializable report.

    ``results`` maps ``(variant, sla, horizon)`` to an EvalCell or the string
    ``"skipped"``. Every grid entry must be present one way or the other.
    """
    grid: dict = {}
    for variant in variants:
        grid[variant] = {}
        for sla in sla_targets:
            key = _sla_key(sla)
            grid[variant][key] = {}
            for horizon in horizons:
                cell = results.get((variant, sla, horizon))
                if cell is None:
                    raise MissingModelError(
                        f"no evaluation for variant={variant} sla={sla} horizon={horizon}"
                    )
                grid[variant][key][str(horizon)] = (
                    SKIPPED if cell == SKIPPED else cell.to_dict()
                )
    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "variants": list(variants),
        "sla_targets": [float(s) for s in sla_targets],
        "horizons": [int(h) for h in horizons],
        "results": grid,
        "reference_benchmark": {
            "cell": "GU14",
            "single_step": REFERENCE_SINGLE_STEP,
            "multi_step_loss_sla_0.05": REFERENCE_MULTI_STEP_LOSS,
            "multi_step_horizons": list(REFERENCE_MULTI_STEP_HORIZONS),
        },
        "calibration": calibration or {},
        "metadata": metadata or {},
    }
    return report


def report_to_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=1) + "\n"


_METRIC_FIELDS = ("loss", "violation_rate_pct", "volume_mean", "volume_conditional",
                  "mae", "mse", "n")


def write_report_tables(report: dict, out_dir) -> list[Path]:
    """Emit the delimited companions of the JSON report: a single-step table,
    a multi-step table, and nothing else (figures are the CLI's business)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    single = out_dir / "single_step.csv"
    multi = out_dir / "multi_step.csv"

    with open(single, "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["variant", "sla", *_METRIC_FIELDS])
        for variant in report["variants"]:
            for sla in report["sla_targets"]:
                cell = report["results"][variant][_sla_key(sla)]["1"]
                writer.writerow(_table_row(variant, sla, cell))

    with open(multi, "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["variant", "sla", "horizon", *_METRIC_FIELDS])
        for variant in report["variants"]:
            for sla in report["sla_targets"]:
                for horizon in report["horizons"]:
                    cell = report["results"][variant][_sla_key(sla)][str(horizon)]
                    writer.writerow(_table_row(variant, sla, cell, horizon))
    return [single, multi]


def _table_row(variant, sla, cell, horizon=None):
    row = [variant, repr(float(sla))]
    if horizon is not None:
        row.append(horizon)
    if cell == SKIPPED:
        row += [SKIPPED] * len(_METRIC_FIELDS)
    else:
        row += [repr(float(cell[f])) if f != "n" else cell[f] for f in _METRIC_FIELDS]
    return row


def write_plot_source(path, timestamps, actual, predictions: dict) -> Path:
    """Plot-source CSV: ``timestamp, actual, pred_<variant>...`` columns for
    regenerating overlay figures with external tools."""
    path = Path(path)
    variants = list(predictions)
    with open(path, "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["timestamp", "actual", *(f"pred_{v}" for v in variants)])
        for i, ts in enumerate(timestamps):
            row = [ts.isoformat(), repr(float(actual[i]))]
            row += [repr(float(predictions[v][i])) for v in variants]
            writer.writerow(row)
    return path
