"""Line search over the loss weight to hit an SLA violation-rate target
with minimal overprovisioning.

The violation rate of a trained model is statistically non-increasing in the
loss weight, so an ascending geometric sweep brackets the crossing point and
a few golden-fraction probes refine it. Selection aims slightly below the
target rate: the rate is estimated on validation data and the model must
also satisfy the target out of sample.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigError, DataError
from .loss import LossConfig
from .lstm import LstmSpec, TrainConfig, forward, train

DEFAULT_W_GRID = (1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0)
DEFAULT_TOLERANCE_PTS = 1.5
DEFAULT_MARGIN_PTS = 0.75
DEFAULT_REFINE_ITERS = 3

_GOLDEN_FRACTION = 0.381966011250105  # 2 - golden ratio


@dataclass(frozen=True)
class CalibrationPoint:
    w: float
    violation_rate: float  # fraction
    volume: float  # mean positive prediction error, raw units


@dataclass(frozen=True)
class CalibrationResult:
    target_rate: float
    tolerance_pts: float
    chosen_w: float
    violation_rate: float
    volume: float
    satisfied: bool
    trace: tuple[CalibrationPoint, ...]

    def to_dict(self) -> dict:
        return {
            "target_rate": self.target_rate,
            "tolerance_pts": self.tolerance_pts,
            "chosen_w": self.chosen_w,
            "violation_rate": self.violation_rate,
            "volume": self.volume,
            "satisfied": self.satisfied,
            "trace": [
                {"w": p.w, "violation_rate": p.violation_rate, "volume": p.volume}
                for p in self.trace
            ],
        }


def constant_predictor_oracle(targets, w: float) -> tuple[float, float]:
    """Best constant forecast under the weighted loss, by exhaustive scan.

    Scans every sorted target value as a candidate constant and returns the
    minimizer together with its violation rate. The optimum lands on the
    w/(1+w) empirical quantile, which makes this an independent check on any
    trained model's calibration behavior.
    """
    if w <= 0:
        raise ConfigError(f"loss weight must be positive, got {w}")
    x = np.sort(np.asarray(targets, dtype=float))
    n = len(x)
    if n == 0:
        raise DataError("oracle needs at least one sample")
    prefix = np.cumsum(x)
    total = prefix[-1]
    k = np.arange(1, n + 1)
    below = k * x - prefix  # sum of (c - x_i) over x_i <= c, c = x_(k)
    above = (total - prefix) - (n - k) * x  # sum of (x_i - c) over x_i > c
    losses = (w * above + below) / n
    best = int(np.argmin(losses))  # first minimum: smallest optimal constant
    c = float(x[best])
    rate = float(np.count_nonzero(x > c) / n)
    return c, rate


def line_search_weight(
    target_rate: float,
    evaluate: Callable[[float], tuple[float, float]],
    w_grid=DEFAULT_W_GRID,
    tolerance_pts: float = DEFAULT_TOLERANCE_PTS,
    margin_pts: float = DEFAULT_MARGIN_PTS,
    refine_iters: int = DEFAULT_REFINE_ITERS,
) -> CalibrationResult:
    """Search loss weights until the measured violation rate clears the
    target, then pick the candidate with the least overprovisioning.

    ``evaluate(w)`` must return ``(violation_rate_fraction, volume)`` on
    validation data. Candidates at or below ``target - margin`` are preferred
    over those merely within ``target + tolerance``; the margin buys headroom
    for the validation-to-test transfer. If nothing satisfies the toleranced
    target the lowest-rate candidate is returned flagged unsatisfied.
    """
    if not 0.0 < target_rate < 1.0:
        raise ConfigError(f"target rate must be in (0, 1), got {target_rate}")
    grid = sorted(set(float(w) for w in w_grid))
    if not grid:
        raise ConfigError("weight search grid is empty")
    if min(grid) > 1.0:
        raise ConfigError("weight search grid must include w = 1")
    if any(w <= 0 for w in grid):
        raise ConfigError("weights must be positive")

    goal = target_rate - margin_pts / 100.0
    trace: list[CalibrationPoint] = []

    def probe(w: float) -> CalibrationPoint:
        rate, volume = evaluate(w)
        point = CalibrationPoint(float(w), float(rate), float(volume))
        trace.append(point)
        return point

    bracket_lo: float | None = None
    bracket_hi: float | None = None
    for w in grid:
        point = probe(w)
        if point.violation_rate <= goal:
            bracket_hi = w
            break
        bracket_lo = w

    if bracket_hi is not None and bracket_lo is not None:
        lo, hi = bracket_lo, bracket_hi
        for _ in range(refine_iters):
            mid = lo + _GOLDEN_FRACTION * (hi - lo)
            point = probe(mid)
            if point.violation_rate <= goal:
                hi = mid
            else:
                lo = mid

    within_margin = [p for p in trace if p.violation_rate <= goal]
    within_tolerance = [
        p for p in trace if p.violation_rate <= target_rate + tolerance_pts / 100.0
    ]
    pool = within_margin or within_tolerance
    if pool:
        chosen = min(pool, key=lambda p: (p.volume, p.w))
        satisfied = True
    else:
        chosen = min(trace, key=lambda p: (p.violation_rate, p.w))
        satisfied = False
    return CalibrationResult(
        target_rate=target_rate,
        tolerance_pts=tolerance_pts,
        chosen_w=chosen.w,
        violation_rate=chosen.violation_rate,
        volume=chosen.volume,
        satisfied=satisfied,
        trace=tuple(trace),
    )


def calibrate_weight(
    target_rate: float,
    spec: LstmSpec,
    train_cfg: TrainConfig,
    train_inputs: np.ndarray,
    train_targets: np.ndarray,
    val_inputs: np.ndarray,
    val_actual_raw: np.ndarray,
    f10_mean: float,
    f10_std: float,
    w_grid=DEFAULT_W_GRID,
    tolerance_pts: float = DEFAULT_TOLERANCE_PTS,
    margin_pts: float = DEFAULT_MARGIN_PTS,
    refine_iters: int = DEFAULT_REFINE_ITERS,
):
    """Full calibration: retrain the network per candidate weight, measure
    validation violation rate and overprovisioning in raw units, and keep the
    model of the selected weight.

    Returns ``(CalibrationResult, params_of_chosen_w)``.
    """
    cache: dict[float, dict] = {}

    def evaluate(w: float) -> tuple[float, float]:
        result = train(spec, train_inputs, train_targets, train_cfg,
                       LossConfig(w=w, sla_target=target_rate))
        cache[float(w)] = result.params
        pred_norm = forward(spec, result.params, val_inputs)
        pred_raw = pred_norm * f10_std + f10_mean
        err = pred_raw - val_actual_raw
        rate = float(np.count_nonzero(err < 0) / len(err))
        volume = float(np.mean(np.maximum(err, 0.0)))
        return rate, volume

    result = line_search_weight(
        target_rate, evaluate, w_grid=w_grid, tolerance_pts=tolerance_pts,
        margin_pts=margin_pts, refine_iters=refine_iters,
    )
    return result, cache[result.chosen_w]
