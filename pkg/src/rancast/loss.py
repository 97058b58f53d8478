"""Asymmetric absolute-error loss for SLA-aware capacity forecasting.

Underprediction (a capacity shortfall) costs ``w`` times more than the same
amount of overprediction, so raising ``w`` pushes a trained model toward
higher, safer forecasts. ``w = 1`` recovers the plain mean absolute error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class LossConfig:
    """Loss weight plus the SLA violation-rate target it was calibrated for
    (metadata only; the target does not affect the loss value)."""

    w: float = 1.0
    sla_target: float | None = None

    def __post_init__(self):
        if self.w <= 0:
            raise ConfigError(f"loss weight must be positive, got {self.w}")
        if self.sla_target is not None and not 0.0 < self.sla_target < 1.0:
            raise ConfigError(f"SLA target must be in (0, 1), got {self.sla_target}")


def _check_weight(w: float) -> None:
    if w <= 0:
        raise ConfigError(f"loss weight must be positive, got {w}")


def wmae(err, w: float):
    """Elementwise weighted absolute error of ``err = predicted - actual``.

    Negative errors (underprediction) are scaled by ``w``; positive errors
    pass through unchanged.
    """
    _check_weight(w)
    arr = np.asarray(err, dtype=float)
    out = np.where(arr > 0, arr, -w * arr)
    return float(out) if arr.ndim == 0 else out


def wmae_grad(err, w: float):
    """Derivative of ``wmae`` with respect to the error; 0 at err = 0
    (subgradient choice, unbiased between the two branches)."""
    _check_weight(w)
    arr = np.asarray(err, dtype=float)
    out = np.where(arr > 0, 1.0, np.where(arr < 0, -w, 0.0))
    return float(out) if arr.ndim == 0 else out


def mean_wmae(pred, actual, w: float) -> float:
    pred = np.asarray(pred, dtype=float)
    actual = np.asarray(actual, dtype=float)
    if pred.shape != actual.shape:
        raise ConfigError(f"shape mismatch: {pred.shape} vs {actual.shape}")
    return float(np.mean(wmae(pred - actual, w)))
