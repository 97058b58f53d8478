"""Recursive multi-step forecasting.

Each step feeds the model's own volume prediction back into the window.
Exogenous columns are filled without touching future actuals: calendar flags
are recomputed exactly for future timestamps, counter and handover columns
fall back to their value 24 hours earlier (seasonal-naive), and handover
columns can instead be rebuilt from per-neighbor recursive forecasts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import HOURS_PER_DAY, TARGET_LABEL, TimeGrid
from .errors import ConfigError, DataError, MissingNeighborModelError, ShapeMismatchError
from .features import (
    HANDOVER_IN_COLUMN,
    HANDOVER_OUT_COLUMN,
    PEAK_DAY_COLUMN,
    PEAK_HOUR_COLUMN,
)
from .model import ForecastModel

SEASONAL_NAIVE = "seasonal-naive"
NEIGHBOR_RECURSIVE = "neighbor-recursive"
_SEASONAL_LAG = HOURS_PER_DAY

ALL_HORIZONS = (1, 2, 4, 8, 24)


@dataclass(frozen=True)
class HorizonPlan:
    """Which horizons to forecast and how to fill exogenous columns."""

    horizons: tuple[int, ...] = ALL_HORIZONS
    ran_policy: str = SEASONAL_NAIVE
    handover_policy: str = SEASONAL_NAIVE
    neighbor_models: dict = field(default_factory=dict)  # cell name -> ForecastModel

    def __post_init__(self):
        if not self.horizons:
            raise ConfigError("horizon plan needs at least one horizon")
        if any(h < 1 for h in self.horizons):
            raise ConfigError("horizons must be at least 1")
        if self.ran_policy != SEASONAL_NAIVE:
            raise ConfigError(f"unknown counter fill policy {self.ran_policy!r}")
        if self.handover_policy not in (SEASONAL_NAIVE, NEIGHBOR_RECURSIVE):
            raise ConfigError(f"unknown handover fill policy {self.handover_policy!r}")

    @property
    def max_horizon(self) -> int:
        return max(self.horizons)


def predict_one(model: ForecastModel, window: np.ndarray) -> float:
    """Single-step raw-unit forecast from a raw-unit window."""
    return model.predict_window(window)


def _neighbor_rollouts(model: ForecastModel, plan: HorizonPlan, grid: TimeGrid,
                       origins: np.ndarray, steps: int, neighbor_f10) -> dict[str, np.ndarray]:
    """Recursive per-neighbor volume forecasts, one (n_origins, steps) array
    per neighbor named in the recipe's handover weights."""
    names = sorted({n for n, _ in (*model.recipe.incoming_weights,
                                   *model.recipe.outgoing_weights)})
    rollouts = {}
    for name in names:
        sub = plan.neighbor_models.get(name)
        if sub is None:
            raise MissingNeighborModelError(
                f"neighbor-recursive fill needs a model for {name}"
            )
        if neighbor_f10 is None or name not in neighbor_f10:
            raise MissingNeighborModelError(
                f"neighbor-recursive fill needs the F10 history of {name}"
            )
        history = np.asarray(neighbor_f10[name], dtype=float)[:, None]
        sub_plan = HorizonPlan(horizons=(steps,), handover_policy=SEASONAL_NAIVE)
        rollouts[name] = rolling_forecasts(sub, history, grid, origins, steps, sub_plan)
    return rollouts


def rolling_forecasts(model: ForecastModel, matrix: np.ndarray, grid: TimeGrid,
                      origins, steps: int, plan: HorizonPlan,
                      neighbor_f10=None) -> np.ndarray:
    """Recursive rollout from many origins at once.

    ``matrix`` is the raw feature matrix over the grid, ``origins`` the index
    of each last observed row. Returns raw forecasts of shape
    ``(n_origins, steps)`` where column k-1 is the k-step-ahead value. Rows
    after an origin are never read for that origin's forecast.
    """
    matrix = np.asarray(matrix, dtype=float)
    origins = np.asarray(origins, dtype=int)
    L = model.lookback
    columns = model.recipe.columns
    if matrix.ndim != 2 or matrix.shape[1] != len(columns):
        raise ShapeMismatchError(
            f"matrix has shape {matrix.shape}, recipe expects {len(columns)} columns"
        )
    if len(origins) == 0:
        return np.empty((0, steps))
    if origins.min() < max(L - 1, _SEASONAL_LAG - 1):
        raise DataError("origins leave too little history for the lookback and seasonal fill")
    if origins.max() >= matrix.shape[0]:
        raise DataError("origin index outside the matrix")
    if steps < 1:
        raise ConfigError("steps must be at least 1")

    neighbor_preds = None
    if model.recipe.has_handover and plan.handover_policy == NEIGHBOR_RECURSIVE:
        neighbor_preds = _neighbor_rollouts(model, plan, grid, origins, steps, neighbor_f10)

    n = len(origins)
    width = len(columns)
    ext = np.empty((n, steps, width))  # synthetic future rows per origin
    preds = np.empty((n, steps))
    windows = np.empty((n, L, width))

    start_hour = grid.start.hour
    start_dow = grid.start.weekday()
    weekend = np.asarray(sorted(model.recipe.weekend_days), dtype=int)
    peak_hours = np.asarray(sorted(model.recipe.peak_hours), dtype=int)

    for k in range(1, steps + 1):
        past = k - 1  # synthetic rows available
        base_rows = max(L - past, 0)
        for i, o in enumerate(origins):
            if base_rows:
                windows[i, :base_rows] = matrix[o + k - L: o + 1]
            if past:
                windows[i, base_rows:] = ext[i, max(past - L, 0):past]
        preds[:, k - 1] = model.predict_window_batch(windows)

        if k == steps:
            break
        # Assemble the synthetic row for absolute time origin + k.
        t_abs = origins + k
        hod = (start_hour + t_abs) % HOURS_PER_DAY
        dow = (start_dow + (start_hour + t_abs) // HOURS_PER_DAY) % 7
        row = np.empty((n, width))
        for j, name in enumerate(columns):
            if name == TARGET_LABEL:
                row[:, j] = preds[:, k - 1]
            elif name == PEAK_DAY_COLUMN:
                row[:, j] = np.where(np.isin(dow, weekend), 0.0, 1.0)
            elif name == PEAK_HOUR_COLUMN:
                row[:, j] = np.isin(hod, peak_hours).astype(float)
            elif name in (HANDOVER_IN_COLUMN, HANDOVER_OUT_COLUMN) and neighbor_preds is not None:
                weights = (model.recipe.incoming_weights if name == HANDOVER_IN_COLUMN
                           else model.recipe.outgoing_weights)
                mixed = np.zeros(n)
                for cell_name, w in weights:
                    mixed += w * neighbor_preds[cell_name][:, k - 1]
                row[:, j] = mixed
            else:
                # Seasonal-naive: the column's own value one day earlier.
                lag_abs = t_abs - _SEASONAL_LAG
                if k <= _SEASONAL_LAG:
                    row[:, j] = matrix[lag_abs, j]
                else:
                    row[:, j] = ext[:, k - 1 - _SEASONAL_LAG, j]
        ext[:, k - 1] = row
    return preds


def predict_multistep(model: ForecastModel, matrix: np.ndarray, grid: TimeGrid,
                      origin: int, horizon: int, plan: HorizonPlan | None = None,
                      neighbor_f10=None) -> np.ndarray:
    """Forecast ``horizon`` hours ahead from one origin index; raw units."""
    if plan is None:
        plan = HorizonPlan(horizons=(horizon,))
    return rolling_forecasts(model, matrix, grid, np.asarray([origin]), horizon,
                             plan, neighbor_f10)[0]
