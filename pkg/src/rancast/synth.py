"""Deterministic multi-cell synthetic RAN traffic generator.

Produces hourly datasets with daily/weekly seasonality, evening demand
spikes, counters correlated with the downlink volume at a configurable
strength, and neighbor coupling through handover rates, so that every
downstream modeling stage has realistic structure to exploit.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from datetime import datetime

import numpy as np

from .dataset import (
    FEATURE_LABELS,
    HOURS_PER_WEEK,
    TARGET_LABEL,
    CellDataset,
    CellId,
    TimeGrid,
)
from .errors import ConfigError, InconsistentHandoverError
from .handover import HandoverMatrix

COUNTER_LABELS = tuple(l for l in FEATURE_LABELS if l != TARGET_LABEL)

# Counters derived as noisy monotone transforms of the downlink volume.
CORRELATED_LABELS = ("F16", "F17", "F18", "F19")

# Affine placement (offset, scale) of each standardized counter onto a
# plausible value range for its unit.
COUNTER_SCALE = {
    "F1": (200.0, 80.0),
    "F2": (97.0, 1.5),
    "F3": (5.0, 1.2),
    "F4": (500.0, 150.0),
    "F5": (180.0, 60.0),
    "F6": (60.0, 25.0),
    "F7": (20.0, 8.0),
    "F8": (25.0, 10.0),
    "F9": (8.0, 3.0),
    "F11": (30.0, 12.0),
    "F12": (-105.0, 3.0),
    "F13": (-95.0, 4.0),
    "F14": (-98.0, 4.0),
    "F15": (9.0, 1.8),
    "F16": (90.0, 35.0),
    "F17": (70.0, 25.0),
    "F18": (120.0, 45.0),
    "F19": (55.0, 18.0),
    "F20": (35.0, 12.0),
}


@dataclass(frozen=True)
class ScenarioConfig:
    """Knobs of the synthetic region generator. Generation is a pure
    function of (config, handover matrix)."""

    cells: tuple[CellId, ...]
    weeks: int = 52
    seed: int = 0
    start: datetime = datetime(2024, 1, 1)  # a Monday, hour 0
    base_level: float = 100.0
    level_spread: float = 0.3
    daily_amplitude: float = 0.6
    daily_sharpness: float = 3.0
    peak_hour_choices: tuple[int, ...] = (18, 19, 20, 21)
    weekday_weekend_ratio: float = 1.3
    trend_per_week: float = 0.001
    spike_probability: float = 0.02
    spike_magnitude: float = 0.6
    spike_hours: tuple[int, ...] = (19, 20, 21)
    noise_scale: float = 0.08
    noise_ar: float = 0.6
    coupling_share: float = 0.35
    counter_rho: float = 0.95
    nuisance_cap: float = 0.5

    def __post_init__(self):
        if len(self.cells) == 0:
            raise ConfigError("scenario needs at least one cell")
        if len(set(self.cells)) != len(self.cells):
            raise ConfigError("scenario cells must be unique")
        if self.weeks < 2:
            raise ConfigError(f"scenario needs at least 2 weeks, got {self.weeks}")
        if not 0.0 < self.counter_rho < 1.0:
            raise ConfigError(
                f"counter correlation target must lie strictly in (0, 1), got {self.counter_rho}"
            )
        if not 0.0 <= self.spike_probability <= 1.0:
            raise ConfigError(f"spike probability must be in [0, 1], got {self.spike_probability}")
        if not 0.0 <= self.coupling_share < 1.0:
            raise ConfigError(f"coupling share must be in [0, 1), got {self.coupling_share}")
        if not 0.0 <= self.nuisance_cap <= 0.8:
            raise ConfigError(f"nuisance correlation cap must be in [0, 0.8], got {self.nuisance_cap}")
        if not 0.0 <= self.noise_ar < 1.0:
            raise ConfigError(f"noise AR coefficient must be in [0, 1), got {self.noise_ar}")
        if self.weekday_weekend_ratio <= 0:
            raise ConfigError("weekday/weekend ratio must be positive")
        if any(not 0 <= h <= 23 for h in (*self.peak_hour_choices, *self.spike_hours)):
            raise ConfigError("peak/spike hours must be in 0..23")

    @property
    def hours(self) -> int:
        return self.weeks * HOURS_PER_WEEK

    def grid(self) -> TimeGrid:
        return TimeGrid(self.start, self.hours)


def _stream(seed: int, *names) -> np.random.Generator:
    """Named RNG stream: stable across platforms and insertion order, so
    adding a cell never perturbs another cell's draws."""
    parts = [np.uint64(seed & 0xFFFFFFFFFFFFFFFF)]
    for name in names:
        digest = hashlib.blake2b(str(name).encode(), digest_size=8).digest()
        parts.append(np.uint64(int.from_bytes(digest, "big")))
    return np.random.default_rng(np.random.SeedSequence([int(p) for p in parts]))


def _standardize(values: np.ndarray) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    return (v - v.mean()) / v.std()


def _base_traffic(cfg: ScenarioConfig, cell: CellId) -> np.ndarray:
    """Seasonal downlink volume of one cell before neighbor coupling."""
    grid = cfg.grid()
    hod = grid.hours_of_day()
    dow = grid.days_of_week()
    t = np.arange(cfg.hours)

    shape_rng = _stream(cfg.seed, cell.render(), "profile")
    level = cfg.base_level * (1.0 + cfg.level_spread * (2.0 * shape_rng.uniform() - 1.0))
    peak_hour = int(shape_rng.choice(np.asarray(cfg.peak_hour_choices)))

    bump = np.exp(cfg.daily_sharpness * (np.cos(2 * np.pi * (hod - peak_hour) / 24.0) - 1.0))
    day_shape = (1.0 - cfg.daily_amplitude) + cfg.daily_amplitude * bump
    week_factor = np.where(dow < 5, cfg.weekday_weekend_ratio, 1.0)
    trend = 1.0 + cfg.trend_per_week * (t / HOURS_PER_WEEK)

    noise_rng = _stream(cfg.seed, cell.render(), "noise")
    eps = noise_rng.normal(0.0, cfg.noise_scale, cfg.hours)
    noise = np.empty(cfg.hours)
    acc = 0.0
    for i in range(cfg.hours):  # AR(1): short-range predictable, long-range not
        acc = cfg.noise_ar * acc + eps[i]
        noise[i] = acc

    spike_rng = _stream(cfg.seed, cell.render(), "spikes")
    draws = spike_rng.uniform(size=cfg.hours)
    magnitudes = 1.0 + cfg.spike_magnitude * spike_rng.uniform(0.5, 1.5, cfg.hours)
    spike = np.where(np.isin(hod, cfg.spike_hours) & (draws < cfg.spike_probability),
                     magnitudes, 1.0)

    base = level * day_shape * week_factor * trend * (1.0 + noise) * spike
    return np.maximum(base, 0.01 * level)


def derive_counter_features(f10: np.ndarray, cfg: ScenarioConfig,
                            cell: CellId) -> dict[str, np.ndarray]:
    """Derive the 19 companion counters from a cell's downlink volume.

    F16..F19 are noisy monotone transforms of F10 whose correlation hits the
    configured target; the remaining counters mix independent seasonality,
    orthogonalized so their correlation with F10 stays below the nuisance cap.
    """
    f10 = np.asarray(f10, dtype=float)
    if len(f10) == 0:
        raise ConfigError("cannot derive counters from an empty volume series")
    n = len(f10)
    z = _standardize(f10)
    hod = (cfg.start.hour + np.arange(n)) % 24
    out: dict[str, np.ndarray] = {}
    rho = cfg.counter_rho
    noise_sd = np.sqrt(1.0 / rho**2 - 1.0)
    for label in COUNTER_LABELS:
        rng = _stream(cfg.seed, cell.render(), "counter", label)
        offset, scale = COUNTER_SCALE[label]
        if label in CORRELATED_LABELS:
            x = z + noise_sd * rng.standard_normal(n)
        else:
            target_corr = cfg.nuisance_cap * rng.uniform(0.2, 0.9)
            shift = int(rng.integers(5, 20))
            amp = rng.uniform(0.2, 0.8)
            season = np.exp(2.0 * (np.cos(2 * np.pi * (hod - shift) / 24.0) - 1.0))
            raw = amp * season + rng.standard_normal(n) * rng.uniform(0.5, 1.5)
            raw = raw - raw.mean()
            raw -= (raw @ z) / (z @ z) * z  # project out the volume component
            x = target_corr * z + np.sqrt(1.0 - target_corr**2) * _standardize(raw)
        out[label] = offset + scale * x
    return out


def _validate_handover(cfg: ScenarioConfig, ho: HandoverMatrix) -> None:
    known = set(cfg.cells)
    stray = sorted(c.render() for c in ho.cells() - known)
    if stray:
        raise InconsistentHandoverError(
            f"handover matrix references cells missing from the scenario: {stray}"
        )


def generate_region(cfg: ScenarioConfig, ho: HandoverMatrix) -> dict[CellId, CellDataset]:
    """Generate every cell of a scenario, coupled through handover rates.

    A ``coupling_share`` fraction of each cell's volume at hour t is a
    handover-weighted mix of its in-neighbors' base volume at hour t-1, which
    is what gives neighbor-derived features predictive value.
    """
    _validate_handover(cfg, ho)
    grid = cfg.grid()
    base = {cell: _base_traffic(cfg, cell) for cell in cfg.cells}

    volumes: dict[CellId, np.ndarray] = {}
    for cell in cfg.cells:
        listed = ho.incoming(cell)
        if not listed or cfg.coupling_share == 0.0:
            volumes[cell] = base[cell]
            continue
        rates = np.array([rate for _, rate in listed])
        weights = rates / rates.sum()
        mix = np.zeros(cfg.hours)
        for (neighbor, _), w in zip(listed, weights):
            mix += w * base[neighbor]
        lagged = np.concatenate(([mix[0]], mix[:-1]))
        volumes[cell] = (1.0 - cfg.coupling_share) * base[cell] + cfg.coupling_share * lagged

    region: dict[CellId, CellDataset] = {}
    for cell in cfg.cells:
        series = {TARGET_LABEL: volumes[cell]}
        series.update(derive_counter_features(volumes[cell], cfg, cell))
        region[cell] = CellDataset(cell, grid, series)
    return region
