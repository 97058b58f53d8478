"""Run configuration: YAML schema, validation, defaults, and hashing.

Every artifact a run emits is keyed by the hash of the fully resolved
configuration, so artifacts from different configurations can never be
silently mixed.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

import yaml

from .dataset import CellId, SplitSpec
from .errors import ConfigError
from .features import DEFAULT_CORR_THRESHOLD, DEFAULT_PEAK_TAU, VARIANTS
from .lstm import LstmSpec, TrainConfig
from .multistep import ALL_HORIZONS, NEIGHBOR_RECURSIVE, SEASONAL_NAIVE
from .synth import ScenarioConfig

SCHEMA_VERSION = 1

DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "target_cell": "GU14",
    "unit": "GB",
    "scenario": {
        "cells": ["GU14", "GU12", "VO14", "SY24"],
        "weeks": 52,
        "seed": 7,
        "start": "2024-01-01T00:00:00",
        "base_level": 100.0,
        "level_spread": 0.3,
        "daily_amplitude": 0.6,
        "daily_sharpness": 3.0,
        "peak_hour_choices": [18, 19, 20, 21],
        "weekday_weekend_ratio": 1.3,
        "trend_per_week": 0.001,
        "spike_probability": 0.02,
        "spike_magnitude": 0.6,
        "spike_hours": [19, 20, 21],
        "noise_scale": 0.08,
        "noise_ar": 0.6,
        "coupling_share": 0.35,
        "counter_rho": 0.95,
        "nuisance_cap": 0.5,
    },
    "split": {"train_weeks": 40, "val_weeks": 8, "test_weeks": 4},
    "features": {
        "corr_threshold": DEFAULT_CORR_THRESHOLD,
        "peak_tau": DEFAULT_PEAK_TAU,
        "weekend_days": [5, 6],
        "lookback": 24,
    },
    "train": {
        "hidden": 16,
        "layers": 1,
        "learning_rate": 3e-3,
        "epochs": 40,
        "l2": 0.0,
        "batch_size": 64,
        "seed": 1,
        "grid": None,  # optional: {"hidden": [...], "layers": [...], ...}
        "cv_folds": 4,
        "cv_shift_hours": 1344,
    },
    "calibration": {
        "targets": [0.03, 0.05],
        "w_grid": [1, 2, 4, 8, 16, 32, 64],
        "tolerance_pts": 1.5,
        "margin_pts": 0.75,
        "refine_iters": 3,
    },
    "evaluation": {
        "variants": list(VARIANTS),
        "horizons": list(ALL_HORIZONS),
        "handover_policy": SEASONAL_NAIVE,
    },
}

_GRID_KEYS = ("hidden", "layers", "learning_rate", "epochs", "l2", "batch_size")


def _merge(defaults, override, path=""):
    if override is None:
        return defaults
    if isinstance(defaults, dict):
        if not isinstance(override, dict):
            raise ConfigError(f"config key {path or '<root>'} must be a mapping")
        unknown = set(override) - set(defaults)
        if unknown:
            raise ConfigError(f"unknown config keys under {path or '<root>'}: {sorted(unknown)}")
        return {
            key: _merge(value, override.get(key), f"{path}.{key}".lstrip("."))
            for key, value in defaults.items()
        }
    return override


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved run settings plus typed views onto each stage."""

    raw: dict = field(repr=False)

    def __post_init__(self):
        if self.raw.get("schema_version") != SCHEMA_VERSION:
            raise ConfigError(
                f"unsupported config schema_version {self.raw.get('schema_version')!r}"
            )
        # Force construction of every typed view so validation happens early.
        self.scenario()
        self.split()
        self.train_config()
        self.lstm_spec(1)
        targets = self.raw["calibration"]["targets"]
        if not targets or any(not 0 < t < 1 for t in targets):
            raise ConfigError(f"calibration targets must be in (0, 1), got {targets}")
        variants = self.raw["evaluation"]["variants"]
        bad = set(variants) - set(VARIANTS)
        if bad:
            raise ConfigError(f"unknown variants {sorted(bad)}")
        policy = self.raw["evaluation"]["handover_policy"]
        if policy not in (SEASONAL_NAIVE, NEIGHBOR_RECURSIVE):
            raise ConfigError(f"unknown handover policy {policy!r}")
        if self.target_cell not in [c.render() for c in self.scenario().cells]:
            raise ConfigError(
                f"target cell {self.target_cell} is not part of the scenario"
            )
        grid = self.raw["train"]["grid"]
        if grid is not None:
            if not isinstance(grid, dict) or not grid:
                raise ConfigError("train.grid must be a non-empty mapping")
            unknown = set(grid) - set(_GRID_KEYS)
            if unknown:
                raise ConfigError(f"unknown grid keys {sorted(unknown)}")

    @property
    def target_cell(self) -> str:
        return self.raw["target_cell"]

    @property
    def unit(self) -> str:
        return self.raw["unit"]

    def scenario(self) -> ScenarioConfig:
        s = self.raw["scenario"]
        try:
            start = datetime.fromisoformat(s["start"])
        except (TypeError, ValueError):
            raise ConfigError(f"bad scenario start timestamp {s['start']!r}") from None
        return ScenarioConfig(
            cells=tuple(CellId.parse(c) for c in s["cells"]),
            weeks=int(s["weeks"]),
            seed=int(s["seed"]),
            start=start,
            base_level=float(s["base_level"]),
            level_spread=float(s["level_spread"]),
            daily_amplitude=float(s["daily_amplitude"]),
            daily_sharpness=float(s["daily_sharpness"]),
            peak_hour_choices=tuple(int(h) for h in s["peak_hour_choices"]),
            weekday_weekend_ratio=float(s["weekday_weekend_ratio"]),
            trend_per_week=float(s["trend_per_week"]),
            spike_probability=float(s["spike_probability"]),
            spike_magnitude=float(s["spike_magnitude"]),
            spike_hours=tuple(int(h) for h in s["spike_hours"]),
            noise_scale=float(s["noise_scale"]),
            noise_ar=float(s["noise_ar"]),
            coupling_share=float(s["coupling_share"]),
            counter_rho=float(s["counter_rho"]),
            nuisance_cap=float(s["nuisance_cap"]),
        )

    def split(self) -> SplitSpec:
        sp = self.raw["split"]
        spec = SplitSpec(int(sp["train_weeks"]), int(sp["val_weeks"]), int(sp["test_weeks"]))
        if spec.total_hours > self.scenario().hours:
            raise ConfigError(
                f"split needs {spec.total_hours} hours but the scenario generates"
                f" {self.scenario().hours}"
            )
        return spec

    def train_config(self) -> TrainConfig:
        t = self.raw["train"]
        return TrainConfig(
            learning_rate=float(t["learning_rate"]),
            epochs=int(t["epochs"]),
            l2=float(t["l2"]),
            batch_size=int(t["batch_size"]),
            seed=int(t["seed"]),
        )

    def lstm_spec(self, input_dim: int) -> LstmSpec:
        t = self.raw["train"]
        return LstmSpec(
            input_dim=input_dim,
            hidden=int(t["hidden"]),
            layers=int(t["layers"]),
            lookback=int(self.raw["features"]["lookback"]),
        )

    def grid_candidates(self, input_dim: int):
        """Expand train.grid into (spec, config) candidates, or None."""
        grid = self.raw["train"]["grid"]
        if grid is None:
            return None
        base = {k: self.raw["train"][k] for k in _GRID_KEYS}
        axes = [(k, grid.get(k, [base[k]])) for k in _GRID_KEYS]
        candidates = []

        def expand(i, current):
            if i == len(axes):
                spec = LstmSpec(
                    input_dim=input_dim,
                    hidden=int(current["hidden"]),
                    layers=int(current["layers"]),
                    lookback=int(self.raw["features"]["lookback"]),
                )
                cfg = TrainConfig(
                    learning_rate=float(current["learning_rate"]),
                    epochs=int(current["epochs"]),
                    l2=float(current["l2"]),
                    batch_size=int(current["batch_size"]),
                    seed=int(self.raw["train"]["seed"]),
                )
                candidates.append((spec, cfg))
                return
            key, values = axes[i]
            for v in values:
                expand(i + 1, {**current, key: v})

        expand(0, {})
        return candidates

    def config_hash(self) -> str:
        canonical = json.dumps(self.raw, sort_keys=True)
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.raw, sort_keys=True)


def load_config(path=None, seed: int | None = None) -> RunConfig:
    """Load and validate a YAML config; missing keys fall back to defaults.

    ``seed`` overrides both the scenario and training seeds (convenience for
    the --seed flag).
    """
    override = {}
    if path is not None:
        text = Path(path).read_text()
        loaded = yaml.safe_load(text)
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {path} must contain a mapping")
        override = loaded
    merged = _merge(DEFAULTS, override)
    if seed is not None:
        merged["scenario"]["seed"] = int(seed)
        merged["train"]["seed"] = int(seed)
    return RunConfig(merged)
