"""Trained forecaster bundle: network parameters, normalization statistics,
feature recipe, and loss configuration, serialized as a single JSON file.

JSON keeps the dump human-inspectable and, because floats are written with
shortest round-trip precision, save/load/save is bit-exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import json

import numpy as np

from .dataset import TARGET_LABEL, Normalizer
from .errors import DataError, ShapeMismatchError
from .features import FeatureRecipe
from .loss import LossConfig
from .lstm import LstmSpec, TrainConfig, forward

FORMAT_NAME = "rancast-model"
FORMAT_VERSION = 1


@dataclass
class ForecastModel:
    """Immutable-after-training forecaster; safe to share across workers."""

    spec: LstmSpec
    params: dict[str, np.ndarray]
    normalizer: Normalizer
    recipe: FeatureRecipe
    loss: LossConfig
    train_config: TrainConfig
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        shapes = self.spec.param_shapes()
        if set(shapes) != set(self.params):
            raise DataError("parameter keys do not match the network spec")
        for key, shape in shapes.items():
            if tuple(np.shape(self.params[key])) != shape:
                raise ShapeMismatchError(
                    f"parameter {key} has shape {np.shape(self.params[key])}, expected {shape}"
                )
        if self.spec.input_dim != self.recipe.width:
            raise ShapeMismatchError(
                f"spec expects {self.spec.input_dim} inputs, recipe provides {self.recipe.width}"
            )

    @property
    def lookback(self) -> int:
        return self.spec.lookback

    def predict_window_batch(self, windows: np.ndarray) -> np.ndarray:
        """Raw-unit next-hour forecasts for a batch of raw-unit windows."""
        windows = np.asarray(windows, dtype=float)
        if windows.ndim != 3 or windows.shape[2] != self.recipe.width:
            raise ShapeMismatchError(
                f"window batch has shape {windows.shape}, recipe expects"
                f" (*, {self.lookback}, {self.recipe.width})"
            )
        normed = self.normalizer.transform_matrix(windows, self.recipe.columns)
        yhat = forward(self.spec, self.params, normed)
        return self.normalizer.inverse_values(TARGET_LABEL, yhat)

    def predict_window(self, window: np.ndarray) -> float:
        window = np.asarray(window, dtype=float)
        if window.ndim != 2:
            raise ShapeMismatchError(f"expected a (lookback, width) window, got {window.shape}")
        return float(self.predict_window_batch(window[None])[0])

    def to_dict(self) -> dict:
        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "spec": vars(self.spec),
            "params": {k: v.tolist() for k, v in sorted(self.params.items())},
            "normalizer": {
                "labels": list(self.normalizer.labels),
                "mean": self.normalizer.mean.tolist(),
                "std": self.normalizer.std.tolist(),
            },
            "recipe": self.recipe.to_dict(),
            "loss": {"w": self.loss.w, "sla_target": self.loss.sla_target},
            "train": vars(self.train_config),
            "meta": self.meta,
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n")

    @classmethod
    def from_dict(cls, d: dict) -> "ForecastModel":
        if d.get("format") != FORMAT_NAME:
            raise DataError(f"not a model file (format={d.get('format')!r})")
        if d.get("version") != FORMAT_VERSION:
            raise DataError(f"unsupported model file version {d.get('version')!r}")
        spec = LstmSpec(**d["spec"])
        params = {k: np.asarray(v, dtype=float) for k, v in d["params"].items()}
        params["head_b"] = np.asarray(float(d["params"]["head_b"]))
        norm = Normalizer(
            tuple(d["normalizer"]["labels"]),
            np.asarray(d["normalizer"]["mean"], dtype=float),
            np.asarray(d["normalizer"]["std"], dtype=float),
        )
        return cls(
            spec=spec,
            params=params,
            normalizer=norm,
            recipe=FeatureRecipe.from_dict(d["recipe"]),
            loss=LossConfig(**d["loss"]),
            train_config=TrainConfig(**d["train"]),
            meta=d.get("meta", {}),
        )

    @classmethod
    def load(cls, path) -> "ForecastModel":
        return cls.from_dict(json.loads(Path(path).read_text()))
