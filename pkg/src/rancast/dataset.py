"""Core data model: cell identifiers, hourly grids, feature series, splits,
normalization, cross-validation folds, and sliding-window samples."""

from __future__ import annotations

import re
from dataclasses import dataclass
from datetime import datetime, timedelta

import numpy as np

from .errors import (
    ConstantFeatureError,
    DataError,
    DatasetTooShortError,
    InfeasibleFoldPlanError,
    UnknownFeatureError,
)

HOURS_PER_WEEK = 168
HOURS_PER_DAY = 24

FEATURE_LABELS = tuple(f"F{i}" for i in range(1, 21))
TARGET_LABEL = "F10"

# Hourly RAN counter catalog keyed by label.
FEATURE_NAMES = {
    "F1": "Num. of Initial E-RABs Attempted to Setup",
    "F2": "RACH Setup Succ. Rate",
    "F3": "Avg. RACH Timing Advance",
    "F4": "Num. of RRC Attempts",
    "F5": "Num. of S1 Signalling Establishment Attempt",
    "F6": "DL PDCP Cell Thr.",
    "F7": "UL PDCP Cell Thr.",
    "F8": "DL PDCP User Thr.",
    "F9": "UL PDCP User Thr.",
    "F10": "DL Traffic Volume",
    "F11": "UL Traffic Volume",
    "F12": "Avg. UL RSSI Weight PUCCH",
    "F13": "Avg. UL RSRP PUSCH",
    "F14": "Avg. UL RSRP PUCCH",
    "F15": "Avg. CQI",
    "F16": "Avg. Num. of Active Users in DL",
    "F17": "Avg. Num. of Active Users in UL",
    "F18": "Num. of Avg. Simultaneous RRC Connected Users",
    "F19": "DL PRB Utilisation",
    "F20": "UL PRB Utilisation",
}

_CELL_RE = re.compile(r"^([A-Z]{2})([1-9])([1-9])$")

# Features with standard deviation below this are treated as constant.
CONSTANT_STD_EPS = 1e-12


def feature_index(label: str) -> int:
    if label not in FEATURE_NAMES:
        raise UnknownFeatureError(f"unknown feature label {label!r}")
    return int(label[1:])


@dataclass(frozen=True, order=True)
class CellId:
    """A carrier of a sector of a base station, rendered like ``GU14``."""

    site: str
    sector: int
    carrier: int

    def __post_init__(self):
        if not re.fullmatch(r"[A-Z]{2}", self.site):
            raise DataError(f"cell site must be 2 uppercase letters, got {self.site!r}")
        for name, digit in (("sector", self.sector), ("carrier", self.carrier)):
            if not 1 <= digit <= 9:
                raise DataError(f"cell {name} must be in 1..9, got {digit}")

    def render(self) -> str:
        return f"{self.site}{self.sector}{self.carrier}"

    @classmethod
    def parse(cls, text: str) -> "CellId":
        m = _CELL_RE.fullmatch(text.strip())
        if m is None:
            raise DataError(f"cannot parse cell id {text!r}")
        return cls(m.group(1), int(m.group(2)), int(m.group(3)))

    def __str__(self) -> str:
        return self.render()


@dataclass(frozen=True)
class TimeGrid:
    """Contiguous hourly time axis starting at an hour-aligned timestamp."""

    start: datetime
    length: int

    step = timedelta(hours=1)

    def __post_init__(self):
        if self.length <= 0:
            raise DataError(f"grid length must be positive, got {self.length}")
        if (self.start.minute, self.start.second, self.start.microsecond) != (0, 0, 0):
            raise DataError(f"grid start must be hour-aligned, got {self.start}")

    def timestamp(self, index: int) -> datetime:
        if not 0 <= index < self.length:
            raise IndexError(f"index {index} outside grid of length {self.length}")
        return self.start + timedelta(hours=index)

    def index_of(self, ts: datetime) -> int:
        delta = ts - self.start
        hours, rem = divmod(delta.total_seconds(), 3600)
        if rem != 0:
            raise DataError(f"timestamp {ts} is not on the hourly grid")
        idx = int(hours)
        if not 0 <= idx < self.length:
            raise DataError(f"timestamp {ts} outside grid range")
        return idx

    def hour_of_day(self, index: int) -> int:
        return (self.start.hour + index) % HOURS_PER_DAY

    def day_of_week(self, index: int) -> int:
        """Monday is 0, Sunday is 6."""
        return (self.start.weekday() + (self.start.hour + index) // HOURS_PER_DAY) % 7

    def hours_of_day(self) -> np.ndarray:
        return (self.start.hour + np.arange(self.length)) % HOURS_PER_DAY

    def days_of_week(self) -> np.ndarray:
        return (self.start.weekday() + (self.start.hour + np.arange(self.length)) // HOURS_PER_DAY) % 7

    def slice(self, begin: int, end: int) -> "TimeGrid":
        if not 0 <= begin < end <= self.length:
            raise DataError(f"invalid grid slice [{begin}, {end}) for length {self.length}")
        return TimeGrid(self.start + timedelta(hours=begin), end - begin)

    def timestamps(self) -> list[datetime]:
        return [self.start + timedelta(hours=i) for i in range(self.length)]


@dataclass(frozen=True)
class CellDataset:
    """All feature series of one cell on a shared hourly grid.

    ``series`` maps labels (F1..F20) to float vectors aligned to ``grid``.
    F10, the downlink traffic volume, must always be present. Arrays are
    treated as immutable after construction.
    """

    cell: CellId
    grid: TimeGrid
    series: dict[str, np.ndarray]

    def __post_init__(self):
        if TARGET_LABEL not in self.series:
            raise DataError(f"dataset for {self.cell} is missing {TARGET_LABEL}")
        for label, values in self.series.items():
            feature_index(label)
            if len(values) != self.grid.length:
                raise DataError(
                    f"series {label} has length {len(values)},"
                    f" grid has {self.grid.length}"
                )

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(sorted(self.series, key=feature_index))

    def feature(self, label: str) -> np.ndarray:
        try:
            return self.series[label]
        except KeyError:
            raise UnknownFeatureError(
                f"feature {label!r} not present in dataset for {self.cell}"
            ) from None

    def matrix(self, labels) -> np.ndarray:
        return np.stack([self.feature(label) for label in labels], axis=1)

    def view(self, begin: int, end: int) -> "CellDataset":
        grid = self.grid.slice(begin, end)
        sliced = {label: values[begin:end] for label, values in self.series.items()}
        return CellDataset(self.cell, grid, sliced)

    def __len__(self) -> int:
        return self.grid.length


@dataclass(frozen=True)
class SplitSpec:
    """Chronological train/validation/test split lengths in weeks."""

    train_weeks: int = 40
    val_weeks: int = 8
    test_weeks: int = 4

    def __post_init__(self):
        for name in ("train_weeks", "val_weeks", "test_weeks"):
            if getattr(self, name) <= 0:
                raise DataError(f"{name} must be positive")

    @property
    def train_hours(self) -> int:
        return self.train_weeks * HOURS_PER_WEEK

    @property
    def val_hours(self) -> int:
        return self.val_weeks * HOURS_PER_WEEK

    @property
    def test_hours(self) -> int:
        return self.test_weeks * HOURS_PER_WEEK

    @property
    def total_hours(self) -> int:
        return self.train_hours + self.val_hours + self.test_hours


def split_dataset(ds: CellDataset, spec: SplitSpec = SplitSpec()):
    """Slice a dataset into contiguous train, validation, and test views."""
    needed = spec.total_hours
    if len(ds) < needed:
        raise DatasetTooShortError(
            f"dataset for {ds.cell} has {len(ds)} hours,"
            f" split requires {needed}"
        )
    a = spec.train_hours
    b = a + spec.val_hours
    c = b + spec.test_hours
    return ds.view(0, a), ds.view(a, b), ds.view(b, c)


@dataclass(frozen=True)
class Normalizer:
    """Per-feature affine standardization fitted on training data only.

    Uses the population (divide-by-N) standard deviation so that fitting is
    deterministic and transform/inverse round-trips are exact. Columns fitted
    with ``skip`` keep mean 0 / std 1 and pass through unchanged.
    """

    labels: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        if len(self.labels) != len(self.mean) or len(self.labels) != len(self.std):
            raise DataError("normalizer labels and statistics are misaligned")
        if np.any(self.std <= 0):
            raise ConstantFeatureError("normalizer std must be positive for all features")

    def _index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise UnknownFeatureError(f"normalizer has no statistics for {label!r}") from None

    def stats(self, label: str) -> tuple[float, float]:
        i = self._index(label)
        return float(self.mean[i]), float(self.std[i])

    def transform_values(self, label: str, values: np.ndarray) -> np.ndarray:
        m, s = self.stats(label)
        return (np.asarray(values, dtype=float) - m) / s

    def inverse_values(self, label: str, values: np.ndarray) -> np.ndarray:
        m, s = self.stats(label)
        return np.asarray(values, dtype=float) * s + m

    def transform(self, ds: CellDataset) -> CellDataset:
        series = {label: self.transform_values(label, v) for label, v in ds.series.items()}
        return CellDataset(ds.cell, ds.grid, series)

    def inverse(self, ds: CellDataset) -> CellDataset:
        series = {label: self.inverse_values(label, v) for label, v in ds.series.items()}
        return CellDataset(ds.cell, ds.grid, series)

    def transform_matrix(self, X: np.ndarray, columns: tuple[str, ...] | None = None) -> np.ndarray:
        mean, std = self._column_stats(X, columns)
        return (np.asarray(X, dtype=float) - mean) / std

    def inverse_matrix(self, X: np.ndarray, columns: tuple[str, ...] | None = None) -> np.ndarray:
        mean, std = self._column_stats(X, columns)
        return np.asarray(X, dtype=float) * std + mean

    def _column_stats(self, X, columns):
        if columns is None:
            columns = self.labels
        if X.shape[-1] != len(columns):
            raise DataError(
                f"matrix has {X.shape[-1]} columns, expected {len(columns)}"
            )
        idx = [self._index(c) for c in columns]
        return self.mean[idx], self.std[idx]


def fit_normalizer(train: CellDataset, labels=None) -> Normalizer:
    """Fit per-feature mean/std on a training slice."""
    if labels is None:
        labels = train.labels
    labels = tuple(labels)
    X = train.matrix(labels)
    return fit_matrix_normalizer(X, labels)


def fit_matrix_normalizer(X: np.ndarray, columns, skip=frozenset()) -> Normalizer:
    """Fit column statistics on a (T, D) matrix; ``skip`` columns stay identity."""
    columns = tuple(columns)
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != len(columns):
        raise DataError("matrix shape does not match column names")
    if X.shape[0] == 0:
        raise DataError("cannot fit a normalizer on an empty slice")
    mean = X.mean(axis=0)
    std = X.std(axis=0)  # population convention
    for j, name in enumerate(columns):
        if name in skip:
            mean[j], std[j] = 0.0, 1.0
        elif std[j] < CONSTANT_STD_EPS:
            raise ConstantFeatureError(
                f"feature {name} is constant (std={std[j]:.3e}) on the training slice"
            )
    return Normalizer(columns, mean, std)


@dataclass(frozen=True)
class FoldPlan:
    """K shifted train/validation windows for cross-validation.

    Fold i trains on ``[i*shift, i*shift + train_len)`` and validates on the
    following ``shift`` hours; consecutive folds differ by exactly ``shift``.
    """

    k: int
    shift_hours: int
    train_len: int
    folds: tuple[tuple[tuple[int, int], tuple[int, int]], ...]


def make_folds(grid, k: int, shift_hours: int) -> FoldPlan:
    """Build a shifted-window cross-validation plan over a grid or hour count."""
    length = grid.length if isinstance(grid, TimeGrid) else int(grid)
    if k < 1:
        raise InfeasibleFoldPlanError(f"fold count must be at least 1, got {k}")
    if shift_hours < 1:
        raise InfeasibleFoldPlanError(f"shift must be at least 1 hour, got {shift_hours}")
    train_len = length - k * shift_hours
    if train_len < 1:
        raise InfeasibleFoldPlanError(
            f"{k} folds with shift {shift_hours}h need more than {k * shift_hours}"
            f" hours, grid has {length}"
        )
    folds = []
    for i in range(k):
        a = i * shift_hours
        b = a + train_len
        folds.append(((a, b), (b, b + shift_hours)))
    return FoldPlan(k, shift_hours, train_len, tuple(folds))


@dataclass(frozen=True)
class Sample:
    """One training sample: a lookback window and the next-hour target."""

    window: np.ndarray  # (lookback, n_features)
    target: float


@dataclass(frozen=True)
class WindowSamples:
    """Dense array view over all sliding-window samples of a slice.

    ``inputs[j]`` holds rows ``[j, j+L)`` of the source matrix and
    ``targets[j]`` the target value at row ``j+L``.
    """

    inputs: np.ndarray  # (n, lookback, n_features)
    targets: np.ndarray  # (n,)
    columns: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.targets)

    def __getitem__(self, j: int) -> Sample:
        return Sample(self.inputs[j], float(self.targets[j]))


def window_matrix(X: np.ndarray, target: np.ndarray, lookback: int):
    """Slide a lookback window over a (T, D) matrix.

    Returns ``(inputs, targets)`` with ``T - lookback`` samples; the window of
    sample ``j`` ends strictly before its target row, so no future values leak
    into the input.
    """
    if lookback < 1:
        raise DataError(f"lookback must be at least 1, got {lookback}")
    X = np.asarray(X, dtype=float)
    target = np.asarray(target, dtype=float)
    n = max(len(target) - lookback, 0)
    if n == 0:
        return np.empty((0, lookback, X.shape[1])), np.empty(0)
    idx = np.arange(lookback)[None, :] + np.arange(n)[:, None]
    return X[idx], target[lookback:]


def windowize(ds: CellDataset, features, lookback: int = 24) -> WindowSamples:
    """Build next-hour F10 samples from a (normalized) dataset view."""
    features = tuple(features)
    X = ds.matrix(features)
    inputs, targets = window_matrix(X, ds.feature(TARGET_LABEL), lookback)
    return WindowSamples(inputs, targets, features)
