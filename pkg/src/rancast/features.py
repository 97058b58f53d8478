"""Input feature recipes: correlation-selected counters, peak calendar
flags, and handover-weighted neighbor volumes."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .dataset import (
    CONSTANT_STD_EPS,
    HOURS_PER_DAY,
    TARGET_LABEL,
    CellDataset,
    CellId,
    TimeGrid,
    feature_index,
)
from .errors import (
    ConstantFeatureError,
    DataError,
    EmptyClusterError,
    MissingNeighborSeriesError,
    TooShortSeriesError,
)
from .handover import HandoverMatrix

VARIANTS = ("univariate", "ran", "peak", "handover", "all")

DEFAULT_WEEKEND_DAYS = frozenset({5, 6})  # Saturday, Sunday (Monday=0)
DEFAULT_PEAK_TAU = 0.2
DEFAULT_CORR_THRESHOLD = 0.90
DEFAULT_LOOKBACK = 24

PEAK_DAY_COLUMN = "peak_day"
PEAK_HOUR_COLUMN = "peak_hour"
HANDOVER_IN_COLUMN = "handover_in"
HANDOVER_OUT_COLUMN = "handover_out"
BOOLEAN_COLUMNS = frozenset({PEAK_DAY_COLUMN, PEAK_HOUR_COLUMN})


def pearson(a, b) -> float:
    """Product-moment correlation of two equal-length vectors."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise DataError(f"pearson needs equal-length vectors, got {a.shape} and {b.shape}")
    if len(a) < 2:
        raise DataError("pearson needs at least 2 points")
    ac = a - a.mean()
    bc = b - b.mean()
    sa = np.sqrt(ac @ ac)
    sb = np.sqrt(bc @ bc)
    if sa < CONSTANT_STD_EPS or sb < CONSTANT_STD_EPS:
        raise ConstantFeatureError("pearson is undefined for constant input")
    return float((ac @ bc) / (sa * sb))


def select_ran_features(train: CellDataset, threshold: float = DEFAULT_CORR_THRESHOLD) -> list[str]:
    """Labels whose absolute correlation with F10 on the training slice
    reaches the threshold, sorted by label index. Constant features are
    skipped with a warning. Must only ever see the training slice."""
    target = train.feature(TARGET_LABEL)
    selected = []
    for label in train.labels:
        if label == TARGET_LABEL:
            continue
        try:
            r = pearson(train.feature(label), target)
        except ConstantFeatureError:
            warnings.warn(f"skipping constant feature {label} during selection")
            continue
        if abs(r) >= threshold:
            selected.append(label)
    return sorted(selected, key=feature_index)


def peak_days_vector(grid: TimeGrid, weekend_days=DEFAULT_WEEKEND_DAYS) -> np.ndarray:
    """1.0 on weekday hours, 0.0 on weekend hours."""
    dow = grid.days_of_week()
    return np.where(np.isin(dow, list(weekend_days)), 0.0, 1.0)


@dataclass(frozen=True)
class PeakProfile:
    """Distribution of the daily busiest hour over the training slice."""

    occurrence: tuple[float, ...]  # fraction of days whose maximum fell on each hour
    tau: float
    peak_hours: frozenset[int]
    weekend_days: frozenset[int]
    n_days: int

    def __post_init__(self):
        if len(self.occurrence) != HOURS_PER_DAY:
            raise DataError("occurrence must have one entry per hour of day")


def detect_peak_hours(f10: np.ndarray, grid: TimeGrid, tau: float = DEFAULT_PEAK_TAU,
                      weekend_days=DEFAULT_WEEKEND_DAYS) -> PeakProfile:
    """Find hours whose share of daily traffic maxima exceeds ``tau``.

    Only complete calendar days are counted. Ties within a day resolve to the
    earliest hour.
    """
    if not 0.0 < tau < 1.0:
        raise DataError(f"peak threshold must be in (0, 1), got {tau}")
    values = np.asarray(f10, dtype=float)
    if len(values) != grid.length:
        raise DataError("series and grid lengths differ")
    offset = (HOURS_PER_DAY - grid.start.hour) % HOURS_PER_DAY
    n_days = (grid.length - offset) // HOURS_PER_DAY
    if n_days < 2:
        raise TooShortSeriesError(
            f"peak detection needs at least 2 complete days, found {n_days}"
        )
    days = values[offset:offset + n_days * HOURS_PER_DAY].reshape(n_days, HOURS_PER_DAY)
    argmax = days.argmax(axis=1)  # first maximum wins ties
    counts = np.bincount(argmax, minlength=HOURS_PER_DAY)
    occurrence = counts / n_days
    peak_hours = frozenset(int(h) for h in np.flatnonzero(occurrence > tau))
    return PeakProfile(tuple(float(o) for o in occurrence), tau, peak_hours,
                       frozenset(weekend_days), int(n_days))


def peak_hours_vector(peak_hours, grid: TimeGrid) -> np.ndarray:
    """1.0 at hours of day in ``peak_hours``, else 0.0."""
    if isinstance(peak_hours, PeakProfile):
        peak_hours = peak_hours.peak_hours
    hod = grid.hours_of_day()
    return np.isin(hod, list(peak_hours)).astype(float)


def _renormalized(listed) -> tuple[tuple[CellId, float], ...]:
    total = sum(rate for _, rate in listed)
    if total <= 0:
        raise EmptyClusterError("handover cluster has zero total rate")
    return tuple((cell, rate / total) for cell, rate in listed)


def handover_features(target: CellId, neighbor_f10, ho: HandoverMatrix):
    """Weighted average of neighbor volumes per handover direction.

    Listed rates are renormalized to sum to one so the output stays on the
    volume scale. Returns ``(incoming, outgoing)`` series.
    """
    outputs = []
    for direction, listed in (("in", ho.incoming(target)), ("out", ho.outgoing(target))):
        if not listed:
            raise EmptyClusterError(f"no {direction} handover neighbors listed for {target}")
        mixed = None
        for cell, weight in _renormalized(listed):
            if cell not in neighbor_f10:
                raise MissingNeighborSeriesError(
                    f"missing F10 series for {direction} neighbor {cell} of {target}"
                )
            series = np.asarray(neighbor_f10[cell], dtype=float)
            mixed = weight * series if mixed is None else mixed + weight * series
        outputs.append(mixed)
    if len({len(v) for v in outputs}) != 1:
        raise DataError("neighbor series lengths differ")
    return outputs[0], outputs[1]


@dataclass(frozen=True)
class FeatureRecipe:
    """Which input columns a model variant consumes and how to build them.

    Column order is: F10, selected counters, peak flags, handover mixes.
    Boolean calendar columns bypass z-normalization. Handover weights are
    resolved (renormalized) at fit time and stay static.
    """

    variant: str
    cell: str
    lookback: int = DEFAULT_LOOKBACK
    ran_labels: tuple[str, ...] = ()
    peak_hours: frozenset[int] = frozenset()
    tau: float | None = None
    weekend_days: frozenset[int] = DEFAULT_WEEKEND_DAYS
    incoming_weights: tuple[tuple[str, float], ...] = ()
    outgoing_weights: tuple[tuple[str, float], ...] = ()

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise DataError(f"unknown recipe variant {self.variant!r}")
        if self.lookback < 1:
            raise DataError("lookback must be at least 1")

    @property
    def has_peak(self) -> bool:
        return self.variant in ("peak", "all")

    @property
    def has_handover(self) -> bool:
        return self.variant in ("handover", "all")

    @property
    def columns(self) -> tuple[str, ...]:
        cols = [TARGET_LABEL, *self.ran_labels]
        if self.has_peak:
            cols += [PEAK_DAY_COLUMN, PEAK_HOUR_COLUMN]
        if self.has_handover:
            cols += [HANDOVER_IN_COLUMN, HANDOVER_OUT_COLUMN]
        return tuple(cols)

    @property
    def width(self) -> int:
        return len(self.columns)

    @property
    def unnormalized_columns(self) -> frozenset[str]:
        return BOOLEAN_COLUMNS & set(self.columns)

    def build_matrix(self, ds: CellDataset, neighbor_f10=None) -> np.ndarray:
        """Assemble the raw (T, width) input matrix for a dataset."""
        cols = [ds.feature(TARGET_LABEL)]
        cols += [ds.feature(label) for label in self.ran_labels]
        if self.has_peak:
            cols.append(peak_days_vector(ds.grid, self.weekend_days))
            cols.append(peak_hours_vector(self.peak_hours, ds.grid))
        if self.has_handover:
            for weights in (self.incoming_weights, self.outgoing_weights):
                mixed = np.zeros(len(ds))
                for name, w in weights:
                    cell = CellId.parse(name)
                    if neighbor_f10 is None or cell not in neighbor_f10:
                        raise MissingNeighborSeriesError(
                            f"recipe for {self.cell} needs neighbor series {name}"
                        )
                    mixed += w * np.asarray(neighbor_f10[cell], dtype=float)
                cols.append(mixed)
        return np.stack(cols, axis=1)

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "cell": self.cell,
            "lookback": self.lookback,
            "ran_labels": list(self.ran_labels),
            "peak_hours": sorted(self.peak_hours),
            "tau": self.tau,
            "weekend_days": sorted(self.weekend_days),
            "incoming_weights": [[n, w] for n, w in self.incoming_weights],
            "outgoing_weights": [[n, w] for n, w in self.outgoing_weights],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureRecipe":
        return cls(
            variant=d["variant"],
            cell=d["cell"],
            lookback=int(d["lookback"]),
            ran_labels=tuple(d["ran_labels"]),
            peak_hours=frozenset(int(h) for h in d["peak_hours"]),
            tau=d["tau"],
            weekend_days=frozenset(int(x) for x in d["weekend_days"]),
            incoming_weights=tuple((n, float(w)) for n, w in d["incoming_weights"]),
            outgoing_weights=tuple((n, float(w)) for n, w in d["outgoing_weights"]),
        )


def build_recipe(variant: str, ds: CellDataset, train_hours: int | None = None,
                 ho: HandoverMatrix | None = None, neighbor_f10=None,
                 tau: float = DEFAULT_PEAK_TAU, threshold: float = DEFAULT_CORR_THRESHOLD,
                 weekend_days=DEFAULT_WEEKEND_DAYS,
                 lookback: int = DEFAULT_LOOKBACK):
    """Fit a recipe on the training slice and build its raw input matrix.

    Everything data-dependent (counter selection, peak statistics) is fitted
    on the first ``train_hours`` rows only; the returned matrix spans the full
    dataset. Returns ``(recipe, matrix)``.
    """
    if variant not in VARIANTS:
        raise DataError(f"unknown recipe variant {variant!r}")
    if train_hours is None:
        train_hours = len(ds)
    if not 0 < train_hours <= len(ds):
        raise DataError(f"train_hours {train_hours} outside dataset of length {len(ds)}")
    train = ds.view(0, train_hours)

    ran_labels: tuple[str, ...] = ()
    peak_hours: frozenset[int] = frozenset()
    fitted_tau = None
    incoming: tuple[tuple[str, float], ...] = ()
    outgoing: tuple[tuple[str, float], ...] = ()

    if variant in ("ran", "all"):
        ran_labels = tuple(select_ran_features(train, threshold))
    if variant in ("peak", "all"):
        profile = detect_peak_hours(train.feature(TARGET_LABEL), train.grid, tau, weekend_days)
        peak_hours = profile.peak_hours
        fitted_tau = tau
    if variant in ("handover", "all"):
        if ho is None:
            raise DataError(f"variant {variant!r} needs a handover matrix")
        listed_in = ho.incoming(ds.cell)
        listed_out = ho.outgoing(ds.cell)
        if not listed_in or not listed_out:
            raise EmptyClusterError(f"no handover neighbors listed for {ds.cell}")
        incoming = tuple((c.render(), w) for c, w in _renormalized(listed_in))
        outgoing = tuple((c.render(), w) for c, w in _renormalized(listed_out))

    recipe = FeatureRecipe(
        variant=variant,
        cell=ds.cell.render(),
        lookback=lookback,
        ran_labels=ran_labels,
        peak_hours=peak_hours,
        tau=fitted_tau,
        weekend_days=frozenset(weekend_days),
        incoming_weights=incoming,
        outgoing_weights=outgoing,
    )
    matrix = recipe.build_matrix(ds, neighbor_f10)
    return recipe, matrix


def correlation_table(ds: CellDataset) -> tuple[tuple[str, ...], np.ndarray]:
    """Pairwise correlation matrix over all features (heatmap source data)."""
    labels = ds.labels
    n = len(labels)
    table = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            try:
                r = pearson(ds.feature(labels[i]), ds.feature(labels[j]))
            except ConstantFeatureError:
                r = np.nan
            table[i, j] = table[j, i] = r
    return labels, table
