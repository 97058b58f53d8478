"""Exception hierarchy. The four base classes map to distinct CLI exit codes."""


class RancastError(Exception):
    """Base class for all package errors."""


class ConfigError(RancastError):
    """Invalid configuration or mismatched artifacts."""


class DataError(RancastError):
    """Invalid, inconsistent, or insufficient input data."""


class DivergenceError(RancastError):
    """Training produced a non-finite loss."""


class ConstraintUnsatisfiedError(RancastError):
    """A calibration target could not be met within tolerance."""


class DatasetTooShortError(DataError):
    pass


class ConstantFeatureError(DataError):
    pass


class InfeasibleFoldPlanError(DataError):
    pass


class UnknownFeatureError(DataError):
    pass


class MalformedCsvError(DataError):
    pass


class NonHourlyTimestampsError(DataError):
    pass


class GapTooLongError(DataError):
    pass


class InconsistentHandoverError(DataError):
    pass


class MissingNeighborSeriesError(DataError):
    pass


class EmptyClusterError(DataError):
    pass


class MissingNeighborModelError(DataError):
    pass


class MissingModelError(DataError):
    pass


class TooShortSeriesError(DataError):
    pass


class ShapeMismatchError(DataError):
    pass


class AllDivergedError(DivergenceError):
    pass


class ArtifactMismatchError(ConfigError):
    pass
