"""Exception hierarchy.

Three families map onto CLI exit codes: configuration problems (2), bad or
missing data (3) and numerical failures (4).
"""

from __future__ import annotations


class ForestAGBError(Exception):
    exit_code = 1


class ConfigError(ForestAGBError):
    exit_code = 2


class DataError(ForestAGBError):
    exit_code = 3


class NumericError(ForestAGBError):
    exit_code = 4


class InvalidParams(ConfigError):
    pass


class GridMismatch(DataError):
    pass


class EmptyIntersection(DataError):
    pass


class AllNodata(DataError):
    pass


class MissingYearStack(DataError):
    def __init__(self, year):
        super().__init__(f"no predictor stack for year {year}")
        self.year = year


class MissingYearSurface(DataError):
    def __init__(self, year):
        super().__init__(f"no prediction surface for year {year}")
        self.year = year


class SchemaMismatch(DataError):
    pass


class StratumUnderfilled(DataError):
    def __init__(self, stratum: int, available: int, requested: int):
        super().__init__(
            f"stratum {stratum} has {available} qualifying cells, {requested} requested"
        )
        self.stratum = stratum
        self.available = available
        self.requested = requested


class ZeroVegFraction(DataError):
    pass


class TooManyRows(ConfigError):
    def __init__(self, n: int, cap: int):
        super().__init__(f"{n} training rows exceeds the SVR row cap of {cap}")
        self.n = n
        self.cap = cap


class DegenerateInput(NumericError):
    pass


class RankDeficient(NumericError):
    def __init__(self, column: int, message: str | None = None):
        super().__init__(message or f"design matrix is rank deficient at column {column}")
        self.column = column


class NotConverged(NumericError):
    def __init__(self, max_iterations: int, best=None, gap: float = float("nan")):
        super().__init__(
            f"solver stopped after {max_iterations} iterations (KKT gap {gap:.3g})"
        )
        self.max_iterations = max_iterations
        self.best = best
        self.gap = gap


class PipelineError(ForestAGBError):
    """Wraps a failure with the pipeline stage it happened in."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)
