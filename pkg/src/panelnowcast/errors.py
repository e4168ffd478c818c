"""Exception hierarchy.

Each family maps to one CLI exit code: configuration problems (2),
data problems (3) and numerical failures (4).
"""


class PanelNowcastError(Exception):
    exit_code = 1


class ConfigError(PanelNowcastError):
    exit_code = 2


class DataError(PanelNowcastError):
    exit_code = 3


class SchemaError(DataError):
    pass


class DataGapError(DataError):
    pass


class FrequencyError(DataError):
    pass


class InsufficientHistoryError(DataError):
    pass


class DimensionError(DataError, ValueError):
    pass


class DomainError(DataError, ValueError):
    pass


class DegenerateWeightsError(DataError):
    pass


class FoldError(DataError):
    pass


class UnknownUnitError(DataError, LookupError):
    pass


class NumericError(PanelNowcastError):
    exit_code = 4


class DegeneratePathError(NumericError):
    pass


class ConvergenceError(NumericError):
    """Raised when an iterative solver hits its iteration cap.

    The last iterate is kept on ``last_iterate`` so callers can inspect or
    reuse it as a warm start.
    """

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate
