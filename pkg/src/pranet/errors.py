"""Exception types shared across the package.

Each error carries the CLI exit code it maps to.
"""


class PraNetError(Exception):
    exit_code = 1


class InvalidArgument(PraNetError, ValueError):
    exit_code = 2


class DataIOError(PraNetError, OSError):
    exit_code = 3


class NumericError(PraNetError, ArithmeticError):
    exit_code = 4


class UnsupportedCheckpoint(InvalidArgument):
    pass


class UndefinedMetric(PraNetError, ValueError):
    """Raised when a metric is undefined for a particular input (e.g. empty foreground)."""

    exit_code = 2


class InternalError(PraNetError, RuntimeError):
    exit_code = 1
