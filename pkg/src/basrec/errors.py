"""Exception hierarchy shared by all modules, mapped to CLI exit codes."""


class BasrecError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ConfigError(BasrecError):
    """Invalid configuration: bad key, bad value, violated hyperparameter bound."""

    exit_code = 2


class DataError(BasrecError):
    """Unusable input data: unreadable file, too many malformed lines, empty dataset."""

    exit_code = 3


class NumericError(BasrecError):
    """Numeric failure: non-finite value in a kernel op, failed gradient check."""

    exit_code = 4


class ShapeError(NumericError):
    """Operand shapes or dtypes do not conform for a kernel op."""
