"""Exception hierarchy shared across the package.

The CLI maps each class to a fixed process exit code; library callers can
catch ``RegulateError`` to handle every failure mode uniformly.
"""


class RegulateError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ConfigError(RegulateError):
    """Invalid options, flags, or argument combinations."""

    exit_code = 2


class DataError(RegulateError):
    """Malformed or internally inconsistent input data."""

    exit_code = 3


class NumericalError(RegulateError):
    """A numerical procedure failed or its preconditions do not hold."""

    exit_code = 4
