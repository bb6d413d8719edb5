"""Exception hierarchy shared by the library and the command line."""


class CtfDerevError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ConfigError(CtfDerevError, ValueError):
    """Invalid configuration or parameter combination."""

    exit_code = 2


class DataError(CtfDerevError):
    """Missing, unreadable or inconsistent input data."""

    exit_code = 3


class DivergenceError(CtfDerevError, FloatingPointError):
    """A training loss or a numerical result became non-finite."""

    exit_code = 4


class UsageError(CtfDerevError, RuntimeError):
    """An API was called out of order (e.g. backward before forward)."""
