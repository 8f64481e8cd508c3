"""Shared exception types.

The CLI maps these onto exit codes: bad arguments exit 1, DataError exit 2,
and a training run that hits its update budget without meeting the KKT
tolerance exits 3 (the model is still written).
"""


class ParameterError(ValueError):
    """A parameter violates an operation's stated precondition."""


class DimensionError(ValueError):
    """An array has the wrong shape or is too small for the operation."""


class DataError(RuntimeError):
    """Input data is unreadable, inconsistent, or malformed."""
