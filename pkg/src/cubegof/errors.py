"""Semantic exception hierarchy.

Everything raised on purpose by this package derives from CubegofError so
callers (and the CLI) can separate our diagnostics from genuine bugs.
"""


class CubegofError(Exception):
    """Base class for all errors raised by cubegof."""


class TransformError(CubegofError, ValueError):
    """Bad input data or a model that cannot transform it (support, shape)."""


class StatisticError(CubegofError, ValueError):
    """A test statistic was requested on an input it is not defined for."""


class TableError(CubegofError, RuntimeError):
    """A null table is malformed, inconsistent or failed to build."""


class TableMissingError(TableError):
    """A required null table is absent from the store and auto-build is off."""


class LimitError(CubegofError, RuntimeError):
    """Limit setting failed (non-monotone curve, no bracketable root, ...)."""


class CalibrationError(CubegofError, RuntimeError):
    """A correction surface is unusable here (extrapolation, empty cells)."""


class UsageError(CubegofError):
    """Command line misuse; maps to exit status 1."""
