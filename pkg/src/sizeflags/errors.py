"""Exception hierarchy.

Every error raised on purpose by the package derives from ``SizeFlagsError`` so
the CLI can map it to a categorized exit status.
"""


class SizeFlagsError(Exception):
    """Base class for all package errors."""

    category = "error"
    exit_code = 1


class DataError(SizeFlagsError, ValueError):
    category = "data"
    exit_code = 3


class UndefinedRateError(DataError):
    """Raised when a return rate is requested for an article with zero orders."""


class InsufficientDataError(DataError):
    """Raised when too few eligible articles remain to compute statistics."""


class NumericalError(SizeFlagsError, ValueError):
    category = "numerical"
    exit_code = 5


class DegenerateParameterError(NumericalError):
    """A rate parameter sits on 0 or 1 where the log-likelihood is undefined."""


class BoundaryError(NumericalError):
    """A density is evaluated at, or an interval touches, the boundary of [0, 1]."""


class SolverRangeError(NumericalError):
    """The integer search for prior bounds hit its upper limit."""


class InsufficientBaselineError(NumericalError):
    """No flags at the conservative threshold, so the constraint ratios are undefined."""


class ParseError(DataError):
    """A malformed input line.  ``line`` is 1-based."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}: "
        elif where:
            where += " "
        super().__init__(f"{where}{message}")


class ValidationError(DataError):
    """Input parsed but violates an invariant (e.g. non-monotone cumulative counts)."""

    category = "validation"
    exit_code = 4


class ConfigError(SizeFlagsError, ValueError):
    category = "config"
    exit_code = 2
