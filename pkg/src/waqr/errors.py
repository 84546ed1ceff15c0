"""Exception hierarchy shared by every module of the package."""


class WaqrError(Exception):
    """Base class for all package errors."""


class ParameterError(WaqrError, ValueError):
    """Invalid tuning parameter or option."""


class ShapeError(WaqrError, ValueError):
    """Array dimensions do not match."""


class SizeError(WaqrError, ValueError):
    """Too few observations for the requested operation."""


class DegeneracyError(WaqrError, ValueError):
    """Data carry no variation where variation is required."""


class GridError(WaqrError, ValueError):
    """Malformed evaluation grid."""


class NumericError(WaqrError, ArithmeticError):
    """Non-finite intermediate values."""


class SingularityError(WaqrError, ArithmeticError):
    """Rank-deficient design matrix."""

    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


class ConvergenceError(WaqrError, RuntimeError):
    """Iterative solver stopped before meeting its optimality check."""

    def __init__(self, message, gap=float("nan")):
        super().__init__(message)
        self.gap = gap


class DataError(WaqrError, ValueError):
    """Malformed input file."""


class ConfigError(WaqrError, ValueError):
    """Malformed configuration."""
