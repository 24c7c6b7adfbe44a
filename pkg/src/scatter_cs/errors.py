"""Exception types raised across the package."""


class ScatterError(Exception):
    """Base class for all package errors."""


class DomainError(ScatterError, ValueError):
    """Argument outside the domain of a numerical routine."""


class SingularityError(ScatterError, ValueError):
    """Green function evaluated at (numerically) coincident points."""


class ResonanceError(ScatterError, ArithmeticError):
    """Foldy-Lax system is singular: 1 is (close to) an eigenvalue of w^2 G V."""

    def __init__(self, message, rcond=None):
        super().__init__(message)
        self.rcond = rcond


class InfeasibleError(ScatterError, ArithmeticError):
    """No point satisfies the data constraint to the requested tolerance."""


class ConvergenceError(ScatterError, ArithmeticError):
    """An iterative method hit its iteration cap."""


class DegenerateMatrixError(ScatterError, ValueError):
    """Matrix has a zero column (or too few rows/columns) for the requested quantity."""


class ConfigError(ScatterError, ValueError):
    """Invalid experiment configuration."""
