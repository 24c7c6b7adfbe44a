"""Compressed-sensing imaging of point scatterers on a lattice."""
from .errors import (ConfigError, ConvergenceError, DegenerateMatrixError, DomainError,
                     InfeasibleError, ResonanceError, ScatterError, SingularityError)

__version__ = "0.1.0"
