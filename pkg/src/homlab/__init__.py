"""homlab: a numerical laboratory for periodic homogenization on the unit square.

The package solves cell problems on the unit torus, assembles effective
operators, solves the oscillatory and homogenized boundary value problems,
compares their spectra, and measures convergence rates against the first-order
corrector expansion.
"""

from .errors import (
    AssemblyError,
    CoercivityError,
    ConfigurationError,
    ConsistencyError,
    HomlabError,
    InsufficientDataError,
    SolverError,
    SpectralError,
    UsageError,
)

__version__ = "0.1.0"

__all__ = [
    "AssemblyError",
    "CoercivityError",
    "ConfigurationError",
    "ConsistencyError",
    "HomlabError",
    "InsufficientDataError",
    "SolverError",
    "SpectralError",
    "UsageError",
    "__version__",
]
