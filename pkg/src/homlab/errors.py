"""Exception types shared across the package."""


class HomlabError(Exception):
    """Base class for all package-specific errors."""


class ConfigurationError(HomlabError):
    """Bad user input: unknown preset, malformed config, violated resolution rule."""


class AssemblyError(HomlabError):
    """Coefficient sampling produced unusable data during matrix assembly."""


class SolverError(HomlabError):
    """Iterative solver failed to reach the requested tolerance."""

    def __init__(self, message, residual=None, iterations=None, breakdown=False):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
        self.breakdown = breakdown


class ConsistencyError(HomlabError):
    """A compatibility condition (zero-mean right-hand side) is violated."""


class CoercivityError(HomlabError):
    """The oscillatory operator is not positive definite for this epsilon."""

    def __init__(self, message, lambda_1=None):
        super().__init__(message)
        self.lambda_1 = lambda_1


class SpectralError(HomlabError):
    """Eigenvalue solve failed or returned pairs above the residual tolerance."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


class InsufficientDataError(HomlabError):
    """Too few usable data points for the requested fit or summary."""


class UsageError(HomlabError):
    """An operation was applied to an object that does not support it."""
