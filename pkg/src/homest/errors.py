"""Exception types shared across the library."""


class HomestError(Exception):
    """Base class for all library errors."""


class DomainError(HomestError):
    """A position, window or ball leaves the computational domain."""


class ResolutionError(HomestError):
    """A grid or time step is too coarse for the fast scale it must resolve."""


class CoefficientError(HomestError):
    """A permeability evaluation violates its positivity/boundedness contract."""


class SolvabilityError(HomestError):
    """A periodic problem was posed with a source that does not average to zero."""


class CovarianceError(HomestError):
    """A covariance matrix is invalid or cannot be factorized after jittering."""


class CoverageError(HomestError):
    """A quadrature domain does not capture enough probability mass."""


class PreconditionError(HomestError):
    """An estimator precondition (e.g. non-degenerate functional family) fails."""


class ConfigError(HomestError):
    """An experiment configuration is missing or inconsistent."""
