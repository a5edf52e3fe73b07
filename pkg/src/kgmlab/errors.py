"""Exception types shared across the package."""


class KGMLabError(Exception):
    """Base class for all package-specific failures."""


class InvalidExponent(KGMLabError):
    """Nonlinearity exponent outside the admissible range."""


class ShootingFailed(KGMLabError):
    """Bisection on the central amplitude did not bracket a decaying profile."""


class QuadratureUnconverged(KGMLabError):
    """Richardson estimate of a quadrature error exceeds tolerance."""


class FocalRadiusExceeded(KGMLabError):
    """Requested chart radius exceeds the geometry's safe focal bound."""


class GeodesicShootingFailed(KGMLabError):
    """Boundary geodesic integration or log-map inversion failed."""


class GridMismatch(KGMLabError):
    """Fields defined on different grids were combined."""


class GridTooLarge(KGMLabError):
    """Grid exceeds the size cap (guards accidental huge n=4 allocations)."""


class NonPositiveCoefficient(KGMLabError):
    """Zeroth-order coefficient would break positive definiteness."""


class IterationLimit(KGMLabError):
    """An iterative solver hit its iteration cap before converging."""


class ResolutionError(KGMLabError):
    """Grid spacing too coarse to resolve the spike core."""


class DegenerateKernel(KGMLabError):
    """Gram matrix of the kernel fields is numerically singular."""


class ContractionDiverged(KGMLabError):
    """Fixed-point corrections grew over several consecutive steps."""


class BoundViolation(KGMLabError):
    """The electrostatic potential left its box bound beyond tolerance."""


class NonConvergedAtNeighbor(KGMLabError):
    """A finite-difference stencil point of the reduced energy failed."""


class OptimizerStalled(KGMLabError):
    """Peak search could not decrease the reduced energy further."""


class InsufficientSamples(KGMLabError):
    """Not enough sweep samples for the requested fit."""


class ConfigInvalid(KGMLabError):
    """Run configuration failed to parse or validate."""
