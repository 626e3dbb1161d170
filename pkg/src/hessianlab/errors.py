"""Exception types shared across the package."""


class HessianLabError(Exception):
    """Base class for all package-specific errors."""


class DimensionMismatch(HessianLabError):
    """Operands live on different grids or have incompatible shapes."""


class NonHermitianInput(HessianLabError):
    """A matrix that must be Hermitian is not, beyond tolerance."""


class NonPositiveMetric(HessianLabError):
    """The reference metric must be positive definite."""


class ConeViolation(HessianLabError):
    """An argument required to lie in the positivity cone does not."""


class InvalidExponent(HessianLabError):
    """Lebesgue exponent out of range (p >= 1 required)."""


class NonPositiveDensity(HessianLabError):
    """A density that must be bounded away from zero is not."""


class ZeroMass(HessianLabError):
    """The right-hand side density has non-positive total mass."""


class ConeExit(HessianLabError):
    """Line search could not keep the iterate inside the cone."""


class MaxIterExceeded(HessianLabError):
    """Iteration budget exhausted before reaching tolerance."""


class SolverDiverged(HessianLabError):
    """An inner solve failed; carries the stage it failed at."""

    def __init__(self, message, stage=None):
        super().__init__(message)
        self.stage = stage


class MajorantViolated(HessianLabError):
    """The obstacle's Hessian density exceeds the declared majorant."""


class NoConvergence(HessianLabError):
    """Relaxation sweeps did not reach a fixed point."""


class EnvelopeFailed(HessianLabError):
    """Envelope computation failed; wraps the underlying cause."""


class StageFailed(HessianLabError):
    """A continuation stage failed; carries the partial schedule."""

    def __init__(self, message, stage, schedule=None):
        super().__init__(message)
        self.stage = stage
        self.schedule = schedule


class NonMonotoneGrid(HessianLabError):
    """Radial grid must be strictly increasing."""


class NonIntegrableSource(HessianLabError):
    """Radial density is not integrable against s^(n-1) ds near 0."""


class ParseError(HessianLabError):
    """Configuration file could not be parsed."""


class ValidationError(HessianLabError):
    """Configuration value or key failed validation."""


class IoError(HessianLabError):
    """Report output could not be written."""
