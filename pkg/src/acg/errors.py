"""Exception types shared across the package."""


class AcgError(Exception):
    """Base class for all package errors."""


class NotPositiveDefinite(AcgError):
    """A matrix required to be SPD failed its Cholesky factorization."""


class DimensionMismatch(AcgError):
    """Operands have incompatible shapes."""


class IndexOutOfRange(AcgError):
    """An index set refers to coordinates outside the valid range."""


class StepOutOfRange(AcgError):
    """A diffusion timestep lies outside the schedule."""


class InvalidRange(AcgError):
    """A scalar parameter lies outside its admissible interval."""


class MissingUnconditional(AcgError):
    """Unified aggregation with positive guidance needs an unconditional prediction."""


class BadWeights(AcgError):
    """Consensus weights are not a simplex vector of the right length."""


class UnknownPreset(AcgError):
    """Schedule preset name not recognized, or driver does not handle it."""


class InconsistentBMarginal(AcgError):
    """The shared-block marginals of two pair distributions disagree."""


class TooFewSamples(AcgError):
    """Not enough samples to fit the requested moments."""


class NoExactDensity(AcgError):
    """The score model does not expose an exact density."""


class SizeCap(AcgError):
    """Requested grid exceeds the dense-covariance tractability cap."""


class OutOfBounds(AcgError):
    """A corruption pattern does not fit inside the field."""


class UnreconstructablePatch(AcgError):
    """A corrupted patch has no neighboring data to condition on."""


class ShapeMismatch(AcgError):
    """Two fields compared by metrics have different shapes."""


class ConfigInvalid(AcgError):
    """Experiment configuration failed validation."""
