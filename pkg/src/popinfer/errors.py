"""Exception hierarchy for popinfer.

Every error carries the process exit code the CLI reports for it.
"""

from typing import Optional


class PopInferError(Exception):
    """Base class for all popinfer errors."""

    exit_code = 1


class ConfigError(PopInferError):
    """An experiment configuration could not be loaded or validated."""

    exit_code = 2


class DimensionMismatch(PopInferError, ValueError):
    """Array shapes that must agree do not."""

    exit_code = 2


class RankDeficient(DimensionMismatch):
    """A linear map does not have full row rank."""


class DomainViolation(PopInferError, ValueError):
    """A model was evaluated outside its admissible parameter box."""

    exit_code = 2


class PredictabilityViolated(PopInferError):
    """The observed density is not dominated by the predicted density.

    Attributes:
        min_value: The smallest singular value (analytic check) or the
            diagnostic mean ratio (sampled check) that failed the test
    """

    exit_code = 3

    def __init__(self, message: str, min_value: Optional[float] = None):
        super().__init__(message)
        self.min_value = min_value


class NumericalError(PopInferError):
    """A numerical computation failed or produced an unusable result."""

    exit_code = 4


class NotSymmetric(NumericalError):
    """A covariance matrix is not symmetric."""


class NotPositiveDefinite(NumericalError):
    """A covariance matrix is not positive definite."""


class DegenerateSamples(NumericalError):
    """Samples have zero spread in some output dimension."""


class NonFiniteWeight(NumericalError):
    """A ratio weight could not be computed because the predicted density vanished."""


class ZeroEvidence(NumericalError):
    """The Monte Carlo evidence estimate underflowed to zero."""


class AllRejected(NumericalError):
    """Rejection sampling accepted no samples."""


class DegenerateReference(NumericalError):
    """The reference KL divergence is too small to divide by."""
