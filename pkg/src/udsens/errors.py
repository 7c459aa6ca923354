"""Exception types raised by the factorizations, filters and drivers."""

import numpy as np


class ShapeError(ValueError):
    """Array dimensions are inconsistent."""


class NotSymmetricError(ValueError):
    """Matrix expected to be symmetric is not, beyond tolerance."""


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """A factorization pivot was not strictly positive."""


class DegenerateFactorizationError(np.linalg.LinAlgError):
    """A diagonal factor has a zero entry, so its derivative is undefined."""


class RankDeficientError(np.linalg.LinAlgError):
    """A pre-array is numerically rank deficient under its weighting."""


class InvalidInnovationCovarianceError(np.linalg.LinAlgError):
    """Innovation covariance factor has a non-positive entry."""


class IllConditionedError(np.linalg.LinAlgError):
    """Innovation covariance is not positive definite in working precision."""


class DomainError(ValueError):
    """Model parameter lies outside the model's domain."""


class FilterError(RuntimeError):
    """A filtering pass failed at a specific time step.

    Wraps the underlying numerical error so callers know where it happened.
    """

    def __init__(self, step, cause):
        self.step = step
        self.cause = cause
        super().__init__(f"filter failed at step {step}: {cause}")
