"""Exception types shared across the package."""

import numpy as np


class NonPositiveDefinite(np.linalg.LinAlgError):
    """A matrix that must be factorized is not (numerically) positive definite."""


class DimensionMismatch(ValueError):
    pass


class EmptyMixture(ValueError):
    pass


class AllWeightsZero(FloatingPointError):
    """Every particle log-weight is -inf (or NaN); normalization is impossible."""


class ModelValidationError(ValueError):
    pass


class ConfigError(ValueError):
    """Invalid configuration. ``key`` names the offending setting."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key
