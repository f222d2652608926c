"""Particle filtering for conditionally linear Gaussian state-space models."""

from .errors import (
    AllWeightsZero,
    ConfigError,
    DimensionMismatch,
    EmptyMixture,
    ModelValidationError,
    NonPositiveDefinite,
)
from .filters import (
    MPF,
    SMPF1,
    SMPF2,
    TF,
    FilterConfig,
    FilterOutput,
    MarginalizedParticleFilter,
    SimplifiedMPF,
    TurboFilter,
    kalman_oracle,
    make_filter,
)
from .gaussian import (
    GaussianCanonical,
    GaussianMixture,
    GaussianMoment,
    OpCounters,
    affine_push,
    condense_mixture,
    correlation,
    log_correlation,
    log_density,
    product_canonical,
    sample,
    to_canonical,
    to_moment,
)
from .model import (
    CLGModel,
    LinearGaussianModel,
    PseudoMeasurement,
    Trajectory,
    benchmark_model,
    default_linear_model,
    pseudo_z_L,
    pseudo_z_N,
    simulate,
)

__version__ = "0.1.0"
