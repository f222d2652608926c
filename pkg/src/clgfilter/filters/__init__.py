from .common import (
    BankState,
    FilterConfig,
    FilterOutput,
    StepDiagnostics,
    TrackingLossWarning,
    WeightDecomposition,
)
from .kalman import KalmanResult, kalman_filter, kalman_oracle
from .mpf import MPF, MarginalizedParticleFilter
from .smpf import SMPF1, SMPF2, SimplifiedMPF
from .tf import TF, TurboFilter, extrinsic_log_weight, z_n_message, z_n_message_alt

ALGORITHMS = {
    "mpf": MarginalizedParticleFilter,
    "smpf1": SMPF1,
    "smpf2": SMPF2,
    "tf": TurboFilter,
}


def make_filter(name, model, config=None, **overrides):
    """Instantiate a filter by its short name (``mpf``, ``smpf1``, ``smpf2``, ``tf``)."""
    try:
        cls = ALGORITHMS[name]
    except KeyError:
        raise ValueError(f"unknown algorithm {name!r}; choose from {sorted(ALGORITHMS)}") from None
    return cls(model, config, **overrides)


__all__ = [
    "ALGORITHMS",
    "BankState",
    "FilterConfig",
    "FilterOutput",
    "KalmanResult",
    "MPF",
    "MarginalizedParticleFilter",
    "SMPF1",
    "SMPF2",
    "SimplifiedMPF",
    "StepDiagnostics",
    "TF",
    "TrackingLossWarning",
    "TurboFilter",
    "WeightDecomposition",
    "extrinsic_log_weight",
    "kalman_filter",
    "kalman_oracle",
    "make_filter",
    "z_n_message",
    "z_n_message_alt",
]
