"""Configuration, state containers and batched update kernels shared by the filters.

Every kernel works on a leading batch axis.  A quantity shared by the whole
particle bank is carried with batch size one and broadcasts against the
per-particle arrays, so a one-particle run of a simplified filter executes the
very same floating-point operations as the full filter.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from ..errors import AllWeightsZero, ConfigError
from ..gaussian import (
    OpCounters,
    chol_inverse,
    chol_solve,
    cholesky,
    gaussian_logpdf,
    psd_repair,
    quad_form,
    symmetrize,
)
from ..particles import SCHEMES, SYSTEMATIC, normalize_log_weights, resample_indices

log = logging.getLogger(__name__)

GAIN = "gain"
CZ_REPAIR = "repair"
CZ_PROJECT = "project"
CZ_NONE = "none"
CANONICAL = "canonical"


class TrackingLossWarning(RuntimeWarning):
    """All particle weights underflowed; the filter fell back to uniform weights."""


@dataclass
class FilterConfig:
    """Tuning knobs common to all particle filters.

    Attributes:
        n_particles: Number of particles ``N_p``.
        n_iterations: Turbo iterations per recursion (only the turbo filter reads it).
        resample_scheme: ``"systematic"`` or ``"multinomial"``.
        jitter_scale: Artificial noise added to each predictive covariance of
            the nonlinear state, as a fraction of ``trace(C) / d``.  ``None``
            disables jittering.
        jitter_amount: Absolute jitter; overrides ``jitter_scale`` when set.
        drop_det_in_weights: Drop the determinant (and ``2 pi``) factor of the
            measurement likelihood used for particle weights.
        drop_D3_factor: Drop the normalizing factor of the extrinsic weight.
        raised_det_constant: Use the dimension-raised determinant normalizer in the
            extrinsic weight instead of the standard one.
        linear_form: ``"gain"`` (default) or ``"canonical"`` form for the
            linear-substate updates.  They are algebraically identical.
        cz_policy: How the turbo filter treats an indefinite pseudo-measurement
            covariance: ``"project"`` (clip to the PSD cone, default),
            ``"repair"`` (roundoff-only repair, otherwise raise) or ``"none"``.
        smpf2_mean_spread: Include the spread of the predicted means in the
            covariance shared by the simplified filter's second variant.
        resample: Resample in every recursion.  Turning it off is only
            meant for diagnostics and equivalence checks.
        seed: Seed used when no generator is passed explicitly.
    """

    n_particles: int = 200
    n_iterations: int = 1
    resample_scheme: str = SYSTEMATIC
    jitter_scale: Optional[float] = 1e-6
    jitter_amount: Optional[float] = None
    drop_det_in_weights: bool = True
    drop_D3_factor: bool = True
    raised_det_constant: bool = False
    linear_form: str = GAIN
    cz_policy: str = CZ_PROJECT
    smpf2_mean_spread: bool = False
    resample: bool = True
    seed: Optional[int] = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not isinstance(self.n_particles, (int, np.integer)) or self.n_particles < 1:
            raise ConfigError("n_particles", f"must be an integer >= 1, got {self.n_particles!r}")
        if not isinstance(self.n_iterations, (int, np.integer)) or self.n_iterations < 1:
            raise ConfigError("n_iterations", f"must be an integer >= 1, got {self.n_iterations!r}")
        if self.resample_scheme not in SCHEMES:
            raise ConfigError("resample_scheme", f"must be one of {SCHEMES}")
        if self.jitter_scale is not None and not self.jitter_scale >= 0:
            raise ConfigError("jitter_scale", "must be nonnegative")
        if self.jitter_amount is not None and not self.jitter_amount >= 0:
            raise ConfigError("jitter_amount", "must be nonnegative")
        if self.linear_form not in (GAIN, CANONICAL):
            raise ConfigError("linear_form", f"must be {GAIN!r} or {CANONICAL!r}")
        if self.cz_policy not in (CZ_REPAIR, CZ_PROJECT, CZ_NONE):
            raise ConfigError("cz_policy", f"must be one of {(CZ_REPAIR, CZ_PROJECT, CZ_NONE)}")
        return self

    def replace(self, **changes):
        kw = {f.name: getattr(self, f.name) for f in fields(self)}
        kw.update(changes)
        return FilterConfig(**kw)


@dataclass(frozen=True)
class WeightDecomposition:
    """Log-weight terms of one turbo iteration (one entry per particle)."""

    l_apriori: np.ndarray
    l_measurement: np.ndarray
    l_pseudo: np.ndarray

    @property
    def l_total(self):
        return self.l_apriori + self.l_measurement + self.l_pseudo


@dataclass
class StepDiagnostics:
    ess: float
    tracking_loss: bool = False
    decompositions: list = field(default_factory=list)


@dataclass
class FilterOutput:
    est_linear: np.ndarray
    est_nonlinear: np.ndarray
    diagnostics: list
    counters: OpCounters

    def __post_init__(self):
        if not (len(self.est_linear) == len(self.est_nonlinear) == len(self.diagnostics)):
            raise ValueError("estimate and diagnostic sequences differ in length")

    @property
    def ess(self):
        return np.array([d.ess for d in self.diagnostics])

    @property
    def weight_underflows(self):
        return int(sum(d.tracking_loss for d in self.diagnostics))


@dataclass
class BankState:
    """Particle set for the upcoming recursion and its conditional linear beliefs.

    ``covs`` is either per particle (``n x D_L x D_L``) or a single shared
    matrix with batch size one.
    """

    particles: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    log_prior: np.ndarray
    step: int = 1


# ----------------------------------------------------------------------------
# helpers
# ----------------------------------------------------------------------------


def as_rng(random_state):
    if isinstance(random_state, np.random.Generator):
        return random_state
    return np.random.default_rng(random_state)


def safe_normalize(log_weights, step):
    """Normalize, falling back to uniform weights if everything underflowed."""
    try:
        lw, _ = normalize_log_weights(log_weights)
        return lw, False
    except AllWeightsZero:
        n = len(log_weights)
        msg = f"all particle weights vanished at step {step}; resetting to uniform"
        log.warning(msg)
        warnings.warn(msg, TrackingLossWarning, stacklevel=3)
        return np.full(n, -np.log(n)), True


def ess_from_log(lw):
    return float(1.0 / np.sum(np.exp(2.0 * lw)))


def resample_step(lw, config, rng):
    if not config.resample:
        return None
    return resample_indices(np.exp(lw), config.resample_scheme, rng)


def add_jitter(cov, config):
    if config.jitter_amount is not None:
        amount = np.full(cov.shape[:-2], float(config.jitter_amount))
    elif config.jitter_scale is not None:
        amount = config.jitter_scale * np.trace(cov, axis1=-2, axis2=-1) / cov.shape[-1]
    else:
        return cov
    return cov + amount[..., None, None] * np.eye(cov.shape[-1])


def matvec(a, x):
    return (a @ x[..., None])[..., 0]


def is_zero(a):
    return not np.any(a)


# ----------------------------------------------------------------------------
# linear-substate update kernels
# ----------------------------------------------------------------------------


def innovation(means, covs, H, offset, noise):
    """Predicted observation mean and covariance for ``obs = H x + offset + v``."""
    return matvec(H, means) + offset, symmetrize(quad_form(H, covs) + noise)


def conditioning_update(means, covs, H, resid, chol_S, noise):
    """Condition ``N(means, covs)`` on a linear-Gaussian observation (gain form).

    ``resid`` is the innovation ``obs - H means - offset`` and ``chol_S`` the
    Cholesky factor of its covariance ``H C H^T + noise``.  The covariance is
    updated in Joseph form, which keeps it symmetric positive definite.
    """
    HC = H @ covs
    gain_t = chol_solve(chol_S, HC)
    gain = np.swapaxes(gain_t, -1, -2)
    new_means = means + matvec(gain, resid)
    d = covs.shape[-1]
    i_kh = np.eye(d) - gain @ H
    new_covs = symmetrize(quad_form(i_kh, covs) + quad_form(gain, noise))
    return new_means, new_covs


def canonical_update(means, covs, H, obs_minus_offset, W_noise, counters):
    """Same conditioning as :func:`conditioning_update`, via information sums."""
    prec = chol_inverse(cholesky(covs, counters, "inversion", "prior covariance"))
    xi = matvec(prec, means)
    Ht = np.swapaxes(H, -1, -2)
    prec_post = symmetrize(prec + Ht @ W_noise @ H)
    xi_post = xi + matvec(Ht @ W_noise, obs_minus_offset)
    chol = cholesky(prec_post, counters, "inversion", "posterior precision")
    return chol_solve(chol, xi_post), chol_inverse(chol)


def linear_update(means, covs, H, offset, obs, noise, W_noise, config, counters, chol_S=None):
    """Condition linear beliefs on ``obs = H x + offset + v`` with ``v ~ N(0, noise)``.

    ``chol_S`` may carry an already computed innovation factor (the particle
    weights need the same matrix), avoiding a second factorization.
    """
    if is_zero(H):
        return means, covs
    if config.linear_form == CANONICAL and W_noise is not None:
        return canonical_update(means, covs, H, obs - offset, W_noise, counters)
    pred, S = innovation(means, covs, H, offset, noise)
    if chol_S is None:
        chol_S = cholesky(S, counters, "inversion", "innovation covariance")
    return conditioning_update(means, covs, H, obs - pred, chol_S, noise)


def sample_predictions(means, covs, rng, counters, n):
    """Draw one point per particle from ``N(means_j, covs_j)``; ``covs`` may be shared."""
    chol = sqrt_factor(covs, counters)
    z = rng.standard_normal((n, means.shape[-1]))
    return means + matvec(chol, z)


def sqrt_factor(covs, counters):
    if is_zero(covs):
        return np.zeros_like(covs)
    try:
        return cholesky(covs, counters, "cholesky", "predictive covariance")
    except np.linalg.LinAlgError:
        return cholesky(psd_repair(covs, "predictive covariance"), counters, "cholesky",
                        "predictive covariance")


def weight_loglik(y, pred, chol, drop_det):
    return gaussian_logpdf(y - pred, chol, drop_det)


def noise_precisions(model):
    """Precisions of the noise covariances (``None`` when singular)."""

    def inv(c):
        try:
            return chol_inverse(np.linalg.cholesky(c))
        except np.linalg.LinAlgError:
            return None

    return inv(model.cov_e), inv(model.cov_w_N), inv(model.cov_w_L)


def check_measurements(model, Y):
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1 and model.dim_meas == 1:
        Y = Y[:, None]
    if Y.ndim != 2 or Y.shape[1] != model.dim_meas:
        raise ValueError(f"measurements must have shape (T, {model.dim_meas}), got {Y.shape}")
    if Y.shape[0] < 1:
        raise ValueError("need at least one measurement")
    if not np.all(np.isfinite(Y)):
        raise ValueError("measurements contain non-finite values")
    return Y


def init_bank(model, config, rng, shared_cov=False):
    """Initial particles from the model's prior; every bank entry equals the linear prior."""
    n = config.n_particles
    x = model.sample_init_nonlinear(rng, n)
    means = np.broadcast_to(model.init_linear.mean, (n, model.dim_linear)).copy()
    if shared_cov:
        covs = model.init_linear.cov[None].copy()
    else:
        covs = np.broadcast_to(model.init_linear.cov, (n,) + model.init_linear.cov.shape).copy()
    return BankState(x, means, covs, np.full(n, -np.log(n)), step=1)
