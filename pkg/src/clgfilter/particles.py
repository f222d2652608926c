"""Weighted particle sets: normalization, resampling, summary statistics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import AllWeightsZero

SYSTEMATIC = "systematic"
MULTINOMIAL = "multinomial"
SCHEMES = (SYSTEMATIC, MULTINOMIAL)


@dataclass
class ParticleCloud:
    """Particles (``n x d``) with log-weights (length ``n``)."""

    particles: np.ndarray
    log_weights: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.particles, dtype=float)
        if p.ndim == 1:
            p = p[:, None]
        if p.ndim != 2 or p.shape[0] < 1:
            raise ValueError("particles must be a non-empty (n, d) array")
        lw = np.asarray(self.log_weights, dtype=float).reshape(-1)
        if lw.shape[0] != p.shape[0]:
            raise ValueError("one log-weight per particle is required")
        self.particles = p
        self.log_weights = lw

    @classmethod
    def uniform(cls, particles):
        particles = np.asarray(particles, dtype=float)
        n = particles.shape[0]
        return cls(particles, np.full(n, -np.log(n)))

    def __len__(self):
        return self.particles.shape[0]

    @property
    def weights(self):
        return np.exp(self.log_weights)


@dataclass(frozen=True)
class ResamplePlan:
    scheme: str
    ancestor_indices: np.ndarray


def normalize_log_weights(log_weights):
    """Return ``(normalized, log_total)``; raises :class:`AllWeightsZero`."""
    lw = np.asarray(log_weights, dtype=float)
    if lw.size == 0 or not np.any(np.isfinite(lw)) or np.any(np.isnan(lw)) or np.any(lw == np.inf):
        raise AllWeightsZero("no particle carries a finite positive weight")
    total = logsumexp(lw)
    return lw - total, float(total)


def normalize(cloud: ParticleCloud):
    """Normalize the cloud's weights; also return the log of the pre-normalization sum."""
    lw, total = normalize_log_weights(cloud.log_weights)
    return ParticleCloud(cloud.particles, lw), total


def ess(cloud: ParticleCloud) -> float:
    lw, _ = normalize_log_weights(cloud.log_weights)
    return float(1.0 / np.sum(np.exp(2.0 * lw)))


def _cdf(weights):
    c = np.cumsum(weights)
    c[-1] = 1.0
    return c


def resample_indices(weights, scheme, rng):
    """Ancestor indices for normalized ``weights``.

    Systematic resampling consumes one uniform draw, multinomial consumes
    ``n``.  Points falling exactly on a cumulative boundary go to the lower
    index.
    """
    weights = np.asarray(weights, dtype=float)
    n = weights.shape[0]
    cdf = _cdf(weights)
    if scheme == SYSTEMATIC:
        u = (np.arange(n) + rng.random()) / n
    elif scheme == MULTINOMIAL:
        u = rng.random(n)
    else:
        raise ValueError(f"unknown resampling scheme {scheme!r}; choose from {SCHEMES}")
    idx = np.searchsorted(cdf, u, side="left")
    return np.minimum(idx, n - 1)


def resample(cloud: ParticleCloud, scheme, rng):
    lw, _ = normalize_log_weights(cloud.log_weights)
    idx = resample_indices(np.exp(lw), scheme, rng)
    return ParticleCloud.uniform(cloud.particles[idx]), ResamplePlan(scheme, idx)


def center_of_mass(cloud_or_particles):
    """Unweighted average of the particle positions."""
    p = getattr(cloud_or_particles, "particles", cloud_or_particles)
    p = np.asarray(p, dtype=float)
    return p.sum(axis=0) / p.shape[0]


def weighted_mean(cloud: ParticleCloud):
    lw, _ = normalize_log_weights(cloud.log_weights)
    return np.exp(lw) @ cloud.particles


def jitter(cov, amount):
    if amount < 0:
        raise ValueError("jitter amount must be nonnegative")
    cov = np.asarray(cov, dtype=float)
    return cov + amount * np.eye(cov.shape[-1])


def default_jitter_amount(cov, scale=1e-6):
    """``scale * trace(cov) / d`` (batched)."""
    cov = np.asarray(cov, dtype=float)
    return scale * np.trace(cov, axis1=-2, axis2=-1) / cov.shape[-1]
