"""Dense Gaussian belief algebra for small dimensions.

Beliefs are carried either in moment form (mean, covariance) or in canonical
form (transformed mean ``xi = P @ mean``, precision ``P``).  All covariance
outputs are symmetrized; factorizations go through Cholesky and are tallied in
an optional :class:`OpCounters` handle supplied by the caller.

Most helpers accept a leading batch axis so the filters can update a whole
particle bank at once; the object-level operations (``to_canonical``,
``affine_push``, ...) are thin wrappers over the same kernels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, EmptyMixture, NonPositiveDefinite

LOG_2PI = math.log(2.0 * math.pi)

# PSD repair window, relative to the trace.
REPAIR_TOL = 1e-10
REPAIR_FLOOR = 1e-12


@dataclass
class OpCounters:
    """Instrumentation tallies.

    ``cholesky_count`` counts factorizations done to draw samples,
    ``inversion_count`` counts factorizations done to invert or solve with a
    matrix.  A batched call over ``n`` matrices counts ``n``.
    """

    cholesky_count: int = 0
    inversion_count: int = 0
    wall_time: float = 0.0

    def add(self, kind, n=1):
        if kind == "cholesky":
            self.cholesky_count += int(n)
        elif kind == "inversion":
            self.inversion_count += int(n)
        else:
            raise ValueError(f"unknown counter kind {kind!r}")

    def merge(self, other):
        self.cholesky_count += other.cholesky_count
        self.inversion_count += other.inversion_count
        self.wall_time += other.wall_time


# ----------------------------------------------------------------------------
# array kernels (batch-aware)
# ----------------------------------------------------------------------------


def symmetrize(m):
    m = np.asarray(m, dtype=float)
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def _batch_size(m):
    return int(np.prod(m.shape[:-2])) if m.ndim > 2 else 1


def psd_repair(cov, name="covariance"):
    """Clamp tiny negative eigenvalues produced by roundoff.

    A matrix whose smallest eigenvalue lies in ``(-1e-10 * trace, 0]`` gets
    its diagonal lifted so the smallest eigenvalue becomes ``1e-12 * trace``.
    Anything more negative raises :class:`NonPositiveDefinite`.
    """
    cov = symmetrize(cov)
    lam_min = np.linalg.eigvalsh(cov)[..., 0]
    trace = np.trace(cov, axis1=-2, axis2=-1)
    scale = np.abs(trace)
    bad = lam_min < -REPAIR_TOL * scale
    if np.any(bad):
        raise NonPositiveDefinite(
            f"{name}: smallest eigenvalue {np.min(lam_min):.3e} is below the repair window"
        )
    fix = lam_min <= 0.0
    fix &= scale > 0.0
    if not np.any(fix):
        return cov
    lift = np.where(fix, REPAIR_FLOOR * scale - lam_min, 0.0)
    d = cov.shape[-1]
    return cov + lift[..., None, None] * np.eye(d)


def cholesky(cov, counters=None, kind="inversion", name="covariance"):
    """Lower Cholesky factor(s) of ``cov``; tallies one factorization per matrix."""
    cov = np.asarray(cov, dtype=float)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise NonPositiveDefinite(f"{name}: Cholesky factorization failed") from exc
    if counters is not None:
        counters.add(kind, _batch_size(cov))
    return chol


def chol_solve(chol, b):
    """Solve ``(L L^T) x = b`` for batched lower factors and vector/matrix rhs."""
    vec = b.ndim == chol.ndim - 1
    rhs = b[..., None] if vec else b
    y = np.linalg.solve(chol, rhs)
    x = np.linalg.solve(np.swapaxes(chol, -1, -2), y)
    return x[..., 0] if vec else x


def chol_inverse(chol):
    linv = np.linalg.inv(chol)
    return symmetrize(np.swapaxes(linv, -1, -2) @ linv)


def spd_inverse(m, counters=None, name="matrix"):
    """Inverse of a symmetric positive-definite matrix (or batch) via Cholesky."""
    return chol_inverse(cholesky(m, counters, "inversion", name))


def chol_logdet(chol):
    return 2.0 * np.sum(np.log(np.diagonal(chol, axis1=-2, axis2=-1)), axis=-1)


def mahalanobis_sq(chol, r):
    """``r^T (L L^T)^{-1} r`` for batched factors and residuals."""
    u = np.linalg.solve(chol, r[..., None])[..., 0]
    return np.sum(u * u, axis=-1)


def gaussian_logpdf(r, chol, drop_det=False):
    """Log-density of residual ``r`` under a zero-mean Gaussian with factor ``chol``.

    With ``drop_det`` only the quadratic term survives (no determinant, no 2*pi).
    """
    q = -0.5 * mahalanobis_sq(chol, r)
    if drop_det:
        return q
    d = r.shape[-1]
    return q - 0.5 * chol_logdet(chol) - 0.5 * d * LOG_2PI


def quad_form(a, c):
    """``a @ c @ a^T`` with broadcasting over leading axes."""
    return a @ c @ np.swapaxes(a, -1, -2)


def moment_match(means, covs, weights=None):
    """Mean and covariance of a Gaussian mixture (batch of components on axis 0).

    ``covs`` may be a single matrix shared by all components.  The covariance
    is evaluated as ``sum w_j C_j + sum w_j (m_j - m)(m_j - m)^T``, which
    equals the raw second-moment expression but keeps a one-component mixture
    bit-exact.
    """
    means = np.asarray(means, dtype=float)
    covs = np.asarray(covs, dtype=float)
    n = means.shape[0]
    if n == 0:
        raise EmptyMixture("mixture has no components")
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float)
    mean = w @ means
    dev = means - mean
    spread = (w[:, None] * dev).T @ dev
    avg = covs if covs.ndim == 2 else np.tensordot(w, covs, axes=1)
    return mean, psd_repair(avg + spread, "condensed covariance")


# ----------------------------------------------------------------------------
# belief objects
# ----------------------------------------------------------------------------


def _vec(x):
    return np.atleast_1d(np.asarray(x, dtype=float))


def _mat(m, d):
    m = np.asarray(m, dtype=float)
    if m.ndim == 0 and d == 1:
        m = m.reshape(1, 1)
    return m


@dataclass(frozen=True)
class GaussianMoment:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = _vec(self.mean)
        cov = _mat(self.cov, mean.shape[0])
        if cov.shape != (mean.shape[0], mean.shape[0]):
            raise DimensionMismatch(f"mean has dim {mean.shape[0]} but cov is {cov.shape}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", symmetrize(cov))

    @property
    def dim(self):
        return self.mean.shape[0]


@dataclass(frozen=True)
class GaussianCanonical:
    xi: np.ndarray
    prec: np.ndarray

    def __post_init__(self):
        xi = _vec(self.xi)
        prec = _mat(self.prec, xi.shape[0])
        if prec.shape != (xi.shape[0], xi.shape[0]):
            raise DimensionMismatch(f"xi has dim {xi.shape[0]} but prec is {prec.shape}")
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "prec", symmetrize(prec))

    @property
    def dim(self):
        return self.xi.shape[0]

    @classmethod
    def uniform(cls, d):
        """Improper flat belief; the identity element of ``product_canonical``."""
        return cls(np.zeros(d), np.zeros((d, d)))


@dataclass(frozen=True)
class GaussianMixture:
    components: tuple
    weights: np.ndarray = field(default=None)

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise EmptyMixture("mixture has no components")
        d = comps[0].dim
        if any(c.dim != d for c in comps):
            raise DimensionMismatch("mixture components differ in dimension")
        if self.weights is None:
            w = np.full(len(comps), 1.0 / len(comps))
        else:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (len(comps),) or np.any(w < 0) or not np.isfinite(w).all():
                raise ValueError("mixture weights must be finite, nonnegative, one per component")
            total = w.sum()
            if total <= 0:
                raise ValueError("mixture weights sum to zero")
            w = w / total
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "weights", w)

    @property
    def dim(self):
        return self.components[0].dim


# ----------------------------------------------------------------------------
# operations
# ----------------------------------------------------------------------------


def to_canonical(g: GaussianMoment, counters=None) -> GaussianCanonical:
    chol = cholesky(g.cov, counters, "inversion", "to_canonical")
    prec = chol_inverse(chol)
    return GaussianCanonical(chol_solve(chol, g.mean), prec)


def to_moment(c: GaussianCanonical, counters=None) -> GaussianMoment:
    chol = cholesky(c.prec, counters, "inversion", "to_moment")
    return GaussianMoment(chol_solve(chol, c.xi), chol_inverse(chol))


def product_canonical(a: GaussianCanonical, b: GaussianCanonical) -> GaussianCanonical:
    """Product of two Gaussian factors, normalization constant dropped."""
    if a.dim != b.dim:
        raise DimensionMismatch(f"cannot multiply beliefs of dim {a.dim} and {b.dim}")
    return GaussianCanonical(a.xi + b.xi, a.prec + b.prec)


def affine_push(g: GaussianMoment, A, b, Q) -> GaussianMoment:
    """Distribution of ``A x + b + w`` for ``x ~ g`` and ``w ~ N(0, Q)``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = _vec(b)
    Q = _mat(Q, b.shape[0])
    m = A.shape[0]
    if A.shape[1] != g.dim or b.shape != (m,) or Q.shape != (m, m):
        raise DimensionMismatch(
            f"affine_push: A {A.shape}, b {b.shape}, Q {Q.shape} incompatible with dim {g.dim}"
        )
    return GaussianMoment(A @ g.mean + b, quad_form(A, g.cov) + Q)


def condense_mixture(m: GaussianMixture) -> GaussianMoment:
    """Single Gaussian with the mean and covariance of the mixture."""
    if len(m.components) == 1:
        return m.components[0]
    means = np.stack([c.mean for c in m.components])
    covs = np.stack([c.cov for c in m.components])
    mean, cov = moment_match(means, covs, m.weights)
    return GaussianMoment(mean, cov)


def log_correlation(a: GaussianMoment, b: GaussianMoment, raised_det_constant=False, counters=None):
    """Log of the overlap integral of two Gaussian densities.

    The overlap equals ``N(mean_a; mean_b, cov_a + cov_b)``.  With
    ``raised_det_constant`` the normalizer ``(2 pi det(cov_a + cov_b))^(-d/2)`` is
    used instead of the standard ``(2 pi)^(-d/2) det(cov_a + cov_b)^(-1/2)``;
    the two agree only for ``d == 1``.
    """
    if a.dim != b.dim:
        raise DimensionMismatch(f"cannot correlate beliefs of dim {a.dim} and {b.dim}")
    chol = cholesky(a.cov + b.cov, counters, "inversion", "correlation")
    d = a.dim
    q = -0.5 * mahalanobis_sq(chol, a.mean - b.mean)
    logdet = chol_logdet(chol)
    if raised_det_constant:
        return float(q - 0.5 * d * (LOG_2PI + logdet))
    return float(q - 0.5 * logdet - 0.5 * d * LOG_2PI)


def correlation(a: GaussianMoment, b: GaussianMoment, raised_det_constant=False, counters=None):
    return math.exp(log_correlation(a, b, raised_det_constant, counters))


def _sqrt_factor(cov, counters):
    if not np.any(cov):
        return np.zeros_like(cov)
    try:
        return cholesky(cov, counters, "cholesky", "sample")
    except NonPositiveDefinite:
        return cholesky(psd_repair(cov, "sample"), counters, "cholesky", "sample")


def sample(g: GaussianMoment, rng: np.random.Generator, counters=None, size=None):
    """Draw ``mean + L z`` with ``L`` the lower Cholesky factor of ``cov``.

    A zero covariance returns the mean exactly (the draws are still consumed
    so the stream position does not depend on the covariance).
    """
    chol = _sqrt_factor(g.cov, counters)
    if size is None:
        z = rng.standard_normal(g.dim)
        return g.mean + chol @ z
    z = rng.standard_normal((size, g.dim))
    return g.mean + z @ chol.T


def log_density(g: GaussianMoment, x, drop_det=False, counters=None):
    x = _vec(x)
    if x.shape != g.mean.shape:
        raise DimensionMismatch(f"point has dim {x.shape[0]}, belief has dim {g.dim}")
    chol = cholesky(g.cov, counters, "inversion", "log_density")
    return float(gaussian_logpdf(x - g.mean, chol, drop_det))
