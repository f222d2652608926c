"""Turbo filtering: iterative exchange of weight information between the substates.

Within one recursion the measurement weights and linear posteriors are
computed once, without resampling.  Iteration ``k`` then

* (``k >= 2``) forms the Gaussian belief of the pseudo-measurement
  ``z^N = x_{l+1}^L - A_L x_l^L`` from the previous iteration's linear
  beliefs, scores each particle by how well that belief agrees with the model
  density ``N(f_L, C_w^L)`` (the extrinsic weight ``p``), combines it with
  the measurement weight, and resamples;
* draws new successor particles and runs the pseudo-measurement and time
  updates of the linear beliefs, exactly as the marginalized filter does.

The first iteration has no extrinsic information (``p = 1``) and does not
resample, so a single-iteration run is the marginalized filter without
resampling.
"""

from __future__ import annotations

import numpy as np

from ..gaussian import LOG_2PI, chol_logdet, cholesky, mahalanobis_sq, psd_repair, quad_form, symmetrize
from .base import ParticleFilter
from .common import (
    CZ_NONE,
    CZ_PROJECT,
    CZ_REPAIR,
    BankState,
    StepDiagnostics,
    WeightDecomposition,
    ess_from_log,
    innovation,
    linear_update,
    matvec,
    resample_step,
    safe_normalize,
    weight_loglik,
)


def project_psd(cov):
    """Nearest positive semi-definite matrix (negative eigenvalues clipped to zero)."""
    lam, vec = np.linalg.eigh(cov)
    if np.all(lam >= 0):
        return cov, np.zeros(cov.shape[:-2], dtype=bool)
    clipped = np.any(lam < 0, axis=-1)
    fixed = symmetrize((vec * np.clip(lam, 0.0, None)[..., None, :]) @ np.swapaxes(vec, -1, -2))
    return np.where(clipped[..., None, None], fixed, cov), clipped


def z_n_message(A_L, eta2, C2, eta5, C5, policy=CZ_REPAIR):
    """Mean and covariance of ``z^N`` from the posterior and predicted linear beliefs.

    The covariance is a difference of two covariances and need not be positive
    semi-definite.  ``policy="repair"`` only absorbs roundoff and raises
    :class:`NonPositiveDefinite` otherwise; ``policy="project"`` clips negative
    eigenvalues to zero; ``policy="none"`` returns the raw difference.
    """
    eta_z = eta5 - matvec(A_L, eta2)
    C_z = symmetrize(C5 - quad_form(A_L, C2))
    if policy == CZ_REPAIR:
        C_z = psd_repair(C_z, "pseudo-measurement covariance")
    elif policy == CZ_PROJECT:
        C_z, _ = project_psd(C_z)
    elif policy != CZ_NONE:
        raise ValueError(f"unknown covariance policy {policy!r}")
    return eta_z, C_z


def z_n_message_alt(A_L, f_L, eta2, C2, eta4, C4, cov_w_L):
    """The same moments written through the pseudo-measurement posterior ``(eta4, C4)``."""
    eta_z = f_L + matvec(A_L, eta4 - eta2)
    C_z = symmetrize(cov_w_L + quad_form(A_L, C4 - C2))
    return eta_z, C_z


def extrinsic_log_weight(eta_z, C_z, f_L, cov_w_L, drop_D3=True, raised_det_constant=False, counters=None):
    """Log overlap of ``N(eta_z, C_z)`` with ``N(f_L, C_w^L)``, per particle.

    Only the sum ``C_z + C_w^L`` has to be positive definite, so ``C_z`` itself
    may be singular.  With ``drop_D3`` the normalizing factor is left out and
    only the exponent remains.
    """
    chol = cholesky(symmetrize(C_z + cov_w_L), counters, "inversion", "extrinsic covariance")
    q = -0.5 * mahalanobis_sq(chol, eta_z - f_L)
    if drop_D3:
        return q
    d = eta_z.shape[-1]
    if raised_det_constant:
        return q - 0.5 * d * chol_logdet(chol)
    return q - 0.5 * chol_logdet(chol) - 0.5 * d * LOG_2PI


class TurboFilter(ParticleFilter):
    name = "tf"

    def __init__(self, model, config=None, **overrides):
        overrides.setdefault("n_iterations", (config.n_iterations if config else 2))
        super().__init__(model, config, **overrides)

    def step(self, state: BankState, y, rng, counters):
        m, cfg = self.model, self.config
        l, X, eta, C = state.step, state.particles, state.means, state.covs
        n = X.shape[0]

        B, h = m.eval_B(l, X), m.eval_h(l, X)
        pred, S = innovation(eta, C, B, h, m.cov_e)
        chol_S = cholesky(S, counters, "inversion", "measurement covariance")
        L_y = weight_loglik(y, pred, chol_S, cfg.drop_det_in_weights)
        L_a = state.log_prior
        lw, lost = safe_normalize(L_a + L_y, l)
        eta2, C2 = linear_update(eta, C, B, h, y, m.cov_e, self.W_e, cfg, counters, chol_S)

        diag = StepDiagnostics(ess_from_log(lw), lost)
        anc = np.arange(n)
        Xk, eta2k, C2k = X, eta2, C2
        est_n = np.exp(lw) @ X
        for k in range(1, cfg.n_iterations + 1):
            if k == 1:
                diag.decompositions.append(WeightDecomposition(L_a, L_y, np.zeros(n)))
            else:
                eta_z, C_z = z_n_message(A_L, eta2k, C2k, eta5, C5, policy=cfg.cz_policy)
                L_z = extrinsic_log_weight(eta_z, C_z, f_L, m.cov_w_L, cfg.drop_D3_factor,
                                           cfg.raised_det_constant, counters)
                base, lost_b = safe_normalize(L_a[anc] + L_y[anc], l)
                lw, lost_k = safe_normalize(base + L_z, l)
                diag.tracking_loss |= lost_b or lost_k
                diag.decompositions.append(WeightDecomposition(L_a[anc], L_y[anc], L_z))
                est_n = np.exp(lw) @ Xk
                diag.ess = ess_from_log(lw)
                idx = resample_step(lw, cfg, rng)
                if idx is not None:
                    anc, Xk, eta2k = anc[idx], Xk[idx], eta2k[idx]
                    C2k = C2k[idx] if C2k.shape[0] == n else C2k
                    lw = np.full(n, -np.log(n))
            X_next, A_N, f_N = self._predict(l, Xk, eta2k, C2k, rng, counters)
            eta4, C4 = self._pseudo_update(A_N, f_N, X_next, eta2k, C2k, counters)
            eta5, C5, A_L, f_L = self._linear_predict(l, Xk, eta4, C4)

        est_l = np.exp(lw) @ eta4
        return BankState(X_next, eta5, C5, lw, l + 1), est_l, est_n, diag


TF = TurboFilter
