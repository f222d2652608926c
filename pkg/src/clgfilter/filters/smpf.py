"""Simplified marginalized particle filters.

The per-particle Gaussian quantities that drive factorizations are replaced by
shared ones, obtained by moment matching the particle mixture or by evaluating
the model at the center of mass of the particle set:

* particle weights use one covariance, the moment-matched covariance of the
  per-particle predicted-measurement Gaussians;
* the linear measurement update runs once, on the moment-matched prior bank
  and with ``B``, ``h`` evaluated at the center of mass of the predicted set;
* new particles are drawn with one moment-matched predictive covariance;
* the pseudo-measurement update shares ``A_N`` evaluated at the center of mass
  of the resampled set, so its posterior covariance is shared while the means
  stay per particle.

Case 1 keeps per-particle predicted covariances for the next recursion; case 2
collapses them to one shared matrix.  By default that matrix is the average
of the per-particle covariances: the spread of the predicted means is added
later, when the bank is condensed for the measurement update, and adding it
here as well would count it twice per recursion.  ``smpf2_mean_spread=True``
selects the full moment-matched covariance instead.  Either way one Cholesky
factorization (for sampling) and three inversions are performed per recursion.
"""

from __future__ import annotations

import numpy as np

from ..gaussian import cholesky, moment_match, quad_form, symmetrize
from ..particles import center_of_mass
from .base import ParticleFilter
from .common import (
    BankState,
    StepDiagnostics,
    add_jitter,
    ess_from_log,
    innovation,
    linear_update,
    matvec,
    resample_step,
    safe_normalize,
    sample_predictions,
    weight_loglik,
)


class SimplifiedMPF(ParticleFilter):
    name = "smpf"

    def __init__(self, model, config=None, case=1, **overrides):
        if case not in (1, 2):
            raise ValueError("case must be 1 or 2")
        self.case = case
        self.shared_cov = case == 2
        self.name = f"smpf{case}"
        super().__init__(model, config, **overrides)

    def step(self, state: BankState, y, rng, counters):
        m, cfg = self.model, self.config
        l, X, eta, C = state.step, state.particles, state.means, state.covs
        n = X.shape[0]

        B, h = m.eval_B(l, X), m.eval_h(l, X)
        pred, S = innovation(eta, C, B, h, m.cov_e)
        if S.shape[0] != n:
            S = np.broadcast_to(S, (n,) + S.shape[1:])
        prior_w = np.exp(state.log_prior - np.max(state.log_prior))
        _, C1 = moment_match(pred, S, prior_w / prior_w.sum())
        chol_1 = cholesky(C1[None], counters, "inversion", "shared measurement covariance")
        lw, lost = safe_normalize(state.log_prior + weight_loglik(y, pred, chol_1, cfg.drop_det_in_weights), l)
        est_n = np.exp(lw) @ X
        diag = StepDiagnostics(ess_from_log(lw), lost)
        x_bar_pred = center_of_mass(X)

        idx = resample_step(lw, cfg, rng)
        if idx is not None:
            X, eta = X[idx], eta[idx]
            if C.shape[0] == n:
                C = C[idx]
            lw = np.full(n, -np.log(n))
        w = np.exp(lw)

        # one linear measurement update on the condensed prior
        eta_G, C_G = moment_match(eta, C[0] if C.shape[0] == 1 else C, w)
        B_bar, h_bar = m.eval_B(l, x_bar_pred[None]), m.eval_h(l, x_bar_pred[None])
        eta2, C2 = linear_update(eta_G[None], C_G[None], B_bar, h_bar, y, m.cov_e, self.W_e, cfg, counters)

        # particle generation with one condensed predictive covariance
        A_N, f_N = m.eval_A_N(l, X), m.eval_f_N(l, X)
        eta5n = matvec(A_N, eta2) + f_N
        C5n = symmetrize(quad_form(A_N, C2) + m.cov_w_N)
        _, C5n_bar = moment_match(eta5n, C5n, w)
        C5n_bar = add_jitter(C5n_bar[None], cfg)
        X_next = sample_predictions(eta5n, C5n_bar, rng, counters, n)

        # shared pseudo-measurement model at the center of mass of the resampled set
        A_bar = m.eval_A_N(l, center_of_mass(X)[None])
        eta4, C4 = self._pseudo_update(A_bar, f_N, X_next, eta2, C2, counters)
        eta4 = np.broadcast_to(eta4, (n, eta4.shape[-1]))
        est_l = w @ eta4

        eta5, C5, _, _ = self._linear_predict(l, X, eta4, C4)
        if C5.shape[0] != n:
            C5 = np.broadcast_to(C5, (n,) + C5.shape[1:])
        if self.case == 2:
            if cfg.smpf2_mean_spread:
                _, C_tilde = moment_match(eta5, C5, w)
            else:
                C_tilde = symmetrize(np.tensordot(w, C5, axes=1))
            C5 = C_tilde[None]
        return BankState(X_next, eta5, np.ascontiguousarray(C5), lw, l + 1), est_l, est_n, diag


class SMPF1(SimplifiedMPF):
    def __init__(self, model, config=None, **overrides):
        super().__init__(model, config, case=1, **overrides)


class SMPF2(SimplifiedMPF):
    def __init__(self, model, config=None, **overrides):
        super().__init__(model, config, case=2, **overrides)
