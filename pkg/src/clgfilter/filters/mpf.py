"""Marginalized particle filter."""

from __future__ import annotations

import numpy as np

from ..gaussian import cholesky
from .base import ParticleFilter
from .common import (
    BankState,
    StepDiagnostics,
    ess_from_log,
    innovation,
    linear_update,
    resample_step,
    safe_normalize,
    weight_loglik,
)


class MarginalizedParticleFilter(ParticleFilter):
    """Particles for the nonlinear substate, one Kalman belief per particle for the rest.

    Each recursion runs, in order:

    1. particle weighting with the marginal measurement likelihood
       ``N(y; B eta + h, B C B^T + C_e)``, normalization, the nonlinear
       estimate, and resampling (every recursion);
    2. the measurement update of every linear belief;
    3. the nonlinear time update, drawing one successor per particle;
    4. the linear update on the pseudo-measurement ``x_{l+1}^N - f_N`` and
       the linear time update.

    Example:
        >>> from clgfilter import benchmark_model, simulate, MarginalizedParticleFilter
        >>> import numpy as np
        >>> traj = simulate(benchmark_model(), 50, np.random.default_rng(1))
        >>> out = MarginalizedParticleFilter(benchmark_model(), n_particles=100).run(
        ...     traj.measurements, random_state=2)
        >>> out.est_linear.shape
        (50, 3)
    """

    name = "mpf"

    def step(self, state: BankState, y, rng, counters):
        m, cfg = self.model, self.config
        l, X, eta, C = state.step, state.particles, state.means, state.covs

        B, h = m.eval_B(l, X), m.eval_h(l, X)
        pred, S = innovation(eta, C, B, h, m.cov_e)
        chol_S = cholesky(S, counters, "inversion", "measurement covariance")
        lw, lost = safe_normalize(state.log_prior + weight_loglik(y, pred, chol_S, cfg.drop_det_in_weights), l)
        est_n = np.exp(lw) @ X
        diag = StepDiagnostics(ess_from_log(lw), lost)

        idx = resample_step(lw, cfg, rng)
        if idx is not None:
            X, eta, C, B, h, chol_S = X[idx], eta[idx], C[idx], B[idx], h[idx], chol_S[idx]
            lw = np.full(len(X), -np.log(len(X)))

        eta2, C2 = linear_update(eta, C, B, h, y, m.cov_e, self.W_e, cfg, counters, chol_S)
        X_next, A_N, f_N = self._predict(l, X, eta2, C2, rng, counters)
        eta4, C4 = self._pseudo_update(A_N, f_N, X_next, eta2, C2, counters)
        est_l = np.exp(lw) @ eta4
        eta5, C5, _, _ = self._linear_predict(l, X, eta4, C4)
        return BankState(X_next, eta5, C5, lw, l + 1), est_l, est_n, diag


MPF = MarginalizedParticleFilter
