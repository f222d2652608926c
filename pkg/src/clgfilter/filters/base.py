"""Driver shared by the particle filters."""

from __future__ import annotations

import time

import numpy as np

from ..gaussian import OpCounters, symmetrize, quad_form
from ..model import CLGModel
from .common import (
    FilterConfig,
    FilterOutput,
    add_jitter,
    as_rng,
    check_measurements,
    init_bank,
    linear_update,
    matvec,
    noise_precisions,
    sample_predictions,
)


class ParticleFilter:
    """Base class: owns the model, the configuration and the time loop.

    Subclasses implement :meth:`step`, mapping the bank for step ``l`` and the
    measurement ``y_l`` to the bank for step ``l + 1`` plus the estimates of
    ``x_l``.
    """

    name = "base"
    shared_cov = False

    def __init__(self, model: CLGModel, config: FilterConfig | None = None, **overrides):
        config = config or FilterConfig()
        if overrides:
            config = config.replace(**overrides)
        self.model = model
        self.config = config.validate()
        self.W_e, self.W_wN, self.W_wL = noise_precisions(model)

    def initialize(self, rng):
        return init_bank(self.model, self.config, rng, shared_cov=self.shared_cov)

    def step(self, state, y, rng, counters):
        raise NotImplementedError

    def run(self, measurements, random_state=None, timing=True) -> FilterOutput:
        """Filter a whole measurement sequence (rows are time steps ``l = 1..T``)."""
        Y = check_measurements(self.model, measurements)
        seed = self.config.seed if random_state is None else random_state
        rng = as_rng(seed)
        state = self.initialize(rng)
        counters = OpCounters()
        T = Y.shape[0]
        est_l = np.empty((T, self.model.dim_linear))
        est_n = np.empty((T, self.model.dim_nonlinear))
        diags = []
        t0 = time.perf_counter() if timing else None
        for i in range(T):
            state, est_l[i], est_n[i], diag = self.step(state, Y[i], rng, counters)
            diags.append(diag)
        if timing:
            counters.wall_time = time.perf_counter() - t0
        return FilterOutput(est_l, est_n, diags, counters)

    # -- pieces reused by several schedules --------------------------------

    def _predict(self, l, X, eta2, C2, rng, counters):
        """Nonlinear time update: per-particle predictive Gaussians and one draw each."""
        m = self.model
        A_N, f_N = m.eval_A_N(l, X), m.eval_f_N(l, X)
        mean = matvec(A_N, eta2) + f_N
        cov = add_jitter(symmetrize(quad_form(A_N, C2) + m.cov_w_N), self.config)
        return sample_predictions(mean, cov, rng, counters, X.shape[0]), A_N, f_N

    def _pseudo_update(self, A, f_N, X_next, eta2, C2, counters):
        """Condition on ``z = x_{l+1}^N - f_N(x_l^N) = A x_l^L + w^N``."""
        m = self.model
        z = X_next - f_N
        offset = np.zeros(z.shape[-1])
        return linear_update(eta2, C2, A, offset, z, m.cov_w_N, self.W_wN, self.config, counters)

    def _linear_predict(self, l, X, eta4, C4):
        m = self.model
        A_L, f_L = m.eval_A_L(l, X), m.eval_f_L(l, X)
        eta5 = matvec(A_L, eta4) + f_L
        C5 = symmetrize(quad_form(A_L, C4) + m.cov_w_L)
        return eta5, C5, A_L, f_L
