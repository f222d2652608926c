"""scikit-learn style wrappers around the filters.

A filter maps a measurement sequence ``Y`` (``T x P``) to state estimates
(``T x (D_L + D_N)``, linear components first), so it fits the transformer
interface: ``fit`` runs the filter and stores the estimates, ``transform``
returns them for a (possibly new) sequence.
"""

from __future__ import annotations

import copy

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .filters import ALGORITHMS, FilterConfig, make_filter
from .model import benchmark_model


class CLGFilter(BaseEstimator, TransformerMixin):
    """Run one of the particle filters as an estimator.

    Args:
        model: A :class:`~clgfilter.model.CLGModel`; the built-in benchmark
            system when ``None``.
        algorithm: ``"mpf"``, ``"smpf1"``, ``"smpf2"`` or ``"tf"``.
        n_particles: Number of particles.
        n_iterations: Turbo iterations (turbo filter only).
        resample_scheme: ``"systematic"`` or ``"multinomial"``.
        jitter_scale: Relative jitter on the predictive covariances.
        drop_det_in_weights: Drop the determinant factor of the particle weights.
        drop_D3_factor: Drop the normalizer of the turbo extrinsic weight.
        random_state: Seed or ``numpy.random.Generator``.

    Attributes:
        estimates_linear_: ``(T, D_L)`` linear-substate estimates from ``fit``.
        estimates_nonlinear_: ``(T, D_N)`` nonlinear-substate estimates.
        diagnostics_: Per-step diagnostics.
        counters_: Factorization counts and wall time of the last run.
    """

    def __init__(self, model=None, algorithm="mpf", n_particles=200, n_iterations=1,
                 resample_scheme="systematic", jitter_scale=1e-6, drop_det_in_weights=True,
                 drop_D3_factor=True, random_state=None):
        self.model = model
        self.algorithm = algorithm
        self.n_particles = n_particles
        self.n_iterations = n_iterations
        self.resample_scheme = resample_scheme
        self.jitter_scale = jitter_scale
        self.drop_det_in_weights = drop_det_in_weights
        self.drop_D3_factor = drop_D3_factor
        self.random_state = random_state

    def _build(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {sorted(ALGORITHMS)}, got {self.algorithm!r}")
        model = self.model if self.model is not None else benchmark_model()
        config = FilterConfig(
            n_particles=self.n_particles,
            n_iterations=self.n_iterations,
            resample_scheme=self.resample_scheme,
            jitter_scale=self.jitter_scale,
            drop_det_in_weights=self.drop_det_in_weights,
            drop_D3_factor=self.drop_D3_factor,
        )
        return model, make_filter(self.algorithm, model, config)

    def _run(self, Y):
        model, filt = self._build()
        Y = check_array(Y, ensure_2d=False, dtype=float)
        if Y.ndim == 1:
            Y = Y.reshape(-1, 1)
        if Y.shape[1] != model.dim_meas:
            raise ValueError(f"Y has {Y.shape[1]} columns, the model measures {model.dim_meas}")
        # A generator is copied so that fit and transform see the same stream.
        return filt.run(Y, random_state=copy.deepcopy(self.random_state))

    def fit(self, Y, y=None):
        out = self._run(Y)
        self.estimates_linear_ = out.est_linear
        self.estimates_nonlinear_ = out.est_nonlinear
        self.diagnostics_ = out.diagnostics
        self.counters_ = out.counters
        self.n_features_in_ = np.asarray(Y).reshape(len(Y), -1).shape[1]
        return self

    def transform(self, Y):
        check_is_fitted(self, "estimates_linear_")
        out = self._run(Y)
        return np.hstack([out.est_linear, out.est_nonlinear])

    def fit_transform(self, Y, y=None, **fit_params):
        self.fit(Y)
        return np.hstack([self.estimates_linear_, self.estimates_nonlinear_])
