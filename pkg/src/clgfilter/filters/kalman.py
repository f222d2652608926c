"""Exact Kalman filter over the joint state of a fully linear model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..model import LinearGaussianModel


@dataclass
class KalmanResult:
    """Filtered posteriors ``p(x_l | y_1..y_l)`` over ``(x^L, x^N)``."""

    means: np.ndarray
    covs: np.ndarray
    dim_linear: int

    @property
    def linear_means(self):
        return self.means[:, : self.dim_linear]

    @property
    def nonlinear_means(self):
        return self.means[:, self.dim_linear:]

    @property
    def linear_std(self):
        d = self.dim_linear
        return np.sqrt(np.diagonal(self.covs, axis1=1, axis2=2)[:, :d])


def kalman_filter(F, H, Q, R, m0, P0, measurements):
    """Textbook predict/update recursion; the first measurement updates the prior directly."""
    Y = np.atleast_2d(np.asarray(measurements, dtype=float))
    T, d = Y.shape[0], m0.shape[0]
    means, covs = np.empty((T, d)), np.empty((T, d, d))
    m, P = m0.astype(float), P0.astype(float)
    I = np.eye(d)
    for i in range(T):
        if i > 0:
            m = F @ m
            P = F @ P @ F.T + Q
        S = H @ P @ H.T + R
        K = np.linalg.solve(S, H @ P).T
        m = m + K @ (Y[i] - H @ m)
        IKH = I - K @ H
        P = IKH @ P @ IKH.T + K @ R @ K.T
        P = 0.5 * (P + P.T)
        means[i], covs[i] = m, P
    return means, covs


def kalman_oracle(model: LinearGaussianModel, measurements) -> KalmanResult:
    F, H, Q, R, m0, P0 = model.joint()
    means, covs = kalman_filter(F, H, Q, R, m0, P0, measurements)
    return KalmanResult(means, covs, model.A_L.shape[0])
