"""Conditionally linear Gaussian state-space models.

State ``x_l = (x_l^L, x_l^N)`` evolves as::

    x_{l+1}^L = A_L(x_l^N) x_l^L + f_L(x_l^N) + w_l^L
    x_{l+1}^N = f_N(x_l^N) + A_N(x_l^N) x_l^L + w_l^N
    y_l       = h(x_l^N) + B(x_l^N) x_l^L + e_l

Time indices start at ``l = 1``; arrays returned by :func:`simulate` are
0-based, so row ``l - 1`` holds step ``l``.

Model callables take ``(l, x)``.  With ``batched=False`` (the default) ``x``
is one nonlinear state vector; with ``batched=True`` ``x`` is an
``(n, D_N)`` array and the callable returns stacked outputs.  The filters
always go through the batched ``eval_*`` accessors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ModelValidationError
from .gaussian import GaussianMoment

LINEAR_SIDE = "linear"
NONLINEAR_SIDE = "nonlinear"

BENCHMARK_A_L = np.array([[0.8, 0.2, 0.0], [0.0, 0.7, -0.2], [0.0, 0.2, 0.7]])
BENCHMARK_A_N = np.array([[0.9, 0.0, 0.0]])
BENCHMARK_B = np.array([[0.0, 0.0, 0.0], [1.0, -1.0, 1.0]])


def _check_psd(name, m, d):
    m = np.asarray(m, dtype=float)
    if m.shape != (d, d):
        raise ModelValidationError(f"{name} must be {d}x{d}, got {m.shape}")
    if not np.allclose(m, m.T, rtol=1e-12, atol=0.0):
        raise ModelValidationError(f"{name} is not symmetric")
    if np.linalg.eigvalsh(m)[0] < -1e-12 * max(np.trace(m), 1.0):
        raise ModelValidationError(f"{name} is not positive semi-definite")
    return 0.5 * (m + m.T)


@dataclass(frozen=True)
class CLGModel:
    dim_linear: int
    dim_nonlinear: int
    dim_meas: int
    A_L: Callable
    f_L: Callable
    A_N: Callable
    f_N: Callable
    B: Callable
    h: Callable
    cov_w_L: np.ndarray
    cov_w_N: np.ndarray
    cov_e: np.ndarray
    init_linear: GaussianMoment
    init_nonlinear_sampler: Optional[Callable] = None
    init_nonlinear: Optional[GaussianMoment] = None
    batched: bool = False
    name: str = "custom"

    def __post_init__(self):
        dl, dn, p = self.dim_linear, self.dim_nonlinear, self.dim_meas
        for label, v in (("dim_linear", dl), ("dim_nonlinear", dn), ("dim_meas", p)):
            if int(v) != v or v < 1:
                raise ModelValidationError(f"{label} must be a positive integer")
        object.__setattr__(self, "cov_w_L", _check_psd("cov_w_L", self.cov_w_L, dl))
        object.__setattr__(self, "cov_w_N", _check_psd("cov_w_N", self.cov_w_N, dn))
        object.__setattr__(self, "cov_e", _check_psd("cov_e", self.cov_e, p))
        if self.init_linear.dim != dl:
            raise ModelValidationError("init_linear dimension differs from dim_linear")
        if self.init_nonlinear is not None and self.init_nonlinear.dim != dn:
            raise ModelValidationError("init_nonlinear dimension differs from dim_nonlinear")
        if self.init_nonlinear_sampler is None and self.init_nonlinear is None:
            raise ModelValidationError("need init_nonlinear or init_nonlinear_sampler")
        self.validate()

    # -- batched evaluation ------------------------------------------------

    def _eval(self, fn, l, x, shape):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.batched:
            out = np.asarray(fn(l, x), dtype=float)
        else:
            out = np.stack([np.asarray(fn(l, xi), dtype=float) for xi in x])
        out = out.reshape((x.shape[0],) + shape) if out.size == x.shape[0] * int(np.prod(shape)) else out
        if out.shape != (x.shape[0],) + shape:
            raise ModelValidationError(
                f"{fn.__name__ if hasattr(fn, '__name__') else fn} returned shape "
                f"{out.shape[1:]}, expected {shape}"
            )
        return out

    def eval_A_L(self, l, x):
        return self._eval(self.A_L, l, x, (self.dim_linear, self.dim_linear))

    def eval_f_L(self, l, x):
        return self._eval(self.f_L, l, x, (self.dim_linear,))

    def eval_A_N(self, l, x):
        return self._eval(self.A_N, l, x, (self.dim_nonlinear, self.dim_linear))

    def eval_f_N(self, l, x):
        return self._eval(self.f_N, l, x, (self.dim_nonlinear,))

    def eval_B(self, l, x):
        return self._eval(self.B, l, x, (self.dim_meas, self.dim_linear))

    def eval_h(self, l, x):
        return self._eval(self.h, l, x, (self.dim_meas,))

    def validate(self, n_probe=5, seed=0):
        """Probe every callable on a few random nonlinear states and check shapes."""
        rng = np.random.default_rng(seed)
        probe = rng.standard_normal((n_probe, self.dim_nonlinear))
        for ev in (self.eval_A_L, self.eval_f_L, self.eval_A_N, self.eval_f_N, self.eval_B, self.eval_h):
            try:
                out = ev(1, probe)
            except ModelValidationError:
                raise
            except Exception as exc:  # noqa: BLE001 - surfaced as a validation failure
                raise ModelValidationError(f"{ev.__name__} failed on probe states: {exc}") from exc
            if not np.all(np.isfinite(out)):
                raise ModelValidationError(f"{ev.__name__} returned non-finite values")

    def sample_init_nonlinear(self, rng, n):
        if self.init_nonlinear_sampler is not None:
            return np.stack([np.atleast_1d(np.asarray(self.init_nonlinear_sampler(rng), dtype=float))
                             for _ in range(n)])
        g = self.init_nonlinear
        chol = np.linalg.cholesky(g.cov) if np.any(g.cov) else np.zeros_like(g.cov)
        return g.mean + rng.standard_normal((n, self.dim_nonlinear)) @ chol.T


@dataclass
class Trajectory:
    linear_states: np.ndarray
    nonlinear_states: np.ndarray
    measurements: np.ndarray
    noise: Optional[dict] = field(default=None, repr=False)

    def __post_init__(self):
        n = {len(self.linear_states), len(self.nonlinear_states), len(self.measurements)}
        if len(n) != 1:
            raise ValueError("trajectory arrays differ in length")

    def __len__(self):
        return len(self.measurements)


@dataclass(frozen=True)
class PseudoMeasurement:
    value: np.ndarray
    kind: str


def _noise_factor(cov):
    if not np.any(cov):
        return np.zeros_like(cov)
    w, v = np.linalg.eigh(cov)
    return v * np.sqrt(np.clip(w, 0.0, None))


def simulate(model: CLGModel, T: int, rng: np.random.Generator, record_noise=False) -> Trajectory:
    """Draw one joint state/measurement trajectory of length ``T``.

    Draw order: initial linear state, initial nonlinear state, then per step
    measurement noise, linear process noise, nonlinear process noise.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    dl, dn, p = model.dim_linear, model.dim_nonlinear, model.dim_meas
    g = model.init_linear
    sq_l0 = _noise_factor(g.cov)
    x_l = g.mean + sq_l0 @ rng.standard_normal(dl)
    x_n = model.sample_init_nonlinear(rng, 1)[0]
    sq_e, sq_wl, sq_wn = (_noise_factor(c) for c in (model.cov_e, model.cov_w_L, model.cov_w_N))

    xs_l = np.empty((T, dl))
    xs_n = np.empty((T, dn))
    ys = np.empty((T, p))
    rec = {"e": np.zeros((T, p)), "w_L": np.zeros((T, dl)), "w_N": np.zeros((T, dn))}
    for i in range(T):
        l = i + 1
        xs_l[i], xs_n[i] = x_l, x_n
        xn = x_n[None, :]
        e = sq_e @ rng.standard_normal(p)
        ys[i] = model.eval_h(l, xn)[0] + model.eval_B(l, xn)[0] @ x_l + e
        rec["e"][i] = e
        if i == T - 1:
            break
        w_l = sq_wl @ rng.standard_normal(dl)
        w_n = sq_wn @ rng.standard_normal(dn)
        rec["w_L"][i], rec["w_N"][i] = w_l, w_n
        x_l, x_n = (
            model.eval_A_L(l, xn)[0] @ x_l + model.eval_f_L(l, xn)[0] + w_l,
            model.eval_f_N(l, xn)[0] + model.eval_A_N(l, xn)[0] @ x_l + w_n,
        )
    return Trajectory(xs_l, xs_n, ys, rec if record_noise else None)


def pseudo_z_L(model: CLGModel, l, x_N_now, x_N_next) -> PseudoMeasurement:
    """Pseudo-measurement of the linear state implied by the nonlinear update."""
    x_now = np.atleast_1d(np.asarray(x_N_now, dtype=float))
    x_next = np.atleast_1d(np.asarray(x_N_next, dtype=float))
    if x_now.shape != (model.dim_nonlinear,) or x_next.shape != x_now.shape:
        raise ValueError("nonlinear states must have dimension dim_nonlinear")
    value = x_next - model.eval_f_N(l, x_now[None])[0]
    return PseudoMeasurement(value, LINEAR_SIDE)


def pseudo_z_N(model: CLGModel, l, x_L_now, x_L_next, x_N_now) -> PseudoMeasurement:
    """Pseudo-measurement of the nonlinear state implied by the linear update."""
    xl = np.atleast_1d(np.asarray(x_L_now, dtype=float))
    xl_next = np.atleast_1d(np.asarray(x_L_next, dtype=float))
    xn = np.atleast_1d(np.asarray(x_N_now, dtype=float))
    if xl.shape != (model.dim_linear,) or xl_next.shape != xl.shape:
        raise ValueError("linear states must have dimension dim_linear")
    if xn.shape != (model.dim_nonlinear,):
        raise ValueError("nonlinear state must have dimension dim_nonlinear")
    value = xl_next - model.eval_A_L(l, xn[None])[0] @ xl
    return PseudoMeasurement(value, NONLINEAR_SIDE)


# ----------------------------------------------------------------------------
# built-in models
# ----------------------------------------------------------------------------


def _bench_A_L(l, x):
    return np.broadcast_to(BENCHMARK_A_L, (x.shape[0], 3, 3))


def _bench_f_L(l, x):
    s = x[:, 0]
    return np.stack([np.cos(s), -np.sin(s), 0.5 * np.sin(2.0 * s)], axis=1)


def _bench_A_N(l, x):
    return np.broadcast_to(BENCHMARK_A_N, (x.shape[0], 1, 3))


def _bench_f_N(l, x):
    return np.arctan(x)


def _bench_B(l, x):
    return np.broadcast_to(BENCHMARK_B, (x.shape[0], 2, 3))


def _bench_h(l, x):
    s = x[:, 0]
    return np.stack([0.1 * s * s * np.sign(s), np.zeros_like(s)], axis=1)


def benchmark_model(sigma_w_L=5e-3, sigma_w_N=5e-3, sigma_e=1e-2,
                    init_var_linear=1e-2, init_var_nonlinear=1e-2) -> CLGModel:
    """Three linear states, one nonlinear state, two measurements."""
    for key, v in (("sigma_w_L", sigma_w_L), ("sigma_w_N", sigma_w_N), ("sigma_e", sigma_e),
                   ("init_var_linear", init_var_linear), ("init_var_nonlinear", init_var_nonlinear)):
        if not v > 0:
            raise ModelValidationError(f"{key} must be positive, got {v}")
    return CLGModel(
        dim_linear=3, dim_nonlinear=1, dim_meas=2,
        A_L=_bench_A_L, f_L=_bench_f_L, A_N=_bench_A_N, f_N=_bench_f_N, B=_bench_B, h=_bench_h,
        cov_w_L=sigma_w_L ** 2 * np.eye(3),
        cov_w_N=sigma_w_N ** 2 * np.eye(1),
        cov_e=sigma_e ** 2 * np.eye(2),
        init_linear=GaussianMoment(np.zeros(3), init_var_linear * np.eye(3)),
        init_nonlinear=GaussianMoment(np.zeros(1), init_var_nonlinear * np.eye(1)),
        batched=True,
        name="benchmark",
    )


@dataclass(frozen=True)
class LinearGaussianModel:
    """A CLG model whose every map is linear and time invariant.

    ``f_L(x) = F_L x``, ``f_N(x) = F_N x``, ``h(x) = H x``; used as a test
    bed where the exact Kalman filter over the joint state is available.
    """

    A_L: np.ndarray
    F_L: np.ndarray
    A_N: np.ndarray
    F_N: np.ndarray
    B: np.ndarray
    H: np.ndarray
    cov_w_L: np.ndarray
    cov_w_N: np.ndarray
    cov_e: np.ndarray
    init_linear: GaussianMoment
    init_nonlinear: GaussianMoment

    def __post_init__(self):
        for name in ("A_L", "F_L", "A_N", "F_N", "B", "H", "cov_w_L", "cov_w_N", "cov_e"):
            object.__setattr__(self, name, np.atleast_2d(np.asarray(getattr(self, name), dtype=float)))

    def to_clg(self) -> CLGModel:
        A_L, F_L, A_N, F_N, B, H = self.A_L, self.F_L, self.A_N, self.F_N, self.B, self.H
        dl, dn, p = A_L.shape[0], F_N.shape[0], B.shape[0]
        return CLGModel(
            dim_linear=dl, dim_nonlinear=dn, dim_meas=p,
            A_L=lambda l, x: np.broadcast_to(A_L, (x.shape[0], dl, dl)),
            f_L=lambda l, x: x @ F_L.T,
            A_N=lambda l, x: np.broadcast_to(A_N, (x.shape[0], dn, dl)),
            f_N=lambda l, x: x @ F_N.T,
            B=lambda l, x: np.broadcast_to(B, (x.shape[0], p, dl)),
            h=lambda l, x: x @ H.T,
            cov_w_L=self.cov_w_L, cov_w_N=self.cov_w_N, cov_e=self.cov_e,
            init_linear=self.init_linear, init_nonlinear=self.init_nonlinear,
            batched=True, name="linear",
        )

    def joint(self):
        """Transition, observation and covariance matrices over ``(x^L, x^N)``."""
        F = np.block([[self.A_L, self.F_L], [self.A_N, self.F_N]])
        H = np.hstack([self.B, self.H])
        dl, dn = self.A_L.shape[0], self.F_N.shape[0]
        Q = np.zeros((dl + dn, dl + dn))
        Q[:dl, :dl] = self.cov_w_L
        Q[dl:, dl:] = self.cov_w_N
        m0 = np.concatenate([self.init_linear.mean, self.init_nonlinear.mean])
        P0 = np.zeros_like(Q)
        P0[:dl, :dl] = self.init_linear.cov
        P0[dl:, dl:] = self.init_nonlinear.cov
        return F, H, Q, self.cov_e, m0, P0


def default_linear_model() -> LinearGaussianModel:
    """Small, stable, well-observed linear test model (D_L=2, D_N=1, P=2)."""
    return LinearGaussianModel(
        A_L=[[0.8, 0.1], [0.0, 0.7]],
        F_L=[[0.2], [0.1]],
        A_N=[[0.2, 0.0]],
        F_N=[[0.6]],
        B=[[1.0, 0.0], [0.0, 0.0]],
        H=[[0.0], [1.0]],
        cov_w_L=0.01 * np.eye(2),
        cov_w_N=[[0.01]],
        cov_e=0.01 * np.eye(2),
        init_linear=GaussianMoment(np.zeros(2), 0.1 * np.eye(2)),
        init_nonlinear=GaussianMoment(np.zeros(1), 0.1 * np.eye(1)),
    )
