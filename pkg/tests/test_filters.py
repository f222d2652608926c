import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from clgfilter.errors import ConfigError, NonPositiveDefinite
from clgfilter.filters import (
    ALGORITHMS,
    FilterConfig,
    TrackingLossWarning,
    WeightDecomposition,
    extrinsic_log_weight,
    kalman_filter,
    kalman_oracle,
    make_filter,
    z_n_message,
    z_n_message_alt,
)
from clgfilter.filters.common import conditioning_update, canonical_update, safe_normalize
from clgfilter.filters.tf import project_psd
from clgfilter.gaussian import OpCounters
from clgfilter.model import benchmark_model, default_linear_model, simulate

from .conftest import random_spd


@pytest.fixture(scope="module")
def bench_traj():
    return simulate(benchmark_model(), 60, np.random.default_rng(7))


def _run(alg, model, Y, seed=11, **cfg):
    return make_filter(alg, model, FilterConfig(**cfg)).run(Y, np.random.default_rng(seed))


# ---------------------------------------------------------------------------
# exact equivalences
# ---------------------------------------------------------------------------


def test_single_particle_simplified_filter_equals_marginalized(bench_traj):
    model = benchmark_model()
    a = _run("smpf1", model, bench_traj.measurements, n_particles=1)
    b = _run("mpf", model, bench_traj.measurements, n_particles=1)
    assert np.array_equal(a.est_linear, b.est_linear)
    assert np.array_equal(a.est_nonlinear, b.est_nonlinear)


def test_one_turbo_iteration_equals_marginalized_without_resampling(bench_traj):
    model = benchmark_model()
    a = _run("tf", model, bench_traj.measurements, n_particles=40, n_iterations=1)
    b = _run("mpf", model, bench_traj.measurements, n_particles=40, resample=False)
    assert np.array_equal(a.est_linear, b.est_linear)
    assert np.array_equal(a.est_nonlinear, b.est_nonlinear)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.integers(1, 3))
def test_gain_and_canonical_updates_agree(seed, d, p):
    rng = np.random.default_rng(seed)
    n = 3
    means = rng.standard_normal((n, d))
    covs = np.stack([random_spd(rng, d) for _ in range(n)])
    H = rng.standard_normal((n, p, d))
    R = random_spd(rng, p, 0.5)
    obs = rng.standard_normal(p)
    S = H @ covs @ np.swapaxes(H, -1, -2) + R
    resid = obs - (H @ means[..., None])[..., 0]
    g_m, g_c = conditioning_update(means, covs, H, resid, np.linalg.cholesky(S), R)
    c_m, c_c = canonical_update(means, covs, H, obs, np.linalg.inv(R), OpCounters())
    assert np.allclose(g_m, c_m, atol=1e-8) and np.allclose(g_c, c_c, atol=1e-8)


def test_canonical_form_filter_matches_gain_form(bench_traj):
    model = benchmark_model()
    a = _run("mpf", model, bench_traj.measurements, n_particles=30)
    b = _run("mpf", model, bench_traj.measurements, n_particles=30, linear_form="canonical")
    assert np.allclose(a.est_linear, b.est_linear, atol=1e-6)


def _z_message_inputs(rng, n, dl=3, dn=1):
    A_L = rng.standard_normal((n, dl, dl))
    A_N = rng.standard_normal((n, dn, dl))
    f_L = rng.standard_normal((n, dl))
    eta2 = rng.standard_normal((n, dl))
    C2 = np.stack([random_spd(rng, dl, 0.1) for _ in range(n)])
    Cw_N = random_spd(rng, dn, 0.05)
    Cw_L = random_spd(rng, dl, 0.05)
    z = rng.standard_normal((n, dn))
    # conditioning of N(eta2, C2) on z = A_N x + w_N, written out directly
    eta4, C4 = np.empty_like(eta2), np.empty_like(C2)
    for j in range(n):
        S = A_N[j] @ C2[j] @ A_N[j].T + Cw_N
        K = C2[j] @ A_N[j].T @ np.linalg.inv(S)
        eta4[j] = eta2[j] + K @ (z[j] - A_N[j] @ eta2[j])
        C4[j] = C2[j] - K @ S @ K.T
    eta5 = np.einsum("nij,nj->ni", A_L, eta4) + f_L
    C5 = A_L @ C4 @ np.swapaxes(A_L, 1, 2) + Cw_L
    return A_L, f_L, eta2, C2, eta4, C4, eta5, C5, Cw_L


def test_z_message_forms_agree():
    rng = np.random.default_rng(0)
    A_L, f_L, eta2, C2, eta4, C4, eta5, C5, Cw_L = _z_message_inputs(rng, 1000)
    m1, c1 = z_n_message(A_L, eta2, C2, eta5, C5, policy="none")
    m2, c2 = z_n_message_alt(A_L, f_L, eta2, C2, eta4, C4, Cw_L)
    assert np.max(np.abs(m1 - m2)) < 1e-10
    assert np.max(np.abs(c1 - c2)) < 1e-10


def test_indefinite_z_covariance_policies():
    C = np.diag([1.0, -0.5])[None]
    with pytest.raises(NonPositiveDefinite):
        z_n_message(np.zeros((1, 2, 2)), np.zeros((1, 2)), np.zeros((1, 2, 2)), np.zeros((1, 2)), C)
    _, proj = z_n_message(np.zeros((1, 2, 2)), np.zeros((1, 2)), np.zeros((1, 2, 2)),
                          np.zeros((1, 2)), C, policy="project")
    assert np.allclose(proj[0], np.diag([1.0, 0.0]))
    fixed, mask = project_psd(np.stack([np.eye(2), C[0]]))
    assert list(mask) == [False, True] and np.array_equal(fixed[0], np.eye(2))
    with pytest.raises(ValueError):
        z_n_message(np.zeros((1, 2, 2)), np.zeros((1, 2)), np.zeros((1, 2, 2)), np.zeros((1, 2)), C,
                    policy="clip")


def test_extrinsic_weight_with_normalizer_is_a_log_density():
    rng = np.random.default_rng(3)
    eta_z, f_L = rng.standard_normal((1, 3)), rng.standard_normal((1, 3))
    C_z, Cw = random_spd(rng, 3)[None], random_spd(rng, 3)
    full = extrinsic_log_weight(eta_z, C_z, f_L, Cw, drop_D3=False)
    ref = stats.multivariate_normal(f_L[0], C_z[0] + Cw).logpdf(eta_z[0])
    assert full[0] == pytest.approx(ref)
    quad = extrinsic_log_weight(eta_z, C_z, f_L, Cw)
    raised = extrinsic_log_weight(eta_z, C_z, f_L, Cw, drop_D3=False, raised_det_constant=True)
    logdet = np.linalg.slogdet(C_z[0] + Cw)[1]
    assert raised[0] == pytest.approx(quad[0] - 1.5 * logdet)


# ---------------------------------------------------------------------------
# complexity counters
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("n", [1, 7, 50])
def test_factorization_counts_per_recursion(bench_traj, n):
    model = benchmark_model()
    Y = bench_traj.measurements
    T = len(Y)
    mpf = _run("mpf", model, Y, n_particles=n).counters
    assert mpf.cholesky_count == n * T
    assert mpf.inversion_count >= 2 * n * T
    for alg in ("smpf1", "smpf2"):
        c = _run(alg, model, Y, n_particles=n).counters
        assert c.cholesky_count == T
        assert c.inversion_count <= 3 * T
    tf = _run("tf", model, Y, n_particles=n, n_iterations=2).counters
    assert tf.cholesky_count == 2 * n * T


# ---------------------------------------------------------------------------
# behaviour
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("alg", sorted(ALGORITHMS))
def test_filters_are_deterministic_and_track(bench_traj, alg):
    model = benchmark_model()
    a = _run(alg, model, bench_traj.measurements, n_particles=100)
    b = _run(alg, model, bench_traj.measurements, n_particles=100)
    assert np.array_equal(a.est_linear, b.est_linear)
    assert np.array_equal(a.est_nonlinear, b.est_nonlinear)
    c = _run(alg, model, bench_traj.measurements, seed=12, n_particles=100)
    assert not np.array_equal(a.est_nonlinear, c.est_nonlinear)
    rmse_n = np.sqrt(np.mean((a.est_nonlinear - bench_traj.nonlinear_states) ** 2))
    assert rmse_n < 0.05
    assert np.all((a.ess >= 1.0 - 1e-9) & (a.ess <= 100 + 1e-9))


def test_turbo_weight_decomposition(bench_traj):
    out = _run("tf", benchmark_model(), bench_traj.measurements, n_particles=30, n_iterations=3)
    for d in out.diagnostics:
        assert len(d.decompositions) == 3
        assert np.all(d.decompositions[0].l_pseudo == 0)
        dec = d.decompositions[-1]
        assert isinstance(dec, WeightDecomposition)
        assert np.allclose(dec.l_total, dec.l_apriori + dec.l_measurement + dec.l_pseudo)


def test_turbo_filter_runs_with_full_weight_normalizers(bench_traj):
    model = benchmark_model()
    a = _run("tf", model, bench_traj.measurements, n_particles=30, n_iterations=2,
             drop_det_in_weights=False, drop_D3_factor=False)
    assert np.all(np.isfinite(a.est_nonlinear))


def test_kalman_filter_scalar_by_hand():
    means, covs = kalman_filter(np.eye(1), np.eye(1), np.eye(1), np.eye(1),
                                np.zeros(1), np.eye(1), [[2.0], [2.0]])
    assert means[0, 0] == pytest.approx(1.0) and covs[0, 0, 0] == pytest.approx(0.5)
    # prior for step 2: mean 1, var 1.5; gain 0.6
    assert means[1, 0] == pytest.approx(1.6) and covs[1, 0, 0] == pytest.approx(0.6)


def test_marginalized_filter_tracks_kalman_on_linear_model():
    lin = default_linear_model()
    model = lin.to_clg()
    tr = simulate(model, 50, np.random.default_rng(2))
    k = kalman_oracle(lin, tr.measurements)
    out = _run("mpf", model, tr.measurements, n_particles=300)
    assert np.all(np.abs(out.est_linear - k.linear_means) <= 3 * k.linear_std)


def test_weight_underflow_falls_back_to_uniform():
    with pytest.warns(TrackingLossWarning):
        lw, lost = safe_normalize(np.full(4, -np.inf), step=3)
    assert lost and np.allclose(np.exp(lw), 0.25)
    lw, lost = safe_normalize(np.log([1.0, 3.0]), step=1)
    assert not lost and np.allclose(np.exp(lw), [0.25, 0.75])


@pytest.mark.parametrize(
    "key,value",
    [("n_particles", 0), ("n_iterations", 0), ("resample_scheme", "x"), ("jitter_scale", -1.0),
     ("linear_form", "x"), ("cz_policy", "x"), ("jitter_amount", -1.0)],
)
def test_config_errors_name_the_key(key, value):
    with pytest.raises(ConfigError) as err:
        FilterConfig(**{key: value})
    assert err.value.key == key


def test_bad_inputs_are_rejected():
    model = benchmark_model()
    with pytest.raises(ValueError):
        make_filter("pf", model)
    with pytest.raises(ValueError):
        _run("mpf", model, np.zeros((5, 3)))
    with pytest.raises(ValueError):
        _run("mpf", model, np.full((5, 2), np.nan))


def test_no_warnings_on_the_benchmark(bench_traj):
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        _run("tf", benchmark_model(), bench_traj.measurements, n_particles=50, n_iterations=2)
