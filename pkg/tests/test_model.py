import numpy as np
import pytest

from clgfilter.errors import ModelValidationError
from clgfilter.gaussian import GaussianMoment
from clgfilter.model import (
    CLGModel,
    benchmark_model,
    default_linear_model,
    pseudo_z_L,
    pseudo_z_N,
    simulate,
)


def _scalar_model(**changes):
    kw = dict(
        dim_linear=1, dim_nonlinear=1, dim_meas=1,
        A_L=lambda l, x: np.array([[0.5]]), f_L=lambda l, x: np.sin(x),
        A_N=lambda l, x: np.array([[1.0]]), f_N=lambda l, x: 0.5 * x,
        B=lambda l, x: np.array([[1.0]]), h=lambda l, x: x ** 2,
        cov_w_L=[[0.1]], cov_w_N=[[0.1]], cov_e=[[0.1]],
        init_linear=GaussianMoment([0.0], [[1.0]]), init_nonlinear=GaussianMoment([0.0], [[1.0]]),
    )
    kw.update(changes)
    return CLGModel(**kw)


def test_benchmark_maps_at_a_point():
    m = benchmark_model()
    x = np.array([[0.3]])
    assert np.allclose(m.eval_f_L(1, x)[0], [np.cos(0.3), -np.sin(0.3), 0.5 * np.sin(0.6)])
    assert np.allclose(m.eval_f_N(1, x)[0], [np.arctan(0.3)])
    assert np.allclose(m.eval_h(1, np.array([[-2.0]]))[0], [-0.4, 0.0])
    assert np.allclose(m.eval_B(1, x)[0], [[0, 0, 0], [1, -1, 1]])
    assert np.allclose(m.eval_A_N(1, x)[0], [[0.9, 0, 0]])
    assert np.allclose(m.cov_e, 1e-4 * np.eye(2))
    assert np.allclose(m.cov_w_L, 25e-6 * np.eye(3))


def test_simulate_replays_the_state_equations():
    m = benchmark_model()
    tr = simulate(m, 30, np.random.default_rng(0), record_noise=True)
    for i in range(29):
        xn = tr.nonlinear_states[i][None]
        xl = tr.linear_states[i]
        nxt_l = m.eval_A_L(i + 1, xn)[0] @ xl + m.eval_f_L(i + 1, xn)[0] + tr.noise["w_L"][i]
        nxt_n = m.eval_f_N(i + 1, xn)[0] + m.eval_A_N(i + 1, xn)[0] @ xl + tr.noise["w_N"][i]
        assert np.allclose(tr.linear_states[i + 1], nxt_l)
        assert np.allclose(tr.nonlinear_states[i + 1], nxt_n)
        y = m.eval_h(i + 1, xn)[0] + m.eval_B(i + 1, xn)[0] @ xl + tr.noise["e"][i]
        assert np.allclose(tr.measurements[i], y)


def test_simulate_is_deterministic_per_seed():
    m = benchmark_model()
    a = simulate(m, 20, np.random.default_rng(3))
    b = simulate(m, 20, np.random.default_rng(3))
    assert np.array_equal(a.measurements, b.measurements)
    assert len(a) == 20
    with pytest.raises(ValueError):
        simulate(m, 0, np.random.default_rng(0))


def test_pseudo_measurements_recover_the_noise():
    m = benchmark_model()
    tr = simulate(m, 5, np.random.default_rng(1), record_noise=True)
    zl = pseudo_z_L(m, 1, tr.nonlinear_states[0], tr.nonlinear_states[1])
    zn = pseudo_z_N(m, 1, tr.linear_states[0], tr.linear_states[1], tr.nonlinear_states[0])
    A_N = m.eval_A_N(1, tr.nonlinear_states[:1])[0]
    f_L = m.eval_f_L(1, tr.nonlinear_states[:1])[0]
    assert np.allclose(zl.value, A_N @ tr.linear_states[0] + tr.noise["w_N"][0])
    assert np.allclose(zn.value, f_L + tr.noise["w_L"][0])
    with pytest.raises(ValueError):
        pseudo_z_L(m, 1, [0.0, 0.0], [0.0])


def test_unbatched_callables_are_stacked():
    m = _scalar_model()
    x = np.array([[1.0], [2.0]])
    assert np.allclose(m.eval_h(1, x)[:, 0], [1.0, 4.0])
    assert m.eval_A_L(1, x).shape == (2, 1, 1)


def test_singular_noise_is_accepted():
    m = _scalar_model(cov_w_N=[[0.0]])
    tr = simulate(m, 5, np.random.default_rng(0))
    assert np.all(np.isfinite(tr.nonlinear_states))


@pytest.mark.parametrize(
    "changes",
    [
        dict(cov_e=[[-1.0]]),
        dict(cov_w_L=[[1.0, 0.0], [0.0, 1.0]]),
        dict(h=lambda l, x: np.array([1.0, 2.0])),
        dict(f_N=lambda l, x: np.array([np.nan])),
        dict(dim_linear=0),
        dict(init_nonlinear=None),
    ],
)
def test_invalid_models_are_rejected(changes):
    with pytest.raises(ModelValidationError):
        _scalar_model(**changes)


def test_linear_model_joint_form_matches_clg_view():
    lin = default_linear_model()
    m = lin.to_clg()
    F, H, Q, R, m0, P0 = lin.joint()
    x = np.array([[0.4]])
    assert np.allclose(F[:2, 2:], m.eval_f_L(1, x)[0][:, None] / 0.4)
    assert np.allclose(H[:, :2], m.eval_B(1, x)[0])
    assert Q.shape == (3, 3) and np.allclose(R, m.cov_e)
    assert np.allclose(P0[:2, :2], m.init_linear.cov)
