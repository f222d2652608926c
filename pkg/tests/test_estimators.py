import numpy as np
import pytest
from sklearn.base import clone

from clgfilter.estimators import CLGFilter
from clgfilter.model import benchmark_model, simulate


@pytest.fixture(scope="module")
def traj():
    return simulate(benchmark_model(), 40, np.random.default_rng(0))


def test_fit_transform_matches_fit_then_transform(traj):
    est = CLGFilter(n_particles=50, random_state=3)
    a = est.fit_transform(traj.measurements)
    b = est.transform(traj.measurements)
    assert a.shape == (40, 4)
    assert np.array_equal(a, b)
    assert est.n_features_in_ == 2
    assert est.counters_.cholesky_count == 50 * 40


def test_generator_state_is_not_consumed(traj):
    rng = np.random.default_rng(5)
    est = CLGFilter(algorithm="smpf1", n_particles=30, random_state=rng).fit(traj.measurements)
    again = est.transform(traj.measurements)
    assert np.array_equal(again[:, 3], est.estimates_nonlinear_[:, 0])


def test_clone_and_params():
    est = CLGFilter(algorithm="tf", n_iterations=2)
    twin = clone(est)
    assert twin.get_params()["algorithm"] == "tf"
    assert twin.set_params(n_particles=10).n_particles == 10


def test_errors(traj):
    with pytest.raises(ValueError):
        CLGFilter(algorithm="pf").fit(traj.measurements)
    with pytest.raises(ValueError):
        CLGFilter().fit(np.zeros((5, 3)))
    with pytest.raises(Exception):
        CLGFilter().transform(traj.measurements)
