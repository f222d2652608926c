import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clgfilter.errors import AllWeightsZero
from clgfilter.particles import (
    ParticleCloud,
    center_of_mass,
    default_jitter_amount,
    ess,
    jitter,
    normalize,
    normalize_log_weights,
    resample,
    resample_indices,
    weighted_mean,
)

log_weight_lists = st.lists(st.floats(-50, 50), min_size=1, max_size=40)


@settings(max_examples=100, deadline=None)
@given(log_weight_lists)
def test_normalized_weights_sum_to_one(lw):
    out, total = normalize_log_weights(lw)
    assert np.exp(out).sum() == pytest.approx(1.0)
    assert total == pytest.approx(np.log(np.sum(np.exp(lw))))


@settings(max_examples=100, deadline=None)
@given(log_weight_lists)
def test_ess_is_between_one_and_n(lw):
    cloud = ParticleCloud(np.zeros((len(lw), 1)), np.array(lw))
    assert 1.0 - 1e-9 <= ess(cloud) <= len(lw) + 1e-9


@settings(max_examples=100, deadline=None)
@given(log_weight_lists, st.integers(0, 2**32 - 1), st.sampled_from(["systematic", "multinomial"]))
def test_resampling_only_picks_supported_particles(lw, seed, scheme):
    w = np.exp(normalize_log_weights(lw)[0])
    idx = resample_indices(w, scheme, np.random.default_rng(seed))
    assert idx.shape == (len(lw),)
    assert np.all(w[idx] > 0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=30), st.integers(0, 2**32 - 1))
def test_systematic_counts_are_within_one_of_expectation(raw, seed):
    w = np.asarray(raw) + 1e-3
    w /= w.sum()
    idx = resample_indices(w, "systematic", np.random.default_rng(seed))
    counts = np.bincount(idx, minlength=len(w))
    assert np.all(np.abs(counts - len(w) * w) < 1.0 + 1e-9)


def test_systematic_tie_goes_to_lower_index():
    class FixedRng:
        def random(self):
            return 0.0

    idx = resample_indices(np.array([0.25, 0.25, 0.25, 0.25]), "systematic", FixedRng())
    assert list(idx) == [0, 0, 1, 2]


def test_systematic_uses_one_draw_and_multinomial_n():
    w = np.full(8, 1 / 8)
    a, b = np.random.default_rng(0), np.random.default_rng(0)
    resample_indices(w, "systematic", a)
    b.random()
    assert a.random() == b.random()
    a, b = np.random.default_rng(0), np.random.default_rng(0)
    resample_indices(w, "multinomial", a)
    b.random(8)
    assert a.random() == b.random()


def test_resample_returns_uniform_cloud_and_plan():
    cloud = ParticleCloud(np.arange(4.0)[:, None], np.array([-np.inf, -np.inf, 0.0, -np.inf]))
    out, plan = resample(cloud, "systematic", np.random.default_rng(0))
    assert np.all(out.particles == 2.0)
    assert np.allclose(out.weights, 0.25)
    assert np.all(plan.ancestor_indices == 2)


def test_all_zero_weights_raise():
    with pytest.raises(AllWeightsZero):
        normalize_log_weights([-np.inf, -np.inf])
    with pytest.raises(AllWeightsZero):
        normalize_log_weights([0.0, np.nan])
    with pytest.raises(ValueError):
        resample_indices(np.ones(2) / 2, "stratified", np.random.default_rng(0))


def test_means_and_jitter():
    cloud = ParticleCloud(np.array([[0.0], [2.0]]), np.log([0.25, 0.75]))
    assert center_of_mass(cloud)[0] == 1.0
    assert weighted_mean(cloud)[0] == pytest.approx(1.5)
    normed, total = normalize(cloud)
    assert total == pytest.approx(0.0)
    cov = np.diag([2.0, 4.0])
    assert default_jitter_amount(cov) == pytest.approx(3e-6)
    assert np.allclose(jitter(cov, 1.0), np.diag([3.0, 5.0]))
    with pytest.raises(ValueError):
        jitter(cov, -1.0)
