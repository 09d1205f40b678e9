import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from conftest import central_difference, max_relative_error
from silcr.policy import (
    LOG_STD_MAX,
    LOG_STD_MIN,
    SquashedGaussian,
    deterministic_action,
    sample_squashed,
    sample_squashed_backward,
)


def test_origin_log_prob():
    action, log_prob = sample_squashed(SquashedGaussian([0.0], [0.0]), np.array([0.0]))
    assert action[0] == 0.0
    # the tanh correction contributes only the epsilon guard, -log(1 + 1e-6)
    assert log_prob == pytest.approx(-0.5 * math.log(2 * math.pi) - math.log1p(1e-6), abs=1e-12)
    assert log_prob == pytest.approx(-0.9189, abs=1e-4)


finite = st.floats(-50, 50, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(m=st.lists(finite, min_size=1, max_size=4), data=st.data())
def test_actions_inside_open_box_and_log_prob_finite(m, data):
    d = len(m)
    ls = data.draw(st.lists(st.floats(-30, 10), min_size=d, max_size=d))
    eps = data.draw(st.lists(st.floats(-5, 5), min_size=d, max_size=d))
    dist = SquashedGaussian(np.array(m), np.array(ls))
    action, log_prob = sample_squashed(dist, np.array(eps))
    assert np.all(np.abs(action) < 1.0)
    assert np.all(np.abs(deterministic_action(dist)) < 1.0)
    assert np.isfinite(log_prob)


def test_log_std_clamped():
    dist = SquashedGaussian([0.0, 0.0], [-100.0, 100.0])
    assert list(dist.log_std) == [LOG_STD_MIN, LOG_STD_MAX]


def squashed_density(mean: float, log_std: float, a: float) -> float:
    u = math.atanh(a)
    noise = (u - mean) / math.exp(log_std)
    _, log_prob = sample_squashed(SquashedGaussian([mean], [log_std]), np.array([noise]))
    return math.exp(log_prob)


@pytest.mark.parametrize("seed", range(6))
def test_density_integrates_to_one(seed):
    rng = np.random.default_rng(seed)
    mean, log_std = rng.uniform(-1, 1), rng.uniform(-1.5, 0.0)
    total, _ = integrate.quad(lambda a: squashed_density(mean, log_std, a), -1 + 1e-12, 1 - 1e-12,
                              limit=500, points=[math.tanh(mean)])
    assert total == pytest.approx(1.0, abs=1e-3)


def test_deterministic_action():
    assert deterministic_action(SquashedGaussian([0.0], [0.0]))[0] == 0.0
    assert deterministic_action(SquashedGaussian([20.0], [0.0]))[0] == pytest.approx(1.0, abs=1e-8)
    dist = SquashedGaussian([0.3, -0.7], [0.1, 0.2])
    assert np.array_equal(deterministic_action(dist), deterministic_action(dist))


@pytest.mark.parametrize("seed", range(10))
def test_reparameterized_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    n, d = 4, 3
    mean = rng.uniform(-1.5, 1.5, size=(n, d))
    log_std = rng.uniform(-1.0, 0.5, size=(n, d))
    noise = rng.normal(size=(n, d))
    # keep pre-squash values within |u| <= 3
    u = mean + np.exp(log_std) * noise
    noise = np.where(np.abs(u) > 3, 0.0, noise)
    w_action = rng.normal(size=(n, d))
    w_logp = rng.normal(size=n)

    def objective():
        a, lp = sample_squashed(SquashedGaussian(mean, log_std), noise)
        return float(np.sum(w_action * a) + np.sum(w_logp * lp))

    gm, gl = sample_squashed_backward(SquashedGaussian(mean, log_std), noise, w_action, w_logp)
    assert max_relative_error(gm, central_difference(objective, mean)) <= 1e-4
    assert max_relative_error(gl, central_difference(objective, log_std)) <= 1e-4


def test_clamped_log_std_has_zero_gradient():
    dist = SquashedGaussian([[0.1, 0.2]], [[5.0, 0.0]])
    _, gl = sample_squashed_backward(dist, np.array([[0.3, 0.3]]), np.ones((1, 2)), np.ones(1))
    assert gl[0, 0] == 0.0 and gl[0, 1] != 0.0
