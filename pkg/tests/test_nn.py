import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import central_difference, max_relative_error, naive_forward
from silcr.nn import (
    AdamState,
    ConfigurationError,
    MlpParameters,
    NumericalError,
    ShapeError,
    UsageError,
    adam_init,
    adam_step,
    load_params,
    mlp_apply,
    mlp_backward,
    mlp_forward,
    mlp_init,
    polyak_update,
    save_params,
)


def test_init_biases_zero_and_deterministic():
    p = mlp_init([3, 2], seed=5)
    assert np.array_equal(p.biases[0], [0.0, 0.0])
    assert p.equals(mlp_init([3, 2], seed=5))
    assert not p.equals(mlp_init([3, 2], seed=6))


def test_init_full_size_critic_shapes():
    p = mlp_init([4, 800, 400, 1], seed=0)
    assert [w.shape for w in p.weights] == [(800, 4), (400, 800), (1, 400)]
    assert [b.shape for b in p.biases] == [(800,), (400,), (1,)]


def test_init_fan_in_bounds():
    p = mlp_init([16, 9, 4], seed=1)
    for w in p.weights:
        assert np.all(np.abs(w) <= 1 / np.sqrt(w.shape[1]))


@pytest.mark.parametrize("dims", [[], [3], [3, 0], [-1, 2]])
def test_init_rejects_bad_dims(dims):
    with pytest.raises(ConfigurationError):
        mlp_init(dims, seed=0)


def test_forward_zero_network():
    p = mlp_init([3, 5, 2], seed=0).zeros_like()
    out, _ = mlp_forward(p, np.array([1.0, -2.0, 3.0]))
    assert np.array_equal(out, np.zeros(2))


def test_forward_identity_layer():
    p = MlpParameters([3, 3], [np.eye(3)], [np.zeros(3)])
    x = np.array([0.5, -1.5, 2.0])
    out, _ = mlp_forward(p, x)
    assert np.array_equal(out, x)


@pytest.mark.parametrize("seed", range(5))
def test_forward_matches_naive(seed):
    rng = np.random.default_rng(seed)
    p = mlp_init([4, 7, 5, 3], seed)
    for b in p.biases:
        b[:] = rng.normal(size=b.shape)
    x = rng.normal(size=4)
    out, _ = mlp_forward(p, x)
    np.testing.assert_allclose(out, naive_forward(p, x), rtol=1e-12, atol=1e-12)
    batch = rng.normal(size=(6, 4))
    np.testing.assert_allclose(mlp_apply(p, batch), [naive_forward(p, r) for r in batch], rtol=1e-12, atol=1e-12)


def test_forward_is_pure():
    p = mlp_init([4, 8, 2], seed=3)
    x = np.linspace(-1, 1, 4)
    a, _ = mlp_forward(p, x)
    b, _ = mlp_forward(p, x)
    assert np.array_equal(a, b)


def test_forward_shape_error():
    with pytest.raises(ShapeError):
        mlp_forward(mlp_init([3, 2], 0), np.zeros(4))


def test_backward_zero_output_grad():
    p = mlp_init([3, 4, 2], seed=0)
    _, cache = mlp_forward(p, np.ones(3))
    g, gx = mlp_backward(p, cache, np.zeros(2))
    assert all(np.all(a == 0) for a in g.arrays())
    assert np.all(gx == 0)


def test_backward_single_layer_outer_product():
    p = mlp_init([3, 2], seed=0)
    x = np.array([1.0, 2.0, -1.0])
    g = np.array([0.5, -3.0])
    _, cache = mlp_forward(p, x)
    grads, gx = mlp_backward(p, cache, g)
    np.testing.assert_array_equal(grads.weights[0], np.outer(g, x))
    np.testing.assert_array_equal(grads.biases[0], g)
    np.testing.assert_allclose(gx, p.weights[0].T @ g)


@pytest.mark.parametrize("seed", range(10))
def test_backward_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    dims = [int(d) for d in rng.integers(1, 9, size=rng.integers(2, 5))]
    p = mlp_init(dims, seed)
    for b in p.biases:
        b[:] = rng.normal(scale=0.3, size=b.shape)
    x = rng.normal(size=(3, dims[0]))
    g_out = rng.normal(size=(3, dims[-1]))
    _, cache = mlp_forward(p, x)
    grads, gx = mlp_backward(p, cache, g_out)

    f = lambda: float(np.sum(mlp_apply(p, x) * g_out))
    for param, grad in zip(p.arrays(), grads.arrays()):
        assert max_relative_error(grad, central_difference(f, param)) <= 1e-4
    assert max_relative_error(gx, central_difference(f, x)) <= 1e-4


def test_backward_rejects_stale_or_foreign_cache():
    p = mlp_init([3, 4, 2], seed=0)
    _, cache = mlp_forward(p, np.ones(3))
    mlp_backward(p, cache, np.ones(2))
    with pytest.raises(UsageError):
        mlp_backward(p, cache, np.ones(2))
    _, cache = mlp_forward(p, np.ones(3))
    with pytest.raises(UsageError):
        mlp_backward(mlp_init([3, 5, 2], 0), cache, np.ones(2))


def test_adam_zero_gradient_leaves_params():
    p = mlp_init([3, 4, 2], seed=0)
    state = adam_init(p)
    new_p, new_state = adam_step(p, p.zeros_like(), state, lr=1e-3)
    assert new_p.equals(p)
    assert new_state.step_count == 1


def test_adam_first_step_hand_computed():
    p = MlpParameters([1, 1], [np.array([[0.0]])], [np.array([0.0])])
    grads = MlpParameters([1, 1], [np.array([[1.0]])], [np.array([1.0])])
    new_p, state = adam_step(p, grads, adam_init(p), lr=0.001)
    # m = 0.1, v = 0.001; bias-corrected both equal 1
    expected = -0.001 * 1.0 / (1.0 + 1e-8)
    assert new_p.weights[0][0, 0] == pytest.approx(expected, rel=1e-12)
    assert state.first_moment.weights[0][0, 0] == pytest.approx(0.1)
    assert state.second_moment.weights[0][0, 0] == pytest.approx(0.001)


def test_adam_is_pure(rng):
    p = mlp_init([3, 4, 2], seed=0)
    g = MlpParameters.from_arrays(p.layer_dims, [rng.normal(size=a.shape) for a in p.arrays()])
    s = adam_init(p)
    a = adam_step(p, g, s, 1e-3)
    b = adam_step(p, g, s, 1e-3)
    assert a[0].equals(b[0]) and a[1].first_moment.equals(b[1].first_moment)
    assert s.step_count == 0 and np.all(s.first_moment.weights[0] == 0)


def test_adam_rejects_nan():
    p = mlp_init([2, 2], seed=0)
    g = p.zeros_like()
    g.weights[0][0, 0] = np.nan
    with pytest.raises(NumericalError):
        adam_step(p, g, adam_init(p), 1e-3)


def test_adam_second_moment_non_negative(rng):
    p = mlp_init([3, 4, 2], seed=0)
    s = adam_init(p)
    for _ in range(5):
        g = MlpParameters.from_arrays(p.layer_dims, [rng.normal(size=a.shape) for a in p.arrays()])
        p, s = adam_step(p, g, s, 1e-2)
    assert s.step_count == 5
    assert all(np.all(v >= 0) for v in s.second_moment.arrays())


def test_polyak_conventions():
    online = mlp_init([3, 4, 2], seed=1)
    target = mlp_init([3, 4, 2], seed=2)
    assert polyak_update(target, online, 1.0).equals(online)
    assert polyak_update(target, online, 0.0).equals(target)
    moved = polyak_update(target.zeros_like(), online, 0.05)
    for m, w in zip(moved.arrays(), online.arrays()):
        np.testing.assert_allclose(m, 0.05 * w, rtol=1e-15)


def test_polyak_shape_error():
    with pytest.raises(ShapeError):
        polyak_update(mlp_init([3, 2], 0), mlp_init([3, 4, 2], 0), 0.5)


@settings(max_examples=30, deadline=None)
@given(tau=st.floats(0.0, 1.0), seed=st.integers(0, 1000))
def test_polyak_contracts_toward_online(tau, seed):
    online = mlp_init([3, 5, 2], seed)
    target = mlp_init([3, 5, 2], seed + 1)
    new = polyak_update(target, online, tau)
    for n, t, o in zip(new.arrays(), target.arrays(), online.arrays()):
        np.testing.assert_allclose(np.abs(n - o), (1 - tau) * np.abs(t - o), atol=1e-14)


def test_checkpoint_round_trip(tmp_path):
    p = mlp_init([5, 7, 3], seed=9)
    save_params(p, tmp_path / "p.npz")
    q = load_params(tmp_path / "p.npz")
    assert q.equals(p) and q.layer_dims == [5, 7, 3]
