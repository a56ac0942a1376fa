import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pdecl.errors import ConfigurationError, InputError
from pdecl.linalg import finite_difference_check
from pdecl.network import (JetBundle, NetworkParams, backprop_params, backward, eval, eval_jet, forward,
                           glorot_bound, init_params)


def test_init_reproducible_and_bounded():
    a = init_params((3, 64, 64, 100), seed=0)
    b = init_params((3, 64, 64, 100), seed=0)
    assert np.array_equal(a.flat(), b.flat())
    for W in a.weights:
        assert np.all(np.abs(W) <= glorot_bound(W.shape[1], W.shape[0]))


def test_init_seeds_differ():
    assert not np.array_equal(init_params((3, 8, 4), 0).flat(), init_params((3, 8, 4), 1).flat())


def test_sine_init_first_layer_scale():
    p = init_params((4, 16, 8), seed=0, activation="sin", first_scale=10.0)
    assert np.all(np.abs(p.weights[0]) <= 10.0 / 4)
    assert np.all(np.abs(p.weights[1]) <= np.sqrt(6.0 / 16))


def test_flat_roundtrip():
    p = init_params((2, 5, 3), seed=4)
    q = p.with_flat(p.flat() * 2)
    np.testing.assert_array_equal(q.flat(), 2 * p.flat())
    with pytest.raises(InputError):
        p.with_flat(np.zeros(3))


def test_identity_layer():
    p = NetworkParams((3, 3), [np.eye(3)], [np.zeros(3)], "identity")
    x = np.array([0.5, -1.0, 2.0])
    np.testing.assert_array_equal(eval(p, x), x)


def test_zero_weights_give_bias():
    c = np.array([1.0, -2.0])
    p = NetworkParams((3, 4, 2), [np.zeros((4, 3)), np.zeros((2, 4))], [np.zeros(4), c])
    np.testing.assert_array_equal(eval(p, np.ones((5, 3))), np.tile(c, (5, 1)))


def _hand_rolled(p, X):
    a = X
    for i, (W, b) in enumerate(zip(p.weights, p.biases)):
        z = np.einsum("ij,pj->pi", W, a) + b
        a = z if i == len(p.weights) - 1 else np.tanh(z)
    return a


def test_forward_matches_hand_rolled(rng):
    p = init_params((3, 7, 4), seed=2).with_flat(rng.standard_normal(3 * 7 + 7 + 7 * 4 + 4))
    X = rng.standard_normal((6, 3))
    np.testing.assert_allclose(eval(p, X), _hand_rolled(p, X), rtol=1e-13, atol=1e-14)


def test_tanh_unit_jet_at_zero():
    p = NetworkParams((1, 1, 1), [np.ones((1, 1)), np.ones((1, 1))], [np.zeros(1), np.zeros(1)])
    jet = eval_jet(p, np.zeros(1), [0], order=2)
    assert jet.values[0] == 0.0 and jet.first[0, 0] == 1.0 and jet.second[0, 0] == 0.0


def test_linear_network_jet():
    W = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    p = NetworkParams((2, 3), [W], [np.zeros(3)], "identity")
    jet = eval_jet(p, np.array([0.3, 0.7]), [0, 1], order=2)
    np.testing.assert_array_equal(jet.first, W)
    np.testing.assert_array_equal(jet.second, np.zeros((3, 2)))


@pytest.mark.parametrize("activation", ["tanh", "sin"])
def test_jet_matches_finite_differences(rng, activation):
    p = init_params((3, 9, 9, 5), seed=3, activation=activation, first_scale=2.0)
    p = p.with_flat(p.flat() + 0.1 * rng.standard_normal(p.n_params))
    x = rng.standard_normal(3)
    jet = eval_jet(p, x, [0, 1, 2], order=2)
    for k in range(3):
        e = np.zeros(3)
        e[k] = 1.0
        h1, h2 = 1e-4, 1e-3
        d1 = (eval(p, x + h1 * e) - eval(p, x - h1 * e)) / (2 * h1)
        d2 = (eval(p, x + h2 * e) - 2 * eval(p, x) + eval(p, x - h2 * e)) / h2 ** 2
        np.testing.assert_allclose(jet.first[:, k], d1, rtol=1e-6, atol=1e-8)
        np.testing.assert_allclose(jet.second[:, k], d2, rtol=1e-4, atol=1e-5)


def test_curvature_directions(rng):
    # a curved input path x(s) with x'(0)=T, x''(0)=C
    p = init_params((2, 6, 3), seed=1)
    X = rng.standard_normal((1, 2))
    T = rng.standard_normal((1, 1, 2))
    C = rng.standard_normal((1, 1, 2))
    jet = forward(p, X, T, C, 2)
    path = lambda s: eval(p, X[0] + s * T[0, 0] + 0.5 * s * s * C[0, 0])
    h = 1e-3
    d2 = (path(h) - 2 * path(0.0) + path(-h)) / h ** 2
    np.testing.assert_allclose(jet.second[0, :, 0], d2, rtol=1e-4, atol=1e-6)


def test_backprop_zero_adjoint():
    p = init_params((2, 4, 3), seed=0)
    adj = JetBundle(np.zeros((5, 3)), np.zeros((5, 3, 2)), np.zeros((5, 3, 2)))
    g = backprop_params(p, np.ones((5, 2)), [0, 1], 2, adj)
    assert not np.any(g.flat())


def test_backprop_linear_layer():
    p = NetworkParams((3, 2), [np.zeros((2, 3))], [np.zeros(2)], "identity")
    x = np.array([1.0, 2.0, 3.0])
    g = backprop_params(p, x, [], 0, JetBundle(np.array([1.0, 0.0])))
    np.testing.assert_array_equal(g.weights[0][0], x)
    np.testing.assert_array_equal(g.weights[0][1], np.zeros(3))


@pytest.mark.parametrize("activation", ["tanh", "sin"])
def test_backprop_matches_finite_differences(rng, activation):
    p0 = init_params((3, 5, 4), seed=5, activation=activation)
    X = rng.standard_normal((4, 3))
    adj = JetBundle(rng.standard_normal((4, 4)), rng.standard_normal((4, 4, 2)), rng.standard_normal((4, 4, 2)))

    def scalar(theta):
        jet = eval_jet(p0.with_flat(theta), X, [0, 2], order=2)
        return float(np.sum(adj.values * jet.values) + np.sum(adj.first * jet.first)
                     + np.sum(adj.second * jet.second))

    g = backprop_params(p0, X, [0, 2], 2, adj)
    assert finite_difference_check(scalar, g.flat(), p0.flat(), step=1e-5) < 1e-5


def test_second_order_needs_smooth_activation():
    p = init_params((2, 3, 1), seed=0, activation="relu")
    with pytest.raises(ConfigurationError):
        eval_jet(p, np.zeros(2), [0], order=2)


def test_input_width_checked():
    with pytest.raises(InputError):
        eval(init_params((2, 3, 1)), np.zeros(3))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 6), st.integers(1, 5), st.integers(0, 10**6))
def test_batch_equals_pointwise(d, h, n, seed):
    p = init_params((d, h, n), seed=seed)
    X = np.random.default_rng(seed).standard_normal((3, d))
    batch = eval(p, X)
    for i in range(3):
        np.testing.assert_allclose(batch[i], eval(p, X[i]), rtol=1e-14, atol=1e-15)


def test_backward_uses_recorded_tape(rng):
    p = init_params((2, 4, 3), seed=8)
    X = rng.standard_normal((3, 2))
    T = np.zeros((3, 1, 2))
    T[:, 0, 0] = 1.0
    _, tape = forward(p, X, T, None, 1, record=True)
    adj = JetBundle(rng.standard_normal((3, 3)), rng.standard_normal((3, 3, 1)))
    g1 = backward(p, tape, adj)
    g2 = backprop_params(p, X, [0], 1, adj)
    np.testing.assert_allclose(g1.flat(), g2.flat(), rtol=1e-14)
