import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from oracles import finite_difference_gradient, max_relative_error
from seqpipe.context import make_context, unit
from seqpipe.mlp import (
    NetworkArch,
    NetworkParams,
    ReLUNetRegressor,
    TrainingDivergedError,
    TrainingHistory,
    forward,
    forward_batch,
    gradient,
    hidden_features,
    init_network,
    mse,
    train,
    value_and_gradient,
)


def reference_forward(weights, scale, x):
    # straight loop over layers, independent of the vectorised implementation
    h = np.asarray(x, dtype=float)
    for W in weights[:-1]:
        h = np.array([max(0.0, float(row @ h)) for row in W])
    return scale * float(weights[-1][0] @ h)


def test_single_relu_by_hand():
    arch = NetworkArch(1, hidden_width=1, hidden_layers=1, output_scale=1.0)
    p = NetworkParams.from_weights(arch, [np.array([[1.0]]), np.array([[1.0]])])
    assert forward(p, np.array([2.0])) == 2.0
    assert forward(p, np.array([-2.0])) == 0.0


def test_zero_weights_give_zero_gradient():
    arch = NetworkArch(5, hidden_width=4, hidden_layers=2)
    p = NetworkParams(arch, np.zeros(arch.n_params))
    g = gradient(p, np.ones(5))
    assert g.shape == (arch.n_params,)
    assert not g.any()


def test_default_output_scale_is_sqrt_width():
    assert NetworkArch(3, hidden_width=50).output_scale == pytest.approx(math.sqrt(50))
    assert NetworkArch(3, hidden_width=8, output_scale=2.5).output_scale == 2.5


def test_param_count_and_layout():
    arch = NetworkArch(4, hidden_width=3, hidden_layers=2)
    assert arch.shapes == [(3, 4), (3, 3), (1, 3)]
    assert arch.n_params == 12 + 9 + 3
    p = init_network(arch, 0)
    W = p.weights()
    assert [w.shape for w in W] == arch.shapes
    np.testing.assert_array_equal(np.concatenate([w.ravel() for w in W]), p.theta)


@pytest.mark.parametrize("layers", [1, 2, 3])
def test_forward_matches_layer_loop(layers):
    rng = np.random.default_rng(layers)
    arch = NetworkArch(6, hidden_width=10, hidden_layers=layers)
    p = init_network(arch, 11)
    for _ in range(5):
        x = rng.normal(size=6)
        assert forward(p, x) == pytest.approx(reference_forward(p.weights(), arch.output_scale, x),
                                              rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("layers", [1, 2])
def test_gradient_matches_finite_differences(layers):
    rng = np.random.default_rng(100 + layers)
    arch = NetworkArch(8, hidden_width=12, hidden_layers=layers)
    for draw in range(10):
        p = init_network(arch, draw)
        x = rng.normal(size=8)
        g = gradient(p, x)
        fd, skip = finite_difference_gradient(p, x)
        assert skip.mean() < 0.5
        assert max_relative_error(g[~skip], fd[~skip]) < 1e-4


def test_batch_paths_agree_with_single():
    arch = NetworkArch(5, hidden_width=7, hidden_layers=2)
    p = init_network(arch, 3)
    X = np.random.default_rng(0).normal(size=(6, 5))
    np.testing.assert_allclose(forward_batch(p, X), [forward(p, x) for x in X], rtol=1e-13)
    f, g = value_and_gradient(p, X[0])
    assert f == pytest.approx(forward(p, X[0]))
    np.testing.assert_allclose(g, gradient(p, X[0]))
    H = hidden_features(p, X)
    assert H.shape == (6, 7)
    assert (H >= 0).all()


def test_he_init_is_deterministic_with_he_variance():
    arch = NetworkArch(32, hidden_width=50, hidden_layers=2)
    a, b = init_network(arch, 7), init_network(arch, 7)
    np.testing.assert_array_equal(a.theta, b.theta)
    assert not np.array_equal(a.theta, init_network(arch, 8).theta)
    for W, (rows, cols) in zip(a.weights(), arch.shapes):
        target = math.sqrt(2.0 / cols)
        assert abs(W.std() - target) / target < 0.2
        assert abs(W.mean()) < 3 * target / math.sqrt(W.size)


def test_symmetric_init_outputs_zero_with_he_marginals():
    arch = NetworkArch(32, hidden_width=50, hidden_layers=1)
    p = init_network(arch, 7, scheme="symmetric")
    X = np.random.default_rng(1).normal(size=(20, 32))
    np.testing.assert_allclose(forward_batch(p, X), 0.0, atol=1e-12)
    assert np.any(gradient(p, X[0]))
    # 1600 first-layer weights (800 independent); the output layer has too few to test
    W0 = p.weights()[0]
    assert abs(W0.std() - math.sqrt(2.0 / 32)) / math.sqrt(2.0 / 32) < 0.2


def test_symmetric_init_deep_and_validation():
    arch = NetworkArch(6, hidden_width=8, hidden_layers=3)
    p = init_network(arch, 2, scheme="symmetric")
    assert forward(p, np.arange(6.0)) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError, match="even"):
        init_network(NetworkArch(3, hidden_width=5), 0, scheme="symmetric")
    with pytest.raises(ValueError, match="scheme"):
        init_network(NetworkArch(3), 0, scheme="xavier")


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
def test_activation_mask_invariant_to_positive_scaling(seed, c):
    arch = NetworkArch(6, hidden_width=9, hidden_layers=1)
    p = init_network(arch, seed)
    x = np.random.default_rng(seed).normal(size=6)
    W0 = p.weights()[0]
    np.testing.assert_array_equal(W0 @ x > 0, W0 @ (c * x) > 0)


def test_train_identity_when_eta_or_steps_zero():
    arch = NetworkArch(4, hidden_width=6)
    p = init_network(arch, 0)
    hist = TrainingHistory.from_arrays(np.ones((3, 4)), np.array([0.1, 0.2, 0.3]))
    np.testing.assert_array_equal(train(p, hist, 0.0, 5).theta, p.theta)
    np.testing.assert_array_equal(train(p, hist, 0.1, 0).theta, p.theta)


def test_train_does_not_mutate_input_and_is_deterministic():
    arch = NetworkArch(4, hidden_width=6)
    p = init_network(arch, 0)
    before = p.theta.copy()
    hist = TrainingHistory.from_arrays(np.random.default_rng(0).normal(size=(5, 4)), np.zeros(5))
    a, b = train(p, hist, 1e-2, 5), train(p, hist, 1e-2, 5)
    np.testing.assert_array_equal(p.theta, before)
    np.testing.assert_array_equal(a.theta, b.theta)
    assert not np.array_equal(a.theta, before)


def test_train_takes_exactly_J_gradient_steps():
    # each step is theta -= eta * grad of (1/m) sum (f - r)^2
    arch = NetworkArch(3, hidden_width=4)
    p = init_network(arch, 5)
    rng = np.random.default_rng(2)
    X, y = rng.normal(size=(4, 3)), rng.random(4)
    theta = p.theta.copy()
    for _ in range(3):
        q = NetworkParams(arch, theta)
        grad = sum(2 * (forward(q, x) - r) * gradient(q, x) for x, r in zip(X, y)) / len(y)
        theta = theta - 0.05 * grad
    out = train(p, TrainingHistory.from_arrays(X, y), 0.05, 3)
    np.testing.assert_allclose(out.theta, theta, rtol=1e-12, atol=1e-14)


def test_proximal_term_pulls_toward_anchor():
    arch = NetworkArch(3, hidden_width=4)
    p = init_network(arch, 1)
    hist = TrainingHistory.from_arrays(np.eye(3), np.array([1.0, 0.0, 0.5]))
    free = train(p, hist, 1e-2, 20)
    held = train(p, hist, 1e-2, 20, prox_lambda=10.0, anchor=p)
    assert np.linalg.norm(held.theta - p.theta) < np.linalg.norm(free.theta - p.theta)


def test_train_errors():
    arch = NetworkArch(3, hidden_width=4)
    p = init_network(arch, 0)
    with pytest.raises(ValueError, match="empty"):
        train(p, TrainingHistory(3), 1e-2, 5)
    hist = TrainingHistory.from_arrays(np.ones((2, 3)), np.array([1.0, 0.0]))
    # the proximal step multiplies theta - anchor by (1 - 2 eta lambda) = -19
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(TrainingDivergedError, match="eta"):
            train(p, hist, 1.0, 400, prox_lambda=10.0)


def test_training_reduces_in_history_loss_on_product_contexts():
    rng = np.random.default_rng(0)
    arch = NetworkArch(32)
    p = init_network(arch, 0, scheme="symmetric")
    hist = TrainingHistory(32)
    for _ in range(100):
        x = make_context(unit(rng.normal(size=32)), unit(rng.normal(size=32)))
        hist.append(x, rng.random())
        before = mse(p, hist.contexts, hist.rewards)
        p = train(p, hist, 1e-2, 5)
        assert mse(p, hist.contexts, hist.rewards) <= before


def test_history_growth_and_validation():
    h = TrainingHistory(2)
    for k in range(100):
        h.append([k, -k], k / 100)
    assert len(h) == 100
    assert h.contexts.shape == (100, 2)
    np.testing.assert_allclose(h.rewards[-1], 0.99)
    with pytest.raises(ValueError):
        h.append([1.0, 2.0, 3.0], 0.0)
    with pytest.raises(ValueError):
        h.append([np.nan, 0.0], 0.0)


def test_arch_validation():
    with pytest.raises(ValueError):
        NetworkArch(0)
    with pytest.raises(ValueError):
        NetworkArch(3, hidden_width=0)
    with pytest.raises(ValueError):
        NetworkParams(NetworkArch(2, hidden_width=2), np.zeros(3))


def test_regressor_follows_estimator_protocol():
    reg = ReLUNetRegressor(hidden_width=16, eta=3e-3, n_steps=200, random_state=0)
    assert clone(reg).get_params() == reg.get_params()
    rng = np.random.default_rng(0)
    X = np.abs(rng.normal(size=(40, 3)))
    y = X @ np.array([0.3, 0.1, 0.2])
    reg.fit(X, y)
    assert reg.predict(X).shape == (40,)
    assert reg.score(X, y) > 0.9
    before = reg.params_.theta.copy()
    reg.partial_fit(X[:5], y[:5])
    assert not np.array_equal(before, reg.params_.theta)
    assert reg.gradient(X[0]).shape == (reg.arch_.n_params,)


def test_regressor_requires_fit():
    from sklearn.exceptions import NotFittedError
    with pytest.raises(NotFittedError):
        ReLUNetRegressor().predict(np.ones((1, 3)))
