"""Bias-free ReLU network with a scalar output.

The network is ``f(x) = s * W_L relu(W_{L-1} ... relu(W_0 x))`` where ``s`` is
the output scale (``sqrt(hidden_width)`` by default).  Parameters live in one
flat vector ``theta``; every weight matrix is stored row-major, layer by layer
starting from the input layer.  Gradients use the same layout.
"""

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from ._validation import (
    check_matrix,
    check_positive_float,
    check_positive_int,
    check_vector,
)


class TrainingDivergedError(FloatingPointError):
    """Raised when gradient descent produces a non-finite loss."""


@dataclass(frozen=True)
class NetworkArch:
    input_dim: int
    hidden_width: int = 50
    hidden_layers: int = 1
    output_scale: float = None

    def __post_init__(self):
        check_positive_int(self.input_dim, "input_dim")
        check_positive_int(self.hidden_width, "hidden_width")
        check_positive_int(self.hidden_layers, "hidden_layers")
        if self.output_scale is None:
            object.__setattr__(self, "output_scale", math.sqrt(self.hidden_width))
        else:
            object.__setattr__(
                self, "output_scale", check_positive_float(self.output_scale, "output_scale")
            )

    @property
    def shapes(self):
        """(rows, cols) of every weight matrix, input layer first."""
        n, d = self.hidden_width, self.input_dim
        return [(n, d)] + [(n, n)] * (self.hidden_layers - 1) + [(1, n)]

    @property
    def n_params(self):
        return sum(r * c for r, c in self.shapes)


@dataclass
class NetworkParams:
    arch: NetworkArch
    theta: np.ndarray

    def __post_init__(self):
        self.theta = check_vector(self.theta, self.arch.n_params, name="theta")

    def weights(self):
        """Views of ``theta`` reshaped into the layer matrices."""
        out, start = [], 0
        for rows, cols in self.arch.shapes:
            out.append(self.theta[start:start + rows * cols].reshape(rows, cols))
            start += rows * cols
        return out

    @classmethod
    def from_weights(cls, arch, weights):
        flat = [np.asarray(W, dtype=np.float64).reshape(shape).ravel()
                for W, shape in zip(weights, arch.shapes)]
        if len(flat) != len(arch.shapes):
            raise ValueError(f"expected {len(arch.shapes)} weight matrices, got {len(weights)}")
        return cls(arch, np.concatenate(flat))

    def copy(self):
        return NetworkParams(self.arch, self.theta.copy())


class TrainingHistory:
    """Growable store of (context, reward) pairs for one network."""

    def __init__(self, input_dim):
        self.input_dim = check_positive_int(input_dim, "input_dim")
        self._X = np.empty((16, input_dim))
        self._y = np.empty(16)
        self._size = 0

    def __len__(self):
        return self._size

    def append(self, x, reward):
        x = check_vector(x, self.input_dim, name="context")
        reward = float(reward)
        if not math.isfinite(reward):
            raise ValueError("reward must be finite")
        if self._size == self._X.shape[0]:
            self._X = np.concatenate([self._X, np.empty_like(self._X)])
            self._y = np.concatenate([self._y, np.empty_like(self._y)])
        self._X[self._size] = x
        self._y[self._size] = reward
        self._size += 1

    @property
    def contexts(self):
        return self._X[:self._size]

    @property
    def rewards(self):
        return self._y[:self._size]

    @classmethod
    def from_arrays(cls, X, y):
        X = check_matrix(X)
        hist = cls(X.shape[1])
        for x, r in zip(X, np.asarray(y, dtype=np.float64)):
            hist.append(x, r)
        return hist


INIT_SCHEMES = ("he", "symmetric")


def init_network(arch, seed, scheme="he"):
    """Seeded Gaussian initialisation with He variance ``2 / fan_in``.

    ``scheme="he"`` draws every weight independently.  ``scheme="symmetric"``
    splits the hidden units into two mirrored halves whose output weights have
    opposite signs, so the network outputs 0 everywhere at initialisation
    (up to summation rounding); hidden layers past the first are block-diagonal with
    variance ``2 / (width / 2)`` inside each block.  It needs an even width.
    """
    rng = np.random.default_rng(seed)
    if scheme == "he":
        blocks = [rng.normal(0.0, math.sqrt(2.0 / cols), size=rows * cols)
                  for rows, cols in arch.shapes]
        return NetworkParams(arch, np.concatenate(blocks))
    if scheme != "symmetric":
        raise ValueError(f"init scheme must be one of {INIT_SCHEMES}, got {scheme!r}")
    n = arch.hidden_width
    if n % 2:
        raise ValueError(f"symmetric init needs an even hidden_width, got {n}")
    h = n // 2
    half = rng.normal(0.0, math.sqrt(2.0 / arch.input_dim), size=(h, arch.input_dim))
    weights = [np.vstack([half, half])]
    for _ in range(arch.hidden_layers - 1):
        block = rng.normal(0.0, math.sqrt(2.0 / h), size=(h, h))
        W = np.zeros((n, n))
        W[:h, :h] = block
        W[h:, h:] = block
        weights.append(W)
    w = rng.normal(0.0, math.sqrt(2.0 / n), size=h)
    weights.append(np.concatenate([w, -w])[None, :])
    return NetworkParams.from_weights(arch, weights)


def _forward_pass(arch, weights, X):
    # X: (m, d). Returns output (m,) and the activations needed for backprop.
    acts, pre = [X], []
    h = X
    for W in weights[:-1]:
        z = h @ W.T
        pre.append(z)
        h = np.maximum(z, 0.0)
        acts.append(h)
    out = arch.output_scale * (h @ weights[-1][0])
    return out, pre, acts


def _backward_pass(arch, weights, pre, acts, dout):
    # dout: (m,) upstream derivative of some scalar w.r.t. each output.
    grads = [None] * len(weights)
    grads[-1] = arch.output_scale * (dout @ acts[-1]).reshape(1, -1)
    dh = arch.output_scale * np.outer(dout, weights[-1][0])
    for layer in range(len(weights) - 2, -1, -1):
        dz = dh * (pre[layer] > 0)
        grads[layer] = dz.T @ acts[layer]
        if layer > 0:
            dh = dz @ weights[layer]
    return np.concatenate([G.ravel() for G in grads])


def forward(params, x):
    """Network output at a single context ``x``."""
    x = check_vector(x, params.arch.input_dim)
    out, _, _ = _forward_pass(params.arch, params.weights(), x.reshape(1, -1))
    return float(out[0])


def forward_batch(params, X):
    X = check_matrix(X, params.arch.input_dim)
    out, _, _ = _forward_pass(params.arch, params.weights(), X)
    return out


def hidden_features(params, X):
    """Last hidden-layer activations, shape (m, hidden_width)."""
    X = check_matrix(X, params.arch.input_dim)
    _, _, acts = _forward_pass(params.arch, params.weights(), X)
    return acts[-1]


def gradient(params, x):
    """d f(x; theta) / d theta, flattened like ``theta``.

    The ReLU derivative at exactly zero is taken to be 0.
    """
    x = check_vector(x, params.arch.input_dim)
    weights = params.weights()
    _, pre, acts = _forward_pass(params.arch, weights, x.reshape(1, -1))
    return _backward_pass(params.arch, weights, pre, acts, np.ones(1))


def value_and_gradient(params, x):
    x = check_vector(x, params.arch.input_dim)
    weights = params.weights()
    out, pre, acts = _forward_pass(params.arch, weights, x.reshape(1, -1))
    return float(out[0]), _backward_pass(params.arch, weights, pre, acts, np.ones(1))


def mse(params, X, y):
    out = forward_batch(params, X)
    return float(np.mean((out - np.asarray(y, dtype=np.float64)) ** 2))


def train(params, history, eta, J, prox_lambda=0.0, anchor=None):
    """Run ``J`` full-batch gradient-descent steps on the mean squared error.

    Warm-starts from ``params`` and returns new parameters; the input is not
    modified.  With ``prox_lambda > 0`` the loss gains
    ``prox_lambda * ||theta - anchor||^2`` (``anchor`` defaults to the
    starting parameters).
    """
    if len(history) == 0:
        raise ValueError("cannot train on an empty history")
    eta = check_positive_float(eta, "eta", allow_zero=True)
    J = check_positive_int(J, "J", allow_zero=True)
    prox_lambda = check_positive_float(prox_lambda, "prox_lambda", allow_zero=True)
    arch = params.arch
    X = check_matrix(history.contexts, arch.input_dim, name="history contexts")
    y = np.asarray(history.rewards, dtype=np.float64)
    result = params.copy()
    theta = result.theta
    anchor_theta = params.theta if anchor is None else anchor.theta
    m = X.shape[0]
    if eta == 0.0:
        return result
    for step in range(J):
        weights = result.weights()
        out, pre, acts = _forward_pass(arch, weights, X)
        resid = out - y
        loss = float(resid @ resid) / m
        if prox_lambda:
            diff = theta - anchor_theta
            loss += prox_lambda * float(diff @ diff)
        if not math.isfinite(loss):
            raise TrainingDivergedError(
                f"non-finite loss at step {step} of {J} (eta={eta}, {m} samples, "
                f"max |theta|={np.max(np.abs(theta)):.3g})"
            )
        grad = _backward_pass(arch, weights, pre, acts, 2.0 * resid / m)
        if prox_lambda:
            grad += 2.0 * prox_lambda * (theta - anchor_theta)
        theta -= eta * grad
    if not np.all(np.isfinite(theta)):
        raise TrainingDivergedError(f"parameters became non-finite after {J} steps (eta={eta})")
    return result


class ReLUNetRegressor(RegressorMixin, BaseEstimator):
    """scikit-learn wrapper around the bias-free ReLU network.

    ``fit`` initialises fresh weights and runs ``n_steps`` full-batch gradient
    steps; ``partial_fit`` warm-starts from the current weights.
    """

    def __init__(self, hidden_width=50, hidden_layers=1, output_scale=None,
                 eta=1e-2, n_steps=5, prox_lambda=0.0, init="symmetric", random_state=None):
        self.hidden_width = hidden_width
        self.hidden_layers = hidden_layers
        self.output_scale = output_scale
        self.eta = eta
        self.n_steps = n_steps
        self.prox_lambda = prox_lambda
        self.init = init
        self.random_state = random_state

    def _init(self, n_features):
        self.arch_ = NetworkArch(n_features, self.hidden_width, self.hidden_layers,
                                 self.output_scale)
        seed = self.random_state if self.random_state is not None else 0
        self.params_ = init_network(self.arch_, seed, self.init)
        self.initial_params_ = self.params_.copy()
        self.n_features_in_ = n_features

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        self._init(X.shape[1])
        return self.partial_fit(X, y)

    def partial_fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        if not hasattr(self, "params_"):
            self._init(X.shape[1])
        hist = TrainingHistory.from_arrays(X, y)
        self.params_ = train(self.params_, hist, self.eta, self.n_steps,
                             prox_lambda=self.prox_lambda, anchor=self.initial_params_)
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        return forward_batch(self.params_, X)

    def gradient(self, x):
        check_is_fitted(self, "params_")
        return gradient(self.params_, x)
