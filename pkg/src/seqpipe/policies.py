"""Arm-selection policies for a sequential pipeline.

All policies share one online protocol, estimator style:

* construct with hyper-parameters only (``get_params``/``set_params``/``clone``
  work as in scikit-learn);
* ``fit(descriptions)`` builds the learning state, where
  ``descriptions[i][j]`` is the description embedding of arm ``j`` of
  subtask ``i``;
* ``select(i, prompt, costs)`` returns ``(arm_index, SelectionTrace)`` and does
  not change learnt state;
* ``partial_fit(round_entries)`` consumes one ``(arm, context, reward)`` per
  subtask after the whole pipeline has run.
"""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_positive_float, check_positive_int, check_vector
from .confidence import ConfidenceState
from .context import make_context
from .mlp import (
    NetworkArch,
    NetworkParams,
    TrainingHistory,
    hidden_features,
    init_network,
    train,
    value_and_gradient,
)

TIE_TOLERANCE = 1e-12


@dataclass
class ArmScore:
    estimate: float
    bonus: float
    cost_penalty: float
    total: float


@dataclass
class SelectionTrace:
    subtask: int
    scores: list
    chosen: int
    nu: float = 1.0

    def reconstruct(self, k):
        s = self.scores[k]
        return s.estimate + self.nu * s.bonus - s.cost_penalty


@dataclass
class ArmState:
    params: NetworkParams
    confidence: ConfidenceState
    history: TrainingHistory
    initial_params: NetworkParams = None
    n_updates: int = 0


@dataclass
class _Pending:
    # gradient and Z^{-1} g of the chosen arm, computed at selection time
    arm: int
    context: np.ndarray
    grad: np.ndarray
    z_inv_grad: np.ndarray = None


def _seed(random_state, *keys):
    base = 0 if random_state is None else int(random_state)
    return np.random.SeedSequence([base & (2**64 - 1), *keys])


def _argmax(totals, tie_break, rng):
    totals = np.asarray(totals)
    best = totals.max()
    winners = np.flatnonzero(totals >= best - TIE_TOLERANCE)
    if len(winners) == 1 or tie_break == "lowest_index":
        return int(winners[0])
    return int(winners[rng.integers(len(winners))])


class BasePolicy(BaseEstimator):
    """Shared plumbing: parameter checks, per-subtask bookkeeping."""

    uses_alpha = True

    def _check_common(self, descriptions):
        if not descriptions or any(len(row) == 0 for row in descriptions):
            raise ValueError("every subtask needs at least one arm")
        self.n_arms_ = [len(row) for row in descriptions]
        self.descriptions_ = [[check_vector(d, name="description") for d in row]
                              for row in descriptions]
        self.k_ = len(descriptions)

    def _alpha(self, i):
        alpha = getattr(self, "alpha", None)
        if alpha is None:
            return 0.0
        if np.isscalar(alpha):
            return float(alpha)
        return float(alpha[i])

    def _check_costs(self, i, costs):
        if costs is None:
            return np.zeros(self.n_arms_[i])
        costs = np.asarray(costs, dtype=np.float64)
        if costs.shape != (self.n_arms_[i],):
            raise ValueError(f"expected {self.n_arms_[i]} costs for subtask {i}, got {costs.shape}")
        return costs

    def initialize(self, descriptions, **kwargs):
        return self.fit(descriptions, **kwargs)

    def update(self, round_entries):
        return self.partial_fit(round_entries)


class _NeuralUCBBase(BasePolicy):
    """Common select/update for the neural UCB policies."""

    def _validate_hyper(self):
        check_positive_float(self.eta, "eta")
        check_positive_int(self.J, "J")
        check_positive_float(self.lam, "lam")
        check_positive_float(self.nu, "nu", allow_zero=True)
        alpha = [self.alpha] if np.isscalar(self.alpha) else list(self.alpha)
        if any(a < 0 for a in alpha):
            raise ValueError("alpha entries must be >= 0")
        if not np.isscalar(self.alpha) and len(alpha) != self.k_:
            raise ValueError(f"alpha has {len(alpha)} entries but the pipeline has {self.k_} subtasks")
        if self.tie_break not in ("lowest_index", "seeded_random"):
            raise ValueError(f"unknown tie_break {self.tie_break!r}")

    def _arch(self, input_dim):
        return NetworkArch(input_dim, self.hidden_width, self.hidden_layers, self.output_scale)

    def _new_state(self, input_dim, *seed_keys):
        arch = self._arch(input_dim)
        params = init_network(arch, _seed(self.random_state, *seed_keys), self.init)
        return ArmState(
            params=params,
            confidence=ConfidenceState(arch.n_params, self.lam, self.matrix_mode),
            history=TrainingHistory(input_dim),
            initial_params=params.copy(),
        )

    def _state_for(self, i, j):
        raise NotImplementedError

    def select(self, i, prompt, costs=None):
        check_is_fitted(self, "states_")
        costs = self._check_costs(i, costs)
        width = self.hidden_width
        alpha = self._alpha(i) if self.cost_aware else 0.0
        scores, cache = [], []
        for j, desc in enumerate(self.descriptions_[i]):
            state = self._state_for(i, j)
            x = make_context(prompt, desc)
            f, g = value_and_gradient(state.params, x)
            z_inv_g = state.confidence.apply_inverse(g)
            bonus = state.confidence.bonus(g, width, z_inv_g=z_inv_g)
            if self.cost_aware:
                penalty = alpha * costs[j]
                total = f + self.nu * bonus - penalty
            else:
                penalty = 0.0
                total = f + self.nu * bonus
            scores.append(ArmScore(f, bonus, penalty, total))
            cache.append(_Pending(j, x, g, z_inv_g))
        chosen = _argmax([s.total for s in scores], self.tie_break, self.rng_)
        self._pending[i] = cache[chosen]
        return chosen, SelectionTrace(i, scores, chosen, self.nu)

    def _pending_for(self, i, j, x):
        pend = self._pending.get(i)
        if pend is not None and pend.arm == j and np.array_equal(pend.context, x):
            return pend
        state = self._state_for(i, j)
        _, g = value_and_gradient(state.params, x)
        return _Pending(j, x, g, None)

    def partial_fit(self, round_entries):
        check_is_fitted(self, "states_")
        if len(round_entries) != self.k_:
            raise ValueError(f"expected one entry per subtask ({self.k_}), got {len(round_entries)}")
        for i, (j, x, reward) in enumerate(round_entries):
            x = check_vector(x, name="context")
            state = self._state_for(i, j)
            pend = self._pending_for(i, j, x)
            state.history.append(x, reward)
            # Z is updated with the gradient at the pre-training parameters
            state.confidence.update(pend.grad, self.hidden_width, z_inv_g=pend.z_inv_grad)
            state.params = train(state.params, state.history, self.eta, self.J,
                                 prox_lambda=self.prox_lambda, anchor=state.initial_params)
            state.n_updates += 1
        self._pending = {}
        return self


class SequentialBandits(_NeuralUCBBase):
    """One network and one confidence matrix per (subtask, arm).

    Arm ``j`` of subtask ``i`` scores
    ``f_ij(x) + nu * sqrt(g^T Z_ij^{-1} g / n) - alpha_i * C_j``; only the arms
    actually played are updated.  ``cost_aware=False`` drops the cost term
    altogether (the cost-agnostic variant).
    """

    def __init__(self, alpha=0.0, eta=3e-4, J=5, lam=1.0, nu=1.0, hidden_width=50,
                 hidden_layers=1, output_scale=None, init="symmetric", matrix_mode="exact",
                 tie_break="seeded_random", prox_lambda=0.0, cost_aware=True,
                 random_state=None):
        self.alpha = alpha
        self.eta = eta
        self.J = J
        self.lam = lam
        self.nu = nu
        self.hidden_width = hidden_width
        self.hidden_layers = hidden_layers
        self.output_scale = output_scale
        self.init = init
        self.matrix_mode = matrix_mode
        self.tie_break = tie_break
        self.prox_lambda = prox_lambda
        self.cost_aware = cost_aware
        self.random_state = random_state

    def fit(self, descriptions):
        self._check_common(descriptions)
        self._validate_hyper()
        self.states_ = [[self._new_state(len(d), i, j) for j, d in enumerate(row)]
                        for i, row in enumerate(self.descriptions_)]
        self.rng_ = np.random.default_rng(_seed(self.random_state, 0xB1))
        self._pending = {}
        return self

    def _state_for(self, i, j):
        return self.states_[i][j]


class CostAwareNeuralUCB(_NeuralUCBBase):
    """NeuralUCB with one shared network and confidence matrix per subtask."""

    def __init__(self, alpha=0.0, eta=3e-4, J=5, lam=1.0, nu=1.0, hidden_width=50,
                 hidden_layers=1, output_scale=None, init="symmetric", matrix_mode="exact",
                 tie_break="seeded_random", prox_lambda=0.0, cost_aware=True,
                 random_state=None):
        self.alpha = alpha
        self.eta = eta
        self.J = J
        self.lam = lam
        self.nu = nu
        self.hidden_width = hidden_width
        self.hidden_layers = hidden_layers
        self.output_scale = output_scale
        self.init = init
        self.matrix_mode = matrix_mode
        self.tie_break = tie_break
        self.prox_lambda = prox_lambda
        self.cost_aware = cost_aware
        self.random_state = random_state

    def fit(self, descriptions):
        self._check_common(descriptions)
        self._validate_hyper()
        # seeded like arm 0 of SequentialBandits, so single-arm pipelines coincide
        self.states_ = [self._new_state(len(row[0]), i, 0)
                        for i, row in enumerate(self.descriptions_)]
        self.rng_ = np.random.default_rng(_seed(self.random_state, 0xB1))
        self._pending = {}
        return self

    def _state_for(self, i, j):
        return self.states_[i]


class CostAwareNeuralLinUCB(BasePolicy):
    """Linear UCB on learnt features, one shared representation per subtask.

    Features are the last hidden layer of the subtask's network.  Ridge
    statistics ``A = lam I + sum phi phi^T`` and ``b = sum phi r`` drive the
    score ``theta^T phi + nu * sqrt(phi^T A^{-1} phi) - alpha_i C_j``.  Every
    ``retrain_every`` updates the network is retrained for ``J`` steps on the
    subtask history and ``A``, ``b`` are rebuilt from the new features;
    ``retrain_every=0`` freezes the representation.
    """

    def __init__(self, alpha=0.0, eta=3e-4, J=5, lam=1.0, nu=1.0, hidden_width=50,
                 hidden_layers=1, output_scale=None, init="symmetric", retrain_every=10,
                 tie_break="seeded_random", cost_aware=True, random_state=None):
        self.alpha = alpha
        self.eta = eta
        self.J = J
        self.lam = lam
        self.nu = nu
        self.hidden_width = hidden_width
        self.hidden_layers = hidden_layers
        self.output_scale = output_scale
        self.init = init
        self.retrain_every = retrain_every
        self.tie_break = tie_break
        self.cost_aware = cost_aware
        self.random_state = random_state

    _validate_hyper = _NeuralUCBBase._validate_hyper

    def fit(self, descriptions, representations=None):
        """``representations`` optionally fixes the per-subtask ``NetworkParams``."""
        self._check_common(descriptions)
        self._validate_hyper()
        check_positive_int(self.retrain_every, "retrain_every", allow_zero=True)
        self.networks_ = []
        for i, row in enumerate(self.descriptions_):
            if representations is not None:
                params = representations[i]
            else:
                arch = NetworkArch(len(row[0]), self.hidden_width, self.hidden_layers,
                                   self.output_scale)
                params = init_network(arch, _seed(self.random_state, i, 0), self.init)
            self.networks_.append(params)
        width = [p.arch.hidden_width for p in self.networks_]
        self.states_ = [ConfidenceState(w, self.lam, "exact") for w in width]
        self.b_ = [np.zeros(w) for w in width]
        self.histories_ = [TrainingHistory(p.arch.input_dim) for p in self.networks_]
        self.rng_ = np.random.default_rng(_seed(self.random_state, 0xB1))
        self.n_updates_ = 0
        return self

    def theta_hat(self, i):
        return self.states_[i].apply_inverse(self.b_[i])

    def features(self, i, x):
        return hidden_features(self.networks_[i], x)[0]

    def select(self, i, prompt, costs=None):
        check_is_fitted(self, "states_")
        costs = self._check_costs(i, costs)
        alpha = self._alpha(i) if self.cost_aware else 0.0
        theta = self.theta_hat(i)
        contexts = np.array([make_context(prompt, d) for d in self.descriptions_[i]])
        phis = hidden_features(self.networks_[i], contexts)
        scores = []
        for j, phi in enumerate(phis):
            est = float(theta @ phi)
            bonus = self.states_[i].bonus(phi, 1)
            penalty = alpha * costs[j]
            total = est + self.nu * bonus - penalty
            scores.append(ArmScore(est, bonus, penalty, total))
        chosen = _argmax([s.total for s in scores], self.tie_break, self.rng_)
        return chosen, SelectionTrace(i, scores, chosen, self.nu)

    def partial_fit(self, round_entries):
        check_is_fitted(self, "states_")
        if len(round_entries) != self.k_:
            raise ValueError(f"expected one entry per subtask ({self.k_}), got {len(round_entries)}")
        self.n_updates_ += 1
        retrain = self.retrain_every and self.n_updates_ % self.retrain_every == 0
        for i, (j, x, reward) in enumerate(round_entries):
            x = check_vector(x, name="context")
            self.histories_[i].append(x, reward)
            if retrain:
                self.networks_[i] = train(self.networks_[i], self.histories_[i], self.eta, self.J)
                self._rebuild(i)
            else:
                phi = self.features(i, x)
                self.states_[i].update(phi, 1)
                self.b_[i] += reward * phi
        return self

    def _rebuild(self, i):
        hist = self.histories_[i]
        phis = hidden_features(self.networks_[i], hist.contexts)
        state = ConfidenceState(phis.shape[1], self.lam, "exact")
        for phi in phis:
            state.update(phi, 1)
        self.states_[i] = state
        self.b_[i] = phis.T @ hist.rewards


class RandomPolicy(BasePolicy):
    """Uniformly random arm for every subtask."""

    def __init__(self, random_state=None):
        self.random_state = random_state

    def fit(self, descriptions):
        self._check_common(descriptions)
        self.states_ = None
        self.rng_ = np.random.default_rng(_seed(self.random_state, 0xC3))
        return self

    def select(self, i, prompt=None, costs=None):
        check_is_fitted(self, "rng_")
        n = self.n_arms_[i]
        chosen = int(self.rng_.integers(n))
        return chosen, SelectionTrace(i, [], chosen, 0.0)

    def partial_fit(self, round_entries):
        return self


class FixedPolicy(BasePolicy):
    """Always plays ``arms[i]`` on subtask ``i``."""

    def __init__(self, arms=None):
        self.arms = arms

    def fit(self, descriptions):
        self._check_common(descriptions)
        arms = [0] * self.k_ if self.arms is None else list(self.arms)
        if len(arms) != self.k_:
            raise ValueError(f"arms has {len(arms)} entries but the pipeline has {self.k_} subtasks")
        for i, j in enumerate(arms):
            if not 0 <= j < self.n_arms_[i]:
                raise ValueError(f"fixed arm {j} out of range for subtask {i} ({self.n_arms_[i]} arms)")
        self.fixed_ = arms
        self.rng_ = None
        return self

    def select(self, i, prompt=None, costs=None):
        check_is_fitted(self, "fixed_")
        chosen = self.fixed_[i]
        return chosen, SelectionTrace(i, [], chosen, 0.0)

    def partial_fit(self, round_entries):
        return self


POLICIES = {
    "seqbandits": SequentialBandits,
    "ca_neuralucb": CostAwareNeuralUCB,
    "ca_neurallinucb": CostAwareNeuralLinUCB,
    "random": RandomPolicy,
    "fixed": FixedPolicy,
}


def make_policy(name, **params):
    try:
        cls = POLICIES[name]
    except KeyError:
        raise ValueError(f"unknown policy {name!r}; choose from {sorted(POLICIES)}") from None
    return cls(**params)
