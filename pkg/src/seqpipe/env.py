"""Simulated k-stage pipeline of arms.

Every arm owns a hidden reward direction, a description embedding, a linear map
that turns its input prompt into the next stage's prompt, an output-length law
and a price.  Rewards follow ``clip(h(x) + noise, 0, 1)`` with ``x`` the
elementwise product of prompt and description.

Randomness is split into independent counter-based streams keyed by
``(query_stream_seed, run seed, t, stage)`` so that every policy run on the same
seed sees the same queries and the same noise draws, whatever it selects.
"""

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_positive_float, check_positive_int, check_vector
from .context import ArmDescription, ArmId, make_context, synth_embedding, unit
from .cost import PRICE_TABLE, TokenPricing, lookup_pricing, realized_cost

REWARD_FAMILIES = ("linear", "quadratic", "cosine")
COMBINATORS = ("last_only", "weighted_sum")
DEFAULT_MODELS = tuple(PRICE_TABLE)


class EnumerationCapExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class OutputTokenLaw:
    """Output length ``round(slope * input_tokens + mean) + U{-jitter..jitter}``."""

    mean: int
    jitter: int = 0
    slope: float = 0.0

    def __post_init__(self):
        check_positive_int(self.mean, "mean", allow_zero=True)
        check_positive_int(self.jitter, "jitter", allow_zero=True)

    def expected_center(self, input_tokens):
        return max(0, int(math.floor(self.slope * input_tokens + self.mean + 0.5)))

    def sample(self, input_tokens, u):
        # u in [0, 1) selects the jitter offset
        offset = int(math.floor(u * (2 * self.jitter + 1))) - self.jitter
        return max(0, self.expected_center(input_tokens) + offset)


@dataclass
class PipelineSpec:
    """Everything needed to build a simulated pipeline.

    Per-arm fields (``reward_family``, ``models``, ``output_tokens``,
    ``hidden_vectors``, ``descriptions``) are nested lists indexed
    ``[subtask][arm]``; ``reward_family`` may also be a single string.
    """

    arms_per_subtask: list
    reward_family: object = "linear"
    noise_std: float = 0.05
    combinator: str = "last_only"
    weights: list = None
    embedding_dim: int = 32
    query_stream_seed: int = 0
    arm_seed: int = 0
    horizon: int = None
    input_token_range: tuple = (500, 1500)
    query_spread: float = 1.0
    transform_mix: float = 0.5
    description_scale: float = None
    models: list = None
    output_tokens: list = None
    pricing: dict = field(default_factory=dict)
    hidden_vectors: list = None
    descriptions: list = None

    def __post_init__(self):
        self.arms_per_subtask = [check_positive_int(n, "arms_per_subtask entry")
                                 for n in self.arms_per_subtask]
        if not self.arms_per_subtask:
            raise ValueError("arms_per_subtask must name at least one subtask")
        if isinstance(self.reward_family, str):
            self.reward_family = [[self.reward_family] * n for n in self.arms_per_subtask]
        self._check_nested(self.reward_family, "reward_family")
        for row in self.reward_family:
            for fam in row:
                if fam not in REWARD_FAMILIES:
                    raise ValueError(f"reward_family must be one of {REWARD_FAMILIES}, got {fam!r}")
        check_positive_float(self.noise_std, "noise_std", allow_zero=True)
        if self.combinator not in COMBINATORS:
            raise ValueError(f"combinator must be one of {COMBINATORS}, got {self.combinator!r}")
        if self.combinator == "weighted_sum":
            if self.weights is None or len(self.weights) != self.k:
                raise ValueError(f"weights must have one entry per subtask ({self.k})")
            if any(w < 0 for w in self.weights):
                raise ValueError("weights must be non-negative")
        check_positive_int(self.embedding_dim, "embedding_dim")
        if self.horizon is not None:
            check_positive_int(self.horizon, "horizon")
        lo, hi = self.input_token_range
        if not 0 <= lo <= hi:
            raise ValueError(f"input_token_range must satisfy 0 <= lo <= hi, got {self.input_token_range}")
        self.input_token_range = (int(lo), int(hi))
        check_positive_float(self.query_spread, "query_spread", allow_zero=True)
        if not 0.0 <= self.transform_mix <= 1.0:
            raise ValueError(f"transform_mix must lie in [0, 1], got {self.transform_mix}")
        if self.description_scale is None:
            self.description_scale = math.sqrt(self.embedding_dim)
        check_positive_float(self.description_scale, "description_scale")
        for name in ("models", "output_tokens", "hidden_vectors", "descriptions"):
            if getattr(self, name) is not None:
                self._check_nested(getattr(self, name), name)

    @property
    def k(self):
        return len(self.arms_per_subtask)

    def _check_nested(self, value, name):
        if len(value) != self.k or any(len(row) != n for row, n in zip(value, self.arms_per_subtask)):
            raise ValueError(f"{name} must have shape {self.arms_per_subtask} ([subtask][arm])")


@dataclass
class SimulatedArm:
    id: ArmId
    description: ArmDescription
    family: str
    hidden_vector: np.ndarray
    transform: np.ndarray
    output_token_law: OutputTokenLaw
    pricing: TokenPricing
    model: str
    normalize_output: bool = True

    def mean_reward(self, prompt):
        x = make_context(prompt, self.description.embedding)
        return mean_reward(self.family, x, self.hidden_vector)

    def next_prompt(self, prompt):
        out = self.transform @ prompt
        return unit(out) if self.normalize_output else out


@dataclass
class StageOutcome:
    reward: float
    mean_reward: float
    next_prompt: np.ndarray
    input_tokens: int
    output_tokens: int
    realized_cost: float


def mean_reward(family, x, a):
    """Noise-free reward of a context under one of the synthetic families, in [0, 1]."""
    s = float(x @ a)
    if family == "linear":
        value = (s + 1.0) / 2.0
    elif family == "quadratic":
        value = s * s
    elif family == "cosine":
        value = (math.cos(3.0 * s) + 1.0) / 2.0
    else:
        raise ValueError(f"unknown reward family {family!r}")
    return min(1.0, max(0.0, value))


def stage_step(arm, prompt, rng, noise_std=0.0, input_tokens=0):
    """Run one arm on one prompt.

    Draws exactly one normal and one uniform from ``rng`` whatever the arm,
    which keeps noise streams aligned across policies.
    """
    prompt = check_vector(prompt, arm.hidden_vector.shape[0], name="prompt")
    xi = rng.normal(0.0, 1.0) * noise_std
    u = rng.random()
    mu = arm.mean_reward(prompt)
    reward = min(1.0, max(0.0, mu + xi))
    out_tokens = arm.output_token_law.sample(input_tokens, u)
    return StageOutcome(
        reward=reward,
        mean_reward=mu,
        next_prompt=arm.next_prompt(prompt),
        input_tokens=int(input_tokens),
        output_tokens=out_tokens,
        realized_cost=realized_cost(arm.pricing, input_tokens, out_tokens),
    )


def super_reward(spec, base_rewards):
    if len(base_rewards) != spec.k:
        raise ValueError(f"expected {spec.k} base rewards, got {len(base_rewards)}")
    if spec.combinator == "last_only":
        return float(base_rewards[-1])
    return float(sum(w * r for w, r in zip(spec.weights, base_rewards)))


def _orthogonal(rng, d):
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def build_arms(spec):
    """Construct every ``SimulatedArm`` of the pipeline from ``spec.arm_seed``."""
    d = spec.embedding_dim
    rng = np.random.default_rng([spec.arm_seed, 0xA5])
    arms = []
    for i, n_arms in enumerate(spec.arms_per_subtask):
        row = []
        for j in range(n_arms):
            arm_id = ArmId(i, j)
            model = (spec.models[i][j] if spec.models is not None
                     else DEFAULT_MODELS[(i + j) % len(DEFAULT_MODELS)])
            tag = f"subtask{i}/arm{j}/{model}"
            if spec.descriptions is not None:
                desc = check_vector(spec.descriptions[i][j], d, name=f"descriptions[{i}][{j}]")
            else:
                desc = spec.description_scale * synth_embedding(tag, d, spec.arm_seed)
            # always consume the same draws so overrides do not shift other arms
            a = unit(rng.standard_normal(d))
            q = _orthogonal(rng, d)
            law_draw = rng.integers(150, 601)
            if spec.hidden_vectors is not None:
                a = unit(check_vector(spec.hidden_vectors[i][j], d, name=f"hidden_vectors[{i}][{j}]"))
            transform = (1.0 - spec.transform_mix) * np.eye(d) + spec.transform_mix * q
            if spec.output_tokens is not None:
                law = OutputTokenLaw(*spec.output_tokens[i][j])
            else:
                law = OutputTokenLaw(int(law_draw), 50)
            key = f"{i},{j}"
            if key in spec.pricing:
                pricing = TokenPricing(*spec.pricing[key])
            else:
                pricing = lookup_pricing(model)
            row.append(SimulatedArm(
                id=arm_id,
                description=ArmDescription(arm_id, tag, desc),
                family=spec.reward_family[i][j],
                hidden_vector=a,
                transform=transform,
                output_token_law=law,
                pricing=pricing,
                model=model,
            ))
        arms.append(row)
    return arms


class PipelineEnv:
    """One simulated pipeline bound to a run seed."""

    def __init__(self, spec, seed=0, enumeration_cap=10_000):
        self.spec = spec
        self.seed = int(seed)
        self.enumeration_cap = enumeration_cap
        self.arms = build_arms(spec)
        d = spec.embedding_dim
        self.query_anchor = synth_embedding("query-anchor", d, spec.arm_seed)

    @property
    def descriptions(self):
        return [[arm.description.embedding for arm in row] for row in self.arms]

    def _stream(self, t, stage, purpose):
        return np.random.default_rng(
            [self.spec.query_stream_seed & (2**64 - 1), self.seed & (2**64 - 1), t, stage, purpose])

    def next_query(self, t):
        """Unit-norm query embedding and its input token count for round ``t``."""
        if t < 1 or (self.spec.horizon is not None and t > self.spec.horizon):
            raise ValueError(f"round {t} outside [1, {self.spec.horizon}]")
        rng = self._stream(t, 0, 0)
        d = self.spec.embedding_dim
        noise = rng.standard_normal(d) / math.sqrt(d)
        lo, hi = self.spec.input_token_range
        tokens = int(rng.integers(lo, hi + 1))
        return unit(self.query_anchor + self.spec.query_spread * noise), tokens

    def step(self, t, subtask, arm, prompt, input_tokens):
        rng = self._stream(t, subtask + 1, 1)
        return stage_step(self.arms[subtask][arm], prompt, rng, self.spec.noise_std, input_tokens)

    def rollout_means(self, super_arm, query):
        """Noise-free base rewards of a super arm on one query."""
        prompt, rewards = query, []
        for i, j in enumerate(super_arm):
            arm = self.arms[i][j]
            rewards.append(arm.mean_reward(prompt))
            prompt = arm.next_prompt(prompt)
        return rewards

    def oracle_best(self, query):
        """Best super arm for ``query`` by exhaustive noise-free enumeration.

        Ties go to the lexicographically smallest super arm.
        """
        total = math.prod(self.spec.arms_per_subtask)
        if total > self.enumeration_cap:
            raise EnumerationCapExceeded(
                f"{total} super arms exceed the enumeration cap of {self.enumeration_cap}")
        best_arm, best_value = None, -math.inf

        def visit(i, prompt, prefix, rewards):
            nonlocal best_arm, best_value
            if i == self.spec.k:
                value = super_reward(self.spec, rewards)
                if value > best_value:
                    best_arm, best_value = tuple(prefix), value
                return
            for j, arm in enumerate(self.arms[i]):
                r = arm.mean_reward(prompt)
                nxt = arm.next_prompt(prompt) if i + 1 < self.spec.k else None
                visit(i + 1, nxt, prefix + [j], rewards + [r])

        visit(0, query, [], [])
        return best_arm, best_value

    def best_last_stage_arm(self, query, upstream):
        """Best final-stage arm given the upstream arms (noise-free)."""
        prompt = query
        for i, j in enumerate(upstream):
            prompt = self.arms[i][j].next_prompt(prompt)
        values = [arm.mean_reward(prompt) for arm in self.arms[len(upstream)]]
        return int(np.argmax(values)), values


def all_super_arms(spec):
    return list(itertools.product(*[range(n) for n in spec.arms_per_subtask]))
