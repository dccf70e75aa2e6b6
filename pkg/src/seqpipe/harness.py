"""Experiment runner: online loop, metrics, aggregation and file export."""

import csv
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import jsonschema
import numpy as np

from .context import ArmId, make_context
from .cost import OutputLengthPredictor, predicted_cost
from .env import PipelineEnv, PipelineSpec, super_reward
from .policies import POLICIES, make_policy
from .presets import preset

logger = logging.getLogger(__name__)

SERIES = ("cum_net_reward", "cum_cost", "cum_regret")


class ConfigError(ValueError):
    """Invalid experiment configuration; ``field`` names the offending key."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


_NESTED_NUM = {"type": "array", "items": {"type": "array", "items": {"type": "number"}}}

SPEC_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "preset": {"type": "string"},
        "arms_per_subtask": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
        "reward_family": {"oneOf": [
            {"type": "string", "enum": ["linear", "quadratic", "cosine"]},
            {"type": "array", "items": {"type": "array", "items": {"enum": ["linear", "quadratic", "cosine"]}}},
        ]},
        "noise_std": {"type": "number", "minimum": 0},
        "combinator": {"enum": ["last_only", "weighted_sum"]},
        "weights": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "embedding_dim": {"type": "integer", "minimum": 1},
        "query_stream_seed": {"type": "integer"},
        "arm_seed": {"type": "integer"},
        "input_token_range": {"type": "array", "items": {"type": "integer", "minimum": 0},
                              "minItems": 2, "maxItems": 2},
        "query_spread": {"type": "number", "minimum": 0},
        "transform_mix": {"type": "number", "minimum": 0, "maximum": 1},
        "description_scale": {"type": "number", "exclusiveMinimum": 0},
        "models": {"type": "array", "items": {"type": "array", "items": {"type": "string"}}},
        "output_tokens": {"type": "array", "items": {"type": "array", "items": {
            "type": "array", "items": {"type": "number"}, "minItems": 1, "maxItems": 3}}},
        "pricing": {"type": "object", "additionalProperties": {
            "type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 2, "maxItems": 2}},
        "hidden_vectors": {"type": "array", "items": _NESTED_NUM},
        "descriptions": {"type": "array", "items": _NESTED_NUM},
    },
}

POLICY_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["name"],
    "properties": {
        "name": {"enum": sorted(POLICIES)},
        "alpha": {"oneOf": [{"type": "number", "minimum": 0},
                            {"type": "array", "items": {"type": "number", "minimum": 0}}]},
        "eta": {"type": "number", "exclusiveMinimum": 0},
        "J": {"type": "integer", "minimum": 1},
        "lam": {"type": "number", "exclusiveMinimum": 0},
        "nu": {"type": "number", "minimum": 0},
        "hidden_width": {"type": "integer", "minimum": 1},
        "hidden_layers": {"type": "integer", "minimum": 1},
        "output_scale": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "init": {"enum": ["he", "symmetric"]},
        "matrix_mode": {"enum": ["exact", "diagonal"]},
        "tie_break": {"enum": ["lowest_index", "seeded_random"]},
        "prox_lambda": {"type": "number", "minimum": 0},
        "retrain_every": {"type": "integer", "minimum": 0},
        "cost_aware": {"type": "boolean"},
        "arms": {"type": "array", "items": {"type": "integer", "minimum": 0}},
    },
}

PREDICTOR_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["oracle_linear", "constant", "table"]},
        "value": {"type": "integer", "minimum": 0},
        "coefficients": {"type": "object", "additionalProperties": {
            "type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}},
        "table": {"type": "object", "additionalProperties": {"type": "integer", "minimum": 0}},
    },
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "seqpipe experiment",
    "type": "object",
    "additionalProperties": False,
    "required": ["spec", "policy", "T"],
    "properties": {
        "spec": {"oneOf": [{"type": "string"}, SPEC_SCHEMA]},
        "policy": POLICY_SCHEMA,
        "T": {"type": "integer", "minimum": 1},
        "seeds": {"type": "array", "items": {"type": "integer"}, "minItems": 1},
        "out": {"type": "string"},
        "enumeration_cap": {"type": "integer", "minimum": 1},
        "predictor": PREDICTOR_SCHEMA,
    },
}


@dataclass
class PolicyConfig:
    alpha: object = 0.0
    eta: float = 3e-4
    J: int = 5
    lam: float = 1.0
    nu: float = 1.0
    hidden_width: int = 50
    hidden_layers: int = 1
    output_scale: float = None
    init: str = "symmetric"
    matrix_mode: str = "exact"
    tie_break: str = "seeded_random"
    prox_lambda: float = 0.0
    retrain_every: int = 10
    cost_aware: bool = True
    arms: list = None

    def alpha_vector(self, k):
        if np.isscalar(self.alpha):
            return [float(self.alpha)] * k
        return [float(a) for a in self.alpha]

    def estimator_params(self, name, k, seed):
        """Keyword arguments accepted by policy ``name``."""
        accepted = POLICIES[name]().get_params()
        params = {f.name: getattr(self, f.name) for f in fields(self) if f.name in accepted}
        if "alpha" in params:
            params["alpha"] = self.alpha_vector(k)
        if "random_state" in accepted:
            params["random_state"] = seed
        return params


@dataclass
class ExperimentConfig:
    spec: PipelineSpec
    policy: str
    policy_config: PolicyConfig
    T: int
    seeds: list = field(default_factory=lambda: [0])
    out: str = None
    enumeration_cap: int = 10_000
    predictor: dict = None
    raw: dict = field(default_factory=dict, repr=False)

    def with_policy(self, name, **overrides):
        raw = json.loads(json.dumps(self.raw))
        raw["policy"] = {**raw["policy"], "name": name, **overrides}
        if name != "fixed":
            raw["policy"].pop("arms", None)
        return config_from_dict(raw)


def _resolve_spec(value):
    if isinstance(value, str):
        try:
            return preset(value)
        except KeyError as exc:
            raise ConfigError("spec", exc.args[0]) from None
    value = dict(value)
    name = value.pop("preset", None)
    if name is None:
        return value
    try:
        base = preset(name)
    except KeyError as exc:
        raise ConfigError("spec.preset", exc.args[0]) from None
    base.update(value)
    return base


def config_from_dict(raw):
    """Validate ``raw`` against the schema and the cross-field invariants."""
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(where, exc.message) from None
    spec_dict = _resolve_spec(raw["spec"])
    T = raw["T"]
    try:
        spec = PipelineSpec(**spec_dict, horizon=T)
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError("spec", str(exc)) from None
    pol = dict(raw["policy"])
    name = pol.pop("name")
    pconf = PolicyConfig(**pol)
    if not np.isscalar(pconf.alpha) and len(pconf.alpha) != spec.k:
        raise ConfigError("policy.alpha",
                          f"has {len(pconf.alpha)} entries but the pipeline has {spec.k} subtasks")
    if name == "fixed":
        if pconf.arms is None:
            raise ConfigError("policy.arms", "the fixed policy needs one arm index per subtask")
        if len(pconf.arms) != spec.k:
            raise ConfigError("policy.arms", f"has {len(pconf.arms)} entries, expected {spec.k}")
        for i, (j, n) in enumerate(zip(pconf.arms, spec.arms_per_subtask)):
            if j >= n:
                raise ConfigError(f"policy.arms.{i}", f"arm {j} out of range ({n} arms)")
    if spec.combinator == "weighted_sum" and "weights" not in spec_dict:
        raise ConfigError("spec.weights", "weighted_sum needs weights")
    cap = raw.get("enumeration_cap", 10_000)
    if math.prod(spec.arms_per_subtask) > cap:
        raise ConfigError("enumeration_cap",
                          f"{math.prod(spec.arms_per_subtask)} super arms exceed the cap of {cap}")
    return ExperimentConfig(
        spec=spec,
        policy=name,
        policy_config=pconf,
        T=T,
        seeds=list(raw.get("seeds", [0])),
        out=raw.get("out"),
        enumeration_cap=cap,
        predictor=raw.get("predictor"),
        raw=json.loads(json.dumps(raw)),
    )


def load_config(path):
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON: {exc}") from None
    return config_from_dict(raw)


def build_predictor(config, env):
    """Output-length predictor; defaults to the one matched to the simulator."""
    pred = config.predictor
    if pred is None or (pred["kind"] == "oracle_linear" and "coefficients" not in pred):
        return OutputLengthPredictor.linear({
            (i, j): (arm.output_token_law.slope, arm.output_token_law.mean)
            for i, row in enumerate(env.arms) for j, arm in enumerate(row)})
    if pred["kind"] == "constant":
        return OutputLengthPredictor.constant(pred.get("value", 0))
    parse = lambda key: tuple(int(v) for v in key.split(","))  # noqa: E731
    if pred["kind"] == "table":
        return OutputLengthPredictor.from_table({parse(k): v for k, v in pred["table"].items()})
    return OutputLengthPredictor.linear({parse(k): v for k, v in pred["coefficients"].items()})


@dataclass
class RoundRecord:
    t: int
    choices: list
    base_rewards: list
    super_reward: float
    predicted_costs: list
    realized_costs: list
    net_reward: float
    oracle_arm: tuple
    oracle_reward: float
    regret_increment: float
    cum_regret: float = 0.0
    cum_net_reward: float = 0.0
    cum_cost: float = 0.0

    @property
    def predicted_cost(self):
        return float(sum(self.predicted_costs))

    @property
    def realized_cost(self):
        return float(sum(self.realized_costs))


@dataclass
class RunSummary:
    policy: str
    seed: int
    series: dict
    selection_counts: list
    runtime_seconds: float


@dataclass
class RunResult:
    summary: RunSummary
    records: list


def run_experiment(config, seed, policy=None):
    """Play ``config.T`` rounds of the pipeline with one policy and one seed."""
    name = policy or config.policy
    spec = config.spec
    started = time.perf_counter()
    env = PipelineEnv(spec, seed, config.enumeration_cap)
    predictor = build_predictor(config, env)
    alpha = config.policy_config.alpha_vector(spec.k)
    est = make_policy(name, **config.policy_config.estimator_params(name, spec.k, seed))
    est.fit(env.descriptions)

    counts = [[0] * n for n in spec.arms_per_subtask]
    records = []
    cum_regret = cum_net = cum_cost = 0.0
    for t in range(1, config.T + 1):
        query, tokens = env.next_query(t)
        oracle_arm, oracle_value = env.oracle_best(query)
        prompt = query
        choices, rewards, pred_costs, real_costs, entries = [], [], [], [], []
        for i in range(spec.k):
            costs = [predicted_cost(arm.pricing, predictor, ArmId(i, j), tokens)
                     for j, arm in enumerate(env.arms[i])]
            j, _ = est.select(i, prompt, costs)
            outcome = env.step(t, i, j, prompt, tokens)
            entries.append((j, make_context(prompt, env.arms[i][j].description.embedding),
                            outcome.reward))
            choices.append(j)
            rewards.append(outcome.reward)
            pred_costs.append(costs[j])
            real_costs.append(outcome.realized_cost)
            counts[i][j] += 1
            prompt, tokens = outcome.next_prompt, outcome.output_tokens
        est.partial_fit(entries)
        total = super_reward(spec, rewards)
        net = total - sum(a * c for a, c in zip(alpha, real_costs))
        inc = oracle_value - total
        cum_regret += inc
        cum_net += net
        cum_cost += sum(real_costs)
        if not all(map(math.isfinite, (total, net, inc, cum_cost))):
            raise FloatingPointError(
                f"non-finite metric in round {t} (policy={name}, seed={seed}): "
                f"reward={total}, net={net}, regret={inc}, cost={cum_cost}")
        records.append(RoundRecord(t, choices, rewards, total, pred_costs, real_costs, net,
                                   oracle_arm, oracle_value, inc, cum_regret, cum_net, cum_cost))
    series = {
        "cum_net_reward": np.array([r.cum_net_reward for r in records]),
        "cum_cost": np.array([r.cum_cost for r in records]),
        "cum_regret": np.array([r.cum_regret for r in records]),
    }
    summary = RunSummary(name, int(seed), series, counts, time.perf_counter() - started)
    logger.info("policy=%s seed=%d T=%d regret=%.3f net=%.3f cost=%.5f (%.1fs)", name, seed,
                config.T, cum_regret, cum_net, cum_cost, summary.runtime_seconds)
    return RunResult(summary, records)


def aggregate(runs):
    """Pointwise mean and population std of every cumulative series."""
    if not runs:
        raise ValueError("nothing to aggregate")
    out = {}
    for key in runs[0].series:
        stack = np.vstack([np.asarray(r.series[key], dtype=np.float64) for r in runs])
        out[key] = {"mean": stack.mean(axis=0), "std": stack.std(axis=0)}
    return out


def _worker_count(n_jobs):
    env = os.environ.get("SEQPIPE_THREADS")
    cap = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(cap, n_jobs))


def _run_job(args):
    config, seed, name = args
    return run_experiment(config, seed, name)


def run_many(config, policies=None, seeds=None):
    """Run every (policy, seed) pair, in parallel when allowed.

    Returns ``{policy: [RunResult, ...]}`` with seeds in the given order.
    """
    policies = policies or [config.policy]
    seeds = config.seeds if seeds is None else seeds
    jobs = [(config, s, p) for p in policies for s in seeds]
    workers = _worker_count(len(jobs))
    if workers == 1:
        results = [_run_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_job, jobs))
    grouped = {p: [] for p in policies}
    for (_, _, p), res in zip(jobs, results):
        grouped[p].append(res)
    return grouped


def csv_header(k):
    return (["t"] + [f"choice_{i + 1}" for i in range(k)] + [f"r_{i + 1}" for i in range(k)]
            + ["super_reward", "predicted_cost", "realized_cost", "net_reward", "oracle_reward",
               "regret_increment", "cum_regret", "cum_net_reward", "cum_cost"])


def rounds_csv(records, k):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(csv_header(k))
    for r in records:
        writer.writerow([r.t, *r.choices, *map(repr, r.base_rewards), repr(r.super_reward),
                         repr(r.predicted_cost), repr(r.realized_cost), repr(r.net_reward),
                         repr(r.oracle_reward), repr(r.regret_increment), repr(r.cum_regret),
                         repr(r.cum_net_reward), repr(r.cum_cost)])
    return buf.getvalue()


def summary_dict(config, results, policy):
    runs = [r.summary for r in results]
    agg = aggregate(runs)
    per_seed = {str(r.seed): r.selection_counts for r in runs}
    mean_counts = [[float(np.mean([run.selection_counts[i][j] for run in runs]))
                    for j in range(n)] for i, n in enumerate(config.spec.arms_per_subtask)]
    raw = json.loads(json.dumps(config.raw))
    raw["policy"]["name"] = policy
    raw["seeds"] = [r.seed for r in runs]
    return {
        "config": raw,
        "policy": policy,
        "seeds": [r.seed for r in runs],
        "per_round": {k: {"mean": v["mean"].tolist(), "std": v["std"].tolist()}
                      for k, v in agg.items()},
        "selection_counts": mean_counts,
        "selection_counts_per_seed": per_seed,
        "runtime_seconds": float(sum(r.runtime_seconds for r in runs)),
    }


def export(config, grouped, out_dir):
    """Write rounds CSVs, summary.json and curves.svg under ``out_dir``.

    A single policy writes ``seed_<s>/rounds.csv`` and ``summary.json`` at the
    top level; several policies get one such subdirectory each plus a shared
    ``curves.svg``.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc.strerror}") from exc
    k = config.spec.k
    single = len(grouped) == 1
    summaries = {}
    for policy, results in grouped.items():
        base = out if single else out / policy
        for res in results:
            seed_dir = base / f"seed_{res.summary.seed}"
            seed_dir.mkdir(parents=True, exist_ok=True)
            (seed_dir / "rounds.csv").write_text(rounds_csv(res.records, k))
        summary = summary_dict(config, results, policy)
        summaries[policy] = summary
        (base / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    if not single:
        comparison = {p: {key: s["per_round"][key]["mean"][-1] for key in SERIES}
                      for p, s in summaries.items()}
        (out / "comparison.json").write_text(json.dumps(comparison, indent=2) + "\n")
    from .plotting import write_curves
    write_curves(summaries, out / "curves.svg")
    return summaries


def load_rounds_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return rows
