import itertools

import numpy as np
import pytest

from oracles import brute_force_best
from seqpipe.context import unit
from seqpipe.env import (
    EnumerationCapExceeded,
    PipelineEnv,
    PipelineSpec,
    all_super_arms,
    mean_reward,
    stage_step,
    super_reward,
)
from seqpipe.presets import PRESETS, preset

D = 8


def spec_with(**kw):
    base = dict(arms_per_subtask=[3, 3], embedding_dim=D)
    base.update(kw)
    return PipelineSpec(**base)


def test_quadratic_aligned_case_gives_full_reward():
    a = unit(np.arange(1.0, D + 1))
    spec = PipelineSpec(arms_per_subtask=[1], reward_family="quadratic", noise_std=0.0,
                        embedding_dim=D, hidden_vectors=[[a]], descriptions=[[np.ones(D)]])
    env = PipelineEnv(spec)
    out = env.step(1, 0, 0, a, 100)
    assert out.reward == pytest.approx(1.0)
    assert out.mean_reward == pytest.approx(1.0)


@pytest.mark.parametrize("family,s,expected", [
    ("linear", 0.2, 0.6), ("linear", -3.0, 0.0), ("quadratic", -0.5, 0.25),
    ("cosine", 0.0, 1.0), ("cosine", np.pi / 3, 0.0)])
def test_reward_families(family, s, expected):
    a = np.zeros(3)
    a[0] = 1.0
    x = np.array([s, 0.7, -0.2])
    assert mean_reward(family, x, a) == pytest.approx(expected, abs=1e-12)


def test_noisy_reward_mean_matches_closed_form():
    spec = spec_with(arms_per_subtask=[1], noise_std=0.1)
    env = PipelineEnv(spec, seed=9)
    arm = env.arms[0][0]
    q, _ = env.next_query(1)
    mu = arm.mean_reward(q)
    assert 0.3 < mu < 0.7     # clipping at 0 or 1 is negligible here
    rng = np.random.default_rng(0)
    r = np.array([stage_step(arm, q, rng, 0.1).reward for _ in range(10_000)])
    assert abs(r.mean() - mu) < 3 * r.std(ddof=1) / np.sqrt(r.size)


def test_noiseless_steps_are_deterministic_functions_of_arm_and_prompt():
    env = PipelineEnv(spec_with(noise_std=0.0), seed=1)
    q, _ = env.next_query(3)
    a = env.step(3, 0, 1, q, 500)
    b = env.step(17, 0, 1, q, 800)
    assert a.reward == b.reward == a.mean_reward
    np.testing.assert_array_equal(a.next_prompt, b.next_prompt)


def test_next_prompt_is_normalised_transform():
    env = PipelineEnv(spec_with(), seed=0)
    arm = env.arms[0][2]
    q, _ = env.next_query(1)
    expected = arm.transform @ q
    np.testing.assert_allclose(arm.next_prompt(q), expected / np.linalg.norm(expected))


def test_queries_are_unit_and_reproducible():
    spec = spec_with(input_token_range=(10, 20))
    a, b = PipelineEnv(spec, seed=5), PipelineEnv(spec, seed=5)
    for t in (1, 2, 50):
        qa, ta = a.next_query(t)
        qb, tb = b.next_query(t)
        np.testing.assert_array_equal(qa, qb)
        assert ta == tb and 10 <= ta <= 20
        assert np.linalg.norm(qa) == pytest.approx(1.0)
    other = PipelineEnv(spec_with(query_stream_seed=1), seed=5)
    assert not np.allclose(other.next_query(1)[0], a.next_query(1)[0])


def test_horizon_bounds_rounds():
    env = PipelineEnv(spec_with(horizon=3))
    env.next_query(3)
    with pytest.raises(ValueError):
        env.next_query(4)
    with pytest.raises(ValueError):
        env.next_query(0)


def test_combinators():
    last = spec_with()
    summed = spec_with(combinator="weighted_sum", weights=[0.5, 2.0])
    assert super_reward(last, [0.2, 0.7]) == 0.7
    assert super_reward(summed, [0.2, 0.7]) == pytest.approx(1.5)
    with pytest.raises(ValueError):
        super_reward(last, [0.1])


def test_oracle_two_arm_example():
    a = unit(np.ones(D))
    # context = prompt * description; scale descriptions to hit means 0.3 and 0.8
    q = unit(np.ones(D))
    s_low, s_high = 2 * 0.3 - 1, 2 * 0.8 - 1
    descs = [[np.full(D, s_low), np.full(D, s_high)]]
    spec = PipelineSpec(arms_per_subtask=[2], noise_std=0.0, embedding_dim=D,
                        hidden_vectors=[[a, a]], descriptions=descs)
    env = PipelineEnv(spec)
    best, value = env.oracle_best(q)
    assert best == (1,)
    assert value == pytest.approx(0.8)


@pytest.mark.parametrize("combinator", ["last_only", "weighted_sum"])
@pytest.mark.parametrize("family", ["linear", "quadratic", "cosine"])
def test_oracle_matches_brute_force(combinator, family):
    spec = spec_with(arms_per_subtask=[3, 4], reward_family=family, combinator=combinator,
                     weights=[1.0, 0.5] if combinator == "weighted_sum" else None,
                     description_scale=3.0)
    env = PipelineEnv(spec, seed=2)
    for t in range(1, 21):
        q, _ = env.next_query(t)
        best, value = env.oracle_best(q)
        ref, ref_value = brute_force_best(spec, env.arms, q)
        assert value == pytest.approx(ref_value, abs=1e-12)
        assert super_reward(spec, env.rollout_means(best, q)) == pytest.approx(ref_value, abs=1e-12)


def test_three_stage_oracle_matches_brute_force():
    spec = spec_with(arms_per_subtask=[2, 3, 2], combinator="weighted_sum", weights=[1, 1, 1])
    env = PipelineEnv(spec, seed=0)
    q, _ = env.next_query(1)
    assert env.oracle_best(q)[1] == pytest.approx(brute_force_best(spec, env.arms, q)[1])


def test_stagewise_greedy_equals_enumeration_for_independent_stages():
    # identity transforms: stage 2 sees the query whatever stage 1 did
    spec = spec_with(arms_per_subtask=[3, 3], combinator="weighted_sum", weights=[1.0, 1.0],
                     transform_mix=0.0)
    env = PipelineEnv(spec, seed=0)
    for t in range(1, 31):
        q, _ = env.next_query(t)
        greedy = tuple(int(np.argmax([a.mean_reward(q) for a in row])) for row in env.arms)
        best, value = env.oracle_best(q)
        assert value == pytest.approx(super_reward(spec, env.rollout_means(greedy, q)))


def test_oracle_value_dominates_every_super_arm():
    env = PipelineEnv(spec_with(), seed=3)
    q, _ = env.next_query(1)
    _, value = env.oracle_best(q)
    for sa in all_super_arms(env.spec):
        assert super_reward(env.spec, env.rollout_means(sa, q)) <= value


def test_oracle_does_not_disturb_noise_streams():
    spec = spec_with(noise_std=0.2)
    a, b = PipelineEnv(spec, seed=1), PipelineEnv(spec, seed=1)
    for t in range(1, 6):
        qa, ta = a.next_query(t)
        a.oracle_best(qa)
        qb, tb = b.next_query(t)
        ra = a.step(t, 0, 1, qa, ta)
        rb = b.step(t, 0, 1, qb, tb)
        assert ra.reward == rb.reward and ra.output_tokens == rb.output_tokens


def test_noise_draws_shared_across_arm_choices():
    # common random numbers: the noise term of a round does not depend on the arm
    spec = spec_with(noise_std=0.1, arms_per_subtask=[2])
    env = PipelineEnv(spec, seed=0)
    q, tok = env.next_query(2)
    outs = [env.step(2, 0, j, q, tok) for j in range(2)]
    xi = [o.reward - o.mean_reward for o in outs]
    assert xi[0] == pytest.approx(xi[1], abs=1e-12)


def test_enumeration_cap():
    env = PipelineEnv(spec_with(arms_per_subtask=[10, 10, 10]), enumeration_cap=999)
    with pytest.raises(EnumerationCapExceeded):
        env.oracle_best(env.next_query(1)[0])


def test_same_seed_same_arms_and_trace():
    spec = PipelineSpec(**preset("default"))
    a, b = PipelineEnv(spec, 0), PipelineEnv(spec, 0)
    for ra, rb in zip(itertools.chain(*a.arms), itertools.chain(*b.arms)):
        np.testing.assert_array_equal(ra.transform, rb.transform)
        np.testing.assert_array_equal(ra.description.embedding, rb.description.embedding)
    q, tok = a.next_query(1)
    oa, ob = a.step(1, 1, 2, q, tok), b.step(1, 1, 2, q, tok)
    assert (oa.reward, oa.output_tokens, oa.realized_cost) == (ob.reward, ob.output_tokens,
                                                               ob.realized_cost)


def test_overrides_do_not_shift_other_arms():
    base = spec_with()
    env = PipelineEnv(base)
    hv = [[arm.hidden_vector for arm in row] for row in env.arms]
    hv[0][0] = unit(np.ones(D))
    env2 = PipelineEnv(spec_with(hidden_vectors=hv))
    np.testing.assert_array_equal(env.arms[1][2].transform, env2.arms[1][2].transform)
    np.testing.assert_allclose(env2.arms[0][0].hidden_vector, unit(np.ones(D)), rtol=1e-15)


def test_spec_validation():
    with pytest.raises(ValueError):
        PipelineSpec(arms_per_subtask=[])
    with pytest.raises(ValueError):
        PipelineSpec(arms_per_subtask=[2], reward_family="cubic")
    with pytest.raises(ValueError):
        PipelineSpec(arms_per_subtask=[2, 2], combinator="weighted_sum", weights=[1.0])
    with pytest.raises(ValueError):
        PipelineSpec(arms_per_subtask=[2], models=[["gpt-3.5-turbo"]])
    with pytest.raises(ValueError):
        PipelineSpec(arms_per_subtask=[2], transform_mix=1.5)


def test_arm_prices_follow_model_names_and_overrides():
    spec = spec_with(arms_per_subtask=[2], models=[["llama-3.3-70b", "gpt-3.5-turbo"]],
                     pricing={"0,1": [1e-6, 2e-6]})
    env = PipelineEnv(spec)
    assert env.arms[0][0].pricing.output_price == 7.1e-7
    assert env.arms[0][1].pricing.input_price == 1e-6


def test_default_preset_has_pipeline_dependence():
    spec = PipelineSpec(**preset("default"))
    env = PipelineEnv(spec)
    found = False
    for t in range(1, 51):
        q, _ = env.next_query(t)
        bests = {env.best_last_stage_arm(q, (j,))[0] for j in range(spec.arms_per_subtask[0])}
        if len(bests) > 1:
            found = True
            break
    assert found


def test_presets_build():
    for name in PRESETS:
        env = PipelineEnv(PipelineSpec(**preset(name)))
        assert env.oracle_best(env.next_query(1)[0])[0] is not None
    with pytest.raises(KeyError):
        preset("nope")
