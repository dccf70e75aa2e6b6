"""Named pipeline setups shipped with the package."""

import copy

_MODELS = ["gpt-3.5-turbo", "llama-3.3-70b", "ft-gpt-4o-med", "ft-gpt-4o-med-iii"]

PRESETS = {
    # Two stages, realizable linear rewards, reward summed over both stages.
    # The stage-1 choice changes which stage-2 arm is best.
    "default": {
        "arms_per_subtask": [4, 4],
        "reward_family": "linear",
        "noise_std": 0.05,
        "combinator": "weighted_sum",
        "weights": [1.0, 1.0],
        "transform_mix": 0.3,
        "query_spread": 0.3,
        "description_scale": 17.0,
        "models": [list(_MODELS), list(_MODELS)],
    },
    # Same geometry; the most accurate stage-2 arm (1, 1) is a finetuned model
    # with long outputs, so it is also the most expensive one.
    "cost_tradeoff": {
        "arms_per_subtask": [4, 4],
        "reward_family": "linear",
        "noise_std": 0.05,
        "combinator": "weighted_sum",
        "weights": [1.0, 1.0],
        "transform_mix": 0.3,
        "query_spread": 0.3,
        "description_scale": 17.0,
        "models": [list(_MODELS),
                   ["llama-3.3-70b", "ft-gpt-4o-med", "gpt-3.5-turbo", "ft-gpt-4o-tele"]],
        "output_tokens": [[[250, 50], [300, 50], [700, 50], [700, 50]],
                          [[300, 50], [700, 50], [250, 50], [700, 50]]],
    },
    # One subtask, one fixed query and no noise: every arm has a constant,
    # known mean reward.
    "single_known": {
        "arms_per_subtask": [4],
        "reward_family": "linear",
        "noise_std": 0.0,
        "combinator": "last_only",
        "query_spread": 0.0,
        "description_scale": 17.0,
        "models": [list(_MODELS)],
    },
}


def preset(name):
    try:
        return copy.deepcopy(PRESETS[name])
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; available: {sorted(PRESETS)}") from None
