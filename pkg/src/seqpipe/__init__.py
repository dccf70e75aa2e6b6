"""Cost-aware neural bandit selection of one model per pipeline stage."""

from .confidence import ConfidenceState, exploration_bonus, init_confidence, rank_one_update
from .context import ArmDescription, ArmId, make_context, synth_embedding
from .cost import (
    PRICE_TABLE,
    OutputLengthPredictor,
    TokenPricing,
    predict_output_tokens,
    predicted_cost,
    realized_cost,
)
from .env import PipelineEnv, PipelineSpec, SimulatedArm, StageOutcome, stage_step, super_reward
from .harness import ExperimentConfig, PolicyConfig, aggregate, export, run_experiment
from .mlp import (
    NetworkArch,
    NetworkParams,
    ReLUNetRegressor,
    TrainingHistory,
    forward,
    gradient,
    init_network,
    train,
)
from .policies import (
    CostAwareNeuralLinUCB,
    CostAwareNeuralUCB,
    FixedPolicy,
    RandomPolicy,
    SequentialBandits,
    make_policy,
)

__version__ = "0.1.0"
