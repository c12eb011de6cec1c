"""Joint prediction and planning with a mixture of trajectory experts."""
from .model import MixturePlanner, ModelConfig, load_model, save_model
from .policy import PolicyConfig, PolicyKind, min_cost_cc_select, min_cost_select
from .scenarios import Episode, ScenarioKind, generate_scenarios
from .scene import Pose2D, VectorScene
from .simulator import EpisodeMetrics, run_closed_loop
from .training import LossWeights, PerturbConfig, TrainConfig, train

__version__ = "0.1.0"

__all__ = ["MixturePlanner", "ModelConfig", "load_model", "save_model", "PolicyConfig", "PolicyKind",
           "min_cost_select", "min_cost_cc_select", "Episode", "ScenarioKind", "generate_scenarios", "Pose2D",
           "VectorScene", "EpisodeMetrics", "run_closed_loop", "LossWeights", "PerturbConfig", "TrainConfig",
           "train", "__version__"]
