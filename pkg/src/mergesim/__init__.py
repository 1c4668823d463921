"""Highway-merging traffic simulation with level-k and dynamic level-k drivers."""

from .config import (EnvConfig, EvalConfig, Level0Config, RewardWeights, RoadGeometry,
                     RunConfig, TrainerConfig, load_config)
from .env import (CollisionType, DriveAction, Environment, Lane, Observation,
                  VehicleState)
from .hierarchy import Curriculum, PolicyStore, train_dynamic, train_level_k
from .evaluate import CollisionStats, TrafficSpec, run_experiment

__all__ = [
    "CollisionStats", "CollisionType", "Curriculum", "DriveAction", "EnvConfig",
    "Environment", "EvalConfig", "Lane", "Level0Config", "Observation", "PolicyStore",
    "RewardWeights", "RoadGeometry", "RunConfig", "TrafficSpec", "TrainerConfig",
    "VehicleState", "load_config", "run_experiment", "train_dynamic", "train_level_k",
]

__version__ = "0.1.0"
