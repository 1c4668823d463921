import numpy as np
import pytest

from mergesim.config import (CurriculumConfig, EnvConfig, EvalConfig, RoadGeometry,
                             RunConfig, SelectionConfig, TrainerConfig)
from mergesim.level0 import Level0Params


@pytest.fixture
def geom():
    return RoadGeometry()


@pytest.fixture
def cfg():
    return EnvConfig()


@pytest.fixture
def run_cfg():
    return RunConfig()


@pytest.fixture
def params0():
    return Level0Params()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def tiny_run_config(seed=0, episodes=6, populations=(2, 3)) -> RunConfig:
    """A run configuration small enough for integration tests to finish in seconds."""
    return RunConfig(
        seed=seed,
        trainer=TrainerConfig(memory_capacity=500, warmup_size=16, batch_size=4,
                              target_update_every=50, hidden_layers=(8,),
                              initial_temperature=10.0, temperature_decay=0.9),
        curriculum=CurriculumConfig(episodes=episodes, phase1_end=max(1, episodes // 3),
                                    phase2_end=max(2, (2 * episodes) // 3),
                                    block_length=10, population_set=populations),
        evaluation=EvalConfig(episodes_per_population=2, population_set=populations),
        selection=SelectionConfig(episodes=2),
    )


class FixedUniform:
    """Generator stand-in whose uniform() always lands at a chosen offset."""

    def __init__(self, value: float):
        self.value = value

    def uniform(self, low, high):
        return self.value

    def random(self):
        return self.value
