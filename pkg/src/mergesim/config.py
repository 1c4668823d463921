"""Run configuration: dataclasses, YAML loading, and config digests.

The YAML schema mirrors the dataclass fields one-to-one (lengths in meters,
times in seconds, velocities in m/s). Any subset of keys may be given; the
rest fall back to the defaults below. Unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError


@dataclass(frozen=True)
class RoadGeometry:
    """Merging-scenario road layout in world coordinates."""

    main_road_length: float = 305.0
    ramp_start_x: float = 75.0
    merge_start_x: float = 115.0
    merge_end_x: float = 260.0
    lane_width: float = 3.7
    car_length: float = 5.0
    car_width: float = 2.0

    @property
    def merge_length(self) -> float:
        return self.merge_end_x - self.merge_start_x

    @property
    def post_merge_length(self) -> float:
        return self.main_road_length - self.merge_end_x

    def validate(self) -> None:
        if not (0 < self.merge_start_x < self.merge_end_x < self.main_road_length):
            raise ConfigError("merge region must lie strictly inside the main road")
        if self.ramp_start_x >= self.merge_start_x:
            raise ConfigError("ramp must start before the merge region")
        for name in ("main_road_length", "lane_width", "car_length", "car_width"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")

    def in_merge_region(self, x: float) -> bool:
        return self.merge_start_x <= x <= self.merge_end_x


@dataclass(frozen=True)
class RewardWeights:
    """Weights for the (collision, headway, velocity, effort, not-merging, stopping) terms.

    The default profile makes the collision term dominate and keeps the
    shaping terms order-1; the numbers are a project choice, not measured data.
    """

    collision: float = 100.0
    headway: float = 1.0
    velocity: float = 1.0
    effort: float = 0.5
    not_merging: float = 0.5
    stopping: float = 1.0

    def as_tuple(self) -> tuple[float, ...]:
        return (self.collision, self.headway, self.velocity,
                self.effort, self.not_merging, self.stopping)

    def validate(self) -> None:
        values = self.as_tuple()
        if any(not _finite(v) for v in values):
            raise ConfigError("reward weights must be finite")
        if abs(self.collision) <= max(abs(v) for v in values[1:]):
            raise ConfigError("collision weight must dominate the shaping weights")


@dataclass(frozen=True)
class EnvConfig:
    """Environment parameters for one episode population."""

    n_vehicles: int = 12
    dt: float = 0.5
    v_nom: float = 9.78
    v_max: float = 29.16
    d_close: float = 3.0
    d_nom: float = 13.0
    d_far: float = 23.0
    max_ramp_cars: int = 7
    respawn_prob: float = 0.7
    main_lane_prob: float = 0.7
    merge_standoff: float = 23.0     # closest initial ramp position to the barrier
    min_init_gap: float = 10.0       # two car lengths
    init_speed_halfwidth: float = 2.0  # U(v_nom - w, v_nom + w) outside the merge region
    step_cap: int = 200
    ego_lane: str = "random"         # "main" | "ramp" | "random"
    reward_weights: RewardWeights = field(default_factory=RewardWeights)
    rng_seed: int = 0

    def validate(self) -> None:
        if self.dt <= 0:
            raise ConfigError("dt must be positive")
        if not (0 < self.d_close < self.d_nom < self.d_far):
            raise ConfigError("need 0 < d_close < d_nom < d_far")
        for name in ("respawn_prob", "main_lane_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1]")
        if self.n_vehicles < 1:
            raise ConfigError("n_vehicles must include at least the ego vehicle")
        if self.ego_lane not in ("main", "ramp", "random"):
            raise ConfigError("ego_lane must be 'main', 'ramp', or 'random'")
        if self.step_cap < 1:
            raise ConfigError("step_cap must be positive")
        self.reward_weights.validate()


@dataclass(frozen=True)
class Level0Config:
    """Rule-based policy thresholds."""

    ttc_hard_decel: float = 4.0
    ttc_decel: float = 7.0
    epsilon: float = 0.01

    def validate(self) -> None:
        if not (0 < self.ttc_hard_decel < self.ttc_decel):
            raise ConfigError("need 0 < ttc_hard_decel < ttc_decel")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")


@dataclass(frozen=True)
class TrainerConfig:
    """Q-learning hyper-parameters (defaults follow the published training setup)."""

    memory_capacity: int = 50_000
    warmup_size: int = 5_000
    target_update_every: int = 1_000
    initial_temperature: float = 50.0
    temperature_decay: float = 0.998
    temperature_floor: float = 1.0
    batch_size: int = 32
    discount: float = 0.95
    learning_rate: float = 0.0013
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    hidden_layers: tuple[int, ...] = (256, 256, 128)

    def validate(self) -> None:
        if self.warmup_size > self.memory_capacity:
            raise ConfigError("warmup_size cannot exceed memory_capacity")
        if not 0.0 < self.temperature_decay < 1.0:
            raise ConfigError("temperature_decay must be in (0, 1)")
        if not 0.0 <= self.discount <= 1.0:
            raise ConfigError("discount must be in [0, 1]")


@dataclass(frozen=True)
class CurriculumConfig:
    """Training-phase layout: fixed, oscillating, then random population."""

    episodes: int = 6_000
    phase1_end: int = 200
    phase2_end: int = 5_000
    block_length: int = 100
    population_set: tuple[int, ...] = (4, 8, 12, 16, 20, 24, 28)

    def validate(self) -> None:
        if not (0 < self.phase1_end <= self.phase2_end <= self.episodes):
            raise ConfigError("phase boundaries must satisfy 0 < phase1 <= phase2 <= episodes")
        if self.block_length < 1:
            raise ConfigError("block_length must be positive")
        if not self.population_set or sorted(self.population_set) != list(self.population_set):
            raise ConfigError("population_set must be non-empty and ascending")


@dataclass(frozen=True)
class EvalConfig:
    """Evaluation protocol: seeded episodes per population value."""

    episodes_per_population: int = 150
    population_set: tuple[int, ...] = (4, 8, 12, 16, 20, 24, 28)
    stochastic_ego: bool = False   # True: ego keeps Boltzmann sampling at T=1 during evaluation

    def validate(self) -> None:
        if self.episodes_per_population < 1:
            raise ConfigError("episodes_per_population must be positive")


@dataclass(frozen=True)
class SelectionConfig:
    """Self-play budget used to pick the best of the final checkpoints."""

    episodes: int = 200

    def validate(self) -> None:
        if self.episodes < 1:
            raise ConfigError("selection episodes must be positive")


@dataclass(frozen=True)
class RunConfig:
    """Merged view of everything one command needs."""

    seed: int = 0
    env: EnvConfig = field(default_factory=EnvConfig)
    geometry: RoadGeometry = field(default_factory=RoadGeometry)
    level0: Level0Config = field(default_factory=Level0Config)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    curriculum: CurriculumConfig = field(default_factory=CurriculumConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)

    def validate(self) -> None:
        self.geometry.validate()
        self.env.validate()
        self.level0.validate()
        self.trainer.validate()
        self.curriculum.validate()
        self.evaluation.validate()
        self.selection.validate()


def _finite(x) -> bool:
    return isinstance(x, (int, float)) and abs(x) != float("inf") and x == x


_SECTIONS = {
    "env": EnvConfig,
    "geometry": RoadGeometry,
    "level0": Level0Config,
    "trainer": TrainerConfig,
    "curriculum": CurriculumConfig,
    "evaluation": EvalConfig,
    "selection": SelectionConfig,
}


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"section {path!r} must be a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in fields:
            raise ConfigError(f"unknown key {path}.{key}")
        ftype = fields[key].type
        if key == "reward_weights":
            value = _build(RewardWeights, value, f"{path}.{key}")
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad section {path!r}: {exc}") from exc


def config_from_dict(data: dict) -> RunConfig:
    """Build a validated RunConfig from a plain mapping (e.g. parsed YAML)."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("top-level config must be a mapping")
    kwargs = {}
    for key, value in data.items():
        if key == "seed":
            kwargs["seed"] = int(value)
        elif key in _SECTIONS:
            kwargs[key] = _build(_SECTIONS[key], value, key)
        else:
            raise ConfigError(f"unknown top-level key {key!r}")
    cfg = RunConfig(**kwargs)
    cfg.validate()
    return cfg


def load_config(path) -> RunConfig:
    """Load a YAML run configuration."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    return config_from_dict(data)


def config_to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(config_to_dict(cfg), sort_keys=True))


def config_digest(cfg: RunConfig) -> str:
    """Stable SHA-256 digest of the effective configuration."""
    canonical = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()
