"""Collision-rate experiments: ego policy x traffic composition.

Each experiment runs a fixed number of seeded episodes per population value;
the ego acts greedily (optionally Boltzmann at the temperature floor) while
the traffic follows the requested composition. Per-episode seeds derive from
the master seed through the ``eval`` stream indexed by (ego tag, traffic tag,
population, episode), so any single episode can be reproduced in isolation.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import RunConfig
from .dqn import boltzmann_sample
from .env import DriveAction, Environment, Lane, VehicleView, denormalize_observation
from .errors import ContractViolation, PrerequisiteError
from .hierarchy import (DYNAMIC, LEVEL0, POLICY_IDS, POLICY_TAGS, TRAINED_LEVELS,
                        PolicyStore, dynamic_act, greedy_drive_action, make_traffic,
                        mask_merge, run_episode)
from .level0 import Level0Params, level0_main_action, level0_ramp_action
from .nnet import forward
from .rng import substream

TRAFFIC_NAMES = POLICY_IDS + ("mixed",)


@dataclass(frozen=True)
class TrafficSpec:
    """What the non-ego vehicles drive like, and how many episodes to run."""

    composition: str                      # policy id or "mixed"
    population_set: tuple[int, ...] = (4, 8, 12, 16, 20, 24, 28)
    episodes_per_population: int = 150

    def __post_init__(self):
        if self.composition not in TRAFFIC_NAMES:
            raise ContractViolation(
                f"unknown traffic {self.composition!r}; expected one of {TRAFFIC_NAMES}")

    @property
    def total_episodes(self) -> int:
        return len(self.population_set) * self.episodes_per_population


@dataclass(frozen=True)
class EpisodeRecord:
    population: int
    index: int
    steps: int
    cause: str            # "collision" | "exit" | "step_cap"
    collision_type: int   # CollisionType value, 0 when none


@dataclass(frozen=True)
class CollisionStats:
    """Aggregated outcome of one (ego, traffic) experiment."""

    ego: str
    traffic: str
    records: tuple[EpisodeRecord, ...]

    @property
    def total_episodes(self) -> int:
        return len(self.records)

    @property
    def collision_episodes(self) -> int:
        return sum(1 for r in self.records if r.cause == "collision")

    @property
    def rate(self) -> float:
        return self.collision_episodes / self.total_episodes

    def type_counts(self) -> dict[int, int]:
        counts = {1: 0, 2: 0, 3: 0}
        for r in self.records:
            if r.cause == "collision":
                counts[r.collision_type] += 1
        return counts


def make_ego_actor(ego: str, store: PolicyStore, run_cfg: RunConfig,
                   stochastic: bool = False):
    """Factory returning a per-episode ego action callable.

    The factory takes (env, rng) so rule-based and stochastic egos draw from
    the episode's stream. The returned callable exposes ``last_level`` when
    the ego is dynamic.
    """
    hidden = run_cfg.trainer.hidden_layers
    if ego == LEVEL0:
        params0 = Level0Params.from_config(run_cfg.level0, run_cfg.env, run_cfg.geometry)

        def factory(env, rng):
            def act(view: VehicleView) -> DriveAction:
                obs = denormalize_observation(view.observation, run_cfg.env,
                                              run_cfg.geometry)
                if obs.lane == Lane.RAMP:
                    return level0_ramp_action(obs, params0, rng)
                return level0_main_action(obs, params0)
            return act
        return factory

    if ego in TRAINED_LEVELS:
        net = store.load_best(ego, hidden)

        def factory(env, rng):
            def act(view: VehicleView) -> DriveAction:
                if stochastic:
                    q = mask_merge(forward(net, view.observation.vector()),
                                   view.merge_allowed)
                    return DriveAction(boltzmann_sample(q, 1.0, rng))
                return greedy_drive_action(net, view)
            return act
        return factory

    if ego == DYNAMIC:
        dyn = store.load_best(DYNAMIC, hidden)
        levels = [store.load_best(p, hidden) for p in TRAINED_LEVELS]

        def factory(env, rng):
            def act(view: VehicleView) -> DriveAction:
                temperature = 1.0 if stochastic else None
                level, action = dynamic_act(view.observation.vector(), dyn, levels,
                                            view.merge_allowed,
                                            temperature=temperature, rng=rng)
                act.last_level = level
                return action
            act.last_level = None
            return act
        return factory

    raise ContractViolation(f"unknown ego policy {ego!r}")


def run_experiment(ego: str, traffic: TrafficSpec, store: PolicyStore,
                   run_cfg: RunConfig,
                   progress=None) -> CollisionStats:
    """Run the full episode grid for one (ego, traffic) pair."""
    ego_tag = POLICY_TAGS[ego]
    traffic_tag = POLICY_TAGS[traffic.composition]
    actor_factory = make_ego_actor(ego, store, run_cfg,
                                   stochastic=run_cfg.evaluation.stochastic_ego)
    provider, sampler = make_traffic(traffic.composition, store, run_cfg,
                                     substream(run_cfg.seed, "eval", ego_tag, traffic_tag))

    records = []
    for population in traffic.population_set:
        for episode in range(traffic.episodes_per_population):
            env_rng = substream(run_cfg.seed, "eval", ego_tag, traffic_tag,
                                population, episode)
            provider.rng = env_rng
            env_cfg = replace(run_cfg.env, n_vehicles=population)
            env = Environment(env_cfg, run_cfg.geometry, rng=env_rng,
                              action_provider=provider, policy_sampler=sampler)
            env.ego.policy = ego
            outcome = run_episode(env, actor_factory(env, env_rng))
            records.append(EpisodeRecord(population=population, index=episode,
                                         steps=outcome.steps, cause=outcome.cause,
                                         collision_type=outcome.collision_type))
            if progress is not None:
                progress(len(records), records[-1])
    return CollisionStats(ego=ego, traffic=traffic.composition, records=tuple(records))


def normalize_counts(counts: Sequence[float], reference_total: float) -> list[float]:
    """Scale counts by 100/reference_total (the published table convention)."""
    if reference_total <= 0:
        raise ContractViolation("reference total must be positive")
    return [c * 100.0 / reference_total for c in counts]


EGO_COLUMNS = TRAINED_LEVELS + (DYNAMIC,)
TRAFFIC_ROWS = POLICY_IDS + ("mixed",)


def emit_tables(stats: dict[tuple[str, str], CollisionStats], out_dir) -> dict[str, Path]:
    """Write the rate matrix, the collision-type breakdown, and a JSON summary.

    Untested (ego, traffic) cells stay empty in the CSV rather than reading as
    zero. The type breakdown normalizes by 100 over the level-1-in-mixed
    collision total when that experiment is present (falling back to raw
    counts otherwise).
    """
    if not stats:
        raise ContractViolation("no experiments to tabulate")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths: dict[str, Path] = {}

    rate_path = out_dir / "collision_rates.csv"
    with open(rate_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["traffic"] + [e for e in EGO_COLUMNS])
        for traffic in TRAFFIC_ROWS:
            row = [traffic]
            for ego in EGO_COLUMNS:
                cell = stats.get((ego, traffic))
                row.append("" if cell is None else str(cell.rate))
            writer.writerow(row)
    paths["rates"] = rate_path

    ref_cell = stats.get(("level1", "mixed"))
    reference_total: Optional[int] = None
    if ref_cell is not None and ref_cell.collision_episodes > 0:
        reference_total = ref_cell.collision_episodes

    types_path = out_dir / "mixed_collision_types.csv"
    with open(types_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["ego", "type1", "type2", "type3"])
        for ego in EGO_COLUMNS:
            cell = stats.get((ego, "mixed"))
            if cell is None:
                continue
            counts = cell.type_counts()
            values = [counts[1], counts[2], counts[3]]
            if reference_total is not None:
                values = normalize_counts(values, reference_total)
            writer.writerow([ego] + [str(v) for v in values])
    paths["types"] = types_path

    summary = {
        "reference_total": reference_total,
        "experiments": [
            {
                "ego": s.ego,
                "traffic": s.traffic,
                "episodes": s.total_episodes,
                "collisions": s.collision_episodes,
                "rate": s.rate,
                "types": {str(k): v for k, v in s.type_counts().items()},
                "per_population": _per_population(s),
            }
            for s in stats.values()
        ],
    }
    summary_path = out_dir / "summary.json"
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    paths["summary"] = summary_path
    return paths


def _per_population(s: CollisionStats) -> dict[str, dict]:
    out: dict[str, dict] = {}
    for r in s.records:
        slot = out.setdefault(str(r.population), {"episodes": 0, "collisions": 0})
        slot["episodes"] += 1
        slot["collisions"] += int(r.cause == "collision")
    return out


def load_summary(path) -> dict:
    """Read back an ``emit_tables`` summary (round-trips exactly)."""
    return json.loads(Path(path).read_text())
