"""Episode trace files: one JSON record per step.

Each record carries the simulation time, the ego reward breakdown, the
per-vehicle kinematic state with the action and realised acceleration, any
collision or exit events, and (for a dynamic ego) the reasoning level picked
that step. Positions are written at full float precision so a verifier can
re-run the kinematics exactly.
"""

from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path
from typing import Optional

from .config import RunConfig
from .env import Environment
from .errors import ContractViolation
from .evaluate import TrafficSpec, make_ego_actor
from .hierarchy import DYNAMIC, POLICY_TAGS, PolicyStore, make_traffic, run_episode
from .rng import substream


def write_simulation_traces(ego: str, traffic: TrafficSpec, episodes: int,
                            store: PolicyStore, run_cfg: RunConfig, path,
                            progress=None) -> dict:
    """Simulate seeded episodes and stream their traces to a JSONL file."""
    if episodes < 1:
        raise ContractViolation("need at least one episode")
    ego_tag = POLICY_TAGS[ego]
    traffic_tag = POLICY_TAGS[traffic.composition]
    actor_factory = make_ego_actor(ego, store, run_cfg,
                                   stochastic=run_cfg.evaluation.stochastic_ego)
    provider, sampler = make_traffic(traffic.composition, store, run_cfg,
                                     substream(run_cfg.seed, "eval", ego_tag, traffic_tag))
    pops = traffic.population_set
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    collisions = 0
    with open(path, "w") as fh:
        for episode in range(episodes):
            population = pops[episode % len(pops)]
            env_rng = substream(run_cfg.seed, "eval", ego_tag, traffic_tag,
                                population, episode)
            provider.rng = env_rng
            env_cfg = replace(run_cfg.env, n_vehicles=population)
            env = Environment(env_cfg, run_cfg.geometry, rng=env_rng,
                              action_provider=provider, policy_sampler=sampler)
            env.ego.policy = ego
            actor = actor_factory(env, env_rng)

            # step-0 record: initial state before any action
            fh.write(json.dumps({
                "episode": episode, "step": 0, "time": 0.0,
                "vehicles": env.snapshot(), "done": False, "cause": None,
            }, sort_keys=True) + "\n")

            def on_step(env: Environment, action, result):
                record = {
                    "episode": episode,
                    "step": result.info.step,
                    "time": result.info.step * env.cfg.dt,
                    "reward": result.reward,
                    "reward_terms": {
                        "collision": result.terms.collision,
                        "headway": result.terms.headway,
                        "velocity": result.terms.velocity,
                        "effort": result.terms.effort,
                        "not_merging": result.terms.not_merging,
                        "stopping": result.terms.stopping,
                    },
                    "vehicles": env.snapshot(),
                    "collisions": (
                        ([{"id": 0, "type": int(result.info.ego_collision)}]
                         if result.info.cause == "collision" else [])
                        + [{"id": vid, "type": int(t)} for vid, t in result.info.removed]
                    ),
                    "done": result.done,
                    "cause": result.info.cause,
                }
                if ego == DYNAMIC:
                    record["level"] = actor.last_level
                fh.write(json.dumps(record, sort_keys=True) + "\n")

            outcome = run_episode(env, actor, on_step=on_step)
            if outcome.cause == "collision":
                collisions += 1
            if progress is not None:
                progress(episode, outcome)
    return {"episodes": episodes, "collisions": collisions, "path": str(path)}


def load_traces(path) -> list[dict]:
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records
