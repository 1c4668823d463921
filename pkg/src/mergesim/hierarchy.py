"""Level-k policy hierarchy: iterative training, the dynamic meta-policy,
population curriculum, policy storage, and checkpoint selection.

Level-k driving networks output Q-values for the six driving actions with the
merge entry masked wherever merging is illegal; the dynamic network outputs
Q-values for choosing among the trained levels 1..3, and the chosen level's
frozen network then picks the driving action.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .config import CurriculumConfig, RunConfig, config_digest
from .dqn import DQNTrainer, Experience, boltzmann_sample
from .env import (DriveAction, Environment, Lane, N_ACTIONS, OBSERVATION_SIZE,
                  VehicleView, denormalize_observation)
from .errors import ContractViolation, PrerequisiteError
from .level0 import Level0Params, level0_main_action, level0_ramp_action
from .nnet import NetworkParams, NetworkSpec, forward, load_params, save_params, xavier_init
from .rng import substream

LEVEL0 = "level0"
TRAINED_LEVELS = ("level1", "level2", "level3")
DYNAMIC = "dynamic"
POLICY_IDS = (LEVEL0,) + TRAINED_LEVELS + (DYNAMIC,)

# Integer tags used in random-stream indices; append only.
POLICY_TAGS = {"level0": 0, "level1": 1, "level2": 2, "level3": 3, "dynamic": 4,
               "mixed": 5, "selfplay": 6}

N_DYNAMIC_ACTIONS = 3  # levels 1..3


def level_of(policy_id: str) -> Optional[int]:
    """Reasoning level of a fixed policy, or None for the dynamic policy."""
    if policy_id == DYNAMIC:
        return None
    if policy_id in POLICY_IDS:
        return int(policy_id[-1])
    raise ContractViolation(f"unknown policy id {policy_id!r}")


def driving_net_spec(hidden: Sequence[int]) -> NetworkSpec:
    return NetworkSpec((OBSERVATION_SIZE, *hidden, N_ACTIONS))


def dynamic_net_spec(hidden: Sequence[int]) -> NetworkSpec:
    return NetworkSpec((OBSERVATION_SIZE, *hidden, N_DYNAMIC_ACTIONS))


def mask_merge(q: np.ndarray, merge_allowed: bool) -> np.ndarray:
    """Remove the merge entry from a driving Q-vector when merging is illegal."""
    if merge_allowed:
        return q
    out = np.array(q, dtype=np.float64, copy=True)
    out[int(DriveAction.MERGE)] = -np.inf
    return out


# ---------------------------------------------------------------------------
# Population curriculum
# ---------------------------------------------------------------------------

class Curriculum:
    """Three-phase population schedule.

    Phase 1 fixes the population at the smallest set value. Phase 2 walks the
    ordered set like a sampled sinusoid, one step per block, holding the crest
    and trough for two consecutive blocks. Phase 3 draws one set value per
    block uniformly at random (frozen at construction for reproducibility).
    """

    def __init__(self, cfg: CurriculumConfig, rng: np.random.Generator):
        cfg.validate()
        self.cfg = cfg
        n_blocks = max(0, math.ceil((cfg.episodes - cfg.phase2_end) / cfg.block_length))
        self._phase3 = tuple(
            int(rng.choice(cfg.population_set)) for _ in range(n_blocks))

    def population(self, episode: int) -> int:
        cfg = self.cfg
        if not 0 <= episode < cfg.episodes:
            raise ContractViolation(
                f"episode {episode} outside schedule [0, {cfg.episodes})")
        pops = cfg.population_set
        if episode < cfg.phase1_end:
            return pops[0]
        if episode < cfg.phase2_end:
            block = (episode - cfg.phase1_end) // cfg.block_length
            n = len(pops)
            t = (block + 1) % (2 * n)
            idx = t if t < n else 2 * n - 1 - t
            return pops[idx]
        block = (episode - cfg.phase2_end) // cfg.block_length
        return self._phase3[block]


def reduced_curriculum(base: CurriculumConfig, episodes: int,
                       population_cap: Optional[int] = None) -> CurriculumConfig:
    """Scale the phase layout to a shorter run, optionally capping populations."""
    scale = episodes / base.episodes
    pops = base.population_set
    if population_cap is not None:
        pops = tuple(p for p in pops if p <= population_cap) or pops[:1]
    return replace(
        base,
        episodes=episodes,
        phase1_end=max(1, round(base.phase1_end * scale)),
        phase2_end=max(1, round(base.phase2_end * scale)),
        block_length=max(10, round(base.block_length * scale)),
        population_set=pops,
    )


def reduced_temperature_decay(episodes: int, initial: float = 50.0,
                              floor: float = 1.0) -> float:
    """Decay factor that cools ``initial`` to the floor in a third of the run."""
    third = max(1, episodes // 3)
    return float((floor / initial) ** (1.0 / third))


# ---------------------------------------------------------------------------
# Policy store
# ---------------------------------------------------------------------------

class PolicyStore:
    """Directory layout mapping policy ids to checkpoints and manifests.

    <root>/<policy>/checkpoints/ep<NNNNNN>.qnet   periodic checkpoints
    <root>/<policy>/best.qnet                     selected model
    <root>/<policy>/manifest.json                 level, seed, config digest
    <root>/<policy>/training_log.jsonl            per-episode records
    """

    def __init__(self, root):
        self.root = Path(root)

    def policy_dir(self, policy_id: str) -> Path:
        if policy_id not in POLICY_IDS:
            raise ContractViolation(f"unknown policy id {policy_id!r}")
        return self.root / policy_id

    def best_path(self, policy_id: str) -> Path:
        return self.policy_dir(policy_id) / "best.qnet"

    def checkpoint_path(self, policy_id: str, episode: int) -> Path:
        return self.policy_dir(policy_id) / "checkpoints" / f"ep{episode:06d}.qnet"

    def log_path(self, policy_id: str) -> Path:
        return self.policy_dir(policy_id) / "training_log.jsonl"

    def has(self, policy_id: str) -> bool:
        if policy_id == LEVEL0:
            return True  # rule-based, nothing stored
        return self.best_path(policy_id).exists()

    def require(self, policy_ids: Sequence[str]) -> None:
        missing = [p for p in policy_ids if not self.has(p)]
        if missing:
            raise PrerequisiteError(
                f"missing trained policies: {', '.join(missing)} (under {self.root})")

    def load_best(self, policy_id: str, hidden: Sequence[int]) -> NetworkParams:
        self.require([policy_id])
        spec = dynamic_net_spec(hidden) if policy_id == DYNAMIC else driving_net_spec(hidden)
        params, _meta = load_params(self.best_path(policy_id), expect_spec=spec)
        return params

    def save_best(self, policy_id: str, params: NetworkParams, metadata: dict) -> Path:
        path = self.best_path(policy_id)
        save_params(params, path, metadata)
        return path

    def save_checkpoint(self, policy_id: str, episode: int, params: NetworkParams,
                        metadata: dict) -> Path:
        path = self.checkpoint_path(policy_id, episode)
        save_params(params, path, metadata)
        return path

    def write_manifest(self, policy_id: str, manifest: dict) -> Path:
        path = self.policy_dir(policy_id) / "manifest.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return path

    def read_manifest(self, policy_id: str) -> dict:
        path = self.policy_dir(policy_id) / "manifest.json"
        if not path.exists():
            raise PrerequisiteError(f"no manifest for {policy_id} under {self.root}")
        return json.loads(path.read_text())


# ---------------------------------------------------------------------------
# Acting
# ---------------------------------------------------------------------------

def greedy_drive_action(params: NetworkParams, view: VehicleView) -> DriveAction:
    q = forward(params, view.observation.vector())
    return DriveAction(int(np.argmax(mask_merge(q, view.merge_allowed))))


def dynamic_act(obs_vector: np.ndarray, dyn_params: NetworkParams,
                level_params: Sequence[NetworkParams], merge_allowed: bool,
                temperature: Optional[float] = None,
                rng: Optional[np.random.Generator] = None) -> tuple[int, DriveAction]:
    """Two-step action choice: pick a reasoning level, then a driving action.

    With ``temperature`` set, both steps use Boltzmann sampling; otherwise
    both are greedy (argmax, first index on ties). Returns (level in 1..3,
    driving action).
    """
    q_levels = forward(dyn_params, obs_vector)
    if temperature is None:
        level_idx = int(np.argmax(q_levels))
    else:
        level_idx = boltzmann_sample(q_levels, temperature, rng)
    q_drive = mask_merge(forward(level_params[level_idx], obs_vector), merge_allowed)
    if temperature is None:
        action = int(np.argmax(q_drive))
    else:
        action = boltzmann_sample(q_drive, temperature, rng)
    return level_idx + 1, DriveAction(action)


class TrafficActionProvider:
    """Chooses environment-vehicle actions by policy id.

    Rule-based vehicles draw their merge gates from ``rng``; trained vehicles
    act greedily through their (frozen) networks, batched per policy.
    """

    def __init__(self, run_cfg: RunConfig, rng: np.random.Generator,
                 nets: Optional[dict[str, NetworkParams]] = None,
                 dynamic_nets: Optional[tuple[NetworkParams, list[NetworkParams]]] = None):
        self.params0 = Level0Params.from_config(run_cfg.level0, run_cfg.env, run_cfg.geometry)
        self.env_cfg = run_cfg.env
        self.geom = run_cfg.geometry
        self.rng = rng
        self.nets = nets or {}
        self.dynamic_nets = dynamic_nets

    def _rule_action(self, view: VehicleView) -> DriveAction:
        obs = denormalize_observation(view.observation, self.env_cfg, self.geom)
        if obs.lane == Lane.RAMP:
            return level0_ramp_action(obs, self.params0, self.rng)
        return level0_main_action(obs, self.params0)

    def actions(self, views: Sequence[VehicleView]) -> list[DriveAction]:
        actions: list[Optional[DriveAction]] = [None] * len(views)
        by_net: dict[str, list[int]] = {}
        dyn_rows: list[int] = []
        for i, view in enumerate(views):
            if view.policy == LEVEL0:
                actions[i] = self._rule_action(view)
            elif view.policy == DYNAMIC:
                dyn_rows.append(i)
            else:
                by_net.setdefault(view.policy, []).append(i)

        for policy, rows in by_net.items():
            if policy not in self.nets:
                raise PrerequisiteError(f"no network loaded for policy {policy!r}")
            q = forward(self.nets[policy],
                        np.stack([views[i].observation.vector() for i in rows]))
            for row, qrow in zip(rows, q):
                masked = mask_merge(qrow, views[row].merge_allowed)
                actions[row] = DriveAction(int(np.argmax(masked)))

        if dyn_rows:
            if self.dynamic_nets is None:
                raise PrerequisiteError("no dynamic networks loaded for dynamic traffic")
            dyn_params, level_params = self.dynamic_nets
            for row in dyn_rows:
                _level, action = dynamic_act(views[row].observation.vector(), dyn_params,
                                             level_params, views[row].merge_allowed)
                actions[row] = action
        return actions  # type: ignore[return-value]


def make_traffic(traffic: str, store: PolicyStore, run_cfg: RunConfig,
                 rng: np.random.Generator):
    """(action provider, policy sampler) for a traffic composition.

    ``traffic`` is a fixed policy id or "mixed" (each vehicle drawn uniformly
    from level-0..level-3 at spawn time).
    """
    hidden = run_cfg.trainer.hidden_layers
    nets: dict[str, NetworkParams] = {}
    dynamic_nets = None
    if traffic == "mixed":
        store.require(TRAINED_LEVELS)
        nets = {p: store.load_best(p, hidden) for p in TRAINED_LEVELS}
        choices = (LEVEL0,) + TRAINED_LEVELS

        def sampler(r: np.random.Generator) -> str:
            return choices[int(r.integers(len(choices)))]
    elif traffic == DYNAMIC:
        store.require((DYNAMIC,) + TRAINED_LEVELS)
        level_nets = [store.load_best(p, hidden) for p in TRAINED_LEVELS]
        dynamic_nets = (store.load_best(DYNAMIC, hidden), level_nets)

        def sampler(r: np.random.Generator) -> str:
            return DYNAMIC
    elif traffic in POLICY_IDS:
        if traffic != LEVEL0:
            store.require([traffic])
            nets = {traffic: store.load_best(traffic, hidden)}

        def sampler(r: np.random.Generator) -> str:
            return traffic
    else:
        raise ContractViolation(f"unknown traffic composition {traffic!r}")

    provider = TrafficActionProvider(run_cfg, rng, nets=nets, dynamic_nets=dynamic_nets)
    return provider, sampler


# ---------------------------------------------------------------------------
# Episode running
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EpisodeOutcome:
    steps: int
    total_reward: float
    cause: str
    collision_type: int  # CollisionType value; 0 when none
    population: int


def run_episode(env: Environment, ego_act: Callable[[VehicleView], DriveAction],
                on_step: Optional[Callable] = None) -> EpisodeOutcome:
    """Drive one episode to completion with an already-configured environment."""
    population = len(env.vehicles)
    total = 0.0
    while True:
        view = env.ego_view()
        action = ego_act(view)
        result = env.step(action)
        total += result.reward
        if on_step is not None:
            on_step(env, action, result)
        if result.done:
            return EpisodeOutcome(steps=result.info.step, total_reward=total,
                                  cause=result.info.cause,
                                  collision_type=int(result.info.ego_collision),
                                  population=population)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainingResult:
    policy_id: str
    episodes: int
    checkpoints: tuple[str, ...]
    best_checkpoint: str
    best_path: str
    log_path: str
    selection_collisions: tuple[int, ...]


def _episode_env(run_cfg: RunConfig, population: int, tag: int, episode: int,
                 master_seed: int, provider, sampler) -> Environment:
    env_cfg = replace(run_cfg.env, n_vehicles=population)
    return Environment(env_cfg, run_cfg.geometry,
                       rng=substream(master_seed, "env", tag, episode),
                       action_provider=provider, policy_sampler=sampler)


def _write_log_line(fh, record: dict) -> None:
    fh.write(json.dumps(record, sort_keys=True) + "\n")


def train_level_k(k: int, store: PolicyStore, run_cfg: RunConfig,
                  checkpoint_every: int = 100,
                  progress: Optional[Callable[[int, dict], None]] = None) -> TrainingResult:
    """Train the level-k driving policy against all-level-(k-1) traffic."""
    if k not in (1, 2, 3):
        raise ContractViolation(f"level must be 1, 2 or 3, got {k}")
    policy_id = f"level{k}"
    opponent = f"level{k - 1}"
    store.require([opponent])
    run_cfg.validate()

    def make_actor(trainer, explore_rng):
        def act_and_index(view):
            s = view.observation.vector()
            q = forward(trainer.primary, s)
            idx = boltzmann_sample(mask_merge(q, view.merge_allowed),
                                   trainer.temperature, explore_rng)
            return s, idx, DriveAction(idx)
        return act_and_index

    return _train_loop(policy_id, opponent, store, run_cfg, make_actor,
                       net_spec=driving_net_spec(run_cfg.trainer.hidden_layers),
                       checkpoint_every=checkpoint_every, progress=progress)


def train_dynamic(store: PolicyStore, run_cfg: RunConfig,
                  checkpoint_every: int = 100,
                  progress: Optional[Callable[[int, dict], None]] = None) -> TrainingResult:
    """Train the level-selection policy in uniformly mixed level-0..3 traffic.

    The level networks stay frozen; the stored experience records the chosen
    level index as the action.
    """
    store.require(TRAINED_LEVELS)
    run_cfg.validate()
    hidden = run_cfg.trainer.hidden_layers
    level_nets = [store.load_best(p, hidden) for p in TRAINED_LEVELS]

    def make_actor(trainer, explore_rng):
        def act_and_index(view):
            s = view.observation.vector()
            level, action = dynamic_act(s, trainer.primary, level_nets,
                                        view.merge_allowed,
                                        temperature=trainer.temperature, rng=explore_rng)
            return s, level - 1, action
        return act_and_index

    return _train_loop(DYNAMIC, "mixed", store, run_cfg, make_actor,
                       net_spec=dynamic_net_spec(hidden),
                       checkpoint_every=checkpoint_every, progress=progress)


def _train_loop(policy_id: str, traffic: str, store: PolicyStore, run_cfg: RunConfig,
                make_actor, net_spec: NetworkSpec, checkpoint_every: int,
                progress) -> TrainingResult:
    master_seed = run_cfg.seed
    tag = POLICY_TAGS[policy_id]
    digest = config_digest(run_cfg)

    primary = xavier_init(net_spec, substream(master_seed, "init", tag))
    trainer = DQNTrainer(primary, run_cfg.trainer, substream(master_seed, "replay", tag))
    explore_rng = substream(master_seed, "explore", tag)
    curriculum = Curriculum(run_cfg.curriculum, substream(master_seed, "curriculum", tag))
    provider, sampler = make_traffic(traffic, store, run_cfg,
                                     substream(master_seed, "env", tag, 0))
    act_and_index = make_actor(trainer, explore_rng)

    episodes = run_cfg.curriculum.episodes
    checkpoints: list[tuple[int, Path]] = []
    log_path = store.log_path(policy_id)
    log_path.parent.mkdir(parents=True, exist_ok=True)

    with open(log_path, "w") as log_fh:
        for episode in range(episodes):
            population = curriculum.population(episode)
            env = _episode_env(run_cfg, population, tag, episode, master_seed,
                               provider, sampler)
            provider.rng = env.rng  # rule gates follow the episode stream
            env.ego.policy = policy_id
            total = 0.0
            collision = 0
            while True:
                view = env.ego_view()
                s, idx, action = act_and_index(view)
                result = env.step(action)
                total += result.reward
                terminal = result.done and result.info.cause != "step_cap"
                trainer.observe(Experience(s, idx, result.reward,
                                           result.observation.vector(), terminal))
                trainer.train_tick()
                if result.done:
                    collision = int(result.info.ego_collision)
                    cause = result.info.cause
                    steps = result.info.step
                    break
            record = {
                "episode": episode,
                "reward": total,
                "steps": steps,
                "collision": bool(collision),
                "collision_type": collision if collision else None,
                "cause": cause,
                "temperature": trainer.temperature,
                "population": population,
            }
            _write_log_line(log_fh, record)
            trainer.end_episode()
            if progress is not None:
                progress(episode, record)
            if (episode + 1) % checkpoint_every == 0:
                path = store.save_checkpoint(policy_id, episode + 1, trainer.primary, {
                    "policy": policy_id, "episode": episode + 1,
                    "seed": master_seed, "config_digest": digest,
                })
                checkpoints.append((episode + 1, path))

    if not checkpoints:
        path = store.save_checkpoint(policy_id, episodes, trainer.primary, {
            "policy": policy_id, "episode": episodes,
            "seed": master_seed, "config_digest": digest,
        })
        checkpoints.append((episodes, path))

    final = checkpoints[-5:]
    best_idx, collisions = select_best_model([p for _, p in final], policy_id,
                                             store, run_cfg)
    best_episode, best_ckpt = final[best_idx]
    best_params, _ = load_params(best_ckpt)
    best_path = store.save_best(policy_id, best_params, {
        "policy": policy_id, "episode": best_episode,
        "seed": master_seed, "config_digest": digest,
    })
    store.write_manifest(policy_id, {
        "policy": policy_id,
        "level": level_of(policy_id),
        "episodes": episodes,
        "seed": master_seed,
        "config_digest": digest,
        "checkpoints": [str(p) for _, p in checkpoints],
        "final_candidates": [str(p) for _, p in final],
        "selection_collisions": list(collisions),
        "best_episode": best_episode,
        "best_checkpoint": str(best_ckpt),
    })
    return TrainingResult(policy_id=policy_id, episodes=episodes,
                          checkpoints=tuple(str(p) for _, p in checkpoints),
                          best_checkpoint=str(best_ckpt), best_path=str(best_path),
                          log_path=str(log_path), selection_collisions=tuple(collisions))


# ---------------------------------------------------------------------------
# Model selection
# ---------------------------------------------------------------------------

def argmin_earliest(counts: Sequence[int]) -> int:
    """Index of the smallest count; ties go to the earliest entry."""
    if not counts:
        raise ContractViolation("no candidates to choose from")
    return min(range(len(counts)), key=lambda i: (counts[i], i))


def select_best_model(checkpoint_paths: Sequence, policy_id: str, store: PolicyStore,
                      run_cfg: RunConfig) -> tuple[int, list[int]]:
    """Pick the checkpoint with the fewest ego collisions in self-play.

    Each candidate drives as the ego and fills the traffic with copies of
    itself (dynamic candidates keep the frozen level networks underneath).
    Ties go to the earliest checkpoint. Returns (index, collision counts).
    """
    hidden = run_cfg.trainer.hidden_layers
    tag = POLICY_TAGS["selfplay"]
    pops = run_cfg.evaluation.population_set
    episodes = run_cfg.selection.episodes
    level_nets = None
    if policy_id == DYNAMIC:
        level_nets = [store.load_best(p, hidden) for p in TRAINED_LEVELS]

    counts: list[int] = []
    for ci, path in enumerate(checkpoint_paths):
        params, _ = load_params(path)
        if policy_id == DYNAMIC:
            dyn_nets = (params, level_nets)
            nets = {}

            def ego_act(view):
                _lvl, action = dynamic_act(view.observation.vector(), params,
                                           level_nets, view.merge_allowed)
                return action
        else:
            dyn_nets = None
            nets = {policy_id: params}

            def ego_act(view):
                return greedy_drive_action(params, view)

        collisions = 0
        for ep in range(episodes):
            population = pops[ep % len(pops)]
            env_rng = substream(run_cfg.seed, "selection", tag, ci, ep)
            provider = TrafficActionProvider(run_cfg, env_rng, nets=nets,
                                             dynamic_nets=dyn_nets)
            sampler = (lambda r: DYNAMIC) if policy_id == DYNAMIC else (lambda r: policy_id)
            env_cfg = replace(run_cfg.env, n_vehicles=population)
            env = Environment(env_cfg, run_cfg.geometry, rng=env_rng,
                              action_provider=provider, policy_sampler=sampler)
            env.ego.policy = policy_id
            outcome = run_episode(env, ego_act)
            if outcome.cause == "collision":
                collisions += 1
        counts.append(collisions)

    return argmin_earliest(counts), counts
