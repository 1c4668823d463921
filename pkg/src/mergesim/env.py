"""Highway-merging world model.

One main lane plus an on-ramp that ends in a barrier. Vehicles move
longitudinally; a ramp vehicle inside the merging region may change lane in a
single step. All vehicles observe the pre-step state, then all transitions
apply simultaneously. Episodes are ego-centric: they end when the ego vehicle
collides, exits the road, or hits the step cap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Callable, Optional, Protocol, Sequence

import numpy as np

from .config import EnvConfig, RoadGeometry
from .errors import ContractViolation, PlacementError


class Lane(IntEnum):
    RAMP = 0
    MAIN = 1


class DriveAction(IntEnum):
    """Driving actions; the integer values are the Q-network output indices."""

    MAINTAIN = 0
    ACCELERATE = 1
    DECELERATE = 2
    HARD_ACCELERATE = 3
    HARD_DECELERATE = 4
    MERGE = 5


LONGITUDINAL_ACTIONS = (
    DriveAction.MAINTAIN,
    DriveAction.ACCELERATE,
    DriveAction.DECELERATE,
    DriveAction.HARD_ACCELERATE,
    DriveAction.HARD_DECELERATE,
)

N_ACTIONS = len(DriveAction)

# Acceleration envelopes per action, m/s^2. Draws outside are clipped to the
# interval edge (single draw, no rejection).
ACTION_INTERVALS = {
    DriveAction.MAINTAIN: (-0.25, 0.25),
    DriveAction.ACCELERATE: (0.25, 2.0),
    DriveAction.DECELERATE: (-2.0, -0.25),
    DriveAction.HARD_ACCELERATE: (2.0, 3.0),
    DriveAction.HARD_DECELERATE: (-4.5, -2.0),
}

MAINTAIN_LAPLACE_SCALE = 0.1
EXPONENTIAL_RATE = 0.75  # rate parameter; numpy wants scale = 1/rate


class CollisionType(IntEnum):
    NONE = 0
    RAMP_END_BARRIER = 1   # ramp vehicle ran out of merging region
    MERGE_INTO_CAR = 2     # lane change landed on a main-lane vehicle
    REAR_END = 3           # same-lane bumper gap closed


@dataclass
class VehicleState:
    """Pose and bookkeeping of one car. ``x`` and ``v`` are longitudinal."""

    id: int
    x: float
    v: float
    lane: Lane
    policy: str = "level0"
    last_action: Optional[DriveAction] = None
    last_accel: float = 0.0
    merged_this_step: bool = False


@dataclass(frozen=True)
class Observation:
    """Normalized 9-variable ego view.

    Relative velocities are (other - own)/v_max clipped to [-1, 1]; gaps are
    bumper-to-bumper, clipped to [0, d_far] and divided by d_far. ``d_e`` is
    the distance to the merge-region end over the region length, clipped to
    [-1, 1]. Absent front vehicles read as (gap 1, rel_v +1); an absent rear
    vehicle reads as (gap 1, rel_v -1).
    """

    fc_v: float
    fc_d: float
    fs_v: float
    fs_d: float
    rs_v: float
    rs_d: float
    d_e: float
    v_x: float
    lane: int

    def vector(self) -> np.ndarray:
        return np.array(
            [self.fc_v, self.fc_d, self.fs_v, self.fs_d,
             self.rs_v, self.rs_d, self.d_e, self.v_x, float(self.lane)],
            dtype=np.float64,
        )


OBSERVATION_SIZE = 9


@dataclass(frozen=True)
class DenormObservation:
    """Observation mapped back to meters and m/s (gaps still carry the d_far clip)."""

    fc_v: float
    fc_d: float
    fs_v: float
    fs_d: float
    rs_v: float
    rs_d: float
    d_e: float
    v: float
    lane: int


@dataclass(frozen=True)
class RawMeasurements:
    """Unclipped surroundings used by the reward terms.

    Gaps are bumper-to-bumper meters with ``inf`` when no such vehicle exists;
    ``d_e`` is the raw signed distance to the merge-region end.
    """

    fc_gap: float
    fs_gap: float
    rs_gap: float
    d_e: float
    v: float
    lane: Lane


@dataclass(frozen=True)
class RewardTerms:
    collision: float
    headway: float
    velocity: float
    effort: float
    not_merging: float
    stopping: float

    def as_tuple(self) -> tuple[float, ...]:
        return (self.collision, self.headway, self.velocity,
                self.effort, self.not_merging, self.stopping)


def denormalize_observation(obs: Observation, cfg: EnvConfig, geom: RoadGeometry) -> DenormObservation:
    """Scale a normalized observation to meters / m/s for the rule policies."""
    return DenormObservation(
        fc_v=obs.fc_v * cfg.v_max,
        fc_d=obs.fc_d * cfg.d_far,
        fs_v=obs.fs_v * cfg.v_max,
        fs_d=obs.fs_d * cfg.d_far,
        rs_v=obs.rs_v * cfg.v_max,
        rs_d=obs.rs_d * cfg.d_far,
        d_e=obs.d_e * geom.merge_length,
        v=obs.v_x * cfg.v_max,
        lane=obs.lane,
    )


# ---------------------------------------------------------------------------
# Stochastic action realisation and kinematics
# ---------------------------------------------------------------------------

def sample_acceleration(action: DriveAction, rng: np.random.Generator) -> float:
    """Draw the acceleration realising a longitudinal action.

    Maintain uses a Laplace(0, 0.1) draw; the others shift an Exponential
    (rate 0.75) away from the interval's inner edge. Every draw is clipped
    into the action's envelope.
    """
    if action == DriveAction.MERGE:
        raise ContractViolation("merge has no sampled acceleration")
    lo, hi = ACTION_INTERVALS[action]
    if action == DriveAction.MAINTAIN:
        a = rng.laplace(0.0, MAINTAIN_LAPLACE_SCALE)
    else:
        draw = rng.exponential(1.0 / EXPONENTIAL_RATE)
        if action in (DriveAction.ACCELERATE, DriveAction.HARD_ACCELERATE):
            a = lo + draw
        else:
            a = hi - draw
    return float(min(max(a, lo), hi))


def step_kinematics(x: float, v: float, a: float, dt: float, v_max: float) -> tuple[float, float]:
    """Constant-acceleration update; the vehicle never reverses.

    If the commanded deceleration would cross zero velocity inside the step,
    the position update uses the acceleration that stops the car exactly at
    the step boundary.
    """
    if dt <= 0:
        raise ContractViolation("dt must be positive")
    v_next = v + a * dt
    if v_next < 0.0:
        a = -v / dt
        v_next = 0.0
    x_next = x + v * dt + 0.5 * a * dt * dt
    return x_next, float(min(max(v_next, 0.0), v_max))


def apply_merge(veh: VehicleState, cfg: EnvConfig, geom: RoadGeometry) -> None:
    """One-step lane change; longitudinal update runs with zero acceleration."""
    if veh.lane != Lane.RAMP:
        raise ContractViolation(f"vehicle {veh.id} cannot merge from the main lane")
    if not geom.in_merge_region(veh.x):
        raise ContractViolation(
            f"vehicle {veh.id} at x={veh.x:.2f} is outside the merging region "
            f"[{geom.merge_start_x}, {geom.merge_end_x}]")
    veh.x, veh.v = step_kinematics(veh.x, veh.v, 0.0, cfg.dt, cfg.v_max)
    veh.lane = Lane.MAIN
    veh.merged_this_step = True
    veh.last_accel = 0.0


def ramp_speed_taper(x0: float, cfg: EnvConfig, geom: RoadGeometry) -> float:
    """Noise-free in-region speed profile: v_nom at the region start, half at the end."""
    frac = (geom.merge_end_x - x0) / geom.merge_length
    return cfg.v_nom * (0.5 + 0.5 * frac)


def initial_ramp_velocity(x0: float, cfg: EnvConfig, geom: RoadGeometry,
                          rng: np.random.Generator) -> float:
    """Initial speed for a vehicle placed inside the merging region.

    Speed tapers from v_nom at the region start to v_nom/2 at the end, plus
    uniform noise of +/- 2 m/s; a stand-off keeps placements clear of the
    barrier.
    """
    if not (geom.merge_start_x <= x0 <= geom.merge_end_x - cfg.merge_standoff):
        raise ContractViolation(
            f"x0={x0:.2f} outside admissible band "
            f"[{geom.merge_start_x}, {geom.merge_end_x - cfg.merge_standoff}]")
    v = ramp_speed_taper(x0, cfg, geom) + rng.uniform(-2.0, 2.0)
    return max(v, 0.0)


# ---------------------------------------------------------------------------
# Reward
# ---------------------------------------------------------------------------

def reward_terms(raw: RawMeasurements, action: DriveAction, collision: CollisionType,
                 cfg: EnvConfig) -> RewardTerms:
    """Evaluate the six shaping terms for one (state, action, outcome) triple.

    Distances come in as raw meters (``inf`` when the slot is empty) so the
    far branches stay reachable.
    """
    c = -1.0 if collision != CollisionType.NONE else 0.0

    g = raw.fc_gap
    if g <= cfg.d_close:
        h = -1.0
    elif g <= cfg.d_far:
        h = (g - cfg.d_nom) / (cfg.d_nom - cfg.d_close)
    else:
        h = 1.0

    v = raw.v
    if v <= cfg.v_nom:
        m = (v - cfg.v_nom) / cfg.v_nom
    else:
        m = (cfg.v_max - v) / (cfg.v_max - cfg.v_nom)

    if v < cfg.v_nom / 2.0:
        e = 0.0
    elif action in (DriveAction.ACCELERATE, DriveAction.DECELERATE):
        e = -0.25
    elif action in (DriveAction.HARD_ACCELERATE, DriveAction.HARD_DECELERATE):
        e = -1.0
    else:
        e = 0.0

    nm = -1.0 if raw.lane == Lane.RAMP else 0.0

    if raw.lane == Lane.MAIN:
        clear_ahead = raw.fc_gap >= cfg.d_far and raw.d_e >= cfg.d_far
        s = -1.0 if (action != DriveAction.HARD_ACCELERATE and clear_ahead) else 0.0
    else:
        gap_available = raw.fs_gap >= cfg.d_close and raw.rs_gap >= 1.5 * cfg.d_far
        if action != DriveAction.MERGE and gap_available:
            s = -1.0
        elif raw.d_e <= cfg.d_far:
            s = -0.05
        else:
            s = 0.0

    return RewardTerms(c, h, m, e, nm, s)


def compute_reward(terms: RewardTerms, weights) -> float:
    """Weighted sum of the six terms."""
    return float(sum(t * w for t, w in zip(terms.as_tuple(), weights.as_tuple())))


# ---------------------------------------------------------------------------
# Environment
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VehicleView:
    """Everything a policy needs about one vehicle at the start of a step."""

    index: int
    vehicle_id: int
    policy: str
    observation: Observation
    raw: RawMeasurements
    merge_allowed: bool


class ActionProvider(Protocol):
    """Chooses actions for the non-ego vehicles from their pre-step views."""

    def actions(self, views: Sequence[VehicleView]) -> list[DriveAction]: ...


class NoEnvVehicles:
    """Provider for environments that only contain the ego vehicle."""

    def actions(self, views):
        if views:
            raise ContractViolation("NoEnvVehicles cannot act for environment vehicles")
        return []


@dataclass(frozen=True)
class StepInfo:
    step: int
    cause: Optional[str] = None          # "collision" | "exit" | "step_cap" when done
    ego_collision: CollisionType = CollisionType.NONE
    removed: tuple = ()                  # (vehicle_id, CollisionType) for environment vehicles
    exited: tuple = ()                   # vehicle ids that left the road this step
    spawned: tuple = ()                  # vehicle ids added this step


@dataclass(frozen=True)
class StepResult:
    observation: Observation
    reward: float
    terms: RewardTerms
    done: bool
    info: StepInfo


class Environment:
    """One episode of merging traffic.

    The ego vehicle is always ``vehicles[0]`` with id 0. Environment vehicles
    act through the injected provider; their policies are sampled from
    ``policy_sampler`` at spawn time. A single generator drives every draw,
    so equal seeds give bit-identical episodes.
    """

    def __init__(self, cfg: EnvConfig, geom: RoadGeometry,
                 rng: Optional[np.random.Generator] = None,
                 action_provider: Optional[ActionProvider] = None,
                 policy_sampler: Optional[Callable[[np.random.Generator], str]] = None,
                 ego_lane: Optional[Lane] = None,
                 accel_sampler: Callable[[DriveAction, np.random.Generator], float] = sample_acceleration):
        cfg.validate()
        geom.validate()
        self.cfg = cfg
        self.geom = geom
        self.rng = rng if rng is not None else np.random.default_rng(cfg.rng_seed)
        self.provider = action_provider if action_provider is not None else NoEnvVehicles()
        self.policy_sampler = policy_sampler if policy_sampler is not None else (lambda _rng: "level0")
        self.accel_sampler = accel_sampler
        self.vehicles: list[VehicleState] = []
        self.pending_spawns: list[Lane] = []
        self.step_index = 0
        self.finished = False
        self._next_id = 0
        self._populate(ego_lane)

    # -- initial placement ---------------------------------------------------

    def _populate(self, ego_lane: Optional[Lane]) -> None:
        cfg, geom = self.cfg, self.geom
        if ego_lane is None:
            if cfg.ego_lane == "main":
                ego_lane = Lane.MAIN
            elif cfg.ego_lane == "ramp":
                ego_lane = Lane.RAMP
            else:
                ego_lane = Lane.MAIN if self.rng.random() < 0.5 else Lane.RAMP
        ego_x = 0.0 if ego_lane == Lane.MAIN else geom.ramp_start_x
        ego = VehicleState(id=self._take_id(), x=ego_x, v=self._entry_speed(),
                           lane=ego_lane, policy="ego")
        self.vehicles.append(ego)

        # lane split first (0.7 main, ramp capped), then positions per lane
        lanes = []
        ramp_count = 1 if ego_lane == Lane.RAMP else 0
        for _ in range(cfg.n_vehicles - 1):
            lane = Lane.MAIN if self.rng.random() < cfg.main_lane_prob else Lane.RAMP
            if lane == Lane.RAMP and ramp_count >= cfg.max_ramp_cars:
                lane = Lane.MAIN
            if lane == Lane.RAMP:
                ramp_count += 1
            lanes.append(lane)

        for lane in (Lane.MAIN, Lane.RAMP):
            count = sum(1 for l in lanes if l == lane)
            if count == 0:
                continue
            lo, hi = self._lane_band(lane)
            if lane == ego_lane:
                lo = ego_x + cfg.min_init_gap  # ego sits at the band entry
            for x in self._spaced_positions(count, lo, hi):
                if lane == Lane.RAMP and geom.in_merge_region(x):
                    v = initial_ramp_velocity(x, cfg, geom, self.rng)
                else:
                    v = self._entry_speed()
                self.vehicles.append(VehicleState(id=self._take_id(), x=x, v=v,
                                                  lane=lane,
                                                  policy=self.policy_sampler(self.rng)))

    def _spaced_positions(self, count: int, lo: float, hi: float) -> list[float]:
        """Uniform positions in [lo, hi] with pairwise gaps >= min_init_gap.

        Standard spacing transform: draw in the slack interval, sort, then
        re-inflate the mandatory gaps. Fails only when the band is truly too
        short for the requested count.
        """
        gap = self.cfg.min_init_gap
        slack = (hi - lo) - (count - 1) * gap
        if slack < 0:
            raise PlacementError(
                f"cannot place {count} vehicles with {gap} m spacing "
                f"in a {hi - lo:.1f} m band")
        draws = np.sort(self.rng.uniform(0.0, slack, size=count))
        return [lo + draw + i * gap for i, draw in enumerate(draws)]

    def _take_id(self) -> int:
        vid = self._next_id
        self._next_id += 1
        return vid

    def _entry_speed(self) -> float:
        w = self.cfg.init_speed_halfwidth
        return self.rng.uniform(self.cfg.v_nom - w, self.cfg.v_nom + w)

    def _lane_band(self, lane: Lane) -> tuple[float, float]:
        geom, cfg = self.geom, self.cfg
        if lane == Lane.MAIN:
            return 0.0, geom.main_road_length - geom.car_length
        return geom.ramp_start_x, geom.merge_end_x - cfg.merge_standoff

    def _ramp_count(self) -> int:
        return sum(1 for v in self.vehicles if v.lane == Lane.RAMP)

    def _draw_lane(self) -> Lane:
        lane = Lane.MAIN if self.rng.random() < self.cfg.main_lane_prob else Lane.RAMP
        if lane == Lane.RAMP and self._ramp_count() >= self.cfg.max_ramp_cars:
            lane = Lane.MAIN  # ramp at capacity: redirect
        return lane

    def _spaced(self, lane: Lane, x: float) -> bool:
        gap = self.cfg.min_init_gap
        return all(abs(v.x - x) >= gap for v in self.vehicles if v.lane == lane)

    # -- observations ----------------------------------------------------------

    def build_observation(self, index: int) -> tuple[Observation, RawMeasurements]:
        """Normalized observation and raw measurements for one vehicle."""
        cfg, geom = self.cfg, self.geom
        me = self.vehicles[index]
        L = geom.car_length

        fc_gap = math.inf
        fc_rel = None
        fs_gap = math.inf
        fs_rel = None
        rs_gap = math.inf
        rs_rel = None
        fc_dx = math.inf
        fs_dx = math.inf
        rs_dx = -math.inf

        in_region = geom.in_merge_region(me.x)
        adjacent = Lane.MAIN if me.lane == Lane.RAMP else Lane.RAMP
        for other in self.vehicles:
            if other.id == me.id:
                continue
            dx = other.x - me.x
            if other.lane == me.lane:
                if dx > 0.0 and dx < fc_dx:
                    fc_dx = dx
                    fc_gap = dx - L
                    fc_rel = other.v - me.v
            elif in_region and other.lane == adjacent:
                if dx > -L:  # ahead or overlapping
                    if dx < fs_dx:
                        fs_dx = dx
                        fs_gap = dx - L
                        fs_rel = other.v - me.v
                elif dx > rs_dx:  # strictly behind
                    rs_dx = dx
                    rs_gap = -dx - L
                    rs_rel = other.v - me.v

        def norm_gap(gap: float) -> float:
            if math.isinf(gap):
                return 1.0
            return min(max(gap, 0.0), cfg.d_far) / cfg.d_far

        def norm_rel(rel: Optional[float], absent: float) -> float:
            if rel is None:
                return absent
            return min(max(rel / cfg.v_max, -1.0), 1.0)

        d_e_raw = geom.merge_end_x - me.x
        obs = Observation(
            fc_v=norm_rel(fc_rel, +1.0),
            fc_d=norm_gap(fc_gap),
            fs_v=norm_rel(fs_rel, +1.0),
            fs_d=norm_gap(fs_gap),
            rs_v=norm_rel(rs_rel, -1.0),
            rs_d=norm_gap(rs_gap),
            d_e=min(max(d_e_raw / geom.merge_length, -1.0), 1.0),
            v_x=min(max(me.v / cfg.v_max, 0.0), 1.0),
            lane=int(me.lane),
        )
        raw = RawMeasurements(fc_gap=fc_gap, fs_gap=fs_gap, rs_gap=rs_gap,
                              d_e=d_e_raw, v=me.v, lane=me.lane)
        return obs, raw

    def merge_allowed(self, veh: VehicleState) -> bool:
        return veh.lane == Lane.RAMP and self.geom.in_merge_region(veh.x)

    def view(self, index: int) -> VehicleView:
        obs, raw = self.build_observation(index)
        veh = self.vehicles[index]
        return VehicleView(index=index, vehicle_id=veh.id, policy=veh.policy,
                           observation=obs, raw=raw,
                           merge_allowed=self.merge_allowed(veh))

    @property
    def ego(self) -> VehicleState:
        return self.vehicles[0]

    def ego_view(self) -> VehicleView:
        return self.view(0)

    # -- collisions ------------------------------------------------------------

    def detect_collisions(self) -> dict[int, CollisionType]:
        """Assign at most one collision type per vehicle (barrier > merge > rear-end)."""
        geom = self.geom
        L = geom.car_length
        types: dict[int, CollisionType] = {}

        for veh in self.vehicles:
            if veh.lane == Lane.RAMP and veh.x + L / 2.0 >= geom.merge_end_x:
                types[veh.id] = CollisionType.RAMP_END_BARRIER

        for veh in self.vehicles:
            if veh.id in types or not veh.merged_this_step:
                continue
            for other in self.vehicles:
                if other.id != veh.id and other.lane == Lane.MAIN \
                        and abs(other.x - veh.x) < L:
                    types[veh.id] = CollisionType.MERGE_INTO_CAR
                    break

        for lane in (Lane.RAMP, Lane.MAIN):
            cars = sorted((v for v in self.vehicles if v.lane == lane),
                          key=lambda v: (v.x, v.id))
            for follower, leader in zip(cars, cars[1:]):
                if follower.id in types:
                    continue
                if leader.x - follower.x - L <= 0.0:
                    types[follower.id] = CollisionType.REAR_END

        return types

    # -- spawning ----------------------------------------------------------------

    def _entry_x(self, lane: Lane) -> float:
        return 0.0 if lane == Lane.MAIN else self.geom.ramp_start_x

    def _try_spawn(self, lane: Lane) -> Optional[int]:
        if lane == Lane.RAMP and self._ramp_count() >= self.cfg.max_ramp_cars:
            lane = Lane.MAIN
        x = self._entry_x(lane)
        if not self._spaced(lane, x):
            return None
        veh = VehicleState(id=self._take_id(), x=x, v=self._entry_speed(), lane=lane,
                           policy=self.policy_sampler(self.rng))
        self.vehicles.append(veh)
        return veh.id

    def spawn_replacement(self) -> Optional[int]:
        """Roll the replacement dice after a departure.

        Returns the new vehicle id, or None when the roll failed or the entry
        was blocked (a blocked spawn is queued and retried each step).
        """
        if self.rng.random() >= self.cfg.respawn_prob:
            return None
        lane = self._draw_lane()
        spawned = self._try_spawn(lane)
        if spawned is None:
            self.pending_spawns.append(lane)
        return spawned

    def _retry_pending(self) -> list[int]:
        spawned = []
        still_blocked = []
        for lane in self.pending_spawns:
            sid = self._try_spawn(lane)
            if sid is None:
                still_blocked.append(lane)
            else:
                spawned.append(sid)
        self.pending_spawns = still_blocked
        return spawned

    # -- stepping -----------------------------------------------------------------

    def step(self, ego_action: DriveAction) -> StepResult:
        """Advance the world one time step under the ego's action."""
        if self.finished:
            raise ContractViolation("step() called on a finished episode")
        cfg, geom = self.cfg, self.geom

        views = [self.view(i) for i in range(len(self.vehicles))]
        ego_view = views[0]
        env_actions = self.provider.actions(views[1:])
        if len(env_actions) != len(views) - 1:
            raise ContractViolation("action provider returned a wrong-sized action list")
        actions = [ego_action] + list(env_actions)

        # simultaneous transition: everyone acts on the pre-step views
        for veh, action in zip(self.vehicles, actions):
            veh.merged_this_step = False
            veh.last_action = action
            if action == DriveAction.MERGE:
                apply_merge(veh, cfg, geom)
            else:
                a = self.accel_sampler(action, self.rng)
                veh.last_accel = a
                veh.x, veh.v = step_kinematics(veh.x, veh.v, a, cfg.dt, cfg.v_max)

        self.step_index += 1
        col_types = self.detect_collisions()
        ego_col = col_types.get(self.ego.id, CollisionType.NONE)

        terms = reward_terms(ego_view.raw, ego_action, ego_col, cfg)
        reward = compute_reward(terms, cfg.reward_weights)

        ego_id = self.ego.id
        removed = tuple((vid, t) for vid, t in col_types.items() if vid != ego_id)
        self.vehicles = [v for v in self.vehicles
                         if v.id == ego_id or v.id not in col_types]

        exited = []
        keep = []
        for veh in self.vehicles:
            if veh.id != ego_id and veh.x >= geom.main_road_length:
                exited.append(veh.id)
            else:
                keep.append(veh)
        self.vehicles = keep

        if ego_col != CollisionType.NONE:
            cause = "collision"
        elif self.ego.x >= geom.main_road_length:
            cause = "exit"
        elif self.step_index >= cfg.step_cap:
            cause = "step_cap"
        else:
            cause = None
        done = cause is not None

        spawned: list[int] = []
        if not done:
            spawned.extend(self._retry_pending())
            for _ in exited:
                sid = self.spawn_replacement()
                if sid is not None:
                    spawned.append(sid)

        self.finished = done
        info = StepInfo(step=self.step_index, cause=cause, ego_collision=ego_col,
                        removed=removed, exited=tuple(exited), spawned=tuple(spawned))
        obs_after = self.build_observation(0)[0]
        return StepResult(observation=obs_after, reward=reward, terms=terms,
                          done=done, info=info)

    # -- trace support ----------------------------------------------------------

    def snapshot(self) -> list[dict]:
        """Per-vehicle state record for trace files."""
        return [
            {
                "id": v.id,
                "x": v.x,
                "v": v.v,
                "lane": int(v.lane),
                "policy": v.policy,
                "action": v.last_action.name.lower() if v.last_action is not None else None,
                "accel": v.last_accel,
                "merged": v.merged_this_step,
            }
            for v in self.vehicles
        ]
