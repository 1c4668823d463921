"""Non-strategic rule-based driver policies for the ramp and the main road.

Both policies are pure functions of a de-normalized observation (meters and
m/s) plus thresholds; the ramp policy additionally takes one uniform draw
that gates the merge attempt. Braking severity wins over milder actions:
hard-decelerate is checked first, then decelerate, then accelerate.
"""

from __future__ import annotations

from dataclasses import dataclass

from .config import EnvConfig, Level0Config, RoadGeometry
from .env import DenormObservation, DriveAction, Lane


@dataclass(frozen=True)
class Level0Params:
    """Thresholds for the rule policies (times in seconds, distances in meters)."""

    ttc_hard_decel: float = 4.0
    ttc_decel: float = 7.0
    epsilon: float = 0.01
    d_close: float = 3.0
    d_far: float = 23.0
    v_nom: float = 9.78
    merge_length: float = 145.0

    @classmethod
    def from_config(cls, level0: Level0Config, env: EnvConfig, geom: RoadGeometry) -> "Level0Params":
        return cls(ttc_hard_decel=level0.ttc_hard_decel, ttc_decel=level0.ttc_decel,
                   epsilon=level0.epsilon, d_close=env.d_close, d_far=env.d_far,
                   v_nom=env.v_nom, merge_length=geom.merge_length)


def proximity_weight(d_e_m: float, merge_length: float) -> float:
    """Merge urgency in [0, 1]: 0 at the region entry, 1 at the barrier."""
    f = ((merge_length - d_e_m) / merge_length) ** 2
    return min(max(f, 0.0), 1.0)


def _braking_choice(obs: DenormObservation, p: Level0Params, on_ramp: bool) -> DriveAction:
    """Shared car-following logic once merging is off the table."""
    fc_closing = min(obs.fc_v, -p.epsilon)
    ttc_front = -obs.fc_d / fc_closing

    if (ttc_front <= p.ttc_hard_decel and obs.fc_d > p.d_close) or obs.fc_d <= p.d_close:
        return DriveAction.HARD_DECELERATE

    if on_ramp:
        v_target = p.v_nom * obs.d_e / p.merge_length
        if (ttc_front <= p.ttc_decel and obs.fc_d > p.d_close) \
                or (obs.d_e < 10.0 and obs.v > v_target):
            return DriveAction.DECELERATE
        if obs.d_e >= p.d_far and obs.fc_d > p.d_close and obs.fc_v > p.epsilon:
            return DriveAction.ACCELERATE
    else:
        if ttc_front <= p.ttc_decel and obs.fc_d > p.d_close:
            return DriveAction.DECELERATE
        if obs.fc_d > p.d_close and obs.fc_v > p.epsilon \
                and (obs.v < p.v_nom or obs.d_e < 0.0):
            return DriveAction.ACCELERATE

    return DriveAction.MAINTAIN


def level0_ramp_action(obs: DenormObservation, params: Level0Params, rng) -> DriveAction:
    """On-ramp rule policy.

    Inside the merging region a merge attempt fires with probability growing
    quadratically toward the barrier (and always once closer than d_far); the
    attempt succeeds only if both adjacent-lane gaps pass their
    time-to-collision and distance checks.
    """
    p = params
    in_region = obs.lane == Lane.RAMP and 0.0 <= obs.d_e < p.merge_length
    if in_region:
        z = rng.random()
        if z < proximity_weight(obs.d_e, p.merge_length) or obs.d_e < p.d_far:
            # closing speeds: a receding neighbour counts as epsilon
            front_closing = p.epsilon if obs.fs_v > 0.0 else max(-obs.fs_v, p.epsilon)
            front_ok = (obs.fs_d / front_closing >= p.ttc_hard_decel and obs.fs_d > p.d_close) \
                or obs.fs_d > p.d_far
            if front_ok:
                rear_closing = p.epsilon if obs.rs_v < 0.0 else max(obs.rs_v, p.epsilon)
                rear_ok = (obs.rs_d / rear_closing >= p.ttc_hard_decel and obs.rs_d > p.d_close) \
                    or obs.rs_d > 1.5 * p.d_far
                if rear_ok:
                    return DriveAction.MERGE

    return _braking_choice(obs, p, on_ramp=True)


def level0_main_action(obs: DenormObservation, params: Level0Params) -> DriveAction:
    """Main-road rule policy: car following plus catch-up acceleration."""
    return _braking_choice(obs, params, on_ramp=False)
