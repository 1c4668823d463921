import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import FixedUniform
from mergesim.config import EnvConfig, RewardWeights, RoadGeometry, RunConfig
from mergesim.env import (ACTION_INTERVALS, CollisionType, DriveAction, Environment,
                          Lane, RawMeasurements, VehicleState, apply_merge,
                          compute_reward, initial_ramp_velocity, ramp_speed_taper,
                          reward_terms, sample_acceleration, step_kinematics)
from mergesim.errors import ContractViolation, PlacementError
from mergesim.hierarchy import TrafficActionProvider, run_episode
from mergesim.level0 import Level0Params, level0_main_action, level0_ramp_action
from mergesim.env import denormalize_observation


# -- acceleration sampling ----------------------------------------------------

@pytest.mark.parametrize("action", list(ACTION_INTERVALS))
def test_sample_acceleration_stays_in_interval(action, rng):
    lo, hi = ACTION_INTERVALS[action]
    draws = np.array([sample_acceleration(action, rng) for _ in range(20_000)])
    assert draws.min() >= lo and draws.max() <= hi


def test_sample_acceleration_rejects_merge(rng):
    with pytest.raises(ContractViolation):
        sample_acceleration(DriveAction.MERGE, rng)


def test_accelerate_mean_matches_truncated_exponential(rng):
    # clip(0.25 + X, 0.25, 2) = 0.25 + min(X, 1.75), X ~ Exp(rate 0.75)
    # E[min(X, c)] = (1 - exp(-rate*c)) / rate
    expected = 0.25 + (1.0 - math.exp(-0.75 * 1.75)) / 0.75
    draws = np.array([sample_acceleration(DriveAction.ACCELERATE, rng)
                      for _ in range(100_000)])
    se = draws.std() / math.sqrt(len(draws))
    assert abs(draws.mean() - expected) < 4 * se + 1e-12


def test_maintain_is_centered(rng):
    draws = np.array([sample_acceleration(DriveAction.MAINTAIN, rng)
                      for _ in range(50_000)])
    assert abs(draws.mean()) < 0.005
    assert np.all(np.abs(draws) <= 0.25)


def test_sampling_deterministic_under_seed():
    a = [sample_acceleration(DriveAction.DECELERATE, np.random.default_rng(5))
         for _ in range(3)]
    b = [sample_acceleration(DriveAction.DECELERATE, np.random.default_rng(5))
         for _ in range(3)]
    assert a[0] == b[0]


# -- kinematics -----------------------------------------------------------------

def test_kinematics_zero_case():
    assert step_kinematics(0.0, 0.0, 0.0, 0.5, 29.16) == (0.0, 0.0)


def test_kinematics_hand_values():
    x, v = step_kinematics(100.0, 10.0, 2.0, 0.5, 29.16)
    assert x == pytest.approx(105.25, abs=1e-12)
    assert v == pytest.approx(11.0, abs=1e-12)
    x, v = step_kinematics(50.0, 9.78, 0.0, 0.5, 29.16)
    assert x == pytest.approx(54.89, abs=1e-12)
    assert v == pytest.approx(9.78, abs=1e-12)


def test_kinematics_no_reversing():
    # braking through zero: position uses the acceleration that stops exactly
    x, v = step_kinematics(10.0, 1.0, -4.5, 0.5, 29.16)
    assert v == 0.0
    assert x == pytest.approx(10.0 + 1.0 * 0.5 + 0.5 * (-2.0) * 0.25, abs=1e-12)


def test_kinematics_vmax_clamp():
    _, v = step_kinematics(0.0, 29.0, 3.0, 0.5, 29.16)
    assert v == 29.16


@given(v=st.floats(0, 29.16), a=st.floats(-4.5, 3.0))
@settings(max_examples=200, deadline=None)
def test_kinematics_velocity_bounds(v, a):
    _, v2 = step_kinematics(0.0, v, a, 0.5, 29.16)
    assert 0.0 <= v2 <= 29.16


# -- merge ------------------------------------------------------------------------

def test_apply_merge_moves_to_main(cfg, geom):
    veh = VehicleState(id=1, x=150.0, v=8.0, lane=Lane.RAMP)
    apply_merge(veh, cfg, geom)
    assert veh.lane == Lane.MAIN
    assert veh.x == pytest.approx(154.0, abs=1e-12)
    assert veh.v == pytest.approx(8.0)
    assert veh.merged_this_step


def test_apply_merge_preconditions(cfg, geom):
    with pytest.raises(ContractViolation):
        apply_merge(VehicleState(id=1, x=150.0, v=8.0, lane=Lane.MAIN), cfg, geom)
    with pytest.raises(ContractViolation):
        apply_merge(VehicleState(id=1, x=100.0, v=8.0, lane=Lane.RAMP), cfg, geom)


# -- initial velocities ---------------------------------------------------------

def test_ramp_speed_taper_boundaries(cfg, geom):
    assert ramp_speed_taper(geom.merge_start_x, cfg, geom) == pytest.approx(9.78, abs=1e-12)
    assert ramp_speed_taper(geom.merge_end_x, cfg, geom) == pytest.approx(4.89, abs=1e-12)


def test_initial_ramp_velocity_midpoint(cfg, geom):
    mid = (geom.merge_start_x + geom.merge_end_x) / 2.0
    v = initial_ramp_velocity(mid, cfg, geom, FixedUniform(2.0))
    assert v == pytest.approx(9.335, abs=1e-12)


def test_initial_ramp_velocity_band(cfg, geom):
    with pytest.raises(ContractViolation):
        initial_ramp_velocity(geom.merge_end_x, cfg, geom, FixedUniform(0.0))
    with pytest.raises(ContractViolation):
        initial_ramp_velocity(geom.merge_start_x - 1.0, cfg, geom, FixedUniform(0.0))
    # admissible edge uses the taper
    v = initial_ramp_velocity(geom.merge_end_x - cfg.merge_standoff, cfg, geom,
                              FixedUniform(0.0))
    assert v == pytest.approx(ramp_speed_taper(237.0, cfg, geom), abs=1e-12)


# -- environment init -------------------------------------------------------------

def _env(cfg, geom, seed=0, **kwargs):
    return Environment(cfg, geom, rng=np.random.default_rng(seed), **kwargs)


def test_init_ego_positions(geom):
    env = _env(EnvConfig(n_vehicles=4, ego_lane="ramp"), geom)
    assert env.ego.x == 75.0 and env.ego.lane == Lane.RAMP
    env = _env(EnvConfig(n_vehicles=4, ego_lane="main"), geom)
    assert env.ego.x == 0.0 and env.ego.lane == Lane.MAIN


@pytest.mark.parametrize("seed", range(8))
def test_init_spacing_and_ramp_cap(geom, seed):
    env = _env(EnvConfig(n_vehicles=24), geom, seed=seed)
    assert len(env.vehicles) == 24
    for lane in (Lane.RAMP, Lane.MAIN):
        xs = sorted(v.x for v in env.vehicles if v.lane == lane)
        gaps = np.diff(xs)
        assert len(gaps) == 0 or gaps.min() >= 10.0
    assert sum(1 for v in env.vehicles if v.lane == Lane.RAMP) <= 7


def test_init_velocity_rules(geom):
    cfg = EnvConfig(n_vehicles=24)
    env = _env(cfg, geom, seed=3)
    for v in env.vehicles:
        if v.lane == Lane.RAMP and geom.in_merge_region(v.x):
            taper = ramp_speed_taper(v.x, cfg, geom)
            assert taper - 2.0 <= v.v <= taper + 2.0
        else:
            assert 7.78 <= v.v <= 11.78


def test_init_infeasible_population(geom):
    with pytest.raises(PlacementError):
        _env(EnvConfig(n_vehicles=60), geom)


# -- spawning ---------------------------------------------------------------------

def test_spawn_probability(geom):
    cfg = EnvConfig(n_vehicles=1, ego_lane="main")
    env = _env(cfg, geom, seed=1)
    env.ego.x = 150.0  # keep both lane entries clear
    added = 0
    trials = 20_000
    for _ in range(trials):
        if env.spawn_replacement() is not None:
            added += 1
        env.vehicles = env.vehicles[:1]
        env.pending_spawns.clear()
    assert added / trials == pytest.approx(0.7, abs=0.02)


def test_spawn_redirected_when_ramp_full(geom):
    cfg = EnvConfig(n_vehicles=1, ego_lane="main")
    env = _env(cfg, geom, seed=2)
    for i in range(7):
        env.vehicles.append(VehicleState(id=100 + i, x=90.0 + 12 * i, v=9.0,
                                         lane=Lane.RAMP))
    for _ in range(200):
        sid = env.spawn_replacement()
        if sid is not None:
            veh = next(v for v in env.vehicles if v.id == sid)
            assert veh.lane == Lane.MAIN
            env.vehicles = [v for v in env.vehicles if v.id != sid]
    assert sum(1 for v in env.vehicles if v.lane == Lane.RAMP) == 7


def test_blocked_spawn_is_deferred_not_dropped(geom):
    cfg = EnvConfig(n_vehicles=1, ego_lane="main", respawn_prob=1.0, main_lane_prob=1.0)
    env = _env(cfg, geom, seed=3)
    env.ego.x = 4.0  # blocks the main entry
    assert env.spawn_replacement() is None
    assert env.pending_spawns == [Lane.MAIN]
    env.ego.x = 50.0
    spawned = env._retry_pending()
    assert len(spawned) == 1
    assert env.pending_spawns == []


# -- observations -------------------------------------------------------------------

def test_observation_alone_at_merge_end(geom):
    cfg = EnvConfig(n_vehicles=1, ego_lane="main")
    env = _env(cfg, geom)
    env.ego.x = geom.merge_end_x
    obs, raw = env.build_observation(0)
    assert obs.d_e == 0.0
    assert obs.fc_d == 1.0 and obs.fc_v == 1.0
    assert obs.fs_d == 1.0 and obs.fs_v == 1.0
    assert obs.rs_d == 1.0 and obs.rs_v == -1.0
    assert math.isinf(raw.fc_gap)


def test_observation_ramp_at_merge_start(geom):
    cfg = EnvConfig(n_vehicles=1, ego_lane="ramp")
    env = _env(cfg, geom)
    env.ego.x = geom.merge_start_x
    obs, _ = env.build_observation(0)
    assert obs.d_e == 1.0


def test_observation_front_car_normalization(geom):
    cfg = EnvConfig(n_vehicles=1, ego_lane="main")
    env = _env(cfg, geom)
    env.ego.x, env.ego.v = 50.0, 10.0
    env.vehicles.append(VehicleState(id=1, x=50.0 + 11.5 + geom.car_length, v=8.0,
                                     lane=Lane.MAIN))
    obs, raw = env.build_observation(0)
    assert obs.fc_d == pytest.approx(0.5, abs=1e-12)
    assert obs.fc_v == pytest.approx(-2.0 / 29.16, abs=1e-9)
    assert raw.fc_gap == pytest.approx(11.5, abs=1e-12)


def test_adjacency_only_inside_merge_region(geom):
    cfg = EnvConfig(n_vehicles=1, ego_lane="main")
    env = _env(cfg, geom)
    env.ego.x = 50.0  # outside the merging region
    env.vehicles.append(VehicleState(id=1, x=55.0, v=9.0, lane=Lane.RAMP))
    obs, _ = env.build_observation(0)
    assert obs.fs_d == 1.0 and obs.rs_d == 1.0
    env.ego.x = 150.0
    env.vehicles[1].x = 155.0
    obs, _ = env.build_observation(0)
    assert obs.fs_d < 1.0  # now visible as front-side


def test_overlapping_adjacent_counts_as_front_side(geom):
    cfg = EnvConfig(n_vehicles=1, ego_lane="ramp")
    env = _env(cfg, geom)
    env.ego.x = 150.0
    env.vehicles.append(VehicleState(id=1, x=149.0, v=9.0, lane=Lane.MAIN))
    obs, raw = env.build_observation(0)
    assert obs.fs_d == 0.0          # overlap clips to zero gap
    assert math.isinf(raw.rs_gap)   # not seen as rear-side
    # strictly behind by more than a car length: rear-side
    env.vehicles[1].x = 150.0 - geom.car_length - 2.0
    obs, raw = env.build_observation(0)
    assert raw.rs_gap == pytest.approx(2.0)
    assert math.isinf(raw.fs_gap)


def test_observation_fields_stay_in_range(geom):
    cfg = EnvConfig(n_vehicles=12)
    env = _env(cfg, geom, seed=9,
               action_provider=_AllMaintain(), policy_sampler=lambda r: "level0")
    for _ in range(80):
        res = env.step(DriveAction.MAINTAIN)
        o = res.observation
        assert -1.0 <= o.fc_v <= 1.0 and -1.0 <= o.fs_v <= 1.0 and -1.0 <= o.rs_v <= 1.0
        assert 0.0 <= o.fc_d <= 1.0 and 0.0 <= o.fs_d <= 1.0 and 0.0 <= o.rs_d <= 1.0
        assert -1.0 <= o.d_e <= 1.0 and 0.0 <= o.v_x <= 1.0 and o.lane in (0, 1)
        for veh in env.vehicles:
            assert 0.0 <= veh.v <= cfg.v_max
        if res.done:
            break


class _AllMaintain:
    def actions(self, views):
        return [DriveAction.MAINTAIN] * len(views)


# -- collisions ----------------------------------------------------------------------

def test_type1_barrier(geom):
    cfg = EnvConfig(n_vehicles=1, ego_lane="ramp")
    env = _env(cfg, geom)
    env.ego.x = geom.merge_end_x - geom.car_length / 2.0  # front bumper at the barrier
    assert env.detect_collisions()[0] == CollisionType.RAMP_END_BARRIER


def test_type2_merge_overlap(geom):
    cfg = EnvConfig(n_vehicles=1, ego_lane="ramp")
    env = _env(cfg, geom)
    env.ego.x = 150.0
    env.ego.lane = Lane.MAIN
    env.ego.merged_this_step = True
    env.vehicles.append(VehicleState(id=1, x=153.0, v=9.0, lane=Lane.MAIN))
    assert env.detect_collisions()[0] == CollisionType.MERGE_INTO_CAR


def test_type3_boundary(geom):
    cfg = EnvConfig(n_vehicles=1, ego_lane="main")
    env = _env(cfg, geom)
    env.ego.x = 100.0
    env.vehicles.append(VehicleState(id=1, x=100.0 + geom.car_length + 0.1, v=9.0,
                                     lane=Lane.MAIN))
    assert env.detect_collisions() == {}
    env.vehicles[1].x = 100.0 + geom.car_length
    assert env.detect_collisions()[0] == CollisionType.REAR_END


# -- reward -----------------------------------------------------------------------------

def _raw(fc=math.inf, fs=math.inf, rs=math.inf, d_e=100.0, v=9.78, lane=Lane.MAIN):
    return RawMeasurements(fc_gap=fc, fs_gap=fs, rs_gap=rs, d_e=d_e, v=v, lane=lane)


def test_headway_term_values(cfg):
    for gap, expected in [(3.0, -1.0), (13.0, 0.0), (23.0, 1.0), (8.0, -0.5), (2.0, -1.0),
                          (40.0, 1.0)]:
        t = reward_terms(_raw(fc=gap), DriveAction.HARD_ACCELERATE, CollisionType.NONE, cfg)
        assert t.headway == pytest.approx(expected, abs=1e-12), gap


def test_headway_term_monotone_continuous(cfg):
    gaps = np.linspace(0.0, 30.0, 400)
    hs = [reward_terms(_raw(fc=g), DriveAction.MAINTAIN, CollisionType.NONE, cfg).headway
          for g in gaps]
    assert all(b >= a - 1e-12 for a, b in zip(hs, hs[1:]))
    # continuity at the branch joints
    for joint in (3.0, 13.0, 23.0):
        left = reward_terms(_raw(fc=joint - 1e-9), DriveAction.MAINTAIN,
                            CollisionType.NONE, cfg).headway
        right = reward_terms(_raw(fc=joint + 1e-9), DriveAction.MAINTAIN,
                             CollisionType.NONE, cfg).headway
        assert right - left < 1e-6


def test_velocity_term_values(cfg):
    for v, expected in [(9.78, 0.0), (0.0, -1.0), (19.47, 0.5), (29.16, 0.0)]:
        t = reward_terms(_raw(v=v), DriveAction.MERGE, CollisionType.NONE, cfg)
        assert t.velocity == pytest.approx(expected, abs=1e-9), v


def test_effort_term(cfg):
    slow = _raw(v=3.0)   # below v_nom/2: no effort cost
    fast = _raw(v=9.0)
    assert reward_terms(slow, DriveAction.HARD_ACCELERATE, CollisionType.NONE, cfg).effort == 0.0
    assert reward_terms(fast, DriveAction.ACCELERATE, CollisionType.NONE, cfg).effort == -0.25
    assert reward_terms(fast, DriveAction.DECELERATE, CollisionType.NONE, cfg).effort == -0.25
    assert reward_terms(fast, DriveAction.HARD_DECELERATE, CollisionType.NONE, cfg).effort == -1.0
    assert reward_terms(fast, DriveAction.MAINTAIN, CollisionType.NONE, cfg).effort == 0.0


def test_not_merging_term(cfg):
    assert reward_terms(_raw(lane=Lane.RAMP, d_e=50.0), DriveAction.MAINTAIN,
                        CollisionType.NONE, cfg).not_merging == -1.0
    assert reward_terms(_raw(lane=Lane.MAIN), DriveAction.MAINTAIN,
                        CollisionType.NONE, cfg).not_merging == 0.0


def test_stopping_term_main(cfg):
    clear = _raw(fc=40.0, d_e=100.0)
    assert reward_terms(clear, DriveAction.MAINTAIN, CollisionType.NONE, cfg).stopping == -1.0
    assert reward_terms(clear, DriveAction.HARD_ACCELERATE, CollisionType.NONE, cfg).stopping == 0.0
    near = _raw(fc=40.0, d_e=10.0)
    assert reward_terms(near, DriveAction.MAINTAIN, CollisionType.NONE, cfg).stopping == 0.0
    blocked = _raw(fc=10.0, d_e=100.0)
    assert reward_terms(blocked, DriveAction.MAINTAIN, CollisionType.NONE, cfg).stopping == 0.0


def test_stopping_term_ramp(cfg):
    gap_open = _raw(fs=10.0, rs=40.0, d_e=100.0, lane=Lane.RAMP)
    assert reward_terms(gap_open, DriveAction.MAINTAIN, CollisionType.NONE, cfg).stopping == -1.0
    assert reward_terms(gap_open, DriveAction.MERGE, CollisionType.NONE, cfg).stopping == 0.0
    rear_close = _raw(fs=10.0, rs=20.0, d_e=100.0, lane=Lane.RAMP)
    assert reward_terms(rear_close, DriveAction.MAINTAIN, CollisionType.NONE, cfg).stopping == 0.0
    near_end = _raw(fs=10.0, rs=20.0, d_e=20.0, lane=Lane.RAMP)
    assert reward_terms(near_end, DriveAction.MAINTAIN, CollisionType.NONE, cfg).stopping == -0.05


def test_collision_term_and_reward(cfg):
    t = reward_terms(_raw(), DriveAction.MAINTAIN, CollisionType.REAR_END, cfg)
    assert t.collision == -1.0
    weights = RewardWeights()
    r = compute_reward(t, weights)
    assert r <= -100.0 + 3.0  # collision dominates

    zero = reward_terms(_raw(fc=13.0, d_e=10.0, v=9.78), DriveAction.MAINTAIN,
                        CollisionType.NONE, cfg)
    assert compute_reward(zero, weights) == pytest.approx(0.0, abs=1e-12)


def test_compute_reward_dot_product():
    from mergesim.env import RewardTerms
    w = RewardWeights(collision=100.0, headway=1.0, velocity=1.0, effort=1.0,
                      not_merging=1.0, stopping=1.0)
    assert compute_reward(RewardTerms(-1, 0, 0, 0, 0, 0), w) == -100.0
    one = RewardWeights(collision=1.0, headway=1.0, velocity=1.0, effort=1.0,
                        not_merging=1.0, stopping=1.0)
    assert compute_reward(RewardTerms(0, 1, 0.5, -0.25, -1, 0), one) == pytest.approx(0.25)


# -- env_step -----------------------------------------------------------------------

def test_step_exit_done(geom):
    cfg = EnvConfig(n_vehicles=1, ego_lane="main")
    env = _env(cfg, geom, accel_sampler=lambda a, r: 0.0)
    env.ego.x = geom.main_road_length - 1.0
    env.ego.v = 10.0
    res = env.step(DriveAction.MAINTAIN)
    assert res.done and res.info.cause == "exit"
    with pytest.raises(ContractViolation):
        env.step(DriveAction.MAINTAIN)


def test_step_type1_reward_includes_collision_weight(geom):
    cfg = EnvConfig(n_vehicles=1, ego_lane="ramp")
    env = _env(cfg, geom, accel_sampler=lambda a, r: 0.0)
    env.ego.x = geom.merge_end_x - 3.0
    env.ego.v = 10.0
    res = env.step(DriveAction.MAINTAIN)
    assert res.done and res.info.cause == "collision"
    assert res.info.ego_collision == CollisionType.RAMP_END_BARRIER
    assert res.terms.collision == -1.0
    assert res.reward < -90.0


def test_step_three_car_deterministic_fixture(geom):
    cfg = EnvConfig(n_vehicles=1, ego_lane="main")
    env = _env(cfg, geom, action_provider=_AllMaintain(),
               accel_sampler=lambda a, r: 0.0)
    env.ego.x, env.ego.v = 10.0, 8.0
    env.vehicles.append(VehicleState(id=1, x=60.0, v=10.0, lane=Lane.MAIN))
    env.vehicles.append(VehicleState(id=2, x=120.0, v=6.0, lane=Lane.RAMP))
    start = {v.id: (v.x, v.v) for v in env.vehicles}
    env.step(DriveAction.MAINTAIN)
    env.step(DriveAction.MAINTAIN)
    for v in env.vehicles:
        x0, v0 = start[v.id]
        assert v.x == pytest.approx(x0 + 2 * v0 * cfg.dt, abs=1e-12)
        assert v.v == v0


def test_step_closed_form_position_sequence(geom):
    cfg = EnvConfig(n_vehicles=1, ego_lane="main")
    env = _env(cfg, geom, accel_sampler=lambda a, r: 0.0)
    x0, v0 = env.ego.x, env.ego.v
    for t in range(1, 40):
        res = env.step(DriveAction.MAINTAIN)
        assert env.ego.x == pytest.approx(x0 + t * v0 * cfg.dt, abs=1e-9)
        if res.done:
            break


def _trace_episode(seed, geom):
    run_cfg = RunConfig()
    cfg = EnvConfig(n_vehicles=10)
    rng = np.random.default_rng(seed)
    provider = TrafficActionProvider(run_cfg, rng)
    env = Environment(cfg, geom, rng=rng, action_provider=provider)
    params0 = Level0Params()

    def ego_act(view):
        obs = denormalize_observation(view.observation, cfg, geom)
        if obs.lane == Lane.RAMP:
            return level0_ramp_action(obs, params0, env.rng)
        return level0_main_action(obs, params0)

    states = []
    run_episode(env, ego_act,
                on_step=lambda e, a, r: states.append(
                    [(v.id, v.x, v.v, int(v.lane)) for v in e.vehicles]))
    return states


def test_step_bit_identical_under_seed(geom):
    assert _trace_episode(77, geom) == _trace_episode(77, geom)


def test_environment_collision_removal_and_logging(geom):
    cfg = EnvConfig(n_vehicles=1, ego_lane="main", respawn_prob=0.0)
    env = _env(cfg, geom, action_provider=_AllMaintain(),
               accel_sampler=lambda a, r: 0.0)
    env.ego.x, env.ego.v = 0.0, 5.0
    # two environment cars about to rear-end on the ramp
    env.vehicles.append(VehicleState(id=1, x=90.0, v=12.0, lane=Lane.RAMP))
    env.vehicles.append(VehicleState(id=2, x=96.0, v=0.0, lane=Lane.RAMP))
    res = env.step(DriveAction.MAINTAIN)
    assert not res.done
    assert (1, CollisionType.REAR_END) in res.info.removed
    assert all(v.id != 1 for v in env.vehicles)
    assert any(v.id == 2 for v in env.vehicles)  # the leader survives
