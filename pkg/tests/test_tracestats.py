import random

import numpy as np
import pytest

from mergesim.errors import TraceFormatError
from mergesim.tracestats import (Moments, acceleration_distribution,
                                 headway_distribution, headway_samples,
                                 load_trajectories, population_distribution,
                                 suggest_env_fragment, velocity_distribution)

HEADER = "vehicle_id,frame,lane,x,v,a\n"


def write_trace(tmp_path, rows, name="trace.csv"):
    path = tmp_path / name
    path.write_text(HEADER + "".join(rows))
    return path


def row(vid, frame, lane, x, v, a=0.0):
    return f"{vid},{frame},{lane},{x},{v},{a}\n"


# -- loading ------------------------------------------------------------------------

def test_load_well_formed(tmp_path):
    path = write_trace(tmp_path, [row(1, 0, 1, 10.0, 9.0), row(1, 1, 1, 14.5, 9.0),
                                  row(2, 0, 0, 80.0, 7.0)])
    records = load_trajectories(path)
    assert len(records) == 3
    assert records[0].vehicle_id == 1 and records[2].lane == 0


def test_load_rejects_non_numeric_with_line_number(tmp_path):
    path = write_trace(tmp_path, [row(1, 0, 1, 10.0, 9.0),
                                  "1,1,1,abc,9.0,0.0\n"])
    with pytest.raises(TraceFormatError) as err:
        load_trajectories(path)
    assert err.value.line_number == 3


def test_load_rejects_out_of_order_frames(tmp_path):
    path = write_trace(tmp_path, [row(1, 5, 1, 10.0, 9.0), row(1, 4, 1, 14.0, 9.0)])
    with pytest.raises(TraceFormatError):
        load_trajectories(path)


def test_load_rejects_missing_columns(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("vehicle_id,frame,lane,x\n1,0,1,10.0\n")
    with pytest.raises(TraceFormatError) as err:
        load_trajectories(path)
    assert "missing columns" in str(err.value)


def test_load_tab_delimited(tmp_path):
    path = tmp_path / "trace.tsv"
    path.write_text("vehicle_id\tframe\tlane\tx\tv\ta\n1\t0\t1\t10.0\t9.0\t0.0\n")
    assert len(load_trajectories(path)) == 1


def test_load_empty_file(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("")
    assert load_trajectories(path) == []


# -- headway ---------------------------------------------------------------------------

def test_headway_published_constant(tmp_path):
    path = write_trace(tmp_path, [row(1, 0, 1, 100.0, 9.0),
                                  row(2, 0, 1, 117.72, 9.0)])
    records = load_trajectories(path)
    samples = headway_samples(records, lanes=(1,), car_length=5.0)
    assert samples.tolist() == pytest.approx([12.72], abs=1e-12)


def test_headway_single_vehicle_has_no_samples(tmp_path):
    path = write_trace(tmp_path, [row(1, 0, 1, 100.0, 9.0)])
    records = load_trajectories(path)
    assert len(headway_samples(records)) == 0
    dist = headway_distribution(records)
    assert dist.moments.count == 0


def test_headway_invariant_to_record_order(tmp_path):
    rows = [row(v, f, 1, 50.0 + 17.0 * v + 4.0 * f, 8.0)
            for v in range(1, 5) for f in range(3)]
    records = load_trajectories(write_trace(tmp_path, rows))
    shuffled = records[:]
    random.Random(0).shuffle(shuffled)
    a = sorted(headway_samples(records))
    b = sorted(headway_samples(shuffled))
    assert a == pytest.approx(b)


# -- moments vs brute force --------------------------------------------------------------

def brute_force_moments(samples):
    n = len(samples)
    mean = sum(samples) / n
    var = sum((s - mean) ** 2 for s in samples) / n
    return mean, var ** 0.5


def test_moments_match_brute_force(tmp_path):
    rng = np.random.default_rng(0)
    rows = []
    for v in range(1, 8):
        for f in range(40):
            rows.append(row(v, f, int(rng.integers(0, 2)),
                            float(rng.uniform(0, 300)), float(rng.uniform(0, 20)),
                            float(rng.normal(0, 1))))
    records = load_trajectories(write_trace(tmp_path, rows))
    for dist, values in [
        (velocity_distribution(records), [r.v for r in records]),
        (acceleration_distribution(records), [r.a for r in records]),
    ]:
        mean, std = brute_force_moments(values)
        assert dist.moments.mean == pytest.approx(mean, rel=1e-9)
        assert dist.moments.std == pytest.approx(std, rel=1e-9)
        assert dist.counts.sum() == dist.moments.count == len(values)


def test_constant_speed_trace(tmp_path):
    rows = [row(1, f, 1, 10.0 + f, 9.78) for f in range(10)]
    dist = velocity_distribution(load_trajectories(write_trace(tmp_path, rows)))
    assert dist.moments.mean == pytest.approx(9.78)
    assert dist.moments.std == 0.0


def test_population_histogram(tmp_path):
    rows = [row(v, 0, 1, 10.0 * v, 9.0) for v in range(1, 4)]      # frame 0: 3 cars
    rows += [row(v, 1, 1, 10.0 * v, 9.0) for v in range(1, 6)]     # frame 1: 5 cars
    records = load_trajectories(write_trace(tmp_path, rows))
    dist = population_distribution(records)
    assert dist.moments.count == 2
    occupied = {int(left + 0.5): int(c)
                for left, c in zip(dist.edges[:-1], dist.counts) if c}
    assert occupied == {3: 1, 5: 1}


def test_lane_filter(tmp_path):
    rows = [row(1, 0, 0, 80.0, 7.0), row(2, 0, 1, 10.0, 11.0)]
    records = load_trajectories(write_trace(tmp_path, rows))
    assert velocity_distribution(records, lanes=(0,)).moments.mean == pytest.approx(7.0)
    assert velocity_distribution(records, lanes=(1,)).moments.mean == pytest.approx(11.0)
    assert velocity_distribution(records, lanes=None).moments.mean == pytest.approx(9.0)


# -- config fragment -----------------------------------------------------------------------

def test_suggest_env_fragment():
    headway = Moments(count=100, mean=12.72, std=10.11, minimum=0.0, maximum=60.0)
    velocity = Moments(count=100, mean=9.78, std=4.84, minimum=0.0, maximum=20.0)
    fragment = suggest_env_fragment(headway, velocity)
    assert fragment == {"env": {"v_nom": 9.78, "d_nom": 13.0, "d_far": 23.0}}
