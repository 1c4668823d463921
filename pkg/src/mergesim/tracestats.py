"""Trajectory-file analysis: headway, velocity, acceleration, population.

Input is delimited text (comma or tab) with a header naming the columns
``vehicle_id, frame, lane, x, v, a`` in any order: integer vehicle id and
frame index (10 Hz sampling in the reference data), integer lane id
(0 = ramp, 1 = main for files produced by this package), position in meters,
velocity in m/s, acceleration in m/s^2. Frames must strictly increase per
vehicle. Histograms plus first and second moments come out per lane scope.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import TraceFormatError

REQUIRED_COLUMNS = ("vehicle_id", "frame", "lane", "x", "v", "a")


@dataclass(frozen=True)
class TrajectoryRecord:
    vehicle_id: int
    frame: int
    lane: int
    x: float
    v: float
    a: float


@dataclass(frozen=True)
class Moments:
    count: int
    mean: float
    std: float     # population standard deviation
    minimum: float
    maximum: float

    @classmethod
    def of(cls, samples: np.ndarray) -> "Moments":
        if len(samples) == 0:
            return cls(0, float("nan"), float("nan"), float("nan"), float("nan"))
        return cls(count=len(samples), mean=float(np.mean(samples)),
                   std=float(np.std(samples)), minimum=float(np.min(samples)),
                   maximum=float(np.max(samples)))

    def as_dict(self) -> dict:
        return {"count": self.count, "mean": self.mean, "std": self.std,
                "min": self.minimum, "max": self.maximum}


@dataclass(frozen=True)
class Distribution:
    """Histogram plus moments of one quantity under one lane filter."""

    quantity: str
    counts: np.ndarray
    edges: np.ndarray
    moments: Moments

    def write_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bin_left", "bin_right", "count"])
            for left, right, count in zip(self.edges[:-1], self.edges[1:], self.counts):
                writer.writerow([str(float(left)), str(float(right)), str(int(count))])


def load_trajectories(path) -> list[TrajectoryRecord]:
    """Parse and validate a trajectory file.

    Malformed rows and out-of-order frames raise TraceFormatError with the
    offending line number.
    """
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise TraceFormatError(f"cannot open {path}: {exc}")
    with fh:
        sample = fh.read(4096)
        fh.seek(0)
        delimiter = "\t" if sample.count("\t") > sample.count(",") else ","
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            return []
        header = [h.strip() for h in header]
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise TraceFormatError(f"missing columns: {', '.join(missing)}", line_number=1)
        idx = {c: header.index(c) for c in REQUIRED_COLUMNS}

        records = []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) < len(header):
                raise TraceFormatError(f"expected {len(header)} fields, got {len(row)}",
                                       line_number=line_no)
            try:
                rec = TrajectoryRecord(
                    vehicle_id=int(row[idx["vehicle_id"]]),
                    frame=int(row[idx["frame"]]),
                    lane=int(row[idx["lane"]]),
                    x=float(row[idx["x"]]),
                    v=float(row[idx["v"]]),
                    a=float(row[idx["a"]]),
                )
            except ValueError as exc:
                raise TraceFormatError(str(exc), line_number=line_no)
            if not all(np.isfinite([rec.x, rec.v, rec.a])):
                raise TraceFormatError("non-finite value", line_number=line_no)
            records.append(rec)

    last_frame: dict[int, int] = {}
    for rec in records:
        prev = last_frame.get(rec.vehicle_id)
        if prev is not None and rec.frame <= prev:
            raise TraceFormatError(
                f"frames not strictly increasing for vehicle {rec.vehicle_id} "
                f"(frame {rec.frame} after {prev})")
        last_frame[rec.vehicle_id] = rec.frame
    return records


def _filtered(records: Iterable[TrajectoryRecord],
              lanes: Optional[Sequence[int]]) -> list[TrajectoryRecord]:
    if lanes is None:
        return list(records)
    laneset = set(lanes)
    return [r for r in records if r.lane in laneset]


def headway_samples(records: Sequence[TrajectoryRecord],
                    lanes: Optional[Sequence[int]] = None,
                    car_length: float = 5.0) -> np.ndarray:
    """Bumper-to-bumper gap to the nearest leader, per vehicle, frame, and lane."""
    by_frame_lane: dict[tuple[int, int], list[TrajectoryRecord]] = {}
    for rec in _filtered(records, lanes):
        by_frame_lane.setdefault((rec.frame, rec.lane), []).append(rec)
    gaps = []
    for group in by_frame_lane.values():
        group.sort(key=lambda r: r.x)
        for follower, leader in zip(group, group[1:]):
            gaps.append(leader.x - follower.x - car_length)
    return np.array(gaps, dtype=np.float64)


def headway_distribution(records, lanes=None, car_length: float = 5.0,
                         bins=30) -> Distribution:
    samples = headway_samples(records, lanes, car_length)
    return _make_distribution("headway", samples, bins)


def velocity_distribution(records, lanes=None, bins=30) -> Distribution:
    samples = np.array([r.v for r in _filtered(records, lanes)], dtype=np.float64)
    return _make_distribution("velocity", samples, bins)


def acceleration_distribution(records, lanes=None, bins=30) -> Distribution:
    samples = np.array([r.a for r in _filtered(records, lanes)], dtype=np.float64)
    return _make_distribution("acceleration", samples, bins)


def population_samples(records, lanes=None) -> np.ndarray:
    """Vehicle count per frame under the lane filter."""
    counts: dict[int, int] = {}
    for rec in _filtered(records, lanes):
        counts[rec.frame] = counts.get(rec.frame, 0) + 1
    return np.array([counts[f] for f in sorted(counts)], dtype=np.float64)


def population_distribution(records, lanes=None, bins=None) -> Distribution:
    samples = population_samples(records, lanes)
    if bins is None and len(samples):
        lo, hi = int(samples.min()), int(samples.max())
        bins = np.arange(lo - 0.5, hi + 1.5, 1.0)  # one bin per integer count
    return _make_distribution("population", samples, bins if bins is not None else 10)


def _make_distribution(quantity: str, samples: np.ndarray, bins) -> Distribution:
    if len(samples) == 0:
        edges = np.array([0.0, 1.0])
        counts = np.array([0])
    else:
        counts, edges = np.histogram(samples, bins=bins)
    return Distribution(quantity=quantity, counts=counts, edges=edges,
                        moments=Moments.of(samples))


def suggest_env_fragment(headway: Moments, velocity: Moments) -> dict:
    """Environment-parameter suggestions from measured moments.

    v_nom tracks the mean velocity; d_nom rounds the mean headway and d_far
    rounds mean-plus-one-standard-deviation, mirroring how the shipped
    defaults were derived from the reference data.
    """
    return {
        "env": {
            "v_nom": round(velocity.mean, 2),
            "d_nom": float(round(headway.mean)),
            "d_far": float(round(headway.mean + headway.std)),
        }
    }
