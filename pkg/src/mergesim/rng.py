"""Deterministic random-stream management.

All randomness in a run flows from one master seed. Each consumer gets a
named substream so that adding or reordering draws in one component never
shifts the streams seen by another. Streams are derived with
``numpy.random.SeedSequence(master_seed, spawn_key=(stream_id, *indices))``,
which is stable across platforms and numpy versions.
"""

from __future__ import annotations

import numpy as np

# Registry of stream names. Append only: renumbering breaks reproducibility
# of archived runs.
STREAM_IDS = {
    "env": 0,          # per-episode environment stream (placement, accel noise, spawns, level-0 gates)
    "explore": 1,      # ego Boltzmann draws during training
    "replay": 2,       # replay-memory batch sampling
    "init": 3,         # network initialisation
    "eval": 4,         # evaluation episodes
    "selection": 5,    # model-selection self-play episodes
    "curriculum": 6,   # random-population phase draws
    "lane": 7,         # ego lane assignment per episode
}


def substream(master_seed: int, name: str, *indices: int) -> np.random.Generator:
    """Return the generator for stream ``name`` (optionally indexed, e.g. per episode)."""
    try:
        stream_id = STREAM_IDS[name]
    except KeyError:
        raise KeyError(f"unknown random stream {name!r}; registered: {sorted(STREAM_IDS)}")
    seq = np.random.SeedSequence(entropy=master_seed, spawn_key=(stream_id, *indices))
    return np.random.default_rng(seq)
