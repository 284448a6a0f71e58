"""Seeded random streams.

All randomness flows through :class:`numpy.random.Generator` backed by
PCG64.  A stream is identified by a master seed plus a tuple of integer
keys (purpose, replicate, sample-size index, ...) and is derived with
``SeedSequence(master, spawn_key=keys)``, so streams never depend on the
order in which they are requested.
"""

from __future__ import annotations

import numpy as np

# purpose keys, first element of every spawn key
SAMPLE = 0
MEMBERSHIP = 1
MONTE_CARLO = 2
EXPERIMENT = 3
RANDOM_MODELS = 4


def stream(seed: int, *keys: int) -> np.random.Generator:
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


def as_generator(rng_or_seed) -> np.random.Generator:
    if isinstance(rng_or_seed, np.random.Generator):
        return rng_or_seed
    return stream(int(rng_or_seed), SAMPLE)
