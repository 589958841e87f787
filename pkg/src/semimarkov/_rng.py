"""Deterministic RNG substream derivation.

Every stochastic routine in the package draws from a PCG64 generator keyed
by ``SeedSequence(master_seed, spawn_key=(tag, *indices))``.  The tag
identifies the consumer, the indices identify the grid cell and the
replication, so any (cell, replication) pair can be regenerated in
isolation and results do not depend on execution order.
"""

from __future__ import annotations

import numpy as np

# spawn-key tags, one per independent consumer of randomness
TAG_TRAJECTORY = 1
TAG_TEST_RANDOMIZATION = 2
TAG_POSTERIOR = 3
TAG_PROBE = 4
TAG_KL = 5
TAG_IDENTITY = 6
TAG_PRIOR = 7
TAG_SIEVE = 8


def substream(master_seed: int, *key: int) -> np.random.Generator:
    """Generator for the substream ``(master_seed, key)``."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))
