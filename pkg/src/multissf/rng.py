"""Named, reproducible RNG substreams derived from one root seed.

Every source of randomness in the package draws from a stream keyed by
(root seed, purpose, indices...), so results do not depend on execution
order or thread scheduling.
"""

from __future__ import annotations

import numpy as np

# fixed purpose codes; keys are (root_seed, purpose, *indices)
STREAM_SIMULATE = 1
STREAM_CONTROLS = 2
STREAM_MULTISTART = 3
STREAM_REPLICATE = 4


def child_rng(root_seed: int, *key: int) -> np.random.Generator:
    """Generator for the substream identified by ``key`` under ``root_seed``."""
    return np.random.default_rng(np.random.SeedSequence(root_seed, spawn_key=tuple(key)))


def child_seed(root_seed: int, *key: int) -> int:
    """A 64-bit integer seed for the substream identified by ``key``."""
    ss = np.random.SeedSequence(root_seed, spawn_key=tuple(key))
    return int(ss.generate_state(1, np.uint64)[0])
