"""Counter-mode seed derivation.

Every random stream is keyed by (master seed, stage tag, counter), so a work
unit draws the same numbers no matter which worker runs it or in what order.
"""

from __future__ import annotations

import numpy as np

STAGES = {
    "pattern": 1,
    "emit": 2,
    "detect": 3,
    "squash": 4,
    "channel": 5,
    "sweep": 6,
}

MAX_SEED = 2**64 - 1


def _sequence(seed: int, stage: str, *counters: int) -> np.random.SeedSequence:
    if not 0 <= seed <= MAX_SEED:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return np.random.SeedSequence(seed, spawn_key=(STAGES[stage], *counters))


def stream(seed: int, stage: str, *counters: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(_sequence(seed, stage, *counters)))


def derive_seed(seed: int, stage: str, *counters: int) -> int:
    return int(_sequence(seed, stage, *counters).generate_state(1, np.uint64)[0])
