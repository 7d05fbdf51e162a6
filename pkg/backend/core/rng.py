"""
Counter-based random streams.

Every random draw in the lab comes from a stream addressed by
(seed, trial, tag, *keys); the same address always yields the same numbers,
no matter which worker computes it or in what order.
"""

import numpy as np

# Stream tags
GRID = 0
PARENT = 1
XI = 2
INPUT = 3
COEFFICIENT = 4
BELLMAN = 5


def stream(seed: int, trial: int, tag: int, *keys: int) -> np.random.Generator:
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, int(trial), int(tag), *(int(k) for k in keys)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
