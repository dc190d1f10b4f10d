"""Reproducible random streams.

Every stream is a Philox4x64-10 counter-based generator keyed through a
SeedSequence on ``(seed, *key)``. Keys name the purpose of the stream (codebook
draws, Monte Carlo chunk i, ...), so results do not depend on how work is
scheduled across threads.
"""

from __future__ import annotations

import numpy as np

RNG_ALGORITHM = "numpy-philox4x64-10+seedsequence"
DEFAULT_SEED = 0x5EED

CODEBOOK = 1
MONTE_CARLO = 2
CORPUS = 3
BLOWUP = 4


def stream(seed: int, *key: int) -> np.random.Generator:
    if seed < 0 or seed >= 2**64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def draw_strings(rng: np.random.Generator, probs: np.ndarray, count: int, n: int) -> np.ndarray:
    """``count`` IID strings of length n from ``probs`` by inverse-CDF lookup."""
    cdf = np.cumsum(probs)
    u = rng.random((count, n))
    idx = np.searchsorted(cdf, u * cdf[-1], side="right")
    return np.minimum(idx, probs.size - 1).astype(np.int16)
