"""Counter-based random streams.

Every random quantity used by a test is a pure function of ``(seed, index)``:
the seed fixes a Philox key and the draw index selects a disjoint counter
block. Results therefore never depend on how draws are split across
workers.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

_MASK63 = (1 << 63) - 1


@lru_cache(maxsize=256)
def _key(seed: int) -> tuple[int, int]:
    state = np.random.SeedSequence(int(seed)).generate_state(2, np.uint64)
    return int(state[0]), int(state[1])


def stream(seed: int, index: int) -> np.random.Generator:
    """Generator for draw ``index`` under ``seed``."""
    if index < 0:
        raise ValueError("stream index must be nonnegative")
    key = np.array(_key(seed), dtype=np.uint64)
    counter = np.array([0, 0, 0, index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def derive_seed(master: int, *keys: int) -> int:
    """Child seed for a sub-task (grid point, replicate, ...)."""
    ss = np.random.SeedSequence([int(master), *[int(k) for k in keys]])
    return int(ss.generate_state(1, np.uint64)[0]) & _MASK63


def open_uniform(rng: np.random.Generator, size) -> np.ndarray:
    """Uniform deviates on ``(0, 1]``."""
    return 1.0 - rng.random(size)
