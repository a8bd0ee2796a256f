"""Deterministic random-number streams.

One root seed drives an experiment; every replication derives an
independent generator from a counter-style key path, so serial and
parallel schedules consume identical draws.
"""

from __future__ import annotations

import numpy as np

__all__ = ["stream", "as_generator"]


def stream(root_seed: int, *key: int) -> np.random.Generator:
    """Independent generator for the integer key path ``key`` under ``root_seed``.

    ``stream(s, a, b)`` and ``stream(s, a, c)`` are statistically
    independent for b != c, and the mapping is stable across processes.
    """
    return np.random.default_rng(np.random.SeedSequence(root_seed, spawn_key=tuple(key)))


def as_generator(seed) -> np.random.Generator:
    """Pass through a Generator, or build one from an integer seed."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
