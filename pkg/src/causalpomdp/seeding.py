"""Deterministic RNG splitting.

All randomness in this package flows from a single 64-bit master seed.
Sub-streams are derived with ``numpy.random.SeedSequence`` spawn keys, so
episode i of run (cell, seed, purpose) gets the same bits regardless of
execution order or parallelism.
"""

from __future__ import annotations

import numpy as np


def master_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed))


def split_rng(seed: int, *key: int) -> np.random.Generator:
    """Generator for the sub-stream identified by an integer key tuple."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


def episode_rng(seed: int, index: int) -> np.random.Generator:
    """Per-episode stream: episodes are independent draws, safe to parallelize."""
    return split_rng(seed, index)
