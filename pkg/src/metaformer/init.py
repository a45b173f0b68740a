"""Parameter initialization helpers."""

from __future__ import annotations

import numpy as np


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02, bound: float = 2.0) -> np.ndarray:
    """Normal draws rejected outside +/- ``bound`` sigma, then scaled by ``std``."""
    out = rng.standard_normal(shape)
    while True:
        bad = np.abs(out) > bound
        n_bad = int(bad.sum())
        if n_bad == 0:
            break
        out[bad] = rng.standard_normal(n_bad)
    return out * std


def child_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent stream derived from (seed, key); pure function of its arguments."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=tuple(key))))
