"""Counter-based random streams derived from (seed, index, ...)."""
from __future__ import annotations

import numpy as np


def derived_rng(seed: int, *indices: int) -> np.random.Generator:
    """Independent Philox stream for a given seed and index path.

    The same (seed, indices) always gives the same stream, so work split into
    blocks or replicates does not depend on the order it is executed in.
    """
    ss = np.random.SeedSequence([int(seed) & (2**64 - 1), *(int(i) for i in indices)])
    return np.random.Generator(np.random.Philox(ss))


def as_rng(rng=None, seed=None) -> np.random.Generator:
    if rng is not None:
        return rng
    return derived_rng(0 if seed is None else seed)
