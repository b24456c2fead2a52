"""Seeded, splittable random streams (thin layer over numpy's PCG64)."""

from __future__ import annotations

import numpy as np


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF)))


def split(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    """Derive ``n`` independent child streams; the parent advances deterministically."""
    return rng.spawn(n)


def derive(seed: int, *keys: int) -> np.random.Generator:
    """Stream for a (seed, key...) coordinate, independent of call order elsewhere."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *keys])))
