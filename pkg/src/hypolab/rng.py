"""Deterministic, splittable random streams.

Every stochastic operation in the package draws from a Philox counter-based
generator keyed by an integer seed plus a tuple path, e.g.
``stream(seed, "batch", epoch, index)``.  Streams with different paths are
statistically independent and can be drawn in any order or in parallel while
reproducing the serial result exactly.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["stream", "path_key"]


def path_key(*parts: int | str) -> tuple[int, ...]:
    """Map a mixed path of ints and short strings to a spawn-key tuple."""
    key = []
    for p in parts:
        if isinstance(p, str):
            key.append(zlib.crc32(p.encode("utf-8")))
        else:
            p = int(p)
            if p < 0:
                raise ValueError(f"path components must be non-negative, got {p}")
            key.append(p)
    return tuple(key)


def stream(seed: int, *path: int | str) -> np.random.Generator:
    """Return the Philox generator for (seed, *path)."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=path_key(*path))
    return np.random.Generator(np.random.Philox(ss))
