"""Deterministic random streams.

Every stochastic draw in the pipeline comes from a counter-based (Philox)
generator keyed by a path of integers/names, e.g. (seed, level, "step", 17).
Streams with different keys are independent, so results do not depend on
thread count or on the order windows happen to be visited.
"""

from __future__ import annotations

import zlib

import numpy as np


def _as_key(part) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError(f"rng key parts must be non-negative, got {part}")
        return int(part)
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    raise TypeError(f"unsupported rng key part: {part!r}")


def keyed_rng(seed: int, *path) -> np.random.Generator:
    """Return a Generator for the stream identified by (seed, *path)."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_as_key(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))
