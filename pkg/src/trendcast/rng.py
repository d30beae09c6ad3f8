"""Named, reproducible random streams derived from one integer seed."""

from __future__ import annotations

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part)


def generator(seed, *path) -> np.random.Generator:
    """Return a PCG64 generator for the sub-stream ``path`` of ``seed``.

    ``generator(7, "trajectory", 3, 0)`` is the same stream on every platform
    and independent of how many other streams were created before it.  Passing
    a Generator with an empty path returns it unchanged.
    """
    if isinstance(seed, np.random.Generator):
        if path:
            raise TypeError("cannot derive a named stream from a Generator")
        return seed
    if seed is None:
        seed = 0
    seq = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(p) for p in path))
    return np.random.Generator(np.random.PCG64(seq))
