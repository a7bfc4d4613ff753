"""Independent random streams derived from one integer seed."""
from __future__ import annotations

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part)
    return zlib.crc32(str(part).encode())


def derive(seed: int, *path) -> np.random.Generator:
    """Generator for the stream named by ``path`` under ``seed``.

    Distinct paths give statistically independent streams; the same
    (seed, path) always gives the same stream.
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed)] + [_key(p) for p in path]))
