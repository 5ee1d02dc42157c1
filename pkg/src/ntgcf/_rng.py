"""Named, seed-derived random streams.

Every consumer of randomness asks for a stream by name (``"split"``,
``"init"``, ``"sampling"``, ``"sweep"``) plus optional integer coordinates
such as an epoch and batch index. Streams with different names or
coordinates are statistically independent, and the same request always
yields the same generator.
"""

from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, name: str, *coords: int) -> np.random.Generator:
    key = [int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode("utf-8"))]
    key.extend(int(c) for c in coords)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))
