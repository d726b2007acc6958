"""Named random streams derived from one integer seed.

``stream(seed, "init")`` and ``stream(seed, "shuffle")`` are independent, so
changing how many draws one component makes never shifts another.
"""

from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, name: str) -> np.random.Generator:
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(key,)))
