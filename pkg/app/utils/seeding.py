from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator per named stage so stages never share draws."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode("utf-8"))])


def stream_seed(seed: int, name: str) -> int:
    return int(stream(seed, name).integers(0, 2**31 - 1))
