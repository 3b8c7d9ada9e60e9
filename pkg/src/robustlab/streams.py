"""Deterministic random streams keyed by (seed, purpose, indices...)."""
import zlib

import numpy as np


def stream(seed: int, *keys) -> np.random.Generator:
    words = [int(seed) & 0xFFFFFFFF]
    for k in keys:
        words.append(zlib.crc32(k.encode()) if isinstance(k, str) else int(k) & 0xFFFFFFFF)
    return np.random.default_rng(words)
