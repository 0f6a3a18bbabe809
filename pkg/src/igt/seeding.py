"""Deterministic, name-addressed random streams.

Every random draw in the package comes from a stream keyed by a base seed
plus a tuple of labels (parameter name, bag index, epoch, ...).  Streams
with the same key are identical across processes and platforms, and adding
or removing one consumer never shifts the draws seen by another.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _key_entropy(key: str | int) -> int:
    if isinstance(key, int):
        return key & 0xFFFFFFFFFFFFFFFF
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def rng_for(seed: int, *keys: str | int) -> np.random.Generator:
    """Return a generator unique to (seed, *keys), stable across runs."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_key_entropy(k) for k in keys]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
