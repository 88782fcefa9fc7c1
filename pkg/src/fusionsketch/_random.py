"""Seed derivation.

Every random stream in the package is a Philox generator keyed by a
``SeedSequence`` built from a root seed and a tuple of integer keys. String
keys (method names) are folded in through CRC32 so the derivation does not
depend on Python's salted ``hash``.
"""
import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _key(k):
    if isinstance(k, str):
        return zlib.crc32(k.encode("utf-8"))
    if isinstance(k, (tuple, list)):
        raise TypeError("flatten keys before deriving")
    k = int(k)
    if k < 0:
        raise ValueError("stream keys must be non-negative")
    return k


def seed_sequence(seed, *keys):
    return np.random.SeedSequence(int(seed) & _MASK64, spawn_key=tuple(_key(k) for k in keys))


def generator(seed, *keys):
    """Counter-based generator for ``(seed, *keys)``."""
    return np.random.Generator(np.random.Philox(seed_sequence(seed, *keys)))


def derive_seed(seed, *keys):
    """A child 63-bit integer seed, stable across platforms and runs."""
    return int(seed_sequence(seed, *keys).generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
