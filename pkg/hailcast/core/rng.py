"""
Deterministic random streams.

One root seed fans out into independent streams keyed by purpose and
indices. The splitting rule is::

    Generator(PCG64(SeedSequence([seed, key_0, key_1, ...])))

where string keys are mapped to their CRC32. The same (seed, keys) always
yields the same stream regardless of call order or thread.
"""

import zlib

import numpy as np


def _key_to_int(key: int | str) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    if key < 0:
        raise ValueError(f"stream keys must be nonnegative, got {key}")
    return int(key)


def derive_rng(seed: int, *keys: int | str) -> np.random.Generator:
    """Return the generator for stream ``keys`` under root ``seed``."""
    entropy = [_key_to_int(seed), *(_key_to_int(k) for k in keys)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
