"""Deterministic derivation of random streams from a single run seed.

Every stochastic component draws from its own numpy Generator, derived from
``(seed, purpose, index)``.  The purpose string is folded to a 64-bit integer
with BLAKE2, and the triple feeds a numpy SeedSequence, so streams are
independent, reproducible, and insensitive to execution order or degree of
parallelism.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["derive_seed", "derive_rng"]

_MASK64 = (1 << 64) - 1


def derive_seed(seed: int, purpose: str, index: int = 0) -> tuple[int, int, int]:
    """Return the SeedSequence entropy triple for a derived stream."""
    if index < 0:
        raise ValueError("stream index must be nonnegative")
    tag = hashlib.blake2b(purpose.encode("utf-8"), digest_size=8).digest()
    return (int(seed) & _MASK64, int.from_bytes(tag, "big"), int(index))


def derive_rng(seed: int, purpose: str, index: int = 0) -> np.random.Generator:
    """Child generator for ``purpose``/``index``, independent of all siblings."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(derive_seed(seed, purpose, index))))
