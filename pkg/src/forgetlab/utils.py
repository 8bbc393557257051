"""Seed derivation and stable hashing shared across the package.

Every stochastic component takes an explicit integer seed. Sub-seeds are
derived with splitmix64 so that unrelated components never share a
stream by accident, while stream 0 passes the base seed through
unchanged (used where a degenerate configuration must reduce to the
plain single-model path bit for bit).
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One round of the splitmix64 mixer. Stable across platforms."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def derive_seed(base: int, stream: int) -> int:
    """Deterministic sub-seed for component `stream` of a base seed.

    Stream 0 is the identity so that degenerate setups (one shard, one
    slice, one client) reproduce the plain training path exactly.
    """
    base = int(base) & _MASK64
    stream = int(stream) & _MASK64
    if stream == 0:
        return base
    return splitmix64(base ^ splitmix64(stream))


def stable_index_hash(seed: int, index: int) -> int:
    """Stable 64-bit hash of a sample index under a seed.

    Used for shard and slice assignment; must not depend on process
    state (unlike the builtin hash).
    """
    return splitmix64((int(seed) & _MASK64) ^ splitmix64(int(index) + 0x51ED2702))


def rng_from(seed: int) -> np.random.Generator:
    """PCG64 generator for a seed. The single RNG construction point."""
    return np.random.Generator(np.random.PCG64(int(seed) & _MASK64))
