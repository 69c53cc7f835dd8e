"""Deterministic seed derivation.

Every randomized operation in the package takes an explicit seed and
derives child seeds through `derive_seed`, a splitmix64-style integer
mixer, so that runs are reproducible bit-for-bit and independent of
execution order.
"""

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One splitmix64 scrambling round over a 64-bit state."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def derive_seed(base: int, *parts: int) -> int:
    """Mix a base seed with integer coordinates into a fresh 64-bit seed.

    derive_seed(s) != s in general; adding coordinates one at a time makes
    (base, a, b) and (base, b, a) produce distinct streams.
    """
    h = splitmix64(base & _MASK64)
    for p in parts:
        h = splitmix64(h ^ (p & _MASK64))
    return h
