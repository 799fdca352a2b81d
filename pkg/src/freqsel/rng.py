"""Seeded, purpose-split random streams.

Every stream is a numpy ``Generator`` over Philox4x64-10, a counter-based
generator whose output depends only on its 128-bit key, so the same
(seed, purpose, index) triple yields the same numbers on every platform.
The key packs the user seed in the first word and a purpose id plus a
stream index in the second word.
"""

import math

import numpy as np

PURPOSES = {
    "data": 1,
    "init": 2,
    "gumbel": 3,
    "shuffle": 4,
    "signature": 5,
    "check": 6,
}

_MASK64 = (1 << 64) - 1


def stream(seed, purpose, index=0):
    """Return an independent generator for ``purpose`` and sub-stream ``index``."""
    if purpose not in PURPOSES:
        raise KeyError(f"unknown rng purpose {purpose!r}")
    if not 0 <= index < (1 << 48):
        raise ValueError("stream index out of range")
    key = np.array([int(seed) & _MASK64, (PURPOSES[purpose] << 48) | int(index)],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def uniform(gen, size=None):
    return gen.random(size)


def normal(gen, size):
    """Standard normal draws by the Box-Muller transform on Philox uniforms."""
    n = int(np.prod(size))
    half = (n + 1) // 2
    u1 = gen.random(half)
    u2 = gen.random(half)
    u1 = np.maximum(u1, np.finfo(float).tiny)
    r = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * math.pi * u2
    z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
    return z.reshape(size)
