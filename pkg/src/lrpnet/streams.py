"""Counter-based random streams.

Every random number used by the samplers is a pure function of
``(key, counter)``: the key is derived from the master seed and the counter
words encode ``(draw index, distance class, replicate, domain)``.  Streams can
therefore be evaluated in any order, in any batch split, and in parallel while
producing identical values.

The generator is Philox4x32-10 (Salmon et al., "Parallel random numbers: as
easy as 1, 2, 3"), vectorized over numpy arrays.
"""
from __future__ import annotations

import numpy as np

_MASK32 = np.uint64(0xFFFFFFFF)
_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = 0x9E3779B9
_W1 = 0xBB67AE85
_ROUNDS = 10


def philox4x32(counter, key):
    """Apply Philox4x32-10 to a batch of counters.

    Parameters
    ----------
    counter : array_like, shape (N, 4)
        32-bit counter words.
    key : array_like, shape (2,)
        32-bit key words.

    Returns
    -------
    ndarray of uint64, shape (N, 4), each entry < 2**32.
    """
    ctr = np.asarray(counter, dtype=np.uint64).reshape(-1, 4) & _MASK32
    x0, x1, x2, x3 = (ctr[:, i].copy() for i in range(4))
    k0, k1 = (int(k) & 0xFFFFFFFF for k in key)
    for r in range(_ROUNDS):
        if r:
            k0 = (k0 + _W0) & 0xFFFFFFFF
            k1 = (k1 + _W1) & 0xFFFFFFFF
        p0 = x0 * _M0
        p1 = x2 * _M1
        hi0, lo0 = p0 >> np.uint64(32), p0 & _MASK32
        hi1, lo1 = p1 >> np.uint64(32), p1 & _MASK32
        x0, x1, x2, x3 = (
            hi1 ^ x1 ^ np.uint64(k0),
            lo1,
            hi0 ^ x3 ^ np.uint64(k1),
            lo0,
        )
    return np.stack([x0, x1, x2, x3], axis=1)


def seed_key(seed: int) -> tuple[int, int]:
    """Split a 64-bit master seed into the two Philox key words."""
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed & 0xFFFFFFFF, seed >> 32


def uniforms(seed: int, index, distance, replicate, domain) -> np.ndarray:
    """Uniform doubles in the open interval (0, 1), one per counter.

    All four counter arguments broadcast against each other.  Two output
    words give 53 random bits; the half-ulp offset keeps the result away from
    0 so it is safe to take logarithms.
    """
    parts = np.broadcast_arrays(
        np.asarray(index, dtype=np.int64),
        np.asarray(distance, dtype=np.int64),
        np.asarray(replicate, dtype=np.int64),
        np.asarray(domain, dtype=np.int64),
    )
    shape = parts[0].shape
    ctr = np.stack([p.ravel() for p in parts], axis=1)
    out = philox4x32(ctr, seed_key(seed))
    bits = ((out[:, 0] << np.uint64(32)) | out[:, 1]) >> np.uint64(11)
    u = (bits.astype(np.float64) + 0.5) * 2.0**-53
    return u.reshape(shape)


def bootstrap_generator(seed: int, tag: int) -> np.random.Generator:
    """A conventional numpy generator for resampling, keyed by (seed, tag)."""
    return np.random.Generator(np.random.Philox(key=[int(seed) % 2**64, int(tag) % 2**64]))
