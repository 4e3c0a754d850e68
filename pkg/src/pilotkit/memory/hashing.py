"""Key hashing for the shuffle: FNV-1a, 64-bit, pinned seed.

Reducer assignment must be identical across processes, platforms and
runs, so the interpreter's salted ``hash()`` is out. FNV-1a is tiny,
well-known, and easy to vectorize; the seed is pinned to the standard
offset basis unless a caller deliberately forks the key space.
"""

from __future__ import annotations

import numpy as np

FNV64_OFFSET = 14695981039346656037
FNV64_PRIME = 1099511628211
_MASK = (1 << 64) - 1


def fnv1a64(data: bytes, seed: int = FNV64_OFFSET) -> int:
    """Scalar FNV-1a over one byte string."""
    h = seed
    for b in data:
        h = ((h ^ b) * FNV64_PRIME) & _MASK
    return h


def fnv1a64_many(keys, seed: int = FNV64_OFFSET) -> np.ndarray:
    """Vectorized FNV-1a over a sequence of byte strings.

    Bit-identical to ``fnv1a64`` per key. Keys of equal length take the
    fast path (one reshape, no padding); mixed lengths pay a pad-and-mask
    pass. Returns uint64.
    """
    n = len(keys)
    if n == 0:
        return np.zeros(0, dtype=np.uint64)
    lengths = np.fromiter((len(k) for k in keys), dtype=np.int64, count=n)
    max_len = int(lengths.max())
    h = np.full(n, seed, dtype=np.uint64)
    if max_len == 0:
        return h
    prime = np.uint64(FNV64_PRIME)
    if int(lengths.min()) == max_len:
        mat = np.frombuffer(b"".join(keys), dtype=np.uint8).reshape(n, max_len)
        with np.errstate(over="ignore"):
            for col in range(max_len):
                h = (h ^ mat[:, col]) * prime
        return h
    padded = b"".join(k.ljust(max_len, b"\0") for k in keys)
    mat = np.frombuffer(padded, dtype=np.uint8).reshape(n, max_len)
    with np.errstate(over="ignore"):
        for col in range(max_len):
            active = lengths > col
            h[active] = (h[active] ^ mat[active, col]) * prime
    return h


def reducer_for_keys(keys, n_reducers: int) -> np.ndarray:
    """Reducer index per key: hash mod R, as int64."""
    return (fnv1a64_many(keys) % np.uint64(n_reducers)).astype(np.int64)
