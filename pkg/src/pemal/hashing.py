"""Signed feature hashing ("hashing trick").

Tokens are folded into a fixed-width vector so that variable-length token
lists (section names, import names, ...) become fixed-size features.  The
convention is pinned so vectors are reproducible across runs, platforms,
and reimplementations:

* bucket index: ``murmur3_32(token, seed=0) % dim``
* sign: ``+1`` if the least significant bit of ``murmur3_32(token, seed=1)``
  is 0, else ``-1`` (an independent bit of a second hash pass)
* ``str`` tokens are encoded as UTF-8 with ``surrogateescape`` so raw,
  non-UTF-8 name bytes survive a decode/encode round trip unchanged

Signed buckets keep the expected value of hash collisions at zero, which is
why hashed feature blocks can contain negative entries.
"""

from __future__ import annotations

from typing import Iterable

import numpy as np

__all__ = ["murmur3_32", "hash_index", "hash_sign", "hash_tokens", "hash_pairs"]

_C1 = 0xCC9E2D51
_C2 = 0x1B873593
_MASK = 0xFFFFFFFF

INDEX_SEED = 0
SIGN_SEED = 1


def murmur3_32(data: bytes, seed: int = 0) -> int:
    """32-bit MurmurHash3 (x86 variant) of ``data``, returned as an unsigned int."""
    h = seed & _MASK
    n = len(data)
    nblocks = n // 4
    for i in range(0, nblocks * 4, 4):
        k = int.from_bytes(data[i:i + 4], "little")
        k = (k * _C1) & _MASK
        k = ((k << 15) | (k >> 17)) & _MASK
        k = (k * _C2) & _MASK
        h ^= k
        h = ((h << 13) | (h >> 19)) & _MASK
        h = (h * 5 + 0xE6546B64) & _MASK
    tail = data[nblocks * 4:]
    k = 0
    if len(tail) >= 3:
        k ^= tail[2] << 16
    if len(tail) >= 2:
        k ^= tail[1] << 8
    if len(tail) >= 1:
        k ^= tail[0]
        k = (k * _C1) & _MASK
        k = ((k << 15) | (k >> 17)) & _MASK
        k = (k * _C2) & _MASK
        h ^= k
    h ^= n
    h ^= h >> 16
    h = (h * 0x85EBCA6B) & _MASK
    h ^= h >> 13
    h = (h * 0xC2B2AE35) & _MASK
    h ^= h >> 16
    return h


def _as_bytes(token: bytes | str) -> bytes:
    if isinstance(token, bytes):
        return token
    return token.encode("utf-8", "surrogateescape")


def hash_index(token: bytes | str, dim: int) -> int:
    """Bucket index of ``token`` in a ``dim``-wide vector."""
    return murmur3_32(_as_bytes(token), INDEX_SEED) % dim


def hash_sign(token: bytes | str) -> int:
    """+1 or -1, from the low bit of an independent second hash pass."""
    return 1 if murmur3_32(_as_bytes(token), SIGN_SEED) & 1 == 0 else -1


def hash_tokens(tokens: Iterable[bytes | str], dim: int) -> np.ndarray:
    """Fold tokens into a ``dim``-vector: each token adds its sign to its bucket."""
    if dim < 1:
        raise ValueError(f"hash dimension must be >= 1, got {dim}")
    out = np.zeros(dim, dtype=np.float64)
    for token in tokens:
        data = _as_bytes(token)
        out[murmur3_32(data, INDEX_SEED) % dim] += 1 if murmur3_32(data, SIGN_SEED) & 1 == 0 else -1
    return out


def hash_pairs(pairs: Iterable[tuple[bytes | str, float]], dim: int) -> np.ndarray:
    """Fold (key, value) pairs into a ``dim``-vector: bucket of key accumulates sign * value."""
    if dim < 1:
        raise ValueError(f"hash dimension must be >= 1, got {dim}")
    out = np.zeros(dim, dtype=np.float64)
    for key, value in pairs:
        data = _as_bytes(key)
        sign = 1 if murmur3_32(data, SIGN_SEED) & 1 == 0 else -1
        out[murmur3_32(data, INDEX_SEED) % dim] += sign * float(value)
    return out
