"""Counter-based Gaussian streams (Philox4x32-10).

Every standard normal used by the simulators is a pure function of
``(seed, replicate, step)``.  The 64-bit seed is the Philox key, the
128-bit counter holds the step block in its low half and the replicate id
in its high half.  One Philox call yields four 32-bit words, which are
folded into two 53-bit uniforms and mapped through Box-Muller to two
normals; step ``k`` uses block ``k >> 1`` and takes the cosine branch for
even ``k`` and the sine branch for odd ``k``.

Because nothing is carried between replicates, any split of the replicate
range over workers reproduces the serial result bit for bit.
"""
from __future__ import annotations

import hashlib
import math

import numba as nb
import numpy as np

MASK32 = np.uint64(0xFFFFFFFF)
SHIFT32 = np.uint64(32)
_PHILOX_M0 = np.uint64(0xD2511F53)
_PHILOX_M1 = np.uint64(0xCD9E8D57)
_PHILOX_W0 = np.uint64(0x9E3779B9)
_PHILOX_W1 = np.uint64(0xBB67AE85)
_SH5 = np.uint64(5)
_SH6 = np.uint64(6)
_TWO26 = np.uint64(67108864)
_INV53 = 1.0 / 9007199254740992.0
_TWO_PI = 2.0 * math.pi


@nb.njit(inline="always", cache=True)
def philox4x32(c0, c1, c2, c3, k0, k1):
    # words are carried in uint64 slots, always masked to 32 bits
    for r in range(10):
        if r > 0:
            k0 = (k0 + _PHILOX_W0) & MASK32
            k1 = (k1 + _PHILOX_W1) & MASK32
        p0 = _PHILOX_M0 * c0
        p1 = _PHILOX_M1 * c2
        c0, c1, c2, c3 = (
            (p1 >> SHIFT32) ^ c1 ^ k0,
            p1 & MASK32,
            (p0 >> SHIFT32) ^ c3 ^ k1,
            p0 & MASK32,
        )
    return c0, c1, c2, c3


@nb.njit(inline="always", cache=True)
def normal_pair(key0, key1, replicate, block):
    """Two independent N(0, 1) draws for counter block ``block``."""
    w0, w1, w2, w3 = philox4x32(
        block & MASK32, block >> SHIFT32, replicate & MASK32, replicate >> SHIFT32, key0, key1
    )
    # (k + 0.5) / 2**53 keeps u1 away from 0
    u1 = (float((w0 >> _SH5) * _TWO26 + (w1 >> _SH6)) + 0.5) * _INV53
    u2 = float((w2 >> _SH5) * _TWO26 + (w3 >> _SH6)) * _INV53
    rad = math.sqrt(-2.0 * math.log(u1))
    theta = _TWO_PI * u2
    return rad * math.cos(theta), rad * math.sin(theta)


@nb.njit(inline="always", cache=True)
def normal_at(key0, key1, replicate, step):
    z0, z1 = normal_pair(key0, key1, replicate, np.uint64(step) >> np.uint64(1))
    if step & 1:
        return z1
    return z0


@nb.njit(cache=True)
def _fill_normals(key0, key1, replicate, start, out):
    n = out.shape[0]
    rep = np.uint64(replicate)
    k = start
    i = 0
    if k & 1 and i < n:
        out[i] = normal_at(key0, key1, rep, k)
        i += 1
        k += 1
    while i + 1 < n:
        z0, z1 = normal_pair(key0, key1, rep, np.uint64(k) >> np.uint64(1))
        out[i] = z0
        out[i + 1] = z1
        i += 2
        k += 2
    if i < n:
        out[i] = normal_at(key0, key1, rep, k)
    return out


def split_seed(seed: int) -> tuple[np.uint64, np.uint64]:
    """Philox key words for a 64-bit seed."""
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return np.uint64(seed & 0xFFFFFFFF), np.uint64(seed >> 32)


def philox_block(counter, key) -> tuple[int, int, int, int]:
    """Raw Philox4x32-10 output for a 4-word counter and 2-word key."""
    c = [np.uint64(int(v) & 0xFFFFFFFF) for v in counter]
    k = [np.uint64(int(v) & 0xFFFFFFFF) for v in key]
    return tuple(int(v) for v in _philox_py(c[0], c[1], c[2], c[3], k[0], k[1]))


@nb.njit(cache=True)
def _philox_py(c0, c1, c2, c3, k0, k1):
    return philox4x32(c0, c1, c2, c3, k0, k1)


def standard_normals(seed: int, replicate: int, n: int, start: int = 0) -> np.ndarray:
    """Normals for steps ``start .. start+n-1`` of one replicate stream."""
    k0, k1 = split_seed(seed)
    return _fill_normals(k0, k1, int(replicate), int(start), np.empty(int(n)))


def derive_seed(master: int, *tags) -> int:
    """Deterministic 64-bit sub-seed for a labelled purpose.

    ``derive_seed(s, "tails", 100)`` never collides in practice with
    ``derive_seed(s, "tails", 200)``; the labels are hashed with BLAKE2b.
    """
    h = hashlib.blake2b(digest_size=8)
    h.update(int(master).to_bytes(8, "little", signed=False))
    for tag in tags:
        h.update(b"\x1f")
        h.update(repr(tag).encode())
    return int.from_bytes(h.digest(), "little")
