"""Vectorised Philox4x64-10 block function.

Produces the same 256-bit blocks as ``numpy.random.Philox`` for a given
(counter, key) pair, but evaluates arbitrarily many counters at once so
that draws can be keyed by (seed, member, step, correlate) without any
sequential state.
"""

import numpy as np

_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_LO32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
ROUNDS = 10


def _mulhilo(a, b, lo):
    """Full 64x64 -> 128 bit product of the constant ``a`` and array ``b``.

    Writes the low word into ``lo`` and returns the high word. ``b`` is
    left untouched; the temporaries are updated in place.
    """
    a0, a1 = np.uint64(int(a) & 0xFFFFFFFF), np.uint64(int(a) >> 32)
    np.multiply(b, a, out=lo)
    b0 = b & _LO32
    b1 = b >> _S32
    p01 = b1 * a0
    p10 = b0 * a1
    b1 *= a1  # p11
    b0 *= a0  # p00
    b0 >>= _S32
    mid = p01 & _LO32
    mid += b0
    mid += p10 & _LO32
    mid >>= _S32
    p01 >>= _S32
    p10 >>= _S32
    b1 += p01
    b1 += p10
    b1 += mid
    return b1


def philox4x64(counter, key):
    """Apply Philox4x64-10.

    Parameters
    ----------
    counter : array_like of uint64, shape (..., 4)
    key : array_like of uint64, shape (..., 2), broadcastable to counter[..., :2]

    Returns
    -------
    ndarray of uint64, shape (..., 4)
    """
    counter = np.asarray(counter, dtype=np.uint64)
    key = np.asarray(key, dtype=np.uint64)
    x0, x1, x2, x3 = (counter[..., i].copy() for i in range(4))
    k0 = np.broadcast_to(key[..., 0], x0.shape).copy()
    k1 = np.broadcast_to(key[..., 1], x0.shape).copy()
    with np.errstate(over="ignore"):
        for r in range(ROUNDS):
            if r:
                k0 += _W0
                k1 += _W1
            lo0 = np.empty_like(x0)
            lo1 = np.empty_like(x2)
            hi0 = _mulhilo(_M0, x0, lo0)
            hi1 = _mulhilo(_M1, x2, lo1)
            hi1 ^= x1
            hi1 ^= k0
            hi0 ^= x3
            hi0 ^= k1
            x0, x1, x2, x3 = hi1, lo1, hi0, lo0
    return np.stack([x0, x1, x2, x3], axis=-1)


def uniform_open(bits):
    """Map uint64 words to doubles in (0, 1]."""
    return ((bits >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53
