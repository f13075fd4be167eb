"""Portable counter-based random number generator.

Phantom generation must be reproducible bit-for-bit across platforms and
runs, so instead of a library generator this module fixes a small
counter-based scheme built from the splitmix64 finalizer.  All arithmetic
is modulo 2**64.

Update equations (``GOLDEN = 0x9E3779B97F4A7C15``,
``STREAM_MIX = 0xD1B54A32D192ED03``)::

    finalize(z): z ^= z >> 30;  z *= 0xBF58476D1CE4E5B9
                 z ^= z >> 27;  z *= 0x94D049BB133111EB
                 z ^= z >> 31;  return z

    state(seed, stream) = finalize(finalize(seed + GOLDEN) + stream * STREAM_MIX)
    raw(seed, stream, i) = finalize(state(seed, stream) + (i + 1) * GOLDEN)

Derived values:

* uniform(i)  = (raw(i) >> 11 + 0.5) * 2**-53, strictly inside (0, 1)
* normal(i)   = sqrt(-2 ln u(2i)) * cos(2 pi u(2i+1))   (Box-Muller)

Each (seed, stream) pair is an independent sequence indexed by the counter
``i``, so draws for voxel i can be generated in any order or in parallel.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_STREAM_MIX = 0xD1B54A32D192ED03
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB

_U_GOLDEN = np.uint64(_GOLDEN)
_U_M1 = np.uint64(_M1)
_U_M2 = np.uint64(_M2)
_S30, _S27, _S31 = np.uint64(30), np.uint64(27), np.uint64(31)


def _finalize_int(z: int) -> int:
    z &= _MASK
    z ^= z >> 30
    z = (z * _M1) & _MASK
    z ^= z >> 27
    z = (z * _M2) & _MASK
    z ^= z >> 31
    return z


def _finalize_array(z: np.ndarray) -> np.ndarray:
    z = z.astype(np.uint64, copy=True)
    z ^= z >> _S30
    z *= _U_M1
    z ^= z >> _S27
    z *= _U_M2
    z ^= z >> _S31
    return z


class PortableRng:
    """Counter-based generator; every draw is a pure function of (seed, stream, index)."""

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK

    def _state(self, stream: int) -> int:
        base = _finalize_int(self.seed + _GOLDEN)
        return _finalize_int(base + (int(stream) & _MASK) * _STREAM_MIX)

    def raw(self, stream: int, count: int, start: int = 0) -> np.ndarray:
        """uint64 words for counters start .. start+count-1."""
        state = np.uint64(self._state(stream))
        idx = np.arange(start + 1, start + count + 1, dtype=np.uint64)
        return _finalize_array(state + idx * _U_GOLDEN)

    def uniform(self, stream: int, count: int, start: int = 0) -> np.ndarray:
        """float64 samples strictly inside (0, 1)."""
        bits = self.raw(stream, count, start)
        return ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53

    def normal(self, stream: int, count: int, start: int = 0) -> np.ndarray:
        """Standard normal samples; draw i consumes counters 2i and 2i+1."""
        u = self.uniform(stream, 2 * count, 2 * start)
        r = np.sqrt(-2.0 * np.log(u[0::2]))
        return r * np.cos(2.0 * np.pi * u[1::2])

    def permutation_keys(self, stream: int, count: int) -> np.ndarray:
        """uint64 sort keys; argsort gives a reproducible permutation."""
        return self.raw(stream, count)
