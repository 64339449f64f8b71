"""Counter-based random streams for order-independent, reproducible noise.

Every draw is a pure function of a tuple of integer words (seed, level,
coordinates, dimension, ...), so fields and patches can be evaluated in any
order, on any number of workers, and still come out bit-identical.

The mixing function is the splitmix64 finalizer applied to an incremental
combine of the input words.  Gaussian variates use the Box-Muller transform
on two uniforms derived from the same word tuple with a trailing
sub-counter of 0 and 1:

    u1 = ((mix(words, 0) >> 11) + 1) * 2**-53      # in (0, 1]
    u2 = ((mix(words, 1) >> 11) + 1) * 2**-53
    z  = sqrt(-2 ln u1) * cos(2 pi u2)

This convention is fixed so independent reimplementations can reproduce the
exact streams.
"""

from __future__ import annotations

import numpy as np

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U64 = np.uint64(0xFFFFFFFFFFFFFFFF)
_INV_2_53 = float(2.0**-53)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    x = (x ^ (x >> np.uint64(30))) * _MIX1
    x = (x ^ (x >> np.uint64(27))) * _MIX2
    return x ^ (x >> np.uint64(31))


def _as_word(w) -> np.ndarray:
    if isinstance(w, str):
        w = int.from_bytes(w.encode("utf-8"), "little") % 2**64
        return np.uint64(w)
    arr = np.asarray(w)
    if arr.dtype.kind == "u":
        return arr.astype(np.uint64)
    return arr.astype(np.int64).astype(np.uint64)


def hash_words(*words) -> np.ndarray:
    """Fold words (ints, short string tags, or broadcastable int arrays)
    into a uint64 hash.  Negative integers are reinterpreted modulo 2**64
    so signed grid coordinates are legal inputs.
    """
    with np.errstate(over="ignore"):
        h = np.uint64(0)
        for w in words:
            h = _splitmix64((h + _GAMMA) ^ _as_word(w))
        return h


def uniform01(*words) -> np.ndarray:
    """Uniform draw in (0, 1] keyed by the word tuple."""
    h = hash_words(*words)
    return (((h >> np.uint64(11)).astype(np.float64)) + 1.0) * _INV_2_53


def standard_normal(*words) -> np.ndarray:
    """Standard normal draw keyed by the word tuple (Box-Muller, fixed)."""
    u1 = uniform01(*words, 0)
    u2 = uniform01(*words, 1)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def derive_seed(*words) -> int:
    """Derive a 64-bit sub-seed from a word tuple (for per-task streams)."""
    return int(hash_words(*words) & _U64)
