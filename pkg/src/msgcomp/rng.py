"""Counter-based random numbers.

Every draw is a pure function of (key, stage, index), where the key folds in
the user seed and any stream identifiers. Nothing is stateful, so splitting
work across chunks, threads, or processes can never change a single draw:
worker partitioning, chunk sizes, and evaluation order are all irrelevant to
the output. This is the property the simulation and bootstrap modules rely on
for bit-identical reproducibility.

The generator is a SplitMix64-style avalanche hash (Steele, Lea & Flood 2014):
for a fixed key the outputs over consecutive indices are exactly the SplitMix64
stream, and distinct (key, stage) pairs are decorrelated by the same finalizer.
"""

from __future__ import annotations

import numpy as np

_U64 = np.uint64
_MASK = 0xFFFFFFFFFFFFFFFF

_GOLDEN = _U64(0x9E3779B97F4A7C15)
_MIX_A = _U64(0xBF58476D1CE4E5B9)
_MIX_B = _U64(0x94D049BB133111EB)
_INIT = _U64(0x5851F42D4C957F2D)


def _mix(z: np.ndarray | np.uint64) -> np.ndarray | np.uint64:
    """SplitMix64 finalizer: full-avalanche 64-bit mixing (mod 2^64)."""
    with np.errstate(over="ignore"):
        z = (z ^ (z >> _U64(30))) * _MIX_A
        z = (z ^ (z >> _U64(27))) * _MIX_B
        return z ^ (z >> _U64(31))


def derive_key(seed: int, *words: int) -> int:
    """Fold a seed and stream identifiers into a 64-bit key.

    Accepts arbitrary Python ints (negative values are reduced mod 2^64).
    """
    with np.errstate(over="ignore"):
        key = _mix(_U64(seed & _MASK) + _INIT)
        for w in words:
            key = _mix((key ^ _U64(int(w) & _MASK)) + _GOLDEN)
    return int(key)


def uniforms(key: int, index, stage: int = 0) -> np.ndarray:
    """Uniform [0, 1) draws addressed by (key, stage, index).

    `index` may be a scalar or integer array; the result has its shape.
    53-bit mantissas, so draws are valid float64 uniforms.
    """
    idx = np.asarray(index, dtype=np.uint64)
    with np.errstate(over="ignore"):
        k = _mix(_U64(key & _MASK) ^ ((_U64(int(stage) & _MASK) + _U64(1)) * _MIX_A))
        bits = _mix(k + (idx + _U64(1)) * _GOLDEN)
    return (bits >> _U64(11)).astype(np.float64) * 2.0**-53


def integers(key: int, index, stage: int, high: int) -> np.ndarray:
    """Integer draws in [0, high) addressed by (key, stage, index)."""
    u = uniforms(key, index, stage)
    out = np.floor(u * high).astype(np.int64)
    # floor(u * high) can only touch `high` through float rounding
    np.clip(out, 0, high - 1, out=out)
    return out
