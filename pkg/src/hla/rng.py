"""SplitMix64 stream and deterministic Gaussian token batches.

The generation order is fixed so that a (seed, shape) pair always yields the
same float64 bits: one stream of standard normals fills Q, then K, then V,
each in row-major order. Normals come in Box-Muller pairs (cos branch first,
then sin branch) built from two consecutive 64-bit draws; a trailing unused
sin branch is discarded.
"""

from __future__ import annotations

import math

import numpy as np

from .core import TokenBatch

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_TWO_M53 = 2.0**-53


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


def splitmix64_next(state: int) -> tuple[int, int]:
    """Advance the SplitMix64 state; return ``(new_state, output)``."""
    new_state = (state + GOLDEN_GAMMA) & MASK64
    return new_state, _mix(new_state)


def splitmix64_block(seed: int, count: int) -> np.ndarray:
    """The first ``count`` outputs of the stream seeded with ``seed``.

    Output ``i`` is ``mix(seed + (i + 1) * GOLDEN_GAMMA)``; numpy uint64
    arithmetic wraps modulo 2**64, matching the scalar recurrence.
    """
    idx = np.arange(1, count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(seed & MASK64) + idx * np.uint64(GOLDEN_GAMMA)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


def uniforms(raw: np.ndarray) -> np.ndarray:
    """Map raw 64-bit draws to (0, 1) using the top 53 bits; 0 becomes 2**-53."""
    u = (raw >> np.uint64(11)).astype(np.float64) * _TWO_M53
    u[u == 0.0] = _TWO_M53
    return u


def standard_normals(seed: int, count: int) -> np.ndarray:
    pairs = (count + 1) // 2
    u = uniforms(splitmix64_block(seed, 2 * pairs))
    radius = np.sqrt(-2.0 * np.log(u[0::2]))
    angle = 2.0 * math.pi * u[1::2]
    out = np.empty(2 * pairs, dtype=np.float64)
    out[0::2] = radius * np.cos(angle)
    out[1::2] = radius * np.sin(angle)
    return out[:count]


def gauss_tokens(seed: int, n: int, d: int, d_v: int, scale: float = 1.0) -> TokenBatch:
    """Deterministic batch of Gaussian tokens with standard deviation ``scale``."""
    if n < 0 or d < 1 or d_v < 1:
        raise ValueError(f"invalid dimensions n={n}, d={d}, d_v={d_v}")
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale}")
    z = standard_normals(seed, n * (2 * d + d_v)) * scale
    nq = n * d
    Q = z[:nq].reshape(n, d)
    K = z[nq : 2 * nq].reshape(n, d)
    V = z[2 * nq :].reshape(n, d_v)
    return TokenBatch(Q=Q, K=K, V=V)
