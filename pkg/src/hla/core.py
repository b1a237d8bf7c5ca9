"""Shared types, configuration, errors and error metrics.

Matrices are plain 2-D numpy arrays in row-major (C) order. Correctness
paths run in float64; float32 is accepted for benchmarking only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np


class HLAError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(HLAError, ValueError):
    """Shapes of inputs or states do not agree."""


class UndefinedKernelError(HLAError, ValueError):
    """The requested kernel is not defined for the given configuration
    (e.g. a brute-force oracle under decay or ridge)."""


class DegenerateDenominatorError(HLAError, ArithmeticError):
    def __init__(self, t: int, value: float):
        super().__init__(f"degenerate denominator at t={t}: den+eps={value!r}")
        self.t = t
        self.value = value


class TensorFormatError(HLAError, ValueError):
    """A HOT1 file is malformed."""


_DTYPES = (np.float32, np.float64)

# |den + eps| below this is treated as a division by zero.
DEN_FLOOR = 1e-300


def as_matrix(x, *, name: str = "matrix", dtype=None) -> np.ndarray:
    """Validate ``x`` as a finite 2-D float matrix and return it C-contiguous."""
    a = np.asarray(x)
    if dtype is None:
        dtype = a.dtype if a.dtype in _DTYPES else np.float64
    a = np.ascontiguousarray(a, dtype=dtype)
    if a.ndim != 2:
        raise DimensionError(f"{name}: expected 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name}: non-finite entries")
    return a


@dataclass(frozen=True)
class TokenBatch:
    """Queries, keys and values of one attention head.

    ``Q`` and ``K`` are n x d, ``V`` is n x d_v.
    """

    Q: np.ndarray
    K: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        Q = as_matrix(self.Q, name="Q")
        K = as_matrix(self.K, name="K", dtype=Q.dtype)
        V = as_matrix(self.V, name="V", dtype=Q.dtype)
        if not (Q.shape[0] == K.shape[0] == V.shape[0]):
            raise DimensionError(
                f"row counts differ: Q={Q.shape[0]}, K={K.shape[0]}, V={V.shape[0]}"
            )
        if Q.shape[1] != K.shape[1]:
            raise DimensionError(f"Q has d={Q.shape[1]} but K has d={K.shape[1]}")
        if Q.shape[1] < 1 or V.shape[1] < 1:
            raise DimensionError("d and d_v must be at least 1")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "V", V)

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    @property
    def d(self) -> int:
        return self.Q.shape[1]

    @property
    def d_v(self) -> int:
        return self.V.shape[1]

    def replace(self, **changes) -> "TokenBatch":
        parts = {"Q": self.Q, "K": self.K, "V": self.V}
        parts.update(changes)
        return TokenBatch(**parts)


@dataclass(frozen=True)
class KernelConfig:
    gamma: float = 1.0
    eps: float = 1e-6
    lam: float = 0.0
    normalize: bool = False
    chunk_width: int = 64
    metric_override: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.eps < 0:
            raise ValueError(f"eps must be >= 0, got {self.eps}")
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if int(self.chunk_width) != self.chunk_width or self.chunk_width < 1:
            raise ValueError(f"chunk_width must be an integer >= 1, got {self.chunk_width}")
        if self.metric_override is not None:
            M = as_matrix(self.metric_override, name="metric_override")
            if M.shape[0] != M.shape[1]:
                raise DimensionError(f"metric_override must be square, got {M.shape}")
            object.__setattr__(self, "metric_override", M)

    def with_(self, **changes) -> "KernelConfig":
        from dataclasses import replace

        return replace(self, **changes)


W1_CONFIG = KernelConfig(gamma=1.0, eps=0.0, lam=0.0)


@dataclass(frozen=True)
class OutputBatch:
    O: np.ndarray
    den: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.den is not None and self.den.shape != (self.O.shape[0],):
            raise DimensionError(
                f"den has shape {self.den.shape}, expected ({self.O.shape[0]},)"
            )


def w1_batch() -> TokenBatch:
    """The hand-checkable instance used for golden tests: n=2, d=d_v=1."""
    return TokenBatch(
        Q=np.array([[1.0], [2.0]]),
        K=np.array([[1.0], [1.0]]),
        V=np.array([[1.0], [3.0]]),
    )


def max_rel_err(A, B) -> float:
    """Largest entrywise |a-b| / max(1e-12, |a|, |b|)."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape != B.shape:
        raise DimensionError(f"shape mismatch: {A.shape} vs {B.shape}")
    if A.size == 0:
        return 0.0
    scale = np.maximum(np.maximum(np.abs(A), np.abs(B)), 1e-12)
    return float(np.max(np.abs(A - B) / scale))


def accumulator_dtype(dtype) -> np.dtype:
    """Dtype used for streaming state.

    float64 inputs accumulate in extended precision where the platform has
    it (x87 80-bit on x86-64 Linux): outputs that nearly cancel would
    otherwise differ between evaluation orders by more than 1e-12.
    """
    dtype = np.dtype(dtype)
    if dtype == np.float64 and np.finfo(np.longdouble).eps < np.finfo(np.float64).eps:
        return np.dtype(np.longdouble)
    return dtype


def finish_outputs(num: np.ndarray, den: np.ndarray, cfg: KernelConfig, out_dtype=None) -> OutputBatch:
    """Apply optional ratio normalization, then round to ``out_dtype``."""
    out_dtype = num.dtype if out_dtype is None else out_dtype
    if cfg.normalize:
        shifted = den + cfg.eps
        bad = np.flatnonzero(np.abs(shifted) < DEN_FLOOR)
        if bad.size:
            t = int(bad[0])
            raise DegenerateDenominatorError(t + 1, float(shifted[t]))
        num = num / shifted[:, None]
    return OutputBatch(O=num.astype(out_dtype), den=den.astype(out_dtype))


def check_token(state_d: int, state_dv: int, q, k, v) -> None:
    if q.shape != (state_d,) or k.shape != (state_d,) or v.shape != (state_dv,):
        raise DimensionError(
            f"token shapes q={q.shape}, k={k.shape}, v={v.shape} do not match "
            f"state (d={state_d}, d_v={state_dv})"
        )
