"""Serial streaming second-order HLA (masked and unmasked)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    DimensionError,
    KernelConfig,
    OutputBatch,
    TokenBatch,
    accumulator_dtype,
    check_token,
    finish_outputs,
)


@dataclass
class State2:
    """Prefix statistics after token t.

    S: key second moment (d x d); C: query-value accumulator (d x d_v);
    m: query mass (d); G, h: masking cross-summaries (d x d_v, d).
    """

    S: np.ndarray
    C: np.ndarray
    m: np.ndarray
    G: np.ndarray
    h: np.ndarray

    @property
    def d(self) -> int:
        return self.S.shape[0]

    @property
    def d_v(self) -> int:
        return self.C.shape[1]

    def copy(self) -> "State2":
        return State2(self.S.copy(), self.C.copy(), self.m.copy(), self.G.copy(), self.h.copy())


def state2_init(d: int, d_v: int, dtype=np.float64) -> State2:
    return State2(
        S=np.zeros((d, d), dtype),
        C=np.zeros((d, d_v), dtype),
        m=np.zeros(d, dtype),
        G=np.zeros((d, d_v), dtype),
        h=np.zeros(d, dtype),
    )


def _step_inplace(st: State2, q, k, v, gamma: float) -> None:
    # Cross-terms read C and m before they are advanced to time t.
    kC = k @ st.C
    km = k @ st.m
    st.G *= gamma
    st.G += np.outer(k, kC)
    st.h *= gamma
    st.h += km * k
    st.S *= gamma
    st.S += np.outer(k, k)
    st.C *= gamma
    st.C += np.outer(q, v)
    st.m *= gamma
    st.m += q


def state2_step(state: State2, q, k, v, gamma: float = 1.0) -> State2:
    """Return the state after absorbing one token (input state is untouched)."""
    q, k, v = (np.asarray(x, dtype=state.S.dtype) for x in (q, k, v))
    check_token(state.d, state.d_v, q, k, v)
    new = state.copy()
    _step_inplace(new, q, k, v, gamma)
    return new


def hla2_output(state, q, cfg: KernelConfig) -> tuple[np.ndarray, float]:
    """Masked numerator and denominator from an inclusive state.

    ``state`` may be any object with S, C, m, G, h (e.g. a scan segment).
    The ridge only enters through the S path.
    """
    u = q @ state.S
    if cfg.lam:
        u = u + cfg.lam * q
    num = u @ state.C - q @ state.G
    den = u @ state.m - q @ state.h
    return num, den


def widened(batch: TokenBatch):
    """(Q, K, V, num buffer, den buffer) in the accumulator dtype."""
    acc = accumulator_dtype(batch.Q.dtype)
    Q, K, V = (x.astype(acc) for x in (batch.Q, batch.K, batch.V))
    return Q, K, V, np.zeros((batch.n, batch.d_v), acc), np.zeros(batch.n, acc)


def hla2_numden(batch: TokenBatch, cfg: KernelConfig) -> tuple[np.ndarray, np.ndarray]:
    """Per-token numerators and denominators, left in the accumulator dtype."""
    Q, K, V, num, den = widened(batch)
    st = state2_init(batch.d, batch.d_v, Q.dtype)
    for t in range(batch.n):
        _step_inplace(st, Q[t], K[t], V[t], cfg.gamma)
        num[t], den[t] = hla2_output(st, Q[t], cfg)
    return num, den


def hla2_forward(batch: TokenBatch, cfg: KernelConfig) -> OutputBatch:
    """Strictly causal second-order HLA, one pass over the sequence."""
    num, den = hla2_numden(batch, cfg)
    return finish_outputs(num, den, cfg, batch.Q.dtype)


def hla2_unmasked_forward(batch: TokenBatch, cfg: KernelConfig, metric_override=None) -> OutputBatch:
    """Unmasked second order o_t = q_t^T (S_t + lam I) C_t.

    A ``metric_override`` replaces (S_t + lam I) by a fixed d x d matrix.
    """
    if metric_override is None:
        metric_override = cfg.metric_override
    d, d_v = batch.d, batch.d_v
    Q, K, V, num, den = widened(batch)
    dtype = Q.dtype
    if metric_override is not None:
        metric_override = np.asarray(metric_override, dtype=dtype)
        if metric_override.shape != (d, d):
            raise DimensionError(f"metric_override must be {d}x{d}, got {metric_override.shape}")
    S = np.zeros((d, d), dtype)
    C = np.zeros((d, d_v), dtype)
    m = np.zeros(d, dtype)
    g = cfg.gamma
    for t in range(batch.n):
        q, k, v = Q[t], K[t], V[t]
        S *= g
        S += np.outer(k, k)
        C *= g
        C += np.outer(q, v)
        m *= g
        m += q
        if metric_override is None:
            u = q @ S
            if cfg.lam:
                u = u + cfg.lam * q
        else:
            u = q @ metric_override
        num[t] = u @ C
        den[t] = u @ m
    return finish_outputs(num, den, cfg, batch.Q.dtype)
