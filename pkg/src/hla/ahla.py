"""Serial streaming asymmetric second-order HLA (the A A V cascade)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import KernelConfig, OutputBatch, TokenBatch, UndefinedKernelError, check_token, finish_outputs
from .hla2 import widened


@dataclass
class StateA:
    P: np.ndarray  # key-value accumulator, d x d_v
    m: np.ndarray  # key mass, d
    E: np.ndarray  # routed accumulator, d x d_v
    nvec: np.ndarray  # routed denominator accumulator, d

    @property
    def d(self) -> int:
        return self.P.shape[0]

    @property
    def d_v(self) -> int:
        return self.P.shape[1]

    def copy(self) -> "StateA":
        return StateA(self.P.copy(), self.m.copy(), self.E.copy(), self.nvec.copy())


def stateA_init(d: int, d_v: int, dtype=np.float64) -> StateA:
    return StateA(
        P=np.zeros((d, d_v), dtype),
        m=np.zeros(d, dtype),
        E=np.zeros((d, d_v), dtype),
        nvec=np.zeros(d, dtype),
    )


def _step_inplace(st: StateA, q, k, v, gamma: float) -> None:
    # E and nvec route through the inclusive (already updated) P and m.
    st.P *= gamma
    st.P += np.outer(k, v)
    st.m *= gamma
    st.m += k
    r = q @ st.P
    s = q @ st.m
    st.E *= gamma
    st.E += np.outer(k, r)
    st.nvec *= gamma
    st.nvec += s * k


def ahla_step(state: StateA, q, k, v, gamma: float = 1.0) -> StateA:
    q, k, v = (np.asarray(x, dtype=state.P.dtype) for x in (q, k, v))
    check_token(state.d, state.d_v, q, k, v)
    new = state.copy()
    _step_inplace(new, q, k, v, gamma)
    return new


def require_no_ridge(cfg: KernelConfig, kernel: str) -> None:
    if cfg.lam != 0.0:
        raise UndefinedKernelError(f"ridge is undefined for {kernel}; lambda must be 0")


def ahla_forward(batch: TokenBatch, cfg: KernelConfig) -> OutputBatch:
    require_no_ridge(cfg, "ahla")
    Q, K, V, num, den = widened(batch)
    st = stateA_init(batch.d, batch.d_v, Q.dtype)
    for t in range(batch.n):
        q = Q[t]
        _step_inplace(st, q, K[t], V[t], cfg.gamma)
        num[t] = q @ st.E
        den[t] = q @ st.nvec
    return finish_outputs(num, den, cfg, batch.Q.dtype)
