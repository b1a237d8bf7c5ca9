"""Serial streaming third-order masked HLA.

Only matrix-vector and outer-product updates are used per token, so the cost
stays O(d^2 + d d_v) even though the operator is cubic in the affinities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ahla import require_no_ridge
from .core import KernelConfig, OutputBatch, TokenBatch, check_token, finish_outputs
from .hla2 import widened


@dataclass
class State3:
    SK: np.ndarray
    SQ: np.ndarray
    P: np.ndarray
    mK: np.ndarray
    G1: np.ndarray
    G2: np.ndarray
    G3: np.ndarray
    h1: np.ndarray
    h2: np.ndarray
    h3: np.ndarray

    @property
    def d(self) -> int:
        return self.SK.shape[0]

    @property
    def d_v(self) -> int:
        return self.P.shape[1]

    def copy(self) -> "State3":
        return State3(*(getattr(self, f).copy() for f in self.__dataclass_fields__))


def state3_init(d: int, d_v: int, dtype=np.float64) -> State3:
    mat = lambda r, c: np.zeros((r, c), dtype)  # noqa: E731
    vec = lambda: np.zeros(d, dtype)  # noqa: E731
    return State3(
        SK=mat(d, d), SQ=mat(d, d), P=mat(d, d_v), mK=vec(),
        G1=mat(d, d_v), G2=mat(d, d_v), G3=mat(d, d_v),
        h1=vec(), h2=vec(), h3=vec(),
    )


def _step_inplace(st: State3, q, k, v, gamma: float) -> None:
    # Cross-summaries need the time t-1 moments; compute their ingredients
    # before the first-order statistics are advanced.
    u1 = st.SQ @ k
    r1 = u1 @ st.P
    s1 = u1 @ st.mK
    a2 = st.SK @ q
    r2 = q @ st.P
    s2 = q @ st.mK
    a3 = st.SK @ u1

    st.SK *= gamma
    st.SK += np.outer(k, k)
    st.SQ *= gamma
    st.SQ += np.outer(q, q)
    st.P *= gamma
    st.P += np.outer(k, v)
    st.mK *= gamma
    st.mK += k

    st.G1 *= gamma
    st.G1 += np.outer(k, r1)
    st.h1 *= gamma
    st.h1 += s1 * k
    st.G2 *= gamma
    st.G2 += np.outer(a2, r2)
    st.h2 *= gamma
    st.h2 += s2 * a2
    st.G3 *= gamma
    st.G3 += np.outer(a3, v)
    st.h3 *= gamma
    st.h3 += a3


def hla3_step(state: State3, q, k, v, gamma: float = 1.0) -> State3:
    q, k, v = (np.asarray(x, dtype=state.SK.dtype) for x in (q, k, v))
    check_token(state.d, state.d_v, q, k, v)
    new = state.copy()
    _step_inplace(new, q, k, v, gamma)
    return new


def hla3_output(st: State3, q) -> tuple[np.ndarray, float]:
    # z = SQ (SK q) gives q^T SK SQ because both moments are symmetric.
    z = st.SQ @ (st.SK @ q)
    num = z @ st.P - q @ st.G1 - q @ st.G2 - q @ st.G3
    denvec = st.SK @ (st.SQ @ st.mK) - st.h1 - st.h2 - st.h3
    return num, q @ denvec


def hla3_forward(batch: TokenBatch, cfg: KernelConfig) -> OutputBatch:
    require_no_ridge(cfg, "hla3")
    Q, K, V, num, den = widened(batch)
    st = state3_init(batch.d, batch.d_v, Q.dtype)
    for t in range(batch.n):
        q = Q[t]
        _step_inplace(st, q, K[t], V[t], cfg.gamma)
        num[t], den[t] = hla3_output(st, q)
    return finish_outputs(num, den, cfg, batch.Q.dtype)
