"""Brute-force reference operators.

Every function here materializes n x n affinities (or loops over explicit
index sets) and never uses a recurrence, so it can serve as ground truth for
the streaming kernels. All are defined only without decay and ridge.

By default the products run in float64 through BLAS. With ``extended=True``
they run in the same extended accumulator dtype as the streaming kernels
(much slower, no BLAS): outputs that nearly cancel are then resolved well
enough to compare the two routes at 1e-10.
"""

from __future__ import annotations

import numpy as np

from .core import (
    DimensionError,
    KernelConfig,
    OutputBatch,
    TokenBatch,
    UndefinedKernelError,
    accumulator_dtype,
    finish_outputs,
)

HLA3_ORACLE_MAX_N = 32


def _require_plain(cfg: KernelConfig) -> None:
    if cfg.gamma != 1.0 or cfg.lam != 0.0:
        raise UndefinedKernelError("oracle undefined under decay/ridge")


def _work_dtype(extended: bool) -> np.dtype:
    return accumulator_dtype(np.float64) if extended else np.dtype(np.float64)


def affinity_masked(Q, K, dtype=np.float64) -> np.ndarray:
    """W[t, j] = q_t . k_j for j <= t, zero above the diagonal."""
    Q = np.asarray(Q, dtype=dtype)
    K = np.asarray(K, dtype=dtype)
    if Q.ndim != 2 or K.ndim != 2 or Q.shape != K.shape:
        raise DimensionError(f"Q {Q.shape} and K {K.shape} must have equal shapes")
    return np.tril(Q @ K.T)


def _apply_weights(weights: np.ndarray, batch: TokenBatch, cfg: KernelConfig) -> OutputBatch:
    num = weights @ batch.V.astype(weights.dtype)
    den = weights.sum(axis=1)
    return finish_outputs(num, den, cfg, np.float64)


def oracle_hla2(batch: TokenBatch, cfg: KernelConfig, extended: bool = False) -> OutputBatch:
    """Masked second order: row t of ((W W^T) * L) applied to V."""
    _require_plain(cfg)
    W = affinity_masked(batch.Q, batch.K, _work_dtype(extended))
    return _apply_weights(np.tril(W @ W.T), batch, cfg)


def oracle_hla2_unmasked(
    batch: TokenBatch, cfg: KernelConfig, metric_override=None, extended: bool = False
) -> OutputBatch:
    """Unmasked second order q_t^T S_t C_t from definitional prefix sums.

    With ``metric_override`` the fixed matrix replaces the key moment.
    """
    _require_plain(cfg)
    if metric_override is None:
        metric_override = cfg.metric_override
    dt = _work_dtype(extended)
    Q, K, V = (x.astype(dt) for x in (batch.Q, batch.K, batch.V))
    n, d = Q.shape
    if metric_override is not None:
        if np.shape(metric_override) != (d, d):
            raise DimensionError(f"metric_override must be {d}x{d}")
        metric_override = np.asarray(metric_override, dtype=dt)
    num = np.zeros((n, batch.d_v), dt)
    den = np.zeros(n, dt)
    for t in range(n):
        S = K[: t + 1].T @ K[: t + 1] if metric_override is None else metric_override
        C = Q[: t + 1].T @ V[: t + 1]
        m = Q[: t + 1].sum(axis=0)
        u = Q[t] @ S
        num[t] = u @ C
        den[t] = u @ m
    return finish_outputs(num, den, cfg, np.float64)


def oracle_ahla(batch: TokenBatch, cfg: KernelConfig, extended: bool = False) -> OutputBatch:
    """Asymmetric second order: row t of ((W W) * L) applied to V."""
    _require_plain(cfg)
    W = affinity_masked(batch.Q, batch.K, _work_dtype(extended))
    return _apply_weights(np.tril(W @ W), batch, cfg)


def hla3_weights(Q, K, max_n: int = HLA3_ORACLE_MAX_N, dtype=np.float64) -> np.ndarray:
    """Third-order causal weights by explicit triple sums.

    ``weights[t, j]`` sums (q_t.k_i)(q_u.k_i)(q_u.k_j) over all i, u <= t such
    that the largest of (i, u, j) occurs at least twice. Cost O(n^4 + n^2 d).
    """
    Q = np.asarray(Q, dtype=dtype)
    K = np.asarray(K, dtype=dtype)
    n = Q.shape[0]
    if n > max_n:
        raise ValueError(f"third-order oracle capped at n={max_n}, got n={n}")
    A = Q @ K.T
    idx = np.arange(n)
    weights = np.zeros((n, n), A.dtype)
    for t in range(n):
        r = idx[: t + 1]
        i, u, j = np.meshgrid(r, r, r, indexing="ij")
        top = np.maximum(np.maximum(i, u), j)
        keep = ((i == top).astype(int) + (u == top) + (j == top)) >= 2
        terms = A[t, i] * A[u, i] * A[u, j] * keep
        weights[t, : t + 1] = terms.sum(axis=(0, 1))
    return weights


def oracle_hla3(
    batch: TokenBatch, cfg: KernelConfig, max_n: int = HLA3_ORACLE_MAX_N, extended: bool = False
) -> OutputBatch:
    _require_plain(cfg)
    return _apply_weights(hla3_weights(batch.Q, batch.K, max_n, _work_dtype(extended)), batch, cfg)


def oracle_t2_factorization(Q, K, extended: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Both sides of (Q K^T)(Q K^T)^T = Q (K^T K) Q^T, rounded to float64."""
    dt = _work_dtype(extended)
    Q = np.asarray(Q, dtype=dt)
    K = np.asarray(K, dtype=dt)
    if Q.ndim != 2 or K.ndim != 2 or Q.shape[1] != K.shape[1]:
        raise DimensionError(f"Q {Q.shape} and K {K.shape} are incompatible")
    A = Q @ K.T
    return (A @ A.T).astype(np.float64), (Q @ (K.T @ K) @ Q.T).astype(np.float64)


def oracle_linattn_identity(batch: TokenBatch, cfg: KernelConfig, extended: bool = False) -> OutputBatch:
    """Causal linear attention with identity features: sum_{i<=t} (q_t.k_i) v_i.

    With keys tied to queries this is the unmasked second-order operator
    evaluated under the identity metric.
    """
    _require_plain(cfg)
    return _apply_weights(affinity_masked(batch.Q, batch.K, _work_dtype(extended)), batch, cfg)


ORACLES = {
    "oracle-hla2": oracle_hla2,
    "oracle-ahla": oracle_ahla,
    "oracle-hla3": oracle_hla3,
    "linattn-identity": oracle_linattn_identity,
}
