"""Reverse-mode gradients of the masked second-order kernel.

The adjoint runs over the serial recurrence. Forward states are checkpointed
at chunk boundaries (every ``cfg.chunk_width`` tokens) and recomputed one
chunk at a time on the way back, so memory is O(n/w * d^2 + w * d^2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DEN_FLOOR, DegenerateDenominatorError, DimensionError, KernelConfig, TokenBatch, finish_outputs
from .hla2 import State2, _step_inplace, hla2_numden, hla2_output, state2_init


@dataclass(frozen=True)
class GradTriple:
    dQ: np.ndarray
    dK: np.ndarray
    dV: np.ndarray


def _check_cotangent(batch: TokenBatch, dO) -> np.ndarray:
    dO = np.asarray(dO, dtype=np.float64)
    if dO.shape != (batch.n, batch.d_v):
        raise DimensionError(f"dO has shape {dO.shape}, expected {(batch.n, batch.d_v)}")
    return dO


def hla2_backward(batch: TokenBatch, cfg: KernelConfig, dO) -> GradTriple:
    """Gradient of sum(dO * hla2_forward(batch, cfg).O) w.r.t. Q, K, V.

    eps is treated as a constant.
    """
    dO = _check_cotangent(batch, dO)
    Q, K, V = (np.asarray(x, dtype=np.float64) for x in (batch.Q, batch.K, batch.V))
    n, d, d_v = batch.n, batch.d, batch.d_v
    g, lam = cfg.gamma, cfg.lam
    w = int(cfg.chunk_width)

    # Forward sweep: chunk checkpoints plus per-token numerators/denominators.
    checkpoints: list[State2] = []
    num = np.zeros((n, d_v))
    den = np.zeros(n)
    st = state2_init(d, d_v)
    for t in range(n):
        if t % w == 0:
            checkpoints.append(st.copy())
        _step_inplace(st, Q[t], K[t], V[t], g)
        num[t], den[t] = hla2_output(st, Q[t], cfg)

    dQ = np.zeros_like(Q)
    dK = np.zeros_like(K)
    dV = np.zeros_like(V)
    bS = np.zeros((d, d))
    bC = np.zeros((d, d_v))
    bm = np.zeros(d)
    bG = np.zeros((d, d_v))
    bh = np.zeros(d)

    for c in reversed(range(len(checkpoints))):
        start = c * w
        stop = min(start + w, n)
        # states[i] is the inclusive state at token start+i; states[i-1] (or
        # the checkpoint) is the one before it.
        st = checkpoints[c].copy()
        states = [st.copy()]
        for t in range(start, stop):
            _step_inplace(st, Q[t], K[t], V[t], g)
            states.append(st.copy())

        for t in reversed(range(start, stop)):
            cur = states[t - start + 1]
            prev = states[t - start]
            q, k, v, go = Q[t], K[t], V[t], dO[t]

            if cfg.normalize:
                D = den[t] + cfg.eps
                if abs(D) < DEN_FLOOR:
                    raise DegenerateDenominatorError(t + 1, float(D))
                b_num = go / D
                b_den = -float(go @ num[t]) / (D * D)
            else:
                b_num = go
                b_den = 0.0

            # Output: u = S^T q + lam q; num = u C - q G; den = u m - q h.
            u = q @ cur.S + lam * q
            bu = cur.C @ b_num + b_den * cur.m
            bC += np.outer(u, b_num)
            bG -= np.outer(q, b_num)
            bm += b_den * u
            bh -= b_den * q
            bS += np.outer(q, bu)
            dq = cur.S @ bu + lam * bu - cur.G @ b_num - b_den * cur.h

            # Step t: S, C, m, G, h advanced from the previous state.
            dq += bm + bC @ v
            dV[t] = bC.T @ q
            kC = k @ prev.C
            km = k @ prev.m
            Gk = bG.T @ k
            hk = k @ bh
            dK[t] = (bS + bS.T) @ k + bG @ kC + prev.C @ Gk + km * bh + hk * prev.m
            dQ[t] = dq

            bC *= g
            bC += np.outer(k, Gk)
            bm *= g
            bm += hk * k
            bS *= g
            bG *= g
            bh *= g

    return GradTriple(dQ=dQ, dK=dK, dV=dV)


def _loss_unrounded(batch: TokenBatch, cfg: KernelConfig, dO) -> np.floating:
    num, den = hla2_numden(batch, cfg)
    O = finish_outputs(num, den, cfg).O
    return np.sum(np.asarray(dO, dtype=O.dtype) * O)


def hla2_loss(batch: TokenBatch, cfg: KernelConfig, dO) -> float:
    """L = sum(dO * O) for O = hla2_forward(batch, cfg).O."""
    return float(_loss_unrounded(batch, cfg, _check_cotangent(batch, dO)))


def fd_gradient(batch: TokenBatch, cfg: KernelConfig, dO, step: float = 1e-6) -> GradTriple:
    """Finite-difference gradient of the same loss, coordinate by coordinate.

    Each coordinate x is perturbed by h = step * max(1, |x|). Central
    differences at h and h/2 are combined by Richardson extrapolation,
    which cancels the O(h^2) truncation term. The loss is evaluated in the
    accumulator dtype so roundoff stays small even for moderate h.
    """
    if not step > 0:
        raise ValueError("step must be positive")
    dO = _check_cotangent(batch, dO)
    parts = {"Q": batch.Q.astype(np.float64), "K": batch.K.astype(np.float64), "V": batch.V.astype(np.float64)}

    def central(name, base, idx, h):
        plus = base.copy()
        plus[idx] = base[idx] + h
        minus = base.copy()
        minus[idx] = base[idx] - h
        lp = _loss_unrounded(batch.replace(**{name: plus}), cfg, dO)
        lm = _loss_unrounded(batch.replace(**{name: minus}), cfg, dO)
        # Divide by the spacing actually representable, not 2 * h.
        return (lp - lm) / (plus[idx] - minus[idx])

    grads = {}
    for name, base in parts.items():
        grad = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            h = step * max(1.0, abs(base[idx]))
            coarse = central(name, base, idx, h)
            fine = central(name, base, idx, h / 2)
            grad[idx] = float((4 * fine - coarse) / 3)
        grads[name] = grad
    return GradTriple(dQ=grads["Q"], dK=grads["K"], dV=grads["V"])
