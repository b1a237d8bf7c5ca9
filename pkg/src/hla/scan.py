"""Associative scans and the segment monoids of second-order HLA and AHLA.

A segment summarizes a contiguous run of tokens well enough that two adjacent
segments can be concatenated without revisiting their tokens. The chunked
forwards build one segment per token, scan them within each chunk, scan the
chunk totals to get carry-ins, and read every token's inclusive state off
``carry ⊕ local_prefix ⊕ token``. The result equals the serial recurrence.

Under decay a cross-term from an earlier segment A into a later segment B
must be attenuated by the position of each token inside B, which the plain
segment sums cannot express. Each segment therefore also carries an
attenuated undecayed moment (``Vkey`` for HLA, ``Rt`` for AHLA) whose own
combine rule is associative; at gamma=1 it coincides with the ordinary sum.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence, TypeVar

import numpy as np

from .ahla import require_no_ridge
from .core import DimensionError, KernelConfig, OutputBatch, TokenBatch, check_token, finish_outputs
from .hla2 import hla2_output, widened

T = TypeVar("T")


@dataclass(frozen=True)
class Segment2:
    S: np.ndarray
    C: np.ndarray
    m: np.ndarray
    G: np.ndarray
    h: np.ndarray
    Vkey: np.ndarray  # gamma**(len-1) * sum of k k^T over the segment
    rho: np.floating  # gamma**len, kept in the state dtype
    len: int


@dataclass(frozen=True)
class SegmentA:
    Rt: np.ndarray  # gamma**len * sum of k q^T over the segment
    P: np.ndarray
    m: np.ndarray
    E: np.ndarray
    nvec: np.ndarray
    rho: np.floating  # gamma**len, kept in the state dtype
    len: int


def seg2_identity(d: int, d_v: int, dtype=np.float64) -> Segment2:
    zdd = np.zeros((d, d), dtype)
    zdv = np.zeros((d, d_v), dtype)
    zd = np.zeros(d, dtype)
    return Segment2(S=zdd, C=zdv, m=zd, G=zdv, h=zd, Vkey=zdd, rho=zdd.dtype.type(1), len=0)


def seg2_from_token(q, k, v, gamma: float) -> Segment2:
    q, k, v = (np.asarray(x, dtype=np.result_type(x, np.float32)) for x in (q, k, v))
    check_token(k.shape[0], v.shape[0], q, k, v)
    kk = np.outer(k, k)
    zdv = np.zeros((k.shape[0], v.shape[0]), kk.dtype)
    return Segment2(
        S=kk, C=np.outer(q, v), m=q.copy(), G=zdv, h=np.zeros_like(q),
        Vkey=kk, rho=kk.dtype.type(gamma), len=1,
    )


def seg2_combine(A: Segment2, B: Segment2) -> Segment2:
    """Concatenate A (earlier) with B (later)."""
    if A.C.shape != B.C.shape:
        raise DimensionError(f"segment shapes differ: {A.C.shape} vs {B.C.shape}")
    rb = B.rho
    return Segment2(
        S=rb * A.S + B.S,
        C=rb * A.C + B.C,
        m=rb * A.m + B.m,
        G=rb * A.G + B.G + B.Vkey @ A.C,
        h=rb * A.h + B.h + B.Vkey @ A.m,
        Vkey=rb * A.Vkey + A.rho * B.Vkey,
        rho=A.rho * rb,
        len=A.len + B.len,
    )


def segA_identity(d: int, d_v: int, dtype=np.float64) -> SegmentA:
    zdd = np.zeros((d, d), dtype)
    zdv = np.zeros((d, d_v), dtype)
    zd = np.zeros(d, dtype)
    return SegmentA(Rt=zdd, P=zdv, m=zd, E=zdv, nvec=zd, rho=zdd.dtype.type(1), len=0)


def segA_from_token(q, k, v, gamma: float) -> SegmentA:
    q, k, v = (np.asarray(x, dtype=np.result_type(x, np.float32)) for x in (q, k, v))
    check_token(k.shape[0], v.shape[0], q, k, v)
    P = np.outer(k, v)
    qk = q @ k
    rho = P.dtype.type(gamma)
    return SegmentA(
        Rt=rho * np.outer(k, q),
        P=P,
        m=k.copy(),
        E=np.outer(k, q @ P),
        nvec=qk * k,
        rho=rho,
        len=1,
    )


def segA_combine(A: SegmentA, B: SegmentA) -> SegmentA:
    if A.P.shape != B.P.shape:
        raise DimensionError(f"segment shapes differ: {A.P.shape} vs {B.P.shape}")
    rb = B.rho
    return SegmentA(
        Rt=rb * A.Rt + A.rho * B.Rt,
        P=rb * A.P + B.P,
        m=rb * A.m + B.m,
        E=rb * A.E + B.E + B.Rt @ A.P,
        nvec=rb * A.nvec + B.nvec + B.Rt @ A.m,
        rho=A.rho * rb,
        len=A.len + B.len,
    )


def blelloch_scan(items: Sequence[T], combine: Callable[[T, T], T], identity: T) -> tuple[list[T], T]:
    """Work-efficient exclusive scan; returns (prefixes, total).

    The input is padded with ``identity`` to a power of two and reduced with a
    fixed up-sweep/down-sweep tree, so the grouping of every combine (and
    hence every floating-point result) depends only on ``len(items)``.
    """
    n = len(items)
    if n == 0:
        return [], identity
    size = 1
    while size < n:
        size *= 2
    a = list(items) + [identity] * (size - n)

    stride = 1
    while stride < size:
        for right in range(2 * stride - 1, size, 2 * stride):
            a[right] = combine(a[right - stride], a[right])
        stride *= 2
    total = a[size - 1]

    a[size - 1] = identity
    stride = size // 2
    while stride >= 1:
        for right in range(2 * stride - 1, size, 2 * stride):
            left = right - stride
            left_sum = a[left]
            a[left] = a[right]
            a[right] = combine(a[right], left_sum)
        stride //= 2
    return a[:n], total


def exclusive_scan(items: Sequence[T], combine: Callable[[T, T], T], identity: T) -> list[T]:
    """Prefixes P_t = identity ⊕ items[0] ⊕ ... ⊕ items[t-1]."""
    return blelloch_scan(items, combine, identity)[0]


def chunked_inclusive_states(
    tokens: Sequence[T],
    combine: Callable[[T, T], T],
    identity: T,
    width: int,
    workers: int = 1,
) -> list[T]:
    """Inclusive per-token states via intra-chunk and inter-chunk scans.

    ``workers`` only changes scheduling: each chunk's scan tree is fixed, so
    results are bitwise independent of it.
    """
    chunks = [tokens[i : i + width] for i in range(0, len(tokens), width)]

    def local(chunk):
        return blelloch_scan(chunk, combine, identity)

    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scanned = list(pool.map(local, chunks))
    else:
        scanned = [local(c) for c in chunks]

    carries = exclusive_scan([total for _, total in scanned], combine, identity)
    out: list[T] = []
    for carry, chunk, (prefixes, _) in zip(carries, chunks, scanned):
        for prefix, tok in zip(prefixes, chunk):
            out.append(combine(combine(carry, prefix), tok))
    return out


def hla2_chunked_forward(batch: TokenBatch, cfg: KernelConfig, workers: int = 1) -> OutputBatch:
    """Second-order masked HLA computed through segment scans."""
    Q, K, V, num, den = widened(batch)
    toks = [seg2_from_token(q, k, v, cfg.gamma) for q, k, v in zip(Q, K, V)]
    ident = seg2_identity(batch.d, batch.d_v, Q.dtype)
    states = chunked_inclusive_states(toks, seg2_combine, ident, int(cfg.chunk_width), workers)
    for t, st in enumerate(states):
        num[t], den[t] = hla2_output(st, Q[t], cfg)
    return finish_outputs(num, den, cfg, batch.Q.dtype)


def ahla_chunked_forward(batch: TokenBatch, cfg: KernelConfig, workers: int = 1) -> OutputBatch:
    require_no_ridge(cfg, "ahla")
    Q, K, V, num, den = widened(batch)
    toks = [segA_from_token(q, k, v, cfg.gamma) for q, k, v in zip(Q, K, V)]
    ident = segA_identity(batch.d, batch.d_v, Q.dtype)
    states = chunked_inclusive_states(toks, segA_combine, ident, int(cfg.chunk_width), workers)
    for t, st in enumerate(states):
        q = Q[t]
        num[t] = q @ st.E
        den[t] = q @ st.nvec
    return finish_outputs(num, den, cfg, batch.Q.dtype)
