"""Randomized verification suites behind ``hla check``.

Each suite draws deterministic random instances, compares two independent
routes and reports the worst entrywise relative error. Trial counts scale
with ``trials``; the default of 200 gives the full-size runs (200 oracle
batches, 50 scan batches, 1000 monoid triples per gamma, ...).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import ahla as _ahla, hla2 as _hla2, hla3 as _hla3, oracle, scan
from .core import KernelConfig, accumulator_dtype, max_rel_err, w1_batch
from .grad import fd_gradient, hla2_backward
from .rng import gauss_tokens

# Instances whose |den + eps| falls below this are redrawn: the comparison
# would measure conditioning of the instance rather than the kernels.
RESAMPLE_DEN = 1e-8

TOLERANCES = {
    "hla2_oracle": 1e-10,
    "ahla_oracle": 1e-10,
    "hla3_oracle": 1e-9,
    "scan_hla2": 1e-12,
    "scan_ahla": 1e-12,
    "monoid_seg2": 1e-12,
    "monoid_segA": 1e-12,
    "golden_w1": 1e-12,
    "causality": 0.0,
    "homogeneity": 1e-12,
    "linattn_reduction": 1e-12,
    "t2_factorization": 1e-10,
    "grad_fd": 1e-5,
    "grad_vpath": 1e-10,
}

SCAN_WIDTHS = (1, 2, 3, 5, 8, 64)
SCAN_GAMMAS = (1.0, 0.9, 0.5)
SCAN_LAMBDAS = (0.0, 0.1)
IDENTITY_TOL = 1e-15

# Exact-arithmetic configuration used by the randomized equivalence suites.
EXACT = KernelConfig(gamma=1.0, eps=0.0, lam=0.0)


@dataclass
class Limits:
    max_n: int = 64
    max_d: int = 8
    max_dv: int = 8


@dataclass
class SuiteResult:
    suite: str
    trials: int
    max_rel_err: float
    passed: bool
    worst: dict = field(default_factory=dict)

    def report(self) -> dict:
        return {"suite": self.suite, "trials": self.trials, "max_rel_err": self.max_rel_err, "pass": self.passed}


class _Worst:
    def __init__(self):
        self.err = 0.0
        self.where: dict = {}

    def update(self, err: float, **where) -> None:
        if err > self.err or not self.where:
            self.err = max(err, self.err)
            self.where = where


@dataclass
class Kernels:
    """Kernel table used by the suites; tests swap entries to inject faults."""

    hla2: Callable = _hla2.hla2_forward
    hla2_unmasked: Callable = _hla2.hla2_unmasked_forward
    ahla: Callable = _ahla.ahla_forward
    hla3: Callable = _hla3.hla3_forward
    hla2_chunked: Callable = scan.hla2_chunked_forward
    ahla_chunked: Callable = scan.ahla_chunked_forward
    hla2_backward: Callable = hla2_backward


def _scaled(trials: int, base: int) -> int:
    return max(1, math.ceil(trials * base / 200))


def _draw(rng: np.random.Generator, max_n: int, max_d: int, max_dv: int, min_n: int = 1):
    n = int(rng.integers(min_n, max_n + 1))
    d = int(rng.integers(1, max_d + 1))
    dv = int(rng.integers(1, max_dv + 1))
    seed = int(rng.integers(0, 2**63))
    batch = gauss_tokens(seed, n, d, dv, 1.0 / math.sqrt(d))
    return batch, {"seed": seed, "n": n, "d": d, "d_v": dv}


def _conditioned(dens) -> bool:
    return all(np.all(np.abs(den) >= RESAMPLE_DEN) for den in dens)


def _draw_conditioned(rng, limits_args, den_fn, min_n: int = 1, attempts: int = 100):
    for _ in range(attempts):
        batch, where = _draw(rng, *limits_args, min_n=min_n)
        if _conditioned(den_fn(batch)):
            return batch, where
    raise RuntimeError("could not draw a well-conditioned instance")


def _result(name: str, trials: int, worst: _Worst) -> SuiteResult:
    tol = TOLERANCES[name]
    return SuiteResult(name, trials, worst.err, worst.err <= tol, worst.where)


# --- oracle equivalence ------------------------------------------------------


def _oracle_suite(name, kernel, oracle_fn, rng, trials, lim: Limits) -> SuiteResult:
    def reference(batch, cfg):
        return oracle_fn(batch, cfg, extended=True)

    worst = _Worst()
    for _ in range(trials):
        batch, where = _draw_conditioned(
            rng, (lim.max_n, lim.max_d, lim.max_dv), lambda b: [reference(b, EXACT).den]
        )
        for normalize in (False, True):
            cfg = EXACT.with_(normalize=normalize)
            err = max_rel_err(kernel(batch, cfg).O, reference(batch, cfg).O)
            worst.update(err, normalize=normalize, **where)
    return _result(name, trials, worst)


def suite_hla2_oracle(rng, trials, lim, k: Kernels):
    return _oracle_suite("hla2_oracle", k.hla2, oracle.oracle_hla2, rng, _scaled(trials, 200), lim)


def suite_ahla_oracle(rng, trials, lim, k: Kernels):
    return _oracle_suite("ahla_oracle", k.ahla, oracle.oracle_ahla, rng, _scaled(trials, 200), lim)


def suite_hla3_oracle(rng, trials, lim, k: Kernels):
    small = Limits(min(lim.max_n, 16), min(lim.max_d, 6), lim.max_dv)
    return _oracle_suite("hla3_oracle", k.hla3, oracle.oracle_hla3, rng, _scaled(trials, 50), small)


# --- scan versus serial ------------------------------------------------------


def suite_scan_hla2(rng, trials, lim, k: Kernels):
    worst = _Worst()
    count = _scaled(trials, 50)
    plain = [KernelConfig(gamma=g, lam=lam, eps=0.0) for g in SCAN_GAMMAS for lam in SCAN_LAMBDAS]
    for _ in range(count):
        batch, where = _draw_conditioned(
            rng, (lim.max_n, lim.max_d, lim.max_dv), lambda b: [k.hla2(b, c).den for c in plain]
        )
        for base in plain:
            for normalize in (False, True):
                serial = k.hla2(batch, base.with_(normalize=normalize)).O
                for w in SCAN_WIDTHS:
                    cfg = base.with_(normalize=normalize, chunk_width=w)
                    err = max_rel_err(k.hla2_chunked(batch, cfg).O, serial)
                    worst.update(err, gamma=base.gamma, lam=base.lam, w=w, normalize=normalize, **where)
    return _result("scan_hla2", count, worst)


def suite_scan_ahla(rng, trials, lim, k: Kernels):
    worst = _Worst()
    count = _scaled(trials, 50)
    plain = [KernelConfig(gamma=g, eps=0.0) for g in SCAN_GAMMAS]
    for _ in range(count):
        batch, where = _draw_conditioned(
            rng, (lim.max_n, lim.max_d, lim.max_dv), lambda b: [k.ahla(b, c).den for c in plain]
        )
        for base in plain:
            for normalize in (False, True):
                serial = k.ahla(batch, base.with_(normalize=normalize)).O
                for w in SCAN_WIDTHS:
                    cfg = base.with_(normalize=normalize, chunk_width=w)
                    err = max_rel_err(k.ahla_chunked(batch, cfg).O, serial)
                    worst.update(err, gamma=base.gamma, w=w, normalize=normalize, **where)
    return _result("scan_ahla", count, worst)


# --- monoid laws -------------------------------------------------------------


def _segment_fields(seg) -> list[np.ndarray]:
    return [np.asarray(getattr(seg, f), dtype=np.float64) for f in seg.__dataclass_fields__ if f != "len"]


def segment_rel_err(a, b) -> float:
    if a.len != b.len:
        return math.inf
    return max(max_rel_err(x, y) for x, y in zip(_segment_fields(a), _segment_fields(b)))


def random_segment(rng, d, dv, gamma, from_token, combine, max_len: int = 4):
    """Fold a short run of random tokens into one segment (accumulator dtype)."""
    acc = accumulator_dtype(np.float64)
    length = int(rng.integers(1, max_len + 1))
    toks = rng.standard_normal((length, 2 * d + dv)).astype(acc) / math.sqrt(d)
    seg = None
    for row in toks:
        tok = from_token(row[:d], row[d : 2 * d], row[2 * d :], gamma)
        seg = tok if seg is None else combine(seg, tok)
    return seg


def _monoid_suite(name, from_token, combine, identity, rng, trials, lim) -> SuiteResult:
    worst = _Worst()
    ident_err = 0.0
    count = _scaled(trials, 1000)
    acc = accumulator_dtype(np.float64)
    for gamma in SCAN_GAMMAS:
        for _ in range(count):
            d = int(rng.integers(1, lim.max_d + 1))
            dv = int(rng.integers(1, lim.max_dv + 1))
            A, B, C = (random_segment(rng, d, dv, gamma, from_token, combine) for _ in range(3))
            err = segment_rel_err(combine(combine(A, B), C), combine(A, combine(B, C)))
            worst.update(err, gamma=gamma, d=d, d_v=dv)
            e = identity(d, dv, acc)
            ident_err = max(ident_err, segment_rel_err(combine(e, A), A), segment_rel_err(combine(A, e), A))
    result = _result(name, count * len(SCAN_GAMMAS), worst)
    result.worst["identity_err"] = ident_err
    result.passed = result.passed and ident_err <= IDENTITY_TOL
    result.max_rel_err = max(result.max_rel_err, ident_err)
    return result


def suite_monoid_seg2(rng, trials, lim, k: Kernels):
    return _monoid_suite(
        "monoid_seg2", scan.seg2_from_token, scan.seg2_combine, scan.seg2_identity, rng, trials, lim
    )


def suite_monoid_segA(rng, trials, lim, k: Kernels):
    return _monoid_suite(
        "monoid_segA", scan.segA_from_token, scan.segA_combine, scan.segA_identity, rng, trials, lim
    )


# --- golden instance ----------------------------------------------------------

GOLDEN_W1 = {
    # kernel, gamma -> (O, den)
    ("hla2", 1.0): ([1.0, 26.0], [1.0, 10.0]),
    ("ahla", 1.0): ([1.0, 18.0], [1.0, 10.0]),
    ("hla3", 1.0): ([1.0, 64.0], [1.0, 28.0]),
    ("hla2", 0.5): ([1.0, 17.5], [1.0, 5.5]),
}


def suite_golden_w1(rng, trials, lim, k: Kernels):
    batch = w1_batch()
    worst = _Worst()
    for (name, gamma), (o, den) in GOLDEN_W1.items():
        out = getattr(k, name)(batch, EXACT.with_(gamma=gamma))
        err = max(max_rel_err(out.O[:, 0], o), max_rel_err(out.den, den))
        worst.update(err, kernel=name, gamma=gamma)
    return _result("golden_w1", len(GOLDEN_W1), worst)


# --- structural properties ------------------------------------------------------


def _serial_kernels(k: Kernels):
    return {"hla2": k.hla2, "hla2_unmasked": k.hla2_unmasked, "ahla": k.ahla, "hla3": k.hla3}


def suite_causality(rng, trials, lim, k: Kernels):
    worst = _Worst()
    count = _scaled(trials, 100)
    for _ in range(count):
        batch, where = _draw(rng, lim.max_n, lim.max_d, lim.max_dv, min_n=2)
        t = int(rng.integers(1, batch.n))  # rows [0, t) must survive
        noise = gauss_tokens(int(rng.integers(0, 2**63)), batch.n - t, batch.d, batch.d_v, 3.0)
        perturbed = batch.replace(
            Q=np.vstack([batch.Q[:t], noise.Q]),
            K=np.vstack([batch.K[:t], noise.K]),
            V=np.vstack([batch.V[:t], noise.V]),
        )
        gamma = float(rng.choice(SCAN_GAMMAS))
        for name, fn in _serial_kernels(k).items():
            cfg = KernelConfig(gamma=gamma)
            a = fn(batch, cfg).O[:t]
            b = fn(perturbed, cfg).O[:t]
            err = 0.0 if np.array_equal(a, b) else max(max_rel_err(a, b), np.finfo(float).tiny)
            worst.update(err, kernel=name, t=t, gamma=gamma, **where)
    return _result("causality", count, worst)


HOMOGENEITY_DEGREES = {"hla2": (2, 2, 1), "ahla": (2, 2, 1), "hla3": (3, 3, 1)}


def suite_homogeneity(rng, trials, lim, k: Kernels):
    worst = _Worst()
    count = _scaled(trials, 100)
    alpha = 2.0
    for _ in range(count):
        batch, where = _draw(rng, lim.max_n, lim.max_d, lim.max_dv)
        gamma = float(rng.choice(SCAN_GAMMAS))
        cfg = KernelConfig(gamma=gamma)
        for name, degrees in HOMOGENEITY_DEGREES.items():
            fn = getattr(k, name)
            base = fn(batch, cfg).O
            for part, deg in zip("QKV", degrees):
                scaled = batch.replace(**{part: alpha * getattr(batch, part)})
                err = max_rel_err(fn(scaled, cfg).O, alpha**deg * base)
                worst.update(err, kernel=name, part=part, gamma=gamma, **where)
    return _result("homogeneity", count, worst)


def linear_attention_direct(Q, V) -> np.ndarray:
    """sum_{i<=t} (q_t . q_i) v_i by explicit pairwise sums in extended precision."""
    acc = accumulator_dtype(np.float64)
    Q = np.asarray(Q, dtype=acc)
    V = np.asarray(V, dtype=acc)
    out = np.zeros((Q.shape[0], V.shape[1]), acc)
    for t in range(Q.shape[0]):
        for i in range(t + 1):
            out[t] += (Q[t] @ Q[i]) * V[i]
    return out.astype(np.float64)


def suite_linattn_reduction(rng, trials, lim, k: Kernels):
    worst = _Worst()
    count = _scaled(trials, 100)
    for _ in range(count):
        batch, where = _draw(rng, lim.max_n, lim.max_d, lim.max_dv)
        out = k.hla2_unmasked(batch, EXACT, metric_override=np.eye(batch.d)).O
        err = max_rel_err(out, linear_attention_direct(batch.Q, batch.V))
        worst.update(err, **where)
    return _result("linattn_reduction", count, worst)


def suite_t2_factorization(rng, trials, lim, k: Kernels):
    worst = _Worst()
    count = _scaled(trials, 100)
    for _ in range(count):
        batch, where = _draw(rng, lim.max_n, lim.max_d, lim.max_dv)
        lhs, rhs = oracle.oracle_t2_factorization(batch.Q, batch.K, extended=True)
        worst.update(max_rel_err(lhs, rhs), **where)
    return _result("t2_factorization", count, worst)


# --- gradients ------------------------------------------------------------------

GRAD_GAMMAS = (1.0, 0.5)
GRAD_LAMBDAS = (0.0, 0.1)
FD_STEP = 1e-6


def _grad_err(a, b) -> float:
    return max(max_rel_err(a.dQ, b.dQ), max_rel_err(a.dK, b.dK), max_rel_err(a.dV, b.dV))


def suite_grad_fd(rng, trials, lim, k: Kernels):
    # n >= 2: for a single normalized token the output is v_1 exactly, so the
    # Q/K gradient is identically zero and a relative comparison is noise.
    worst = _Worst()
    count = _scaled(trials, 50)
    small = (min(lim.max_n, 6), min(lim.max_d, 4), min(lim.max_dv, 3))
    cfgs = [KernelConfig(gamma=g, lam=lam, eps=0.0) for g in GRAD_GAMMAS for lam in GRAD_LAMBDAS]
    for _ in range(count):
        batch, where = _draw_conditioned(
            rng, small, lambda b: [k.hla2(b, c).den for c in cfgs], min_n=min(2, small[0])
        )
        dO = rng.standard_normal((batch.n, batch.d_v))
        w = int(rng.integers(1, batch.n + 1))
        for base in cfgs:
            for normalize in (False, True):
                cfg = base.with_(normalize=normalize, chunk_width=w)
                err = _grad_err(k.hla2_backward(batch, cfg, dO), fd_gradient(batch, cfg, dO, FD_STEP))
                worst.update(err, gamma=cfg.gamma, lam=cfg.lam, normalize=normalize, w=w, **where)
    return _result("grad_fd", count, worst)


def suite_grad_vpath(rng, trials, lim, k: Kernels):
    worst = _Worst()
    count = _scaled(trials, 50)
    for _ in range(count):
        batch, where = _draw(rng, min(lim.max_n, 6), min(lim.max_d, 4), min(lim.max_dv, 3))
        dO = rng.standard_normal((batch.n, batch.d_v))
        W = oracle.affinity_masked(batch.Q, batch.K, accumulator_dtype(np.float64))
        expected = (np.tril(W @ W.T).T @ dO).astype(np.float64)
        err = max_rel_err(k.hla2_backward(batch, EXACT, dO).dV, expected)
        worst.update(err, **where)
    return _result("grad_vpath", count, worst)


SUITES: dict[str, Callable] = {
    "hla2_oracle": suite_hla2_oracle,
    "ahla_oracle": suite_ahla_oracle,
    "hla3_oracle": suite_hla3_oracle,
    "scan_hla2": suite_scan_hla2,
    "scan_ahla": suite_scan_ahla,
    "monoid_seg2": suite_monoid_seg2,
    "monoid_segA": suite_monoid_segA,
    "golden_w1": suite_golden_w1,
    "causality": suite_causality,
    "homogeneity": suite_homogeneity,
    "linattn_reduction": suite_linattn_reduction,
    "t2_factorization": suite_t2_factorization,
    "grad_fd": suite_grad_fd,
    "grad_vpath": suite_grad_vpath,
}


def run_suite(name: str, seed: int, trials: int = 200, limits: Optional[Limits] = None,
              kernels: Optional[Kernels] = None) -> SuiteResult:
    # Each suite gets its own stream so results do not depend on which other
    # suites ran or in what order.
    index = list(SUITES).index(name)
    rng = np.random.default_rng([seed, index])
    return SUITES[name](rng, trials, limits or Limits(), kernels or Kernels())


def run_checks(seed: int, trials: int = 200, limits: Optional[Limits] = None,
               kernels: Optional[Kernels] = None, only: Optional[list[str]] = None) -> list[SuiteResult]:
    names = only or list(SUITES)
    return [run_suite(name, seed, trials, limits, kernels) for name in sorted(names)]
