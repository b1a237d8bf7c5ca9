import functools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hla import (
    DimensionError,
    KernelConfig,
    TokenBatch,
    UndefinedKernelError,
    ahla_chunked_forward,
    ahla_forward,
    blelloch_scan,
    hla2_chunked_forward,
    hla2_forward,
    max_rel_err,
    seg2_combine,
    seg2_from_token,
    seg2_identity,
    segA_combine,
    segA_from_token,
    segA_identity,
)
from hla.checks import random_segment, segment_rel_err
from hla.scan import chunked_inclusive_states, exclusive_scan

from conftest import EXACT, batches, gammas, random_batch

WIDTHS = st.sampled_from([1, 2, 3, 5, 8, 64])


def _w1_tokens(w1, from_token, gamma):
    return [from_token(w1.Q[t], w1.K[t], w1.V[t], gamma) for t in range(2)]


def _vals(seg, fields):
    return tuple(float(np.ravel(getattr(seg, f))[0]) for f in fields)


# --- Segment2 ---------------------------------------------------------------------


@pytest.mark.parametrize("gamma", [1.0, 0.5])
def test_seg2_from_token_w1(w1, gamma):
    tok = _w1_tokens(w1, seg2_from_token, gamma)[1]
    assert _vals(tok, ("S", "C", "m", "G", "h", "Vkey")) == (1, 6, 2, 0, 0, 1)
    assert tok.rho == gamma and tok.len == 1


def test_seg2_from_zero_token():
    tok = seg2_from_token(np.zeros(2), np.zeros(2), np.zeros(3), 0.9)
    assert all(not np.any(getattr(tok, f)) for f in ("S", "C", "m", "G", "h", "Vkey"))
    assert tok.rho == pytest.approx(0.9)


def test_seg2_vkey_is_key_moment_without_decay(rng):
    for _ in range(5):
        seg = random_segment(rng, 3, 2, 1.0, seg2_from_token, seg2_combine)
        np.testing.assert_array_equal(seg.Vkey, seg.S)


def test_seg2_combine_w1(w1):
    seg = seg2_combine(*_w1_tokens(w1, seg2_from_token, 1.0))
    assert _vals(seg, "SCmGh") == (2, 7, 3, 1, 1)
    seg = seg2_combine(*_w1_tokens(w1, seg2_from_token, 0.5))
    assert _vals(seg, "SCmGh") == (1.5, 6.5, 2.5, 1, 1)
    assert seg.rho == 0.25 and seg.len == 2


def test_seg2_shape_mismatch():
    with pytest.raises(DimensionError):
        seg2_combine(seg2_identity(2, 1), seg2_identity(2, 3))


# --- SegmentA ---------------------------------------------------------------------


@pytest.mark.parametrize("gamma", [1.0, 0.5])
def test_segA_from_token_w1(w1, gamma):
    tok = _w1_tokens(w1, segA_from_token, gamma)[0]
    assert _vals(tok, ("P", "m", "E", "nvec", "Rt")) == (1, 1, 1, 1, gamma)


def test_segA_zero_query(rng):
    k, v = rng.standard_normal(3), rng.standard_normal(2)
    tok = segA_from_token(np.zeros(3), k, v, 0.9)
    assert not tok.E.any() and not tok.nvec.any() and not tok.Rt.any()
    np.testing.assert_array_equal(tok.P, np.outer(k, v))
    np.testing.assert_array_equal(tok.m, k)


def test_segA_rt_without_decay(rng):
    q, k, v = rng.standard_normal(3), rng.standard_normal(3), rng.standard_normal(2)
    np.testing.assert_array_equal(segA_from_token(q, k, v, 1.0).Rt, np.outer(k, q))


def test_segA_combine_w1(w1):
    seg = segA_combine(*_w1_tokens(w1, segA_from_token, 1.0))
    assert _vals(seg, ("E", "nvec", "P", "m")) == (9, 5, 4, 2)


# --- monoid laws ------------------------------------------------------------------

MONOIDS = [
    (seg2_from_token, seg2_combine, seg2_identity),
    (segA_from_token, segA_combine, segA_identity),
]


@pytest.mark.parametrize("from_token, combine, identity", MONOIDS)
@given(seed=st.integers(0, 2**32), d=st.integers(1, 5), dv=st.integers(1, 4), gamma=gammas)
def test_associativity(from_token, combine, identity, seed, d, dv, gamma):
    rng = np.random.default_rng(seed)
    A, B, C = (random_segment(rng, d, dv, gamma, from_token, combine) for _ in range(3))
    assert segment_rel_err(combine(combine(A, B), C), combine(A, combine(B, C))) <= 1e-12


@pytest.mark.parametrize("from_token, combine, identity", MONOIDS)
@given(seed=st.integers(0, 2**32), d=st.integers(1, 5), dv=st.integers(1, 4), gamma=gammas)
def test_identity_laws(from_token, combine, identity, seed, d, dv, gamma):
    rng = np.random.default_rng(seed)
    A = random_segment(rng, d, dv, gamma, from_token, combine)
    e = identity(d, dv, A.m.dtype)
    assert segment_rel_err(combine(e, A), A) == 0.0
    assert segment_rel_err(combine(A, e), A) == 0.0


# --- scans ------------------------------------------------------------------------


def test_exclusive_scan_single_and_empty():
    e = seg2_identity(1, 1)
    tok = seg2_from_token(np.ones(1), np.ones(1), np.ones(1), 1.0)
    (p,) = exclusive_scan([tok], seg2_combine, e)
    assert segment_rel_err(p, e) == 0.0
    assert blelloch_scan([], seg2_combine, e) == ([], e)


def test_exclusive_scan_all_identity():
    e = seg2_identity(2, 1)
    assert all(segment_rel_err(p, e) == 0.0 for p in exclusive_scan([e] * 5, seg2_combine, e))


@given(st.lists(st.integers(-50, 50), max_size=40))
def test_blelloch_scan_integers(xs):
    prefixes, total = blelloch_scan(xs, lambda a, b: a + b, 0)
    assert prefixes == [sum(xs[:i]) for i in range(len(xs))]
    assert total == sum(xs)


@given(st.lists(st.text(max_size=2), max_size=20))
def test_blelloch_scan_keeps_order_for_non_commutative_ops(xs):
    prefixes, total = blelloch_scan(xs, lambda a, b: a + b, "")
    assert prefixes == ["".join(xs[:i]) for i in range(len(xs))]
    assert total == "".join(xs)


@given(st.integers(1, 12), st.integers(0, 2**32))
def test_exclusive_scan_matches_left_fold(count, seed):
    rng = np.random.default_rng(seed)
    toks = [seg2_from_token(*rng.standard_normal((3, 2)), 1.0) for _ in range(count)]
    e = seg2_identity(2, 2)
    for t, prefix in enumerate(exclusive_scan(toks, seg2_combine, e)):
        fold = functools.reduce(seg2_combine, toks[:t], e)
        assert segment_rel_err(prefix, fold) <= 1e-12


@given(st.lists(st.integers(-9, 9), max_size=30), st.integers(1, 8), st.integers(1, 3))
def test_chunked_inclusive_states_integers(xs, width, workers):
    out = chunked_inclusive_states(xs, lambda a, b: a + b, 0, width, workers)
    assert out == list(np.cumsum(xs))


# --- chunked forwards -------------------------------------------------------------


def test_hla2_chunked_w1(w1):
    np.testing.assert_array_equal(hla2_chunked_forward(w1, EXACT.with_(chunk_width=1)).O[:, 0], [1, 26])
    np.testing.assert_array_equal(
        hla2_chunked_forward(w1, EXACT.with_(chunk_width=2, gamma=0.5)).O[:, 0], [1, 17.5]
    )


def test_ahla_chunked_w1(w1):
    np.testing.assert_array_equal(ahla_chunked_forward(w1, EXACT.with_(chunk_width=1)).O[:, 0], [1, 18])
    cfg = EXACT.with_(chunk_width=2, gamma=0.5)
    assert max_rel_err(ahla_chunked_forward(w1, cfg).O, ahla_forward(w1, cfg).O) <= 1e-12


def test_chunked_empty():
    empty = TokenBatch(np.zeros((0, 2)), np.zeros((0, 2)), np.zeros((0, 3)))
    assert ahla_chunked_forward(empty, EXACT).O.shape == (0, 3)
    assert hla2_chunked_forward(empty, EXACT).O.shape == (0, 3)


def test_hla2_chunked_n37_w8():
    b = random_batch(37, 37, 4, 3)
    cfg = KernelConfig(chunk_width=8)
    assert max_rel_err(hla2_chunked_forward(b, cfg).O, hla2_forward(b, cfg).O) <= 1e-12


@given(batches(max_n=20), WIDTHS, gammas, st.sampled_from([0.0, 0.1]))
def test_hla2_chunked_matches_serial(batch, width, gamma, lam):
    cfg = KernelConfig(gamma=gamma, lam=lam, chunk_width=width)
    assert max_rel_err(hla2_chunked_forward(batch, cfg).O, hla2_forward(batch, cfg).O) <= 1e-12


@given(batches(max_n=20), WIDTHS, gammas)
def test_ahla_chunked_matches_serial(batch, width, gamma):
    cfg = KernelConfig(gamma=gamma, chunk_width=width)
    assert max_rel_err(ahla_chunked_forward(batch, cfg).O, ahla_forward(batch, cfg).O) <= 1e-12


@pytest.mark.parametrize("fn", [hla2_chunked_forward, ahla_chunked_forward])
def test_workers_do_not_change_results(fn):
    b = random_batch(2, 40, 3, 2)
    cfg = KernelConfig(gamma=0.9, chunk_width=5)
    np.testing.assert_array_equal(fn(b, cfg, workers=4).O, fn(b, cfg).O)


def test_ahla_chunked_rejects_ridge(w1):
    with pytest.raises(UndefinedKernelError):
        ahla_chunked_forward(w1, KernelConfig(lam=0.1))
