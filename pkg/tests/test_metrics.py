import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from phaserot.constellation import square_qam
from phaserot.metrics import (
    MetricsReport, accumulate_hard, accumulate_soft, air_from_llrs, merge_reports, relative_change, relative_report,
)
from phaserot.receivers import LLR_CLAMP, soft_demap


def test_perfect_decisions():
    s = np.arange(20).reshape(10, 2) % 16
    r = accumulate_hard(s, s, 4)
    assert (r.block_errors, r.symbol_errors, r.bit_errors) == (0, 0, 0)
    assert r.bler == r.ser == r.ber == 0.0


def test_one_channel_wrong():
    r = accumulate_hard([[3, 5]], [[3, 4]], 4)
    assert r.block_errors == 1 and r.symbol_errors == 1 and r.n_symbols == 2
    assert r.ser == 0.5 and r.bler == 1.0


def test_gray_neighbour_is_one_bit():
    c = square_qam(16)
    for k in range(16):
        for j in np.flatnonzero(np.isclose(np.abs(c.points - c.points[k]), 2 * c.scale)):
            assert accumulate_hard([[k]], [[j]], 4).bit_errors == 1


def test_shape_mismatch():
    with pytest.raises(ValueError):
        accumulate_hard(np.zeros((3, 2), int), np.zeros((3, 1), int), 2)


@given(st.integers(1, 4), st.sampled_from([4, 16, 64]), st.integers(0, 1000))
def test_rate_ordering(n, order, seed):
    rng = np.random.default_rng(seed)
    s = rng.integers(0, order, (50, n))
    hat = np.where(rng.random((50, n)) < 0.3, rng.integers(0, order, (50, n)), s)
    r = accumulate_hard(s, hat, int(math.log2(order)))
    assert r.ber <= r.ser <= r.bler <= 1


def test_air_zero_llrs():
    assert air_from_llrs(np.zeros((100, 6)), np.zeros((100, 6), int)) == pytest.approx(0.0, abs=1e-15)


def test_air_perfect_llrs():
    rng = np.random.default_rng(0)
    bits = rng.integers(0, 2, (1000, 6))
    air = air_from_llrs(LLR_CLAMP * (2 * bits - 1), bits)
    assert abs(air - 6) < 1e-6 * 6


def _bpsk_capacity(snr):
    # one Gray QPSK bit: BPSK with amplitude a, noise variance N0/2 per dimension
    x, w = np.polynomial.hermite.hermgauss(200)
    a, sd = math.sqrt(snr / 2), math.sqrt(0.5)
    y = a + math.sqrt(2) * sd * x
    llr = 4 * a * y
    return 1 - np.sum(w * np.logaddexp(0, -llr) / math.log(2)) / math.sqrt(math.pi)


def test_qpsk_awgn_air_against_quadrature():
    c = square_qam(4)
    rng = np.random.default_rng(1)
    n0 = 0.1
    idx = rng.integers(0, 4, 400_000)
    r = c.points[idx] + math.sqrt(n0 / 2) * (rng.standard_normal(idx.size) + 1j * rng.standard_normal(idx.size))
    air = air_from_llrs(soft_demap(r, c, n0), c.labels[idx])
    assert abs(air - 2 * _bpsk_capacity(10.0)) < 0.05
    assert abs(air - 2 * _bpsk_capacity(10.0)) < 0.005


def test_soft_accumulation_matches_direct():
    rng = np.random.default_rng(2)
    llr = rng.normal(3, 4, (5000, 4))
    bits = rng.integers(0, 2, (5000, 4))
    rep = accumulate_soft(llr, bits, MetricsReport(2, 4))
    assert rep.air == pytest.approx(air_from_llrs(llr, bits), abs=1e-9)
    per = 4 - np.logaddexp(0, -(2 * bits - 1) * llr).sum(1) / math.log(2)
    assert rep.air_se == pytest.approx(per.std(ddof=1) / math.sqrt(per.size), rel=1e-6)


def _random_report(rng, soft=True):
    s = rng.integers(0, 16, (200, 2))
    hat = np.where(rng.random((200, 2)) < 0.2, rng.integers(0, 16, (200, 2)), s)
    rep = accumulate_hard(s, hat, 4)
    if soft:
        rep = accumulate_soft(rng.normal(0, 5, (200, 2, 4)), rng.integers(0, 2, (200, 2, 4)), rep)
    return rep


@given(st.integers(0, 10_000))
def test_merge_associative_commutative(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (_random_report(rng) for _ in range(3))
    assert (a + b) + c == a + (b + c)
    assert a + b == b + a


def test_merge_halves_equals_full():
    rng = np.random.default_rng(3)
    s = rng.integers(0, 64, (1000, 2))
    hat = np.where(rng.random((1000, 2)) < 0.1, rng.integers(0, 64, (1000, 2)), s)
    full = accumulate_hard(s, hat, 6)
    halves = merge_reports([accumulate_hard(s[:400], hat[:400], 6), accumulate_hard(s[400:], hat[400:], 6)])
    assert full == halves


def test_merge_shape_check():
    with pytest.raises(ValueError):
        MetricsReport(2, 4).merge(MetricsReport(2, 6))


def test_hard_only_air_is_nan():
    assert math.isnan(_random_report(np.random.default_rng(4), soft=False).air)


def test_relative_identical():
    r = _random_report(np.random.default_rng(5))
    rel = relative_report(r, r)
    assert rel.bler == rel.ser == rel.ber == 1.0 and rel.air == 0.0


def test_relative_examples():
    a = MetricsReport(2, 6, n_blocks=100, block_errors=65)
    b = MetricsReport(2, 6, n_blocks=100, block_errors=100)
    assert relative_change(relative_report(a, b).bler) == pytest.approx(0.35)
    bits_fixed = 2 ** 40
    rot = MetricsReport(2, 6, n_blocks=1, n_soft_symbols=100, air_penalty=int(1.96 * 100 * bits_fixed))
    ref = MetricsReport(2, 6, n_blocks=1, n_soft_symbols=100, air_penalty=int(2.0 * 100 * bits_fixed))
    assert rot.air == pytest.approx(4.04) and ref.air == pytest.approx(4.0)
    assert relative_report(rot, ref).air == pytest.approx(0.04)


def test_relative_zero_baseline_undefined():
    a = MetricsReport(2, 6, n_blocks=100, block_errors=3)
    b = MetricsReport(2, 6, n_blocks=100)
    rel = relative_report(a, b)
    assert rel.bler is None and rel.ser is None and rel.ber is None
