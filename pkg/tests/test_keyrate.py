import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qkdlink.core import SiftedBlock, split_epsilon
from qkdlink.keyrate import (
    PenaltyForm,
    Regime,
    asymptotic_key_length,
    asymptotic_rate,
    composable_penalty,
    evaluate_blocks,
    finite_key_curve,
    gamma_interval,
    gamma_plus,
    kappa,
    sharp_key_length,
    sharp_threshold,
)

mp.mp.dps = 50
EPS = 4e-16
PARAMS = split_epsilon(EPS)


def _h(x):
    x = mp.mpf(x)
    return -x * mp.log(x, 2) - (1 - x) * mp.log(1 - x, 2)


def _oracle_sharp(n_total, p, eps=EPS, f=1.2, frac=0.2, penalty="decoy-composable"):
    """High-precision re-evaluation of the finite-key chain."""
    n = int(mp.floor(frac * n_total + mp.mpf("0.5")))
    k = n_total - n
    e = mp.mpf(eps) / 3
    kap = mp.mpf(2) / (9 * n) * mp.log(1 / e)
    g = (3 * kap + (1 - 2 * kap) * p + 3 * mp.sqrt(kap * (kap + p - p * p))) / (1 + 4 * kap)
    q = (n_total * g - n * mp.mpf(p)) / k
    if penalty == "decoy-composable":
        delta = 6 * mp.log(21 / e, 2) + mp.log(2 / e, 2)
    else:
        delta = 2 * mp.log(1 / (2 * e), 2) + mp.log(2 / e, 2)
    s = k * (1 - _h(q)) - f * k * _h(p) - delta
    return float(q), float(max(s, 0)), float(kap)


def test_asymptotic_one_second_block():
    blk = SiftedBlock.from_counts(24_665, 0.0478, 1.0)
    res = asymptotic_key_length(blk, PARAMS)
    expected = float(blk.n_key * (1 - mp.mpf("2.2") * _h(0.0478)))
    assert res.regime is Regime.ASYMPTOTIC
    assert res.secret_bits == pytest.approx(expected, rel=1e-12)
    assert res.rate_bps == pytest.approx(7.7e3, rel=0.01)


def test_asymptotic_edge_qbers():
    assert asymptotic_key_length(SiftedBlock.from_counts(1000, 0.0, 1.0), PARAMS).secret_bits == 800
    assert asymptotic_key_length(SiftedBlock.from_counts(1000, 0.5, 1.0), PARAMS).secret_bits == 0


def test_kappa_values():
    assert kappa(1_480_000, EPS / 3) == pytest.approx(5.5e-6, rel=0.01)
    assert kappa(1_480_000, EPS / 3) == pytest.approx(
        float(mp.mpf(2) / (9 * 1_480_000) * mp.log(3 / mp.mpf(EPS))), rel=1e-13
    )
    assert kappa(10, 1 - 1e-15) < 1e-15
    with pytest.raises(ValueError):
        kappa(0, 0.1)
    with pytest.raises(ValueError):
        kappa(10, 1.0)


def test_gamma_plus_values():
    assert gamma_plus(0.0, 0.01) == pytest.approx(0.06 / 1.04, rel=1e-14)
    assert gamma_plus(0.0478, 5.5e-6) == pytest.approx(0.0493, abs=5e-5)
    with pytest.raises(ValueError):
        gamma_plus(0.1, 0.3)


@given(st.floats(0.0, 1.0), st.floats(1e-12, 0.25))
def test_gamma_plus_upper_bound(x, k):
    assert gamma_plus(x, k) >= x - 1e-15


@given(st.floats(0.0, 1.0))
def test_gamma_plus_vanishing_kappa(x):
    assert gamma_plus(x, 1e-14) == pytest.approx(x, abs=1e-6)


def test_gamma_interval_branches():
    assert gamma_interval(0.05, 0.01, EPS) == gamma_plus(0.05, 0.01)
    assert gamma_interval(1.0, 0.1, EPS) == 1.0 + EPS
    k = 0.1
    edge = (1 - 2 * k) / (1 + k)
    assert gamma_interval(edge, k, EPS) == gamma_plus(edge, k)


def test_sharp_threshold_headline():
    blk = SiftedBlock.from_counts(7_400_000, 0.0478, 300.0)
    q_oracle, _, _ = _oracle_sharp(7_400_000, 0.0478)
    assert sharp_threshold(blk, PARAMS) == pytest.approx(q_oracle, rel=1e-10)
    assert sharp_threshold(blk, PARAMS) == pytest.approx(0.0497, abs=5e-5)


def test_sharp_threshold_large_kappa_forces_one():
    blk = SiftedBlock.from_counts(50, 0.0, 1.0)
    assert kappa(blk.n_pe, PARAMS.epsilon_pe) > 0.25
    assert sharp_threshold(blk, PARAMS) == 1.0
    assert sharp_key_length(blk, PARAMS).secret_bits == 0.0


def test_sharp_threshold_shrinks_without_errors():
    qs = [
        sharp_threshold(SiftedBlock.from_counts(n, 0.0, 1.0), PARAMS) for n in (1e5, 1e7, 1e9, 1e12)
    ]
    assert qs == sorted(qs, reverse=True)
    assert qs[-1] < 1e-9


@pytest.mark.parametrize("form", list(PenaltyForm))
def test_sharp_key_length_matches_oracle(form):
    blk = SiftedBlock.from_counts(7_400_000, 0.0478, 300.0)
    res = sharp_key_length(blk, PARAMS, form)
    q, s, k = _oracle_sharp(7_400_000, 0.0478, penalty=form.value)
    assert res.regime is Regime.SHARP_FINITE
    assert res.q_threshold == pytest.approx(q, rel=1e-10)
    assert res.kappa == pytest.approx(k, rel=1e-12)
    assert res.secret_bits == pytest.approx(s, rel=1e-9)


def test_penalty_magnitudes():
    e = EPS / 3
    assert composable_penalty(PARAMS, "leftover-hash") == pytest.approx(
        2 * math.log2(1 / (2 * e)) + math.log2(2 / e)
    )
    assert composable_penalty(PARAMS, PenaltyForm.DECOY_COMPOSABLE) == pytest.approx(
        6 * math.log2(21 / e) + math.log2(2 / e)
    )
    assert composable_penalty(PARAMS, "leftover-hash") == pytest.approx(157.2, abs=0.1)


def test_one_second_block_positive_but_small():
    blk = SiftedBlock.from_counts(24_665, 0.0478, 1.0)
    rate = sharp_key_length(blk, PARAMS).rate_bps
    assert 0 < rate < 7565 * 0.8


def test_finite_key_curve_shape():
    grid = np.logspace(3, 10, 71)
    curve = finite_key_curve(24_665, 0.0478, PARAMS, grid)
    rates = [r for _, r in curve]
    assert all(b >= a - 1e-9 for a, b in zip(rates, rates[1:]))
    assert rates[0] == 0.0
    asym = asymptotic_rate(24_665, 0.0478, PARAMS)
    tail = [r for n, r in curve if n >= 1e9]
    assert all(abs(r - asym) / asym < 0.005 for r in tail)
    with pytest.raises(ValueError):
        finite_key_curve(24_665, 0.0478, PARAMS, [1e5, 1e4])


def test_sharp_below_asymptotic_random_blocks():
    rng = np.random.default_rng(5)
    for _ in range(1000):
        n = int(rng.integers(10, 10**9))
        p = float(rng.uniform(0, 0.2))
        blk = SiftedBlock.from_counts(n, p, 1.0, float(rng.uniform(0.05, 0.5)))
        sharp = sharp_key_length(blk, PARAMS).secret_bits
        assert sharp <= asymptotic_key_length(blk, PARAMS).secret_bits + 1e-6


@settings(max_examples=200)
@given(st.integers(10, 10**8), st.floats(0.0, 0.15))
def test_sharp_key_bounded_by_asymptotic(n, p):
    blk = SiftedBlock.from_counts(n, p, 1.0)
    assert sharp_key_length(blk, PARAMS).secret_bits <= asymptotic_key_length(blk, PARAMS).secret_bits + 1e-6


def test_evaluate_blocks_rows():
    rows = evaluate_blocks([SiftedBlock.from_counts(24_665, 0.0478, 1.0, start=3.0)], PARAMS)
    assert rows[0]["start_s"] == 3.0
    assert rows[0]["N"] == 24_665
    assert rows[0]["sharp_bps"] <= rows[0]["asymptotic_bps"]
