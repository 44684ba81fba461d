import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qkdlink.core import PS_PER_S, SecurityParams, SiftedBlock
from qkdlink.sift import (
    InsufficientData,
    SiftedBits,
    _match_closest,
    aggregate_blocks,
    estimate_qber,
    find_coincidences,
    sift,
    sift_blocks,
)
from qkdlink.sync import SyncResult
from qkdlink.timetag_sim import SimConfig, generate_pair_streams

PARAMS = SecurityParams()


def lossless(**kw):
    base = dict(
        pair_rate=20_000.0,
        arm_transmittance_a=1.0,
        arm_transmittance_b=1.0,
        intrinsic_qber=0.0,
        background_rate_per_channel=0.0,
        timing_jitter_sigma=0.0,
        duration=1.0,
        seed=5,
    )
    base.update(kw)
    return generate_pair_streams(SimConfig(**base))


def greedy_oracle(ta, tb, window):
    """Accept candidate pairs in order of (|dt|, j, i) unless either side is taken."""
    cands = sorted(
        (abs(int(b) - int(a)), j, i)
        for i, a in enumerate(ta)
        for j, b in enumerate(tb)
        if abs(int(b) - int(a)) <= window
    )
    used_i, used_j, out = set(), set(), []
    for _, j, i in cands:
        if i not in used_i and j not in used_j:
            used_i.add(i)
            used_j.add(j)
            out.append((i, j))
    return sorted(out)


@settings(max_examples=300)
@given(
    st.lists(st.integers(0, 200), max_size=25),
    st.lists(st.integers(0, 200), max_size=25),
    st.integers(0, 15),
)
def test_matching_equals_greedy_oracle(a, b, window):
    ta = np.array(sorted(a), dtype=np.int64)
    tb = np.array(sorted(b), dtype=np.int64)
    i, j = _match_closest(ta, tb, window)
    assert sorted(zip(i.tolist(), j.tolist())) == greedy_oracle(ta, tb, window)


def test_lossless_recovers_every_pair():
    a, b = lossless()
    pairs = find_coincidences(a, b, SyncResult(offset=0.0))
    assert len(pairs) == len(a) == len(b)


def test_chunked_matching_equals_single_pass():
    a, b = lossless(timing_jitter_sigma=300.0, background_rate_per_channel=5_000.0)
    whole = find_coincidences(a, b, SyncResult(offset=0.0), chunk_events=10**9)
    parts = find_coincidences(a, b, SyncResult(offset=0.0), chunk_events=997)
    assert np.array_equal(whole.t_alice, parts.t_alice)
    assert np.array_equal(whole.t_bob, parts.t_bob)


def test_zero_window_with_jitter_finds_almost_nothing():
    a, b = lossless(timing_jitter_sigma=200.0)
    pairs = find_coincidences(a, b, SyncResult(offset=0.0), window=0)
    assert len(pairs) < 0.01 * len(a)


def test_negative_window_rejected():
    a, b = lossless(duration=0.01)
    with pytest.raises(ValueError):
        find_coincidences(a, b, SyncResult(offset=0.0), window=-1)


def test_t_bob_stays_on_bob_clock():
    a2, b2 = lossless(duration=0.1, clock_offset=7_000, clock_drift=2.0)
    pairs = find_coincidences(a2, b2, SyncResult(offset=7_000.0, drift=2.0))
    assert len(pairs) == len(a2)
    assert set(pairs.t_bob.tolist()) <= set(b2.timestamps.tolist())
    first = next(iter(pairs))
    assert first.t_alice == pairs.t_alice[0]


def test_sift_noiseless_has_no_mismatch():
    a, b = lossless()
    bits = sift(find_coincidences(a, b, SyncResult(offset=0.0)))
    assert bits.mismatch_fraction == 0.0
    assert len(bits) / len(a) == pytest.approx(0.5, abs=0.02)


def _one_basis_pairs(basis):
    a, b = lossless()
    pairs = find_coincidences(a, b, SyncResult(offset=0.0))
    keep = ((pairs.ch_alice >> 1) == basis) & ((pairs.ch_bob >> 1) == basis)
    return type(pairs)(pairs.t_alice[keep], pairs.t_bob[keep], pairs.ch_alice[keep], pairs.ch_bob[keep])


@pytest.mark.parametrize("basis", [0, 1])
def test_single_basis_noiseless(basis):
    bits = sift(_one_basis_pairs(basis))
    assert len(bits) > 1000
    assert bits.mismatch_fraction == 0.0


def test_sift_error_rate_matches_source():
    a, b = lossless(intrinsic_qber=0.05, duration=3.0)
    bits = sift(find_coincidences(a, b, SyncResult(offset=0.0)))
    sigma = math.sqrt(0.05 * 0.95 / len(bits))
    assert abs(bits.mismatch_fraction - 0.05) < 3 * sigma


def _bits(n, errors_at=()):
    alice = np.zeros(n, np.uint8)
    bob = np.zeros(n, np.uint8)
    bob[list(errors_at)] = 1
    return SiftedBits(np.arange(n, dtype=np.int64), alice, bob)


def test_estimate_qber_arithmetic():
    bits = _bits(100, errors_at=range(0, 100, 4))
    est, key = estimate_qber(bits, PARAMS, rng_seed=1)
    assert est.n_sampled == 20
    assert len(key) == 80
    sample_errors = 25 - int(np.count_nonzero(key.bit_alice != key.bit_bob))
    assert est.n_errors == sample_errors
    assert est.qber_hat == sample_errors / 20


def test_estimate_qber_error_free_and_too_small():
    est, _ = estimate_qber(_bits(100), PARAMS, rng_seed=3)
    assert est.qber_hat == 0.0
    with pytest.raises(InsufficientData):
        estimate_qber(_bits(9), PARAMS, rng_seed=3)


def test_qber_estimator_unbiased():
    bits = _bits(1000, errors_at=range(0, 1000, 20))  # true mismatch 0.05
    draws = [estimate_qber(bits, PARAMS, rng_seed=s)[0].qber_hat for s in range(400)]
    se = math.sqrt(0.05 * 0.95 / 200 * (800 / 999)) / math.sqrt(len(draws))
    assert abs(np.mean(draws) - 0.05) < 4 * se


def test_sifting_fraction_unbiased():
    a, b = lossless(duration=2.0, seed=17)
    pairs = find_coincidences(a, b, SyncResult(offset=0.0))
    frac = len(sift(pairs)) / len(pairs)
    assert abs(frac - 0.5) < 4 * math.sqrt(0.25 / len(pairs))


def test_sift_blocks_layout_and_seeds():
    bits = SiftedBits(
        np.arange(0, 3 * PS_PER_S, PS_PER_S // 1000, dtype=np.int64),
        np.zeros(3000, np.uint8),
        np.zeros(3000, np.uint8),
    )
    blocks = sift_blocks(bits, PARAMS, seed=9, block_s=1.0, span_s=3.0)
    assert [b.start for b in blocks] == [0.0, 1.0, 2.0]
    assert all(b.n_total == 1000 and b.n_pe == 200 for b in blocks)
    again = sift_blocks(bits, PARAMS, seed=9, block_s=1.0, span_s=3.0)
    assert blocks == again


def test_aggregate_five_minutes():
    blocks = [SiftedBlock.from_counts(24_665, 0.0478, 1.0, start=float(k)) for k in range(300)]
    (agg,) = aggregate_blocks(blocks, 300.0)
    assert agg.n_total == pytest.approx(7.4e6, rel=0.001)
    assert agg.duration == 300.0


def test_aggregate_identity_and_pooling():
    one = SiftedBlock.from_counts(1000, 0.03, 1.0)
    assert aggregate_blocks([one], 10.0) == [one]
    b0 = SiftedBlock(100, 20, 80, 0.0, 1.0, pe_errors=0, start=0.0)
    b1 = SiftedBlock(100, 20, 80, 0.10, 1.0, pe_errors=2, start=1.0)
    (agg,) = aggregate_blocks([b0, b1], 2.0)
    assert agg.qber_hat == pytest.approx(0.05)
    with pytest.raises(ValueError):
        aggregate_blocks([b0], 0.0)


@given(
    st.lists(
        st.tuples(st.integers(10, 5000), st.floats(0.0, 0.5)), min_size=1, max_size=40
    ),
    st.floats(1.0, 50.0),
)
def test_aggregation_conserves_counts(specs, window):
    blocks = [SiftedBlock.from_counts(n, q, 1.0, start=float(k)) for k, (n, q) in enumerate(specs)]
    out = aggregate_blocks(blocks, window)
    for attr in ("n_total", "n_pe", "n_key", "pe_errors"):
        assert sum(getattr(b, attr) for b in out) == sum(getattr(b, attr) for b in blocks)
    assert sum(b.duration for b in out) == pytest.approx(sum(b.duration for b in blocks))
