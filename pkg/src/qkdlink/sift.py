"""Coincidence search, basis sifting, sampled QBER and block aggregation."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .core import (
    PS_PER_S,
    Channel,
    SecurityParams,
    SiftedBlock,
    TimeTagStream,
    block_seed,
    channel_basis,
    channel_bit,
    make_rng,
    sample_size,
)
from .sync import SyncResult
from .timetag_sim import CorrelationModel

log = logging.getLogger(__name__)

DEFAULT_WINDOW = 1_000  # ps, half-width
MIN_SIFTED = 10


class InsufficientData(ValueError):
    pass


class CoincidencePair(NamedTuple):
    t_alice: int
    t_bob: int
    ch_alice: Channel
    ch_bob: Channel
    basis_match: bool


@dataclass(frozen=True)
class Coincidences:
    """Matched detection pairs, column-wise. ``t_bob`` is on Bob's own clock."""

    t_alice: np.ndarray
    t_bob: np.ndarray
    ch_alice: np.ndarray
    ch_bob: np.ndarray

    def __len__(self) -> int:
        return int(self.t_alice.size)

    @property
    def basis_match(self) -> np.ndarray:
        return channel_basis(self.ch_alice) == channel_basis(self.ch_bob)

    def __iter__(self) -> Iterator[CoincidencePair]:
        match = self.basis_match
        for k in range(len(self)):
            yield CoincidencePair(
                int(self.t_alice[k]),
                int(self.t_bob[k]),
                Channel(int(self.ch_alice[k])),
                Channel(int(self.ch_bob[k])),
                bool(match[k]),
            )


def _match_closest(ta: np.ndarray, tb: np.ndarray, window: int) -> tuple[np.ndarray, np.ndarray]:
    """One-to-one pairing of sorted ``ta``/``tb`` within ``+/- window``.

    Equivalent to accepting candidate pairs greedily in order of increasing
    ``|tb - ta|``, ties going to the earlier Bob event (then the earlier
    Alice event). Implemented by repeatedly accepting pairs that are each
    other's best remaining candidate, which yields the same matching for a
    strict total order of candidates.
    """
    lo = np.searchsorted(tb, ta - window, side="left")
    hi = np.searchsorted(tb, ta + window, side="right")
    counts = hi - lo
    total = int(counts.sum())
    if total == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    ci = np.repeat(np.arange(ta.size, dtype=np.int64), counts)
    cj = np.repeat(lo - np.cumsum(counts) + counts, counts) + np.arange(total)
    dist = np.abs(tb[cj] - ta[ci])
    order = np.lexsort((ci, cj, dist))
    rank = np.empty(total, dtype=np.int64)
    rank[order] = np.arange(total)

    out_i, out_j = [], []
    big = np.iinfo(np.int64).max
    while ci.size:
        best_i = np.full(ta.size, big, dtype=np.int64)
        best_j = np.full(tb.size, big, dtype=np.int64)
        np.minimum.at(best_i, ci, rank)
        np.minimum.at(best_j, cj, rank)
        ok = (best_i[ci] == rank) & (best_j[cj] == rank)
        acc_i, acc_j = ci[ok], cj[ok]
        out_i.append(acc_i)
        out_j.append(acc_j)
        used_i = np.zeros(ta.size, dtype=bool)
        used_j = np.zeros(tb.size, dtype=bool)
        used_i[acc_i] = True
        used_j[acc_j] = True
        keep = ~(used_i[ci] | used_j[cj])
        ci, cj, rank = ci[keep], cj[keep], rank[keep]
    i = np.concatenate(out_i)
    j = np.concatenate(out_j)
    order = np.argsort(i, kind="stable")
    return i[order], j[order]


def _chunk_boundaries(ta: np.ndarray, tb: np.ndarray, window: int, target: int) -> list[int]:
    """Split times roughly every ``target`` Alice events where no pair can straddle."""
    cuts = []
    idx = target
    while idx < ta.size:
        t = int(ta[idx])
        # a cut at t is clean if no event of either stream lies in (t - window - 1, t + window]
        while idx < ta.size:
            t = int(ta[idx])
            near_a = idx > 0 and ta[idx - 1] >= t - 2 * window - 1
            k = np.searchsorted(tb, t - 2 * window - 1, side="left")
            near_b = k < tb.size and tb[k] <= t + 2 * window
            if not near_a and not near_b:
                break
            idx += 1
        if idx >= ta.size:
            break
        cuts.append(t - window - 1)
        idx += target
    return cuts


def find_coincidences(
    a: TimeTagStream,
    b: TimeTagStream,
    sync: SyncResult,
    window: int = DEFAULT_WINDOW,
    chunk_events: int = 2_000_000,
) -> Coincidences:
    """Pair Alice and Bob detections closer than ``window`` ps after alignment."""
    if window < 0:
        raise ValueError("window must be non-negative")
    ta = a.timestamps
    tb_aligned = np.rint(sync.to_alice_clock(b.timestamps)).astype(np.int64)
    if not ta.size or not tb_aligned.size:
        empty = np.empty(0, np.int64)
        return Coincidences(empty, empty, np.empty(0, np.uint8), np.empty(0, np.uint8))

    cuts = _chunk_boundaries(ta, tb_aligned, window, chunk_events)
    edges = [None, *cuts, None]
    idx_a, idx_b = [], []
    for lo_t, hi_t in zip(edges[:-1], edges[1:]):
        a0 = 0 if lo_t is None else int(np.searchsorted(ta, lo_t, side="right"))
        a1 = ta.size if hi_t is None else int(np.searchsorted(ta, hi_t, side="right"))
        b0 = 0 if lo_t is None else int(np.searchsorted(tb_aligned, lo_t, side="right"))
        b1 = tb_aligned.size if hi_t is None else int(np.searchsorted(tb_aligned, hi_t, side="right"))
        i, j = _match_closest(ta[a0:a1], tb_aligned[b0:b1], window)
        idx_a.append(i + a0)
        idx_b.append(j + b0)
    i = np.concatenate(idx_a)
    j = np.concatenate(idx_b)
    return Coincidences(ta[i], b.timestamps[j], a.channels[i], b.channels[j])


@dataclass(frozen=True)
class SiftedBits:
    """Basis-matched key bits with their Alice detection time."""

    t_alice: np.ndarray
    bit_alice: np.ndarray
    bit_bob: np.ndarray

    def __len__(self) -> int:
        return int(self.bit_alice.size)

    @property
    def mismatch_fraction(self) -> float:
        return float(np.mean(self.bit_alice != self.bit_bob)) if len(self) else 0.0

    def select(self, mask_or_index) -> "SiftedBits":
        return SiftedBits(
            self.t_alice[mask_or_index], self.bit_alice[mask_or_index], self.bit_bob[mask_or_index]
        )


def sift(pairs: Coincidences, model: CorrelationModel | None = None) -> SiftedBits:
    """Keep basis-matched pairs and map channels to bits.

    Bob's bit is flipped in any basis the source anti-correlates (the X
    basis for Phi-minus), so error-free pairs give equal bits.
    """
    model = model or CorrelationModel()
    match = pairs.basis_match
    ch_a = pairs.ch_alice[match]
    ch_b = pairs.ch_bob[match]
    basis = channel_basis(ch_a)
    flip = np.where(basis == 0, not model.basis_z_correlated, not model.basis_x_correlated)
    bit_b = channel_bit(ch_b) ^ flip.astype(np.uint8)
    return SiftedBits(pairs.t_alice[match], channel_bit(ch_a), bit_b)


@dataclass(frozen=True)
class QberEstimate:
    qber_hat: float
    n_sampled: int
    n_errors: int

    @property
    def ci_half_width(self) -> float:
        if not self.n_sampled:
            return float("nan")
        return math.sqrt(self.qber_hat * (1.0 - self.qber_hat) / self.n_sampled)


def estimate_qber(
    sifted: SiftedBits, params: SecurityParams, rng_seed: int
) -> tuple[QberEstimate, SiftedBits]:
    """Sample the parameter-estimation subset and return it with the key bits."""
    n = len(sifted)
    if n < MIN_SIFTED:
        raise InsufficientData(f"need at least {MIN_SIFTED} sifted pairs, got {n}")
    n_pe = sample_size(n, params.sample_fraction)
    rng = make_rng(rng_seed)
    chosen = np.zeros(n, dtype=bool)
    chosen[rng.choice(n, size=n_pe, replace=False)] = True
    errors = int(np.count_nonzero(sifted.bit_alice[chosen] != sifted.bit_bob[chosen]))
    est = QberEstimate(errors / n_pe if n_pe else 0.0, n_pe, errors)
    return est, sifted.select(~chosen)


def sift_blocks(
    sifted: SiftedBits,
    params: SecurityParams,
    seed: int,
    block_s: float = 1.0,
    span_s: float | None = None,
) -> list[SiftedBlock]:
    """Split sifted bits into consecutive blocks and estimate each block's QBER.

    Block ``k`` covers Alice times ``[k * block_s, (k + 1) * block_s)`` and
    is sampled with seed ``seed ^ k``. Blocks with too few pairs are skipped.
    """
    if not len(sifted):
        return []
    block_ps = block_s * PS_PER_S
    index = np.floor(sifted.t_alice / block_ps).astype(np.int64)
    if span_s is None:
        span_s = float(sifted.t_alice[-1]) / PS_PER_S
    bounds = np.flatnonzero(np.diff(index)) + 1
    starts = np.concatenate(([0], bounds))
    stops = np.concatenate((bounds, [index.size]))
    blocks = []
    for s, e in zip(starts, stops):
        k = int(index[s])
        part = sifted.select(slice(s, e))
        try:
            est, _ = estimate_qber(part, params, block_seed(seed, k))
        except InsufficientData:
            log.info("skipping block %d with %d sifted pairs", k, len(part))
            continue
        start = k * block_s
        duration = min(block_s, max(span_s - start, 0.0)) or block_s
        blocks.append(
            SiftedBlock(
                n_total=len(part),
                n_pe=est.n_sampled,
                n_key=len(part) - est.n_sampled,
                qber_hat=est.qber_hat,
                duration=duration,
                pe_errors=est.n_errors,
                start=start,
            )
        )
    return blocks


def aggregate_blocks(blocks: Sequence[SiftedBlock], window: float) -> list[SiftedBlock]:
    """Pool consecutive blocks into windows of ``window`` seconds.

    Counts and sampled errors are summed; the aggregate QBER is the pooled
    mismatch fraction of the samples.
    """
    if window <= 0:
        raise ValueError("window must be positive")
    if not blocks:
        return []
    t0 = blocks[0].start
    groups: dict[int, list[SiftedBlock]] = {}
    for blk in blocks:
        groups.setdefault(int(math.floor((blk.start - t0) / window + 1e-9)), []).append(blk)
    out = []
    for key in sorted(groups):
        members = groups[key]
        if len(members) == 1:
            out.append(members[0])
            continue
        n_pe = sum(m.n_pe for m in members)
        errors = sum(m.pe_errors for m in members)
        out.append(
            SiftedBlock(
                n_total=sum(m.n_total for m in members),
                n_pe=n_pe,
                n_key=sum(m.n_key for m in members),
                qber_hat=errors / n_pe if n_pe else 0.0,
                duration=sum(m.duration for m in members),
                pe_errors=errors,
                start=members[0].start,
            )
        )
    return out
