"""Clock offset and drift recovery between two time-tag streams.

The clock model is ``t_bob = t_alice * (1 + drift) + offset`` where
``offset`` is in ps at the stream epoch and ``drift`` is given in ppm.

Recovery runs in stages: a binned FFT cross-correlation over a wide span
finds a coarse lag, then histograms of nearby time differences refine it at
fine resolution. ``track_drift`` repeats the refinement per segment and fits
a straight line through the segment offsets.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .core import PS_PER_S, TimeTagStream

log = logging.getLogger(__name__)

DEFAULT_COARSE_BIN = 1_000_000  # 1 us
DEFAULT_SEARCH_SPAN = PS_PER_S  # +/- 1 s
DEFAULT_FINE_BIN = 1_000  # 1 ns
DEFAULT_FINE_WINDOW = 10_000_000  # +/- 10 us
MIN_TRACK_SEGMENT = 0.05  # s
MAX_COARSE_BINS = 1 << 22  # per histogram
DEFAULT_THRESHOLD = 6.0


class SyncError(RuntimeError):
    pass


class EmptyStream(SyncError):
    pass


class NoPeak(SyncError):
    def __init__(self, message: str, significance: float = float("nan")):
        super().__init__(message)
        self.significance = significance


class InsufficientSegments(SyncError):
    pass


@dataclass(frozen=True)
class SyncResult:
    offset: float
    drift: float = 0.0
    peak_significance: float = float("inf")
    bin_width_fine: float = DEFAULT_FINE_BIN
    drift_error: float = 0.0
    segments_used: int = 0

    def predicted_offset(self, t_alice):
        """Bob-minus-Alice offset (ps) at Alice time ``t_alice`` (ps)."""
        return self.offset + self.drift * 1e-6 * np.asarray(t_alice, dtype=float)

    def to_alice_clock(self, t_bob: np.ndarray) -> np.ndarray:
        """Map Bob timestamps onto Alice's timeline (float ps)."""
        return (np.asarray(t_bob, dtype=np.float64) - self.offset) / (1.0 + self.drift * 1e-6)

    def as_dict(self) -> dict:
        return {
            "offset_ps": self.offset,
            "drift_ppm": self.drift,
            "drift_error_ppm": self.drift_error,
            "peak_significance": self.peak_significance,
            "bin_width_fine_ps": self.bin_width_fine,
            "segments_used": self.segments_used,
        }


def apply_sync(b: TimeTagStream, sync: SyncResult) -> TimeTagStream:
    """Bob's stream re-expressed on Alice's clock; events before the epoch are dropped."""
    t = np.rint(sync.to_alice_clock(b.timestamps)).astype(np.int64)
    keep = t >= 0
    # the clock map is monotone, so order is preserved
    return TimeTagStream(b.party, t[keep], b.channels[keep], b.epoch_label)


def _significance(values: np.ndarray, peak: int, guard: int) -> float:
    mask = np.ones(values.size, dtype=bool)
    mask[max(0, peak - guard) : peak + guard + 1] = False
    rest = values[mask]
    if rest.size < 2:
        return float("inf") if values[peak] > 0 else 0.0
    mean = rest.mean()
    std = rest.std()
    if std == 0:
        return float("inf") if values[peak] > mean else 0.0
    return float((values[peak] - mean) / std)


def coarse_offset(
    a: TimeTagStream,
    b: TimeTagStream,
    bin_width: int = DEFAULT_COARSE_BIN,
    search_span: int = DEFAULT_SEARCH_SPAN,
    analysis_duration: int | None = 2 * PS_PER_S,
    threshold: float = DEFAULT_THRESHOLD,
) -> int:
    """Lag (a multiple of ``bin_width``) maximising the binned cross-correlation.

    Alice's events in ``[t0, t0 + analysis_duration)`` are correlated against
    Bob's events over the same interval widened by ``search_span`` on both
    sides, so every lag in ``+/- search_span`` sees full overlap. The
    histograms are zero padded and correlated with real FFTs. The analysis
    interval is shortened if it would need more than ``MAX_COARSE_BINS``.
    """
    if not len(a) or not len(b):
        raise EmptyStream("cannot correlate an empty stream")
    if bin_width < 1 or search_span < bin_width:
        raise ValueError("need bin_width >= 1 and search_span >= bin_width")
    t0 = int(a.timestamps[0])
    span_bins = int(search_span // bin_width)
    if span_bins > MAX_COARSE_BINS:
        raise ValueError(f"search_span / bin_width exceeds {MAX_COARSE_BINS} bins")
    if analysis_duration is None:
        analysis_duration = a.span_ps + 1
    n_a = max(1, min(int(math.ceil(analysis_duration / bin_width)), MAX_COARSE_BINS))
    n_b = n_a + 2 * span_bins

    ta = a.timestamps
    ta = ta[ta < t0 + n_a * bin_width]
    hist_a = np.bincount((ta - t0) // bin_width, minlength=n_a)[:n_a].astype(np.float64)

    b_lo = t0 - span_bins * bin_width
    tb = b.timestamps
    lo, hi = np.searchsorted(tb, [b_lo, b_lo + n_b * bin_width])
    hist_b = np.bincount((tb[lo:hi] - b_lo) // bin_width, minlength=n_b)[:n_b].astype(np.float64)
    if not hist_b.any():
        raise NoPeak("no Bob events inside the search span", 0.0)

    size = _fft_size(n_a + n_b)
    spec = np.conj(np.fft.rfft(hist_a, size)) * np.fft.rfft(hist_b, size)
    corr = np.fft.irfft(spec, size)[: 2 * span_bins + 1]
    # Subtract the accidental level of each lag. Near the ends of Bob's
    # record the overlap is partial, which would otherwise appear as a ramp.
    cum_b = np.concatenate(([0.0], np.cumsum(hist_b)))
    overlap = cum_b[n_a : n_a + 2 * span_bins + 1] - cum_b[: 2 * span_bins + 1]
    resid = corr - overlap * (hist_a.sum() / n_a)
    valid = overlap > 0
    if not valid.any():
        raise NoPeak("no Bob events overlap the analysis window", 0.0)
    resid = np.where(valid, resid, -np.inf)
    peak = int(np.argmax(resid))
    sig = _significance(resid[valid], int(np.count_nonzero(valid[:peak])), guard=max(3, span_bins // 10_000))
    if not sig > threshold:
        raise NoPeak(f"coarse correlation peak significance {sig:.2f} below {threshold}", sig)
    lag = (peak - span_bins) * bin_width
    log.debug("coarse offset %d ps, significance %.1f", lag, sig)
    return lag


def _fft_size(n: int) -> int:
    from scipy.fft import next_fast_len

    return next_fast_len(n, real=True)


def _differences(
    ta: np.ndarray,
    tb: np.ndarray,
    offset: float,
    drift_ppm: float,
    window: float,
) -> np.ndarray:
    """All ``t_b - t_a - predicted_offset(t_a)`` values within ``+/- window``."""
    if not ta.size or not tb.size:
        return np.empty(0)
    pred = offset + drift_ppm * 1e-6 * ta.astype(np.float64)
    centre = ta + pred
    # integer keys keep searchsorted from casting all of tb to float
    lo_key = np.ceil(centre - window).astype(np.int64)
    hi_key = np.floor(centre + window).astype(np.int64)
    first = int(np.searchsorted(tb, lo_key.min(), side="left"))
    stop = int(np.searchsorted(tb, hi_key.max(), side="right"))
    tb = tb[first:stop]
    lo = np.searchsorted(tb, lo_key, side="left")
    hi = np.searchsorted(tb, hi_key, side="right")
    counts = hi - lo
    total = int(counts.sum())
    if total == 0:
        return np.empty(0)
    owner = np.repeat(np.arange(ta.size), counts)
    idx = np.repeat(lo - np.cumsum(counts) + counts, counts) + np.arange(total)
    return tb[idx] - ta[owner] - pred[owner]


@dataclass(frozen=True)
class _Peak:
    shift: float
    significance: float
    count: int


def _locate_peak(diffs: np.ndarray, bin_width: float, window: float, guard: int = 5) -> _Peak:
    """Histogram the differences, find the peak and refine it.

    Bins are centred on integer multiples of ``bin_width``. The refined
    position is the background-subtracted mean of the raw differences
    within +/- 3 bins of the peak bin, which avoids the quantisation bias
    of a binned centroid when the peak is narrower than one bin.
    """
    half = int(round(window / bin_width))
    n_bins = 2 * half + 1
    k = np.floor(diffs / bin_width + 0.5).astype(np.int64) + half
    inside = (k >= 0) & (k < n_bins)
    k, diffs = k[inside], diffs[inside]
    hist = np.bincount(k, minlength=n_bins).astype(np.float64)
    if not hist.any():
        return _Peak(0.0, 0.0, 0)
    peak = int(np.argmax(hist))
    sig = _significance(hist, peak, guard)
    mask = np.ones(n_bins, dtype=bool)
    mask[max(0, peak - guard) : peak + guard + 1] = False
    floor = hist[mask].mean() if mask.any() else 0.0
    lo_k, hi_k = max(0, peak - 3), min(n_bins - 1, peak + 3)
    sel = (k >= lo_k) & (k <= hi_k)
    n_sel = int(sel.sum())
    centers = (np.arange(lo_k, hi_k + 1) - half) * bin_width
    signal = n_sel - floor * centers.size
    if signal <= 0:
        return _Peak(float((peak - half) * bin_width), sig, n_sel)
    shift = (float(diffs[sel].sum()) - floor * float(centers.sum())) / signal
    return _Peak(shift, sig, n_sel)


def fine_offset(
    a: TimeTagStream,
    b: TimeTagStream,
    coarse: float,
    fine_bin: int = DEFAULT_FINE_BIN,
    window: int = DEFAULT_FINE_WINDOW,
    drift: float = 0.0,
    analysis_duration: int | None = PS_PER_S,
    threshold: float = DEFAULT_THRESHOLD,
) -> SyncResult:
    """Refine ``coarse`` to sub-bin precision using events from the start of the run."""
    if not len(a) or not len(b):
        raise EmptyStream("cannot correlate an empty stream")
    ta = a.timestamps
    if analysis_duration is not None:
        ta = ta[ta < ta[0] + analysis_duration]
    diffs = _differences(ta, b.timestamps, coarse, drift, window + fine_bin / 2)
    if not diffs.size:
        raise NoPeak("no event pairs inside the fine window", 0.0)
    pk = _locate_peak(diffs, fine_bin, window)
    shift, sig = pk.shift, pk.significance
    if not sig > threshold:
        raise NoPeak(f"fine correlation peak significance {sig:.2f} below {threshold}", sig)
    return SyncResult(
        offset=coarse + shift, drift=drift, peak_significance=sig, bin_width_fine=fine_bin
    )


def _segment_edges(a: TimeTagStream, segment_ps: int) -> list[tuple[int, int]]:
    """Consecutive full-length segments; the last one absorbs any remainder."""
    start, stop = int(a.timestamps[0]), int(a.timestamps[-1]) + 1
    n = (stop - start) // segment_ps
    edges = [start + i * segment_ps for i in range(n)] + [stop]
    return list(zip(edges[:-1], edges[1:]))


def track_drift(
    a: TimeTagStream,
    b: TimeTagStream,
    initial: SyncResult,
    segment: float = 1.0,
    start_bin: int = DEFAULT_COARSE_BIN,
    track_window: int = 50 * DEFAULT_COARSE_BIN,
    max_differences: int = 5_000_000,
    threshold: float = DEFAULT_THRESHOLD,
) -> SyncResult:
    """Fit a linear clock drift from per-segment offsets.

    Segments are first located in time order at ``start_bin`` resolution,
    extrapolating the running linear fit so that large accumulated drift
    stays inside ``track_window``. The fit is then refined with bins a
    decade narrower per pass down to ``initial.bin_width_fine``.

    Each segment uses as many leading Alice events as keep the number of
    candidate time differences near ``max_differences``.
    """
    if not len(a) or not len(b):
        raise EmptyStream("cannot correlate an empty stream")
    segment_ps = int(round(segment * PS_PER_S))
    if segment_ps <= 0:
        raise ValueError("segment must be positive")
    spans = _segment_edges(a, segment_ps)
    if len(spans) < 2:
        raise InsufficientSegments(
            f"stream span {a.span_ps / PS_PER_S:.3f} s gives fewer than 2 segments of {segment} s"
        )

    rate_b = len(b) / max(b.span_ps, 1)
    keep = max(1_000, int(max_differences / max(rate_b * 2 * track_window, 1e-12)))
    seg_times = []
    for lo_t, hi_t in spans:
        lo, hi = np.searchsorted(a.timestamps, [lo_t, hi_t])
        seg_times.append(a.timestamps[lo : min(hi, lo + keep)])

    tb = b.timestamps
    offset, drift = float(initial.offset), float(initial.drift)
    mids: list[float] = []
    found: list[float] = []
    for ta in seg_times:
        if not ta.size:
            continue
        mid = float(ta.mean())
        pred = offset + drift * 1e-6 * mid
        diffs = _differences(ta, tb, offset, drift, track_window + start_bin / 2)
        pk = _locate_peak(diffs, start_bin, track_window)
        shift, sig = pk.shift, pk.significance
        if not sig > threshold:
            continue
        mids.append(mid)
        found.append(pred + shift)
        offset, drift = _fit_line(mids, found, offset, drift)

    if len(found) < 2:
        raise InsufficientSegments(f"only {len(found)} segment(s) produced a correlation peak")

    fine_bin = float(initial.bin_width_fine)
    bin_width = float(start_bin)
    best_sig = float("inf")
    drift_err = 0.0
    used = len(found)
    while bin_width > fine_bin:
        bin_width = max(fine_bin, bin_width / 10.0)
        mids, found, sigs = [], [], []
        for ta in seg_times:
            if not ta.size:
                continue
            window = 20 * bin_width
            diffs = _differences(ta, tb, offset, drift, window + bin_width / 2)
            pk = _locate_peak(diffs, bin_width, window)
            shift, sig = pk.shift, pk.significance
            if not sig > threshold:
                continue
            mid = float(ta.mean())
            mids.append(mid)
            found.append(offset + drift * 1e-6 * mid + shift)
            sigs.append(sig)
        if len(found) < 2:
            raise InsufficientSegments(
                f"only {len(found)} segment(s) produced a peak at {bin_width:g} ps bins"
            )
        offset, drift, drift_err = _fit_line(mids, found, offset, drift, with_error=True)
        best_sig = float(np.median(sigs))
        used = len(found)
    return replace(
        initial,
        offset=offset,
        drift=drift,
        drift_error=drift_err,
        peak_significance=best_sig,
        segments_used=used,
    )


def _fit_line(mids, offsets, offset, drift, with_error: bool = False):
    """Least-squares offset (ps at epoch) and drift (ppm); keeps the prior drift for one point."""
    x = np.asarray(mids, dtype=np.float64)
    y = np.asarray(offsets, dtype=np.float64)
    if x.size == 1:
        result = (float(y[0] - drift * 1e-6 * x[0]), drift)
        return (*result, 0.0) if with_error else result
    xm = x.mean()
    ym = y.mean()
    sxx = float(np.sum((x - xm) ** 2))
    slope = float(np.sum((x - xm) * (y - ym)) / sxx) if sxx > 0 else drift * 1e-6
    intercept = ym - slope * xm
    if not with_error:
        return float(intercept), slope * 1e6
    if x.size > 2 and sxx > 0:
        resid = y - (intercept + slope * x)
        err = math.sqrt(float(np.sum(resid**2)) / (x.size - 2) / sxx)
    else:
        err = 0.0
    return float(intercept), slope * 1e6, err * 1e6


def synchronize(
    a: TimeTagStream,
    b: TimeTagStream,
    coarse_bin: int = DEFAULT_COARSE_BIN,
    search_span: int = DEFAULT_SEARCH_SPAN,
    fine_bin: int = DEFAULT_FINE_BIN,
    fine_window: int = DEFAULT_FINE_WINDOW,
    segment: float = 1.0,
    threshold: float = DEFAULT_THRESHOLD,
) -> SyncResult:
    """Coarse search, then drift tracking.

    Runs shorter than four segments are tracked with proportionally shorter
    segments; below ``MIN_TRACK_SEGMENT`` a single fine stage is used instead.
    """
    lag = coarse_offset(a, b, coarse_bin, search_span, threshold=threshold)
    initial = SyncResult(offset=float(lag), bin_width_fine=fine_bin)
    span_s = a.span_ps / PS_PER_S
    if span_s < 4 * segment:
        segment = max(span_s / 4, MIN_TRACK_SEGMENT)
    try:
        return track_drift(a, b, initial, segment, start_bin=coarse_bin, threshold=threshold)
    except InsufficientSegments:
        log.info("run too short for drift tracking; using a single fine stage")
        return fine_offset(a, b, lag, fine_bin, fine_window, threshold=threshold)
