"""Shared domain types and numeric helpers.

Unit conventions used throughout the package:

* timestamps and time offsets: integer picoseconds
* durations and pass times: seconds
* losses: dB, angles: degrees, orbital distances: km, optical lengths: m
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np

PS_PER_S = 1_000_000_000_000

DEFAULT_EPSILON = 4e-16
DEFAULT_F_EC = 1.2
DEFAULT_SAMPLE_FRACTION = 0.20


class Channel(enum.IntEnum):
    """Detector channel. The integer value is the on-disk channel code."""

    H = 0
    V = 1
    D = 2
    A = 3

    @property
    def basis(self) -> "Basis":
        return Basis.Z if self in (Channel.H, Channel.V) else Basis.X


class Basis(enum.IntEnum):
    Z = 0
    X = 1


class Party(str, enum.Enum):
    ALICE = "alice"
    BOB = "bob"


def channel_basis(channels: np.ndarray) -> np.ndarray:
    """Basis index (0 = Z, 1 = X) for an array of channel codes."""
    return (np.asarray(channels) >= Channel.D).astype(np.uint8)


def channel_bit(channels: np.ndarray) -> np.ndarray:
    """Raw detector bit: H, D -> 0 and V, A -> 1."""
    return (np.asarray(channels) & 1).astype(np.uint8)


class DetectionEvent(NamedTuple):
    timestamp: int
    channel: Channel


@dataclass(frozen=True, eq=False)
class TimeTagStream:
    """Time-ordered detection events recorded by one party.

    Events are stored column-wise: ``timestamps`` (int64, ps) and
    ``channels`` (uint8 channel codes). Construction validates ordering,
    channel codes and uniqueness of ``(timestamp, channel)``.
    """

    party: Party
    timestamps: np.ndarray
    channels: np.ndarray
    epoch_label: str = ""

    def __post_init__(self) -> None:
        ts = np.ascontiguousarray(self.timestamps, dtype=np.int64)
        ch = np.ascontiguousarray(self.channels, dtype=np.uint8)
        if ts.ndim != 1 or ts.shape != ch.shape:
            raise ValueError("timestamps and channels must be 1-D arrays of equal length")
        if ts.size:
            if ts[0] < 0:
                raise ValueError("timestamps must be non-negative")
            steps = np.diff(ts)
            if np.any(steps < 0):
                raise ValueError("timestamps must be sorted non-decreasing")
            if np.any(ch > Channel.A):
                raise ValueError(f"unknown channel code {int(ch.max())}")
            if np.any(steps == 0) and _has_duplicate_pairs(ts, ch):
                raise ValueError("duplicate (timestamp, channel) events")
        party = Party(self.party)
        ts.setflags(write=False)
        ch.setflags(write=False)
        object.__setattr__(self, "party", party)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "channels", ch)

    @classmethod
    def from_unsorted(
        cls, party: Party | str, timestamps, channels, epoch_label: str = ""
    ) -> "TimeTagStream":
        """Sort by (timestamp, channel) and drop duplicate pairs."""
        ts = np.asarray(timestamps, dtype=np.int64)
        ch = np.asarray(channels, dtype=np.uint8)
        order = np.lexsort((ch, ts))
        ts, ch = ts[order], ch[order]
        if ts.size > 1:
            keep = np.ones(ts.size, dtype=bool)
            keep[1:] = (ts[1:] != ts[:-1]) | (ch[1:] != ch[:-1])
            ts, ch = ts[keep], ch[keep]
        return cls(Party(party), ts, ch, epoch_label)

    @classmethod
    def empty(cls, party: Party | str, epoch_label: str = "") -> "TimeTagStream":
        return cls(Party(party), np.empty(0, np.int64), np.empty(0, np.uint8), epoch_label)

    def __len__(self) -> int:
        return int(self.timestamps.size)

    def __iter__(self) -> Iterator[DetectionEvent]:
        for t, c in zip(self.timestamps.tolist(), self.channels.tolist()):
            yield DetectionEvent(t, Channel(c))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TimeTagStream):
            return NotImplemented
        return (
            self.party == other.party
            and self.epoch_label == other.epoch_label
            and np.array_equal(self.timestamps, other.timestamps)
            and np.array_equal(self.channels, other.channels)
        )

    @property
    def span_ps(self) -> int:
        if not len(self):
            return 0
        return int(self.timestamps[-1] - self.timestamps[0])

    def counts_per_channel(self) -> dict[str, int]:
        counts = np.bincount(self.channels, minlength=4)
        return {c.name: int(counts[c]) for c in Channel}

    def window(self, start_ps: int, stop_ps: int) -> "TimeTagStream":
        """Events with ``start_ps <= t < stop_ps``."""
        lo, hi = np.searchsorted(self.timestamps, [start_ps, stop_ps], side="left")
        return TimeTagStream(
            self.party, self.timestamps[lo:hi], self.channels[lo:hi], self.epoch_label
        )


def _has_duplicate_pairs(ts: np.ndarray, ch: np.ndarray) -> bool:
    order = np.lexsort((ch, ts))
    ts, ch = ts[order], ch[order]
    return bool(np.any((ts[1:] == ts[:-1]) & (ch[1:] == ch[:-1])))


@dataclass(frozen=True)
class SecurityParams:
    """Composable security budget and post-processing constants."""

    epsilon_total: float = DEFAULT_EPSILON
    epsilon_pe: float = DEFAULT_EPSILON / 3
    epsilon_sec: float = DEFAULT_EPSILON / 3
    epsilon_cor: float = DEFAULT_EPSILON / 3
    f_ec: float = DEFAULT_F_EC
    sample_fraction: float = DEFAULT_SAMPLE_FRACTION

    def __post_init__(self) -> None:
        parts = (self.epsilon_pe, self.epsilon_sec, self.epsilon_cor)
        if self.epsilon_total <= 0 or any(p <= 0 for p in parts):
            raise ValueError("security parameters must be positive")
        if not math.isclose(sum(parts), self.epsilon_total, rel_tol=1e-12):
            raise ValueError(
                f"epsilon split {parts} does not sum to epsilon_total={self.epsilon_total}"
            )
        if self.f_ec < 1:
            raise ValueError("f_ec must be >= 1")
        if not 0 < self.sample_fraction < 1:
            raise ValueError("sample_fraction must lie in (0, 1)")


def split_epsilon(
    epsilon_total: float,
    f_ec: float = DEFAULT_F_EC,
    sample_fraction: float = DEFAULT_SAMPLE_FRACTION,
) -> SecurityParams:
    """Split the total security parameter equally into PE, secrecy and correctness."""
    if not epsilon_total > 0:
        raise ValueError(f"epsilon_total must be positive, got {epsilon_total}")
    third = epsilon_total / 3
    return SecurityParams(epsilon_total, third, third, third, f_ec, sample_fraction)


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def sample_size(n_total: int, fraction: float) -> int:
    """Number of sifted pairs spent on parameter estimation."""
    return round_half_up(fraction * n_total)


@dataclass(frozen=True)
class SiftedBlock:
    """Counts and sampled QBER of one aggregation window.

    ``n_total`` is the number of sifted pairs, ``n_pe`` the parameter
    estimation sample and ``n_key`` the remainder. ``pe_errors`` is the
    number of mismatches found in the sample; ``start`` is the window start
    in seconds since the stream epoch.
    """

    n_total: int
    n_pe: int
    n_key: int
    qber_hat: float
    duration: float
    pe_errors: int = 0
    start: float = 0.0

    def __post_init__(self) -> None:
        for name in ("n_total", "n_pe", "n_key", "pe_errors"):
            value = getattr(self, name)
            if int(value) != value or value < 0:
                raise ValueError(f"{name} must be a non-negative integer, got {value}")
            object.__setattr__(self, name, int(value))
        if self.n_pe + self.n_key != self.n_total:
            raise ValueError("n_pe + n_key must equal n_total")
        if not 0.0 <= self.qber_hat <= 1.0:
            raise ValueError(f"qber_hat must be in [0, 1], got {self.qber_hat}")
        if self.pe_errors > self.n_pe:
            raise ValueError("pe_errors cannot exceed n_pe")
        if self.duration < 0:
            raise ValueError("duration must be non-negative")

    @classmethod
    def from_counts(
        cls,
        n_total: int,
        qber_hat: float,
        duration: float,
        sample_fraction: float = DEFAULT_SAMPLE_FRACTION,
        start: float = 0.0,
    ) -> "SiftedBlock":
        """Synthetic block with the standard sampling split and a given QBER."""
        n_total = int(n_total)
        n_pe = sample_size(n_total, sample_fraction)
        return cls(
            n_total=n_total,
            n_pe=n_pe,
            n_key=n_total - n_pe,
            qber_hat=qber_hat,
            duration=duration,
            pe_errors=round_half_up(qber_hat * n_pe),
            start=start,
        )


def binary_entropy(x: float) -> float:
    """Shannon entropy of a Bernoulli(x) variable, in bits."""
    if not 0.0 <= x <= 1.0 or math.isnan(x):
        raise ValueError(f"binary_entropy domain is [0, 1], got {x}")
    if x == 0.0 or x == 1.0:
        return 0.0
    return -x * math.log2(x) - (1.0 - x) * math.log2(1.0 - x)


def make_rng(seed: int) -> np.random.Generator:
    """Seeded generator; PCG64 streams are identical across platforms."""
    return np.random.Generator(np.random.PCG64(seed & 0xFFFF_FFFF_FFFF_FFFF))


def block_seed(master_seed: int, block_index: int) -> int:
    return (master_seed ^ block_index) & 0xFFFF_FFFF_FFFF_FFFF

