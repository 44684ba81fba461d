"""Circular-orbit pass geometry and extrapolation of ground-link counts to LEO.

The orbit is circular over a spherical, non-rotating Earth. A pass is
parametrised by its maximum elevation, which fixes the cross-track central
angle at closest approach; time is measured from closest approach.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import SecurityParams, SiftedBlock
from .keyrate import DEFAULT_PENALTY, KeyRateResult, PenaltyForm, sharp_key_length
from .linkbudget import BeamParams, beam_radius_at, collection_loss_db

EARTH_RADIUS_KM = 6371.0
EARTH_MU_KM3_S2 = 398600.4418


class NoVisibility(ValueError):
    """The pass never rises above the elevation gate."""


@dataclass(frozen=True)
class PassConfig:
    max_elevation: float
    altitude: float = 500.0
    min_elevation: float = 20.0
    time_step: float = 1.0

    def __post_init__(self) -> None:
        if self.altitude <= 0:
            raise ValueError("altitude must be positive")
        if not 0 <= self.max_elevation <= 90:
            raise ValueError("max_elevation must lie in [0, 90] degrees")
        if not 0 <= self.min_elevation < 90:
            raise ValueError("min_elevation must lie in [0, 90) degrees")
        if self.time_step <= 0:
            raise ValueError("time_step must be positive")


def orbital_rate(altitude: float) -> float:
    """Angular rate of a circular orbit in rad/s."""
    return math.sqrt(EARTH_MU_KM3_S2 / (EARTH_RADIUS_KM + altitude) ** 3)


def elevation_from_central_angle(central_angle, altitude: float):
    """Elevation (deg) of a satellite whose sub-point is ``central_angle`` rad away."""
    lam = np.asarray(central_angle, dtype=float)
    ratio = EARTH_RADIUS_KM / (EARTH_RADIUS_KM + altitude)
    return np.degrees(np.arctan2(np.cos(lam) - ratio, np.sin(lam)))


def central_angle_from_elevation(elevation: float, altitude: float) -> float:
    """Inverse of :func:`elevation_from_central_angle`, in radians."""
    e = math.radians(elevation)
    nadir = math.asin(EARTH_RADIUS_KM * math.cos(e) / (EARTH_RADIUS_KM + altitude))
    return math.pi / 2 - e - nadir


def slant_range(elevation, altitude: float):
    """Line-of-sight distance in km from the station to the satellite."""
    e = np.radians(np.asarray(elevation, dtype=float))
    if np.any((e < 0) | (e > math.pi / 2 + 1e-12)):
        raise ValueError("elevation must lie in [0, 90] degrees")
    rs = EARTH_RADIUS_KM + altitude
    d = np.sqrt(rs**2 - (EARTH_RADIUS_KM * np.cos(e)) ** 2) - EARTH_RADIUS_KM * np.sin(e)
    return float(d) if d.ndim == 0 else d


def visible_half_time(config: PassConfig) -> float:
    """Seconds from closest approach until the elevation drops to the gate."""
    if config.max_elevation < config.min_elevation:
        raise NoVisibility(
            f"max elevation {config.max_elevation} deg is below the "
            f"{config.min_elevation} deg gate"
        )
    cross = central_angle_from_elevation(config.max_elevation, config.altitude)
    gate = central_angle_from_elevation(config.min_elevation, config.altitude)
    c = min(1.0, math.cos(gate) / math.cos(cross))
    return math.acos(c) / orbital_rate(config.altitude)


def elevation_profile(config: PassConfig) -> tuple[np.ndarray, np.ndarray]:
    """Sample times (s, zero at closest approach) and elevations (deg) above the gate."""
    half = visible_half_time(config)
    k = int(math.floor(half / config.time_step + 1e-9))
    t = np.arange(-k, k + 1, dtype=float) * config.time_step
    cross = central_angle_from_elevation(config.max_elevation, config.altitude)
    swept = orbital_rate(config.altitude) * np.abs(t)
    lam = np.arccos(np.clip(math.cos(cross) * np.cos(swept), -1.0, 1.0))
    elev = elevation_from_central_angle(lam, config.altitude)
    return t, np.minimum(elev, 90.0)


@dataclass(frozen=True)
class PassProfile:
    """Time-sampled trajectory of one pass; arrays share one index."""

    t: np.ndarray
    elevation: np.ndarray
    slant_range: np.ndarray
    loss_db: np.ndarray
    sifted_rate: np.ndarray
    time_step: float
    altitude: float

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0]) if self.t.size else 0.0

    @property
    def integrated_sifted(self) -> float:
        return float(np.sum(self.sifted_rate) * self.time_step)

    def rows(self) -> list[dict]:
        return [
            {
                "t_s": float(t),
                "elevation_deg": float(e),
                "slant_range_km": float(d),
                "loss_db": float(loss),
                "sifted_rate_cps": float(r),
            }
            for t, e, d, loss, r in zip(
                self.t, self.elevation, self.slant_range, self.loss_db, self.sifted_rate
            )
        ]


def build_profile(
    t,
    elevation,
    altitude: float,
    time_step: float,
    baseline_rate: float,
    beam: BeamParams,
    extra_loss_db: float,
    receiver_radius: float = 0.4,
    min_elevation: float = 20.0,
) -> PassProfile:
    """Attach range, loss and rate to a (t, elevation) table.

    Accepts externally computed ephemerides as well as
    :func:`elevation_profile` output. Samples below ``min_elevation`` are
    dropped.
    """
    t = np.asarray(t, dtype=float)
    elevation = np.asarray(elevation, dtype=float)
    keep = elevation >= min_elevation
    t, elevation = t[keep], elevation[keep]
    d_km = np.atleast_1d(slant_range(elevation, altitude))
    loss = np.array(
        [
            collection_loss_db(beam_radius_at(beam, d * 1e3), receiver_radius) + extra_loss_db
            for d in d_km
        ]
    )
    rate = baseline_rate * 10.0 ** (-loss / 10.0)
    return PassProfile(t, elevation, d_km, loss, rate, time_step, altitude)


def extrapolate_pass(
    profile: PassProfile,
    baseline_rate: float,
    beam: BeamParams,
    extra_loss_db: float,
    qber: float,
    params: SecurityParams,
    receiver_radius: float = 0.4,
    penalty: PenaltyForm | str = DEFAULT_PENALTY,
) -> tuple[float, KeyRateResult]:
    """Integrated sifted counts of a pass and its finite-key result.

    ``baseline_rate`` is the sifted rate measured on a reference link with
    negligible geometric loss. The QBER is held at the reference value for
    the whole pass, which is optimistic at high loss.
    """
    scaled = build_profile(
        profile.t,
        profile.elevation,
        altitude=profile.altitude,
        time_step=profile.time_step,
        baseline_rate=baseline_rate,
        beam=beam,
        extra_loss_db=extra_loss_db,
        receiver_radius=receiver_radius,
        min_elevation=0.0,
    )
    n_sifted = scaled.integrated_sifted
    block = SiftedBlock.from_counts(
        int(round(n_sifted)), qber, scaled.duration, params.sample_fraction
    )
    return n_sifted, sharp_key_length(block, params, penalty)


@dataclass(frozen=True)
class PassReport:
    max_elevation: float
    duration: float
    integrated_sifted: float
    key: KeyRateResult | None
    label: str = ""
    error: str | None = None

    @property
    def skr_bps(self) -> float:
        return self.key.rate_bps if self.key else 0.0

    def as_row(self) -> dict:
        return {
            "label": self.label,
            "max_elevation_deg": self.max_elevation,
            "duration_s": self.duration,
            "N": self.integrated_sifted,
            "skr_bps": self.skr_bps,
            "status": self.error or "ok",
        }


def evaluate_pass(
    config: PassConfig,
    baseline_rate: float = 24665.0,
    qber: float = 0.0478,
    params: SecurityParams | None = None,
    beam: BeamParams | None = None,
    extra_loss_db: float = 6.0,
    receiver_radius: float = 0.4,
    penalty: PenaltyForm | str = DEFAULT_PENALTY,
    label: str = "",
) -> PassReport:
    """Full pass evaluation; visibility failures become a report row."""
    params = params or SecurityParams()
    beam = beam or BeamParams()
    try:
        t, elev = elevation_profile(config)
    except NoVisibility as exc:
        return PassReport(config.max_elevation, 0.0, 0.0, None, label, str(exc))
    profile = build_profile(
        t, elev, config.altitude, config.time_step, baseline_rate, beam,
        extra_loss_db, receiver_radius, config.min_elevation,
    )
    n_sifted, key = extrapolate_pass(
        profile, baseline_rate, beam, extra_loss_db, qber, params, receiver_radius, penalty
    )
    return PassReport(config.max_elevation, profile.duration, n_sifted, key, label)
