"""Free-space optical loss: Gaussian-beam spreading and aperture collection."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class BeamParams:
    """Transmit beam. ``waist_radius`` is the 1/e^2 radius at the transmitter (m)."""

    wavelength: float = 780e-9
    waist_radius: float = 0.04
    m_squared: float = 1.6

    def __post_init__(self) -> None:
        if self.wavelength <= 0 or self.waist_radius <= 0:
            raise ValueError("wavelength and waist_radius must be positive")
        if self.m_squared < 1:
            raise ValueError("m_squared must be >= 1")

    @property
    def rayleigh_range(self) -> float:
        """Embedded-Gaussian Rayleigh range in metres, including M^2."""
        return math.pi * self.waist_radius**2 / (self.m_squared * self.wavelength)

    @property
    def far_field_divergence(self) -> float:
        """Half-angle 1/e^2 divergence in radians."""
        return self.m_squared * self.wavelength / (math.pi * self.waist_radius)


@dataclass(frozen=True)
class LinkGeometry:
    """Range (m), receiver aperture radius (m) and lumped extra loss (dB)."""

    range: float
    receiver_radius: float = 0.4
    extra_loss_db: float = 0.0

    def __post_init__(self) -> None:
        if self.range <= 0 or self.receiver_radius <= 0:
            raise ValueError("range and receiver_radius must be positive")
        if self.extra_loss_db < 0:
            raise ValueError("extra_loss_db must be non-negative")


def beam_radius_at(beam: BeamParams, range_m: float) -> float:
    if range_m < 0:
        raise ValueError("range must be non-negative")
    return beam.waist_radius * math.sqrt(1.0 + (range_m / beam.rayleigh_range) ** 2)


def collection_efficiency(spot_radius: float, receiver_radius: float) -> float:
    """Fraction of a centred Gaussian beam's power inside a circular aperture."""
    if spot_radius <= 0 or receiver_radius <= 0:
        raise ValueError("spot_radius and receiver_radius must be positive")
    return -math.expm1(-2.0 * receiver_radius**2 / spot_radius**2)


def collection_loss_db(spot_radius: float, receiver_radius: float) -> float:
    return -10.0 * math.log10(collection_efficiency(spot_radius, receiver_radius))


def total_loss_db(beam: BeamParams, geometry: LinkGeometry) -> float:
    spot = beam_radius_at(beam, geometry.range)
    return collection_loss_db(spot, geometry.receiver_radius) + geometry.extra_loss_db


def db_to_transmittance(loss_db: float) -> float:
    return 10.0 ** (-loss_db / 10.0)


def loss_table(
    beam: BeamParams, ranges_m, receiver_radius: float, extra_loss_db: float = 0.0
) -> list[dict]:
    """Loss versus range rows suitable for CSV emission."""
    rows = []
    for z in np.asarray(ranges_m, dtype=float):
        w = beam_radius_at(beam, float(z))
        geo = collection_loss_db(w, receiver_radius)
        rows.append(
            {
                "range_m": float(z),
                "spot_radius_m": w,
                "collection_loss_db": geo,
                "total_loss_db": geo + extra_loss_db,
            }
        )
    return rows
