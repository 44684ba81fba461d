import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from qkdlink.linkbudget import (
    BeamParams,
    LinkGeometry,
    beam_radius_at,
    collection_efficiency,
    collection_loss_db,
    db_to_transmittance,
    loss_table,
    total_loss_db,
)

LEO = BeamParams(wavelength=780e-9, waist_radius=0.04, m_squared=1.6)


def quadrature_loss_db(w, r):
    """Integrate the normalised Gaussian intensity over a disc in Cartesian coordinates."""

    def intensity(y, x):
        return 2.0 / (math.pi * w * w) * math.exp(-2.0 * (x * x + y * y) / (w * w))

    power, _ = integrate.dblquad(
        intensity,
        -r,
        r,
        lambda x: -math.sqrt(max(r * r - x * x, 0.0)),
        lambda x: math.sqrt(max(r * r - x * x, 0.0)),
        epsabs=1e-13,
        epsrel=1e-11,
    )
    return -10 * math.log10(power)


QUAD_GRID = [
    (5.0, 0.4),
    (4.9658, 0.4),
    (10.0, 0.4),
    (1.0, 0.4),
    (0.5, 0.4),
    (0.3, 0.1),
    (2.0, 2.0 * math.sqrt(math.log(2) / 2)),
    (0.05, 0.4),
    (20.0, 0.5),
    (7.5, 0.25),
]


@pytest.mark.parametrize("w, r", QUAD_GRID)
def test_collection_loss_matches_quadrature(w, r):
    assert collection_loss_db(w, r) == pytest.approx(quadrature_loss_db(w, r), abs=0.01)


def test_leo_geometric_loss():
    assert collection_loss_db(5.0, 0.4) == pytest.approx(18.9, abs=0.1)


def test_full_collection():
    assert collection_loss_db(0.01, 1.0) == pytest.approx(0.0, abs=1e-12)
    assert collection_efficiency(0.01, 1.0) == pytest.approx(1.0)


def test_beam_radius_waist_and_leo_spot():
    assert beam_radius_at(LEO, 0.0) == LEO.waist_radius
    diameter = 2 * beam_radius_at(LEO, 500e3)
    assert diameter == pytest.approx(10.0, rel=0.05)


def test_terrestrial_spot():
    # collimated waist that spreads to exactly 0.05 m at 1.8 km
    w, z = 0.05, 1.8e3
    c = (z * 780e-9 / math.pi) ** 2
    beam = BeamParams(waist_radius=math.sqrt((w * w + math.sqrt(w**4 - 4 * c)) / 2), m_squared=1.0)
    assert beam_radius_at(beam, z) == pytest.approx(0.05, rel=1e-9)
    assert collection_loss_db(beam_radius_at(beam, 1.8e3), 0.4) == pytest.approx(0.0, abs=1e-9)


def test_total_loss_leo_zenith():
    assert total_loss_db(LEO, LinkGeometry(500e3, 0.4, 6.0)) == pytest.approx(24.9, abs=0.1)
    assert total_loss_db(BeamParams(waist_radius=0.01), LinkGeometry(1.0, 1.0)) == pytest.approx(0.0, abs=1e-12)


def test_far_field_scaling_to_low_elevation():
    zenith = total_loss_db(LEO, LinkGeometry(500e3))
    low = total_loss_db(LEO, LinkGeometry(1205e3))
    assert low - zenith == pytest.approx(20 * math.log10(1205 / 500), abs=0.1)


def test_validation():
    with pytest.raises(ValueError):
        BeamParams(m_squared=0.5)
    with pytest.raises(ValueError):
        LinkGeometry(range=-1.0)
    with pytest.raises(ValueError):
        LinkGeometry(range=1.0, extra_loss_db=-1.0)
    with pytest.raises(ValueError):
        collection_loss_db(0.0, 0.4)


@given(st.floats(0.01, 50.0), st.floats(0.01, 5.0), st.floats(0.01, 5.0))
def test_loss_decreases_with_aperture(w, r1, r2):
    lo, hi = sorted((r1, r2))
    assert collection_loss_db(w, hi) <= collection_loss_db(w, lo) + 1e-12


def test_loss_table_and_transmittance():
    rows = loss_table(LEO, [500e3, 800e3], 0.4, 6.0)
    assert [r["range_m"] for r in rows] == [500e3, 800e3]
    assert rows[1]["total_loss_db"] > rows[0]["total_loss_db"]
    assert rows[0]["total_loss_db"] - rows[0]["collection_loss_db"] == pytest.approx(6.0)
    assert db_to_transmittance(10.0) == pytest.approx(0.1)
    assert np.isclose(db_to_transmittance(0.0), 1.0)
