"""Angle conventions: wrapping, clamping, validation, and direction vectors."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from panecg.geometry import ViewAngle, clamp_theta, unit_direction, wrap_phi


@given(st.floats(min_value=-1e6, max_value=1e6, allow_nan=False))
def test_wrap_phi_range_and_period(phi):
    w = wrap_phi(phi)
    assert -180.0 < w <= 180.0
    # wrapping is 360-periodic
    assert wrap_phi(phi + 360.0) == pytest.approx(w, abs=1e-6)


def test_wrap_phi_boundary_prefers_positive_180():
    assert wrap_phi(180.0) == 180.0
    assert wrap_phi(-180.0) == 180.0
    assert wrap_phi(540.0) == 180.0


def test_wrap_phi_identity_inside_range():
    for phi in (-179.9, -90.0, 0.0, 45.5, 180.0):
        assert wrap_phi(phi) == phi


@given(st.floats(min_value=-500, max_value=500, allow_nan=False))
def test_clamp_theta_range(theta):
    c = clamp_theta(theta)
    assert 0.0 <= c <= 180.0
    if 0.0 <= theta <= 180.0:
        assert c == theta


def test_view_angle_validation():
    ViewAngle(0.0, 180.0)
    ViewAngle(180.0, -179.9)
    with pytest.raises(ValueError):
        ViewAngle(-0.1, 0.0)
    with pytest.raises(ValueError):
        ViewAngle(180.1, 0.0)
    with pytest.raises(ValueError):
        ViewAngle(90.0, -180.0)
    with pytest.raises(ValueError):
        ViewAngle(90.0, 180.1)


def test_offset_wraps_and_clamps():
    a = ViewAngle(170.0, 175.0)
    b = a.offset(20.0, 10.0)
    assert b.theta == 180.0  # clamped at the pole
    assert b.phi == pytest.approx(-175.0)  # wrapped through the seam
    c = ViewAngle(10.0, -170.0).offset(-20.0, -20.0)
    assert c.theta == 0.0
    assert c.phi == pytest.approx(170.0)


def test_offset_zero_is_identity():
    a = ViewAngle(63.0, -78.0)
    assert a.offset(0.0, 0.0) == a


def test_as_tuple():
    assert ViewAngle(30.0, -40.0).as_tuple() == (30.0, -40.0)


@pytest.mark.parametrize(
    "theta,phi,expected",
    [
        (90.0, 0.0, (1.0, 0.0, 0.0)),
        (90.0, 90.0, (0.0, 1.0, 0.0)),
        (0.0, 0.0, (0.0, 0.0, 1.0)),
        (180.0, 0.0, (0.0, 0.0, -1.0)),
        (90.0, 180.0, (-1.0, 0.0, 0.0)),
    ],
)
def test_unit_direction_axes(theta, phi, expected):
    np.testing.assert_allclose(unit_direction(ViewAngle(theta, phi)), expected, atol=1e-12)


@given(
    st.floats(min_value=0.0, max_value=180.0, allow_nan=False),
    st.floats(min_value=-179.9, max_value=180.0, allow_nan=False),
)
def test_unit_direction_is_unit(theta, phi):
    d = unit_direction(ViewAngle(theta, phi))
    assert math.isclose(float(np.linalg.norm(d)), 1.0, rel_tol=1e-12)


def test_unit_direction_matches_spherical_formula():
    a = ViewAngle(63.0, -101.0)
    t, p = math.radians(63.0), math.radians(-101.0)
    np.testing.assert_allclose(
        unit_direction(a),
        [math.sin(t) * math.cos(p), math.sin(t) * math.sin(p), math.cos(t)],
        rtol=1e-15,
    )
