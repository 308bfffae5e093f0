import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from brakechords.curves import DiscreteCurve
from brakechords.errors import ValidationError, ZeroLength
from brakechords.flow import integrate_H
from brakechords.legendre import eval_G
from brakechords.model import PhasePoint, TangentPoint
from brakechords.reparam import (
    ReparamMap,
    eval_phi,
    geodesic_to_orbit,
    hamilton_residual,
    orbit_to_geodesic,
)

from .conftest import built


def unit(m, q, d):
    d = np.asarray(d, dtype=float)
    return TangentPoint(q, d / eval_G(m, TangentPoint(q, d)).F)


def test_phi_examples(s1):
    m, _ = s1
    assert eval_phi(m, unit(m, [0.6, 0], [0, 1])) == pytest.approx(3.125, rel=1e-12)
    assert eval_phi(m, unit(m, [0, 0], [1, 1])) == pytest.approx(2.0, rel=1e-12)
    with pytest.raises(ValidationError):
        eval_phi(m, TangentPoint([0, 0], [1, 0]))


@settings(max_examples=40, deadline=None)
@given(x=st.floats(-0.45, 0.45), y=st.floats(-0.45, 0.45), a=st.floats(0, 2 * math.pi))
def test_phi_identity_agrees_with_norm_ratio(x, y, a):
    # eval_phi raises when the two computations differ by more than 1e-8
    m, _ = built("s3")
    assert eval_phi(m, unit(m, [x, y], [math.cos(a), math.sin(a)]), check=1e-8) > 0


@pytest.fixture(scope="module")
def diameter():
    m, _ = built("s1")
    tr = integrate_H(m, PhasePoint([1, 0], [0, 0]), (0, math.pi), tol=1e-12)
    return orbit_to_geodesic(m, tr)


def test_diameter_length(diameter):
    assert diameter.length == pytest.approx(math.pi / 4, abs=1e-8)
    assert diameter.boundary_ends == (True, True)


def test_diameter_half_period(s1, diameter):
    m, _ = s1
    orbit, rmap = geodesic_to_orbit(m, diameter)
    assert rmap.total_time == pytest.approx(math.pi, abs=1e-6)
    assert hamilton_residual(m, orbit) <= 1e-6
    t = orbit.grid
    np.testing.assert_allclose(orbit.q[:, 0], np.cos(t), atol=1e-7)
    assert np.max(np.abs(m.kernel.H(orbit.q, orbit.p) - 0.5)) <= 1e-8
    np.testing.assert_allclose(orbit.p[[0, -1]], 0.0, atol=1e-12)
    assert np.all(np.diff(rmap(np.linspace(0, 1, 50))) > 0)


def test_anisotropic_axis_length(s2):
    m, _ = s2
    tr = integrate_H(m, PhasePoint([1, 0], [0, 0]), (0, math.pi), tol=1e-12)
    c = orbit_to_geodesic(m, tr)
    # G = (E - V) v^T A^{-1} v / 2 on the q1 axis with a11 = 1
    oracle = quad(lambda x: math.sqrt(0.5 * (0.5 - 0.5 * x * x)), -1, 1, epsabs=1e-14)[0]
    assert c.length == pytest.approx(oracle, abs=1e-8)


def test_interior_round_trip(s3):
    m, _ = s3
    # start on the shell: momentum direction scaled by the shell root
    q0 = np.array([0.2, -0.1])
    th = np.array([0.6, 0.8])
    p0 = float(m.kernel.omega(q0[None], th[None])[0]) * th
    tr = integrate_H(m, PhasePoint(q0, p0), (0, 1.0), tol=1e-12)
    c = orbit_to_geodesic(m, tr)
    orbit, rmap = geodesic_to_orbit(m, c)
    assert rmap.total_time == pytest.approx(1.0, abs=1e-8)
    np.testing.assert_allclose(orbit.q, tr.state_at(orbit.grid)[0], atol=1e-8)


def test_degenerate_inputs(s1):
    m, _ = s1
    with pytest.raises((ValidationError, ZeroLength)):
        geodesic_to_orbit(m, DiscreteCurve(np.array([[0.1, 0], [0.1, 0]]), None, "finsler-arclength", 0.0))
    rest = integrate_H(m, PhasePoint([0, 0], [0, 0]), (0, 1.0))
    with pytest.raises(ValidationError):
        orbit_to_geodesic(m, rest)
    single = integrate_H(m, PhasePoint([1, 0], [0, 0]), (0, 0))
    with pytest.raises(ZeroLength):
        orbit_to_geodesic(m, single)
    with pytest.raises(ValidationError):
        ReparamMap(np.array([0.0, 1.0]), np.array([1.0, 0.5]), 1.0)
