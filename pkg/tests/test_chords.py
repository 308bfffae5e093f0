import math

import numpy as np
import pytest
from scipy.spatial.distance import cdist

from brakechords.chords import BrakeOrbit, find_chords, shoot_orthogonal, verify_brake_orbit
from brakechords.errors import ValidationError
from brakechords.flow import integrate_H
from brakechords.model import PhasePoint
from brakechords.psi import _ray_level_point
from brakechords.reparam import orbit_to_geodesic

from .conftest import axis_chord, certified_region, chords_of, orbit_of

pytestmark = pytest.mark.slow


def test_shot_along_diameter(s1):
    m, w = s1
    omega = certified_region("s1")
    a = _ray_level_point(m, w, np.zeros(2), np.array([1.0, 0.0]), omega.delta_hat)
    shot = shoot_orthogonal(m, w, omega, a)
    np.testing.assert_allclose(shot.hit, -a, atol=1e-9)
    assert np.linalg.norm(shot.residual) <= 1e-10


def test_shots_in_anisotropic_well(s2):
    m, w = s2
    omega = certified_region("s2")
    a = _ray_level_point(m, w, np.zeros(2), np.array([1.0, 0.0]), omega.delta_hat)
    shot = shoot_orthogonal(m, w, omega, a)
    np.testing.assert_allclose(shot.hit, -a, atol=1e-8)
    assert np.linalg.norm(shot.residual) <= 1e-8
    off = _ray_level_point(m, w, np.zeros(2), np.array([math.cos(0.6), math.sin(0.6)]), omega.delta_hat)
    assert np.linalg.norm(shoot_orthogonal(m, w, omega, off).residual) > 1e-3


def test_shot_start_must_lie_on_the_level(s1):
    m, w = s1
    with pytest.raises(ValidationError):
        shoot_orthogonal(m, w, certified_region("s1"), [0.5, 0.0])


def test_chord_properties():
    for name in ("s1", "s2", "s3"):
        found = chords_of(name)
        assert found
        level = certified_region(name).delta_hat
        for c in found:
            assert np.max(c.orthogonality_residuals) <= 1e-8
            assert c.first_variation <= 1e-6
            assert c.min_interior_psi > level
            assert c.length > 0
        # ordered by length, ties within 1e-9 broken by the start point
        assert np.all(np.diff([c.length for c in found]) >= -1e-9)


def test_s1_diameters_and_multiplicity(s1):
    m, w = s1
    found = chords_of("s1")
    for c in found:
        q = c.curve.evaluate(np.linspace(0, 1, 4001))[0]
        assert np.min(np.linalg.norm(q, axis=1)) <= 1e-4
    fewer = find_chords(m, w, certified_region("s1"), nstarts=8)
    assert len(fewer) < len(found)


def test_s2_axes():
    found = chords_of("s2")
    assert len(found) == 2
    assert {axis_chord("s2", 0), axis_chord("s2", 1)} == {0, 1}


def test_nstarts_precondition(s1):
    with pytest.raises(ValidationError):
        find_chords(*s1, certified_region("s1"), nstarts=4)


def test_s1_brake_orbit(s1):
    m, w = s1
    orbit = orbit_of("s1", 0)
    assert orbit.period_half == pytest.approx(math.pi, abs=1e-4)
    assert orbit.certificate.passed
    assert max(orbit.junctions["position_gap"]) <= 1e-8
    assert max(orbit.junctions["angle"]) <= 1e-6
    # brake orbit along a diameter: q(t) = cos(t) Q0
    Q0 = orbit.q[0]
    np.testing.assert_allclose(orbit.q, np.cos(orbit.time_grid)[:, None] * Q0[None], atol=1e-6)


def test_s2_mode_periods(s2):
    along_q1 = orbit_of("s2", axis_chord("s2", 0))
    along_q2 = orbit_of("s2", axis_chord("s2", 1))
    assert along_q1.period_half == pytest.approx(math.pi, abs=1e-4)
    assert along_q2.period_half == pytest.approx(math.pi / math.sqrt(2), abs=1e-4)
    np.testing.assert_allclose(np.abs(along_q1.q[:, 0]), np.abs(np.cos(along_q1.time_grid)), atol=1e-6)
    for orbit in (along_q1, along_q2):
        assert orbit.certificate.passed


def test_trace_round_trip(s3):
    m, _ = s3
    orbit = orbit_of("s3", 0)
    back = orbit_to_geodesic(m, orbit.trajectory)
    s = np.linspace(0, 1, 1001)
    a, b = back.evaluate(s)[0], orbit.curve.evaluate(s)[0]
    hausdorff = max(cdist(a, b).min(axis=1).max(), cdist(b, a).min(axis=1).max())
    assert hausdorff <= 1e-6


def test_time_symmetry(s2):
    m, _ = s2
    orbit = orbit_of("s2", 0)
    T = orbit.period_half
    again = integrate_H(m, PhasePoint(orbit.q[-1], np.zeros(2)), (0, T), tol=1e-12)
    q = again.state_at(T - orbit.time_grid)[0]
    assert np.max(np.linalg.norm(q - orbit.q, axis=1)) <= 1e-6


def test_verification_negative_controls(s1):
    m, w = s1
    orbit = orbit_of("s1", 0)
    good = verify_brake_orbit(m, w, orbit)
    assert good.passed
    pushed = BrakeOrbit(orbit.time_grid, orbit.q, 1.01 * orbit.p, orbit.period_half)
    assert not verify_brake_orbit(m, w, pushed)["energy_residual"].passed
    keep = orbit.time_grid <= 0.9 * orbit.period_half
    cut = BrakeOrbit(orbit.time_grid[keep], orbit.q[keep], orbit.p[keep], 0.9 * orbit.period_half)
    cert = verify_brake_orbit(m, w, cut)
    assert not cert["endpoint_momentum"].passed
    assert not cert["endpoint_boundary_defect"].passed
