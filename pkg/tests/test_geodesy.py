import math
import warnings

import numpy as np
import pytest
from scipy.integrate import quad

from brakechords.curves import DiscreteCurve
from brakechords.geodesy import (
    UnderspecifiedCurveWarning,
    energy_functional,
    energy_lower_bound,
    energy_upper_bound,
    first_variation_residual,
    geodesic_ivp,
    minimizer_to_boundary,
)
from brakechords.errors import ValidationError
from brakechords.legendre import eval_G
from brakechords.model import TangentPoint, convexity_constants
from brakechords.reparam import geodesic_to_orbit, orbit_to_geodesic


def radial_length(r0, a11=1.0):
    return quad(lambda r: 0.5 * math.sqrt(1 - r * r) / math.sqrt(a11), r0, 1, epsabs=1e-15)[0]


def unit_velocity(m, q, d):
    d = np.asarray(d, dtype=float)
    return TangentPoint(q, d / eval_G(m, TangentPoint(q, d)).F)


def test_geodesic_on_harmonic_ellipse(s1):
    m, _ = s1
    c = geodesic_ivp(m, unit_velocity(m, [0.5, 0], [0, 1]), 0.5)
    q = c.evaluate(np.linspace(0, 1, 400))[0]
    assert np.max(np.abs((q[:, 0] / 0.5) ** 2 + q[:, 1] ** 2 / 0.75 - 1)) <= 1e-6
    assert c.length == pytest.approx(0.5, abs=1e-12)
    assert geodesic_ivp(m, unit_velocity(m, [0.5, 0], [0, 1]), 0.0).m == 1
    with pytest.raises(ValidationError):
        geodesic_ivp(m, TangentPoint([0.5, 0], [0, 1]), 0.5)


def test_geodesic_round_trip(s3):
    m, _ = s3
    c = geodesic_ivp(m, unit_velocity(m, [0.1, -0.2], [1, 0.3]), 0.4)
    orbit, _ = geodesic_to_orbit(m, c)
    back = orbit_to_geodesic(m, orbit)
    assert back.length == pytest.approx(c.length, abs=1e-8)
    s = np.linspace(0, 1, 101)
    np.testing.assert_allclose(back.evaluate(s)[0], c.evaluate(s)[0], atol=1e-8)


def test_energy_functional(s1):
    m, _ = s1
    L = radial_length(0.8)

    def uniform(s, sc):
        q = np.stack([0.8 + 0.2 * s, 0 * s], axis=1)
        return q, np.tile([0.2, 0.0], (len(s), 1))

    # constant-speed radial segment: energy = length^2
    res = minimizer_to_boundary(m, *(s1[1:]), [0.8, 0])
    assert energy_functional(m, res.curve) == pytest.approx(L**2, rel=1e-8)
    assert L**2 == pytest.approx(1.671e-3, abs=1e-6)
    # the same trace at uniform Euclidean speed costs strictly more
    J = energy_functional(m, DiscreteCurve(np.array([[0.8, 0], [1.0, 0]]), None, "uniform", evaluator=uniform,
                                           boundary_ends=(False, True)))
    exact = quad(lambda r: 0.25 * (1 - r * r) * 0.04, 0.8, 1)[0] / 0.2
    assert J == pytest.approx(exact, rel=1e-10)
    assert J > L**2
    assert energy_functional(m, DiscreteCurve(np.array([[0.3, 0.1]]))) == 0.0


def test_minimizer_radial(s1):
    m, w = s1
    for use_collar in (True, False):
        res = minimizer_to_boundary(m, w, [0.8, 0], use_collar=use_collar)
        assert res.J_value == pytest.approx(radial_length(0.8) ** 2, abs=1e-9)
        np.testing.assert_allclose(res.endpoint, [1, 0], atol=1e-6)
        assert res.first_variation_residual <= 1e-6
        q = res.curve.evaluate(np.linspace(0, 1, 50))[0]
        assert np.max(np.abs(q[:, 1])) <= 1e-6


def test_minimizer_centre_degenerate(s1):
    m, w = s1
    res = minimizer_to_boundary(m, w, [0, 0])
    assert res.J_value == pytest.approx((math.pi / 8) ** 2, abs=1e-7)
    assert res.multiplicity_hint > 1
    np.testing.assert_allclose(np.linalg.norm(res.endpoint), 1.0, atol=1e-9)


def test_minimizer_anisotropic_axis(s2):
    m, w = s2
    res = minimizer_to_boundary(m, w, [0.9, 0])
    assert res.J_value == pytest.approx(radial_length(0.9) ** 2, rel=1e-7)
    np.testing.assert_allclose(res.endpoint, [1, 0], atol=1e-6)


def test_energy_bounds(s2):
    m, w = s2
    b = convexity_constants(m, w, 500)
    res = minimizer_to_boundary(m, w, [0.5, 0.1])
    assert energy_lower_bound(m, res.curve, b.nu_max) <= res.J_value * (1 + 1e-9)
    assert res.J_value <= energy_upper_bound(m, w, b.nu_min) * (1 + 1e-9)


def test_first_variation(s1):
    m, _ = s1
    geo = geodesic_ivp(m, unit_velocity(m, [-0.5, 0.5], [1, 0]), 0.6)
    assert first_variation_residual(m, geo) <= 1e-6

    # the straight line y = 0.5 is not a geodesic (geodesics are ellipse arcs)
    def straight(s, sc):
        x = -0.5 + s
        q = np.stack([x, 0.5 + 0 * s], axis=1)
        return q, np.tile([1.0, 0.0], (len(s), 1))

    line = DiscreteCurve(np.array([[-0.5, 0.5], [0.5, 0.5]]), None, "uniform", evaluator=straight)
    assert first_variation_residual(m, line) > 1e-3
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        assert first_variation_residual(m, DiscreteCurve(np.array([[0, 0], [0.1, 0]]))) == 0.0
    assert any(issubclass(r.category, UnderspecifiedCurveWarning) for r in rec)
