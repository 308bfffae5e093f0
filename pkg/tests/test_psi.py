import math

import numpy as np
import pytest

from brakechords.errors import EmptyRegion, ValidationError
from brakechords.psi import (
    certify_concavity,
    collar_points,
    eval_psi,
    grad_psi,
    gradient_check,
    hessian_along,
    hessian_estimate,
    level_set_samples,
    omega_region,
    psi_field,
    psi_max,
)

from .conftest import certified_region


def radial_psi(r):
    """S1 oracle: (int_r^1 sqrt(1 - s^2) / 2 ds)^2."""
    r = np.asarray(r, dtype=float)
    return (0.25 * (math.pi / 2 - np.arcsin(r) - r * np.sqrt(1 - r * r))) ** 2


# the level sets of psi in S1 are circles; tangent geodesics enter them iff r > 1/sqrt(2)
S1_CONCAVITY_LEVEL = float(radial_psi(1 / math.sqrt(2)))


def test_psi_values(s1):
    m, w = s1
    assert eval_psi(m, w, [0, 0]).psi == pytest.approx((math.pi / 8) ** 2, abs=1e-9)
    assert eval_psi(m, w, [0.8, 0]).psi == pytest.approx(1.671e-3, abs=1e-6)
    assert eval_psi(m, w, [0.8, 0]).psi == pytest.approx(radial_psi(0.8), rel=1e-9)
    assert eval_psi(m, w, [1, 0]).psi == 0.0
    with pytest.raises(ValidationError):
        eval_psi(m, w, [1.2, 0])


def test_psi_vanishes_monotonically_at_the_boundary(s2):
    m, w = s2
    r = np.linspace(0.9, 0.9999, 12)
    vals = [eval_psi(m, w, [x, 0.0]).psi for x in r]
    assert np.all(np.diff(vals) < 0)
    assert vals[-1] < 1e-7


def test_gradient(s1, s3):
    m, w = s1
    g = grad_psi(m, w, [0.8, 0])
    np.testing.assert_allclose(g, [-0.024525, 0], atol=1e-6)
    assert abs(g[1]) <= 1e-12
    check = gradient_check(m, w, [[0.8, 0]])
    assert check.max_relative_error <= 1e-4
    m3, w3 = s3
    pts = collar_points(m3, w3, 10, seed=3)
    assert gradient_check(m3, w3, pts).max_relative_error <= 1e-4


def test_hessian_along(s1, s3):
    m, w = s1
    est = hessian_estimate(m, w, [0.8, 0], [0, 1])
    assert est.value > 0 and est.halving_ratio <= 0.05
    assert hessian_along(m, w, [0.8, 0], [0, 2]) == pytest.approx(4 * est.value, rel=1e-9)
    with pytest.raises(ValidationError):
        hessian_along(m, w, [0.8, 0], [0, 0])
    with pytest.raises(ValidationError):
        hessian_along(m, w, [0.8, 0], [1, 0])
    m3, w3 = s3
    y = collar_points(m3, w3, 1, seed=7)[0]
    g = grad_psi(m3, w3, y)
    assert hessian_along(m3, w3, y, [-g[1], g[0]]) > 0


def test_hessian_sign_change_at_threshold(s1):
    m, w = s1
    assert hessian_along(m, w, [0.70, 0], [0, 1]) < 0 < hessian_along(m, w, [0.72, 0], [0, 1])


def test_level_set_is_a_circle(s1):
    m, w = s1
    pts, single = level_set_samples(m, w, 0.004, k=64)
    assert single and len(pts) == 64
    r = np.linalg.norm(pts, axis=1)
    np.testing.assert_allclose(radial_psi(r), 0.004, rtol=1e-8)


def test_s1_certification_threshold(s1):
    m, w = s1
    above = omega_region(m, w, 0.006, budget=50)
    assert not above.concavity_certificate.passed
    assert above.concavity_certificate.worst.value < 0
    below = omega_region(m, w, 0.0045, budget=50)
    assert below.certified
    assert 0.0045 < S1_CONCAVITY_LEVEL < 0.006


def test_empty_region(s1):
    m, w = s1
    with pytest.raises(EmptyRegion):
        omega_region(m, w, psi_max(m, w) * 1.01)
    with pytest.raises(ValidationError):
        omega_region(m, w, -1.0)


def test_anisotropic_region_encloses_centre(s2):
    region = certified_region("s2")
    assert region.certified and region.homeomorphism_check
    pts = region.boundary_samples
    ang = np.unwrap(np.arctan2(pts[:, 1], pts[:, 0]))
    assert abs(abs(ang[-1] - ang[0]) - 2 * math.pi) < 0.5


def test_certificate_input_checks(s1):
    m, w = s1
    with pytest.raises(ValidationError):
        certify_concavity(m, w, 0.004, np.zeros((0, 2)))


def test_euclidean_disc_is_not_concave(s1):
    m, w = s1
    centre, radius = np.array([0.2, 0.0]), 0.2

    def field(Y):
        return 0.3 - np.linalg.norm(np.atleast_2d(Y) - centre, axis=1)

    ang = np.linspace(0, 2 * math.pi, 16, endpoint=False)
    pts = centre + radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    cert = certify_concavity(m, w, 0.1, pts, field=field)
    assert not cert.passed
    assert cert.worst.value < 0


def test_psi_field_matches_radial_oracle(s1):
    m, w = s1
    grid = psi_field(m, w, resolution=24)
    X, Y = np.meshgrid(grid.xs, grid.ys)
    ok = np.isfinite(grid.values)
    assert ok.sum() > 50
    np.testing.assert_allclose(grid.values[ok], radial_psi(np.hypot(X[ok], Y[ok])), rtol=1e-7, atol=1e-12)
