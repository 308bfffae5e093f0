import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from brakechords.errors import NoRoot, ValidationError
from brakechords.homogenize import EnergyShell, audit_bounds, eval_U, grad_U, homogenized, omega

from .conftest import built

angle = st.floats(0.0, 2 * math.pi, allow_nan=False)
radius = st.floats(0.0, 0.95, allow_nan=False)
scale = st.floats(0.05, 20.0, allow_nan=False)


def test_shell_scale(s1, s3):
    m1, _ = s1
    assert omega(m1, [0.6, 0], [0, 1]) == pytest.approx(0.8, abs=1e-14)
    assert omega(m1, [0, 0], [1, 0]) == pytest.approx(1.0, abs=1e-14)
    assert omega(s3[0], [0, 0], [1, 0]) == pytest.approx(0.9241764, abs=1e-7)
    with pytest.raises(NoRoot):
        omega(m1, [1.2, 0], [1, 0])
    with pytest.raises(ValidationError):
        omega(m1, [0, 0], [2, 0])


def test_homogenized_values(s1):
    m, _ = s1
    assert eval_U(m, [0.6, 0], [0, 0.8]) == pytest.approx(1.0, abs=1e-14)
    assert eval_U(m, [0.6, 0], [0, 0]) == 0.0
    assert eval_U(m, [0.6, 0], [0, 1.6]) == pytest.approx(4.0, abs=1e-13)
    dq, dp = grad_U(m, [0.6, 0], [0, 0.8])
    np.testing.assert_allclose(dp, [0, 2.5], atol=1e-13)
    np.testing.assert_allclose(dq, [1.875, 0], atol=1e-13)
    assert float(dp @ [0, 0.8]) == pytest.approx(2.0, abs=1e-13)
    with pytest.raises(ValidationError):
        grad_U(m, [0.6, 0], [0, 0])


@settings(max_examples=60, deadline=None)
@given(r=radius, a=angle, b=angle, t=scale)
def test_degree_two_homogeneity_and_euler(r, a, b, t):
    for name in ("s1", "s2", "s3"):
        m, w = built(name)
        q = r * w.radial_boundary_point([math.cos(a), math.sin(a)])
        p = np.array([math.cos(b), math.sin(b)])
        u = eval_U(m, q, p)
        assert eval_U(m, q, t * p) == pytest.approx(t * t * u, rel=1e-12)
        h = homogenized(m, q, p)
        assert float(h.dUdp @ p) == pytest.approx(2 * u, rel=1e-10)
        # U = 1 exactly on the energy shell
        ps = h.omega * p
        assert EnergyShell(m).contains(q, ps)
        assert eval_U(m, q, ps) == pytest.approx(1.0, abs=1e-12)


def test_gradient_matches_differences(s3):
    m, _ = s3
    q, p = np.array([0.3, -0.2]), np.array([0.7, 0.4])
    dq, dp = grad_U(m, q, p)
    h = 1e-6
    E = np.eye(2)
    fq = [(eval_U(m, q + h * e, p) - eval_U(m, q - h * e, p)) / (2 * h) for e in E]
    fp = [(eval_U(m, q, p + h * e) - eval_U(m, q, p - h * e)) / (2 * h) for e in E]
    np.testing.assert_allclose(dq, fq, rtol=1e-7)
    np.testing.assert_allclose(dp, fp, rtol=1e-7)


def test_audit_bounds(s1, s3):
    a1 = audit_bounds(*s1, nsamples=1000)
    assert min(a1.lower_margin, a1.upper_margin, a1.gradient_margin) >= -1e-10
    # identity Hessian: both bounds hold with equality
    assert max(abs(a1.lower_margin), abs(a1.upper_margin)) <= 1e-10
    a3 = audit_bounds(*s3, nsamples=1000)
    assert min(a3.lower_margin, a3.upper_margin) >= -1e-10
    with pytest.raises(ValidationError):
        audit_bounds(*s1, nsamples=0)
