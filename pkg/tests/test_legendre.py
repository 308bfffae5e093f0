import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from brakechords.errors import DegenerateConormal, WrongFamily
from brakechords.legendre import (
    eval_G,
    finsler_norm,
    metric_batch,
    normal_velocity,
    riemannian_oracle_G,
    to_momentum,
    to_velocity,
)
from brakechords.model import PhasePoint, TangentPoint

from .conftest import built

angle = st.floats(0.0, 2 * math.pi, allow_nan=False)
radius = st.floats(0.0, 0.95, allow_nan=False)
speed = st.floats(1e-3, 1e3, allow_nan=False)


def test_velocity_momentum_examples(s1, s2):
    m1, _ = s1
    np.testing.assert_allclose(to_velocity(m1, PhasePoint([0.6, 0], [0, 0.8])).v, [0, 2.5], atol=1e-13)
    np.testing.assert_array_equal(to_velocity(m1, PhasePoint([0.6, 0], [0, 0])).v, 0.0)
    np.testing.assert_allclose(to_velocity(m1, PhasePoint([0.6, 0], [0, 1.6])).v, [0, 5.0], atol=1e-13)
    np.testing.assert_allclose(to_momentum(m1, TangentPoint([0.6, 0], [0, 2.5])).p, [0, 0.8], atol=1e-13)
    np.testing.assert_allclose(to_momentum(s2[0], TangentPoint([0, 0], [1, 0])).p, [0.5, 0], atol=1e-13)
    np.testing.assert_array_equal(to_momentum(m1, TangentPoint([0.6, 0], [0, 0])).p, 0.0)


def test_metric_examples(s1, s2):
    m1, w1 = s1
    assert eval_G(m1, TangentPoint([0.6, 0], [0, 2.5])).G == pytest.approx(1.0, abs=1e-13)
    assert eval_G(m1, TangentPoint([0.6, 0], [0, 0])).G == 0.0
    assert eval_G(s2[0], TangentPoint([0, 0], [1, 0])).G == pytest.approx(0.25, abs=1e-14)
    assert riemannian_oracle_G(m1, TangentPoint([0.6, 0], [0, 2.5])) == pytest.approx(1.0)
    assert riemannian_oracle_G(s2[0], TangentPoint([0, 0], [1, 0])) == pytest.approx(0.25)
    for Q in w1.boundary_samples(8):
        assert riemannian_oracle_G(m1, TangentPoint(Q, [1.0, 1.0])) == pytest.approx(0.0, abs=1e-14)
    with pytest.raises(WrongFamily):
        riemannian_oracle_G(built("s3")[0], TangentPoint([0, 0], [1, 0]))


@settings(max_examples=60, deadline=None)
@given(r=radius, a=angle, b=angle, c=speed)
def test_legendre_round_trip(r, a, b, c):
    for name in ("s1", "s2", "s3"):
        m, w = built(name)
        q = r * w.radial_boundary_point([math.cos(a), math.sin(a)])
        v = c * np.array([math.cos(b), math.sin(b)])
        p = to_momentum(m, TangentPoint(q, v)).p
        np.testing.assert_allclose(to_velocity(m, PhasePoint(q, p)).v, v, rtol=1e-9, atol=1e-12 * c)
        # G(q, dU/dp) = U and F is positively 1-homogeneous
        G = eval_G(m, TangentPoint(q, v)).G
        assert G == pytest.approx(float(m.kernel.U(q[None], p[None])[0]), rel=1e-8)
        F = finsler_norm(m, q[None], v[None])[0]
        assert finsler_norm(m, q[None], 3 * v[None])[0] == pytest.approx(3 * F, rel=1e-10)


def test_metric_derivatives_match_differences(s3):
    m, _ = s3
    q, v = np.array([0.2, 0.3]), np.array([1.3, -0.4])
    res = eval_G(m, TangentPoint(q, v))
    h = 1e-6
    E = np.eye(2)
    dv = [(metric_batch(m, q[None], (v + h * e)[None])[0][0] - metric_batch(m, q[None], (v - h * e)[None])[0][0])
          / (2 * h) for e in E]
    dq = [(metric_batch(m, (q + h * e)[None], v[None])[0][0] - metric_batch(m, (q - h * e)[None], v[None])[0][0])
          / (2 * h) for e in E]
    np.testing.assert_allclose(res.dGdv, dv, rtol=1e-7)
    np.testing.assert_allclose(res.dGdq, dq, rtol=1e-7)


def test_normal_velocity(s1, s3):
    m, _ = s1
    x = normal_velocity(m, [0.8, 0], [1, 0], [-1, 0])
    np.testing.assert_allclose(x.v, [-10 / 3, 0], atol=1e-12)
    np.testing.assert_allclose(normal_velocity(m, [0, 0.8], [0, 1], [0, -1]).v, [0, -10 / 3], atol=1e-12)
    assert eval_G(m, x).F == pytest.approx(1.0, abs=1e-12)
    assert abs(eval_G(m, x).dGdv @ [0, 1]) <= 1e-10
    # anisotropic metric: still orthogonal to the conormal's kernel
    n = np.array([0.6, 0.8])
    y = normal_velocity(s3[0], [0.3, 0.4], n, -n)
    assert abs(eval_G(s3[0], y).dGdv @ [-0.8, 0.6]) <= 1e-10
    with pytest.raises(DegenerateConormal):
        normal_velocity(m, [0.8, 0], [0, 0], [-1, 0])
