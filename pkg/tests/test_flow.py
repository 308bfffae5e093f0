import math

import numpy as np
import pytest

from brakechords.errors import ImmediateEscape, StepFailure, ValidationError
from brakechords.flow import (
    boundary_expansion_check,
    collar_chart,
    estimate_epsilon_bar,
    integrate_H,
    integrate_U,
    launch_from_boundary,
    rim_time_audit,
)
from brakechords.legendre import momenta
from brakechords.model import PhasePoint


def test_harmonic_half_period(s1):
    m, _ = s1
    tr = integrate_H(m, PhasePoint([1, 0], [0, 0]), (0, math.pi), tol=1e-12)
    np.testing.assert_allclose(tr.q[-1], [-1, 0], atol=1e-8)
    np.testing.assert_allclose(tr.p[-1], [0, 0], atol=1e-8)
    t = np.linspace(0, math.pi, 50)
    np.testing.assert_allclose(tr.state_at(t)[0][:, 0], np.cos(t), atol=1e-8)


def test_zero_span_and_backward(s1):
    m, _ = s1
    z = PhasePoint([0.3, 0.1], [0.2, -0.4])
    tr = integrate_H(m, z, (0, 0))
    np.testing.assert_array_equal(tr.q[0], z.q)
    back = integrate_H(m, z, (0, -1.0), tol=1e-12)
    assert back.span == (-1.0, 0.0)
    np.testing.assert_allclose(back.q[-1], z.q, atol=1e-15)
    fwd = integrate_H(m, PhasePoint(back.q[0], back.p[0]), (0, 1.0), tol=1e-12)
    np.testing.assert_allclose(fwd.q[-1], z.q, atol=1e-9)


def test_energy_conservation(s2):
    m, _ = s2
    tr = integrate_H(m, PhasePoint([1, 0], [0, 0]), (0, 10), tol=1e-12)
    assert np.max(np.abs(m.kernel.H(tr.q, tr.p) - 0.5)) <= 1e-8


def test_unit_flow_drift_and_trace(s1):
    m, _ = s1
    q0 = np.array([0.5, 0.0])
    v = np.array([0.0, 1.0])
    p0 = momenta(m, q0[None], v[None])[0]
    p0 /= math.sqrt(m.kernel.U(q0[None], p0[None])[0])
    tr = integrate_U(m, PhasePoint(q0, p0), (0, 0.3), tol=1e-12)
    u = m.kernel.U(tr.q, tr.p)
    assert np.max(np.abs(u - 1)) <= 1e-10
    # projection of the harmonic orbit through (q0, tangential): an ellipse
    x, y = tr.q[:, 0], tr.q[:, 1]
    assert np.max(np.abs((x / 0.5) ** 2 + y**2 / 0.75 - 1)) <= 1e-6
    still = integrate_U(m, PhasePoint(q0, p0), (0, 0))
    np.testing.assert_array_equal(still.q[0], q0)
    with pytest.raises(ValidationError):
        integrate_U(m, PhasePoint(q0, 2 * p0), (0, 0.1))


def test_boundary_launch(s1, s2):
    m1, w1 = s1
    tr = launch_from_boundary(m1, w1, [1, 0], 1.0)
    t = np.linspace(0, 1, 30)
    np.testing.assert_allclose(tr.state_at(t)[0], np.stack([np.cos(t), 0 * t], axis=1), atol=1e-8)
    assert len(launch_from_boundary(m1, w1, [1, 0], 0.0).grid) == 1
    m2, w2 = s2
    tr2 = launch_from_boundary(m2, w2, [1, 0], 2.0)
    q = tr2.state_at(t * 2)[0]
    np.testing.assert_allclose(q[:, 0], np.cos(2 * t), atol=1e-8)
    np.testing.assert_allclose(q[:, 1], 0.0, atol=1e-8)
    with pytest.raises((ValidationError, ImmediateEscape)):
        launch_from_boundary(m1, w1, [0.5, 0], 1.0)


def test_collar_chart(s1):
    m, w = s1
    cc = collar_chart(m, w, [0.8, 0])
    assert cc.t_y == pytest.approx(math.acos(0.8), abs=1e-9)
    np.testing.assert_allclose(cc.Q_y, [1, 0], atol=1e-9)
    cc = collar_chart(m, w, [0, 0.9])
    assert cc.t_y == pytest.approx(0.4510268, abs=1e-7)
    np.testing.assert_allclose(cc.Q_y, [0, 1], atol=1e-9)
    assert collar_chart(m, w, [1, 0]).t_y == 0.0


def test_epsilon_bar(s1, s3):
    # S1: d2V/dt2 = 1 - 4V on the shell, so the rim test holds exactly up to 0.2
    eps = estimate_epsilon_bar(*s1)
    assert 0.8 * 0.2 <= eps <= 0.2
    assert estimate_epsilon_bar(*s3) > 0
    with pytest.raises(ValidationError):
        estimate_epsilon_bar(*s1, nsamples=0)


def test_rim_audit(s1, s2):
    m, w = s1
    tr = integrate_H(m, PhasePoint([1, 0], [0, 0]), (0, 2 * math.pi), tol=1e-12)
    rep = rim_time_audit(tr, 0.5, m)
    complete = rep.complete_lengths
    assert complete and all(abs(x - math.pi / 2) <= 1e-6 for x in complete)
    assert not rep.flagged
    # the circular orbit keeps V = 1/4, below the rim V >= 0.4 for eps = 0.2
    r = math.sqrt(0.5)
    core = integrate_H(m, PhasePoint([r, 0], [0, r]), (0, 2 * math.pi), tol=1e-12)
    assert rim_time_audit(core, 0.2, m).intervals == []
    m2, _ = s2
    tr2 = integrate_H(m2, PhasePoint([1, 0], [0, 0]), (0, 2 * math.pi), tol=1e-12)
    rep2 = rim_time_audit(tr2, 0.2, m2)
    assert len(rep2.complete_lengths) >= 1 and all(np.isfinite(rep2.complete_lengths))
    with pytest.raises(ValidationError):
        unit = integrate_U(m, PhasePoint([0, 0], [0.5, 0]), (0, 0.1))
        rim_time_audit(unit, 0.5, m)


def test_boundary_expansion(s1):
    m, w = s1
    rep = boundary_expansion_check(m, w, [1, 0], [0.05, 0.1])
    assert rep.remainder[1] == pytest.approx(0.1 - math.sin(0.1), rel=1e-5)
    rep = boundary_expansion_check(m, w, [1, 0], np.linspace(0.02, 0.2, 10))
    assert rep.slope == pytest.approx(3.0, abs=0.05)
    with pytest.raises(ValidationError):
        boundary_expansion_check(m, w, [1, 0], [0.0, 0.1])


def test_step_budget_is_reported(s2):
    m, _ = s2
    with pytest.raises(StepFailure):
        integrate_H(m, PhasePoint([1, 0], [0, 0]), (0, 100), tol=1e-12, max_steps=5)
