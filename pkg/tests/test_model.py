import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from brakechords.errors import DimensionMismatch, NonFiniteInput, ValidationError
from brakechords.model import (
    HamiltonianModel,
    PhasePoint,
    Polynomial,
    PotentialWell,
    Region,
    boundary_conormal,
    convexity_constants,
    eval_derivatives,
    eval_hamiltonian,
    well_classify,
)

from .conftest import built

finite = st.floats(-2.0, 2.0, allow_nan=False)
vec2 = st.tuples(finite, finite).map(np.array)


def test_hamiltonian_values(s1, s3):
    m1, _ = s1
    m3, _ = s3
    assert eval_hamiltonian(m1, PhasePoint([0.6, 0], [0, 0.8])) == pytest.approx(0.5, abs=1e-15)
    assert eval_hamiltonian(m1, PhasePoint([1, 0], [0, 0])) == pytest.approx(0.5, abs=1e-15)
    assert eval_hamiltonian(m3, PhasePoint([0, 0], [1, 0])) == pytest.approx(0.6, abs=1e-15)


def test_derivatives_closed_form(s1, s3):
    dq, dp, hp = eval_derivatives(s1[0], PhasePoint([0.6, 0], [0, 0.8]))
    np.testing.assert_allclose(dq, [0.6, 0], atol=1e-15)
    np.testing.assert_allclose(dp, [0, 0.8], atol=1e-15)
    np.testing.assert_allclose(hp, np.eye(2), atol=1e-15)
    hp3 = eval_derivatives(s3[0], PhasePoint([0, 0], [1, 0]))[2]
    np.testing.assert_allclose(hp3, np.diag([2.2, 1.0]), atol=1e-14)


@settings(max_examples=50, deadline=None)
@given(q=vec2, p=vec2)
def test_evenness_and_zero_momentum(q, p):
    for name in ("s1", "s2", "s3"):
        m, _ = built(name)
        assert m.H(q, p) == pytest.approx(m.H(q, -p), rel=1e-14, abs=1e-14)
        assert m.H(q, np.zeros(2)) == pytest.approx(m.V(q), abs=1e-15)
        np.testing.assert_array_equal(m.dH(q, np.zeros(2))[1], 0.0)


@settings(max_examples=30, deadline=None)
@given(q=vec2, p=vec2)
def test_analytic_derivatives_match_differences(q, p):
    m, _ = built("s3")
    exact = m.dH(q, p)
    approx = m.fd_derivatives(q, p)
    for a, b in zip(exact, approx):
        np.testing.assert_allclose(a, b, rtol=1e-6, atol=1e-6)


def test_convexity_constants(s1, s2, s3):
    b1 = convexity_constants(*s1, nsamples=500)
    assert b1.nu_min == pytest.approx(1.0) and b1.nu_max == pytest.approx(1.0)
    b2 = convexity_constants(*s2, nsamples=500)
    assert b2.nu_min == pytest.approx(0.5) and b2.nu_max == pytest.approx(1.0)
    b3 = convexity_constants(*s3, nsamples=500)
    assert b3.nu_min == pytest.approx(1.0) and 1.0 < b3.nu_max <= 2.2 + 1e-12


def test_classify(s1):
    _, w = s1
    assert well_classify(w, [0, 0]) is Region.INTERIOR
    assert well_classify(w, [1, 0]) is Region.BOUNDARY
    assert well_classify(w, [1.1, 0]) is Region.EXTERIOR


def test_conormal(s1, s2):
    np.testing.assert_allclose(boundary_conormal(s1[1], [1, 0]), [1, 0])
    np.testing.assert_allclose(boundary_conormal(s1[1], [0, 1]), [0, 1])
    np.testing.assert_allclose(boundary_conormal(s2[1], [1, 0]), [1, 0])


def test_boundary_geometry(s2):
    m, w = s2
    Q = w.boundary_samples(32)
    np.testing.assert_allclose(m.kernel.V(Q), 0.5, atol=1e-14)
    np.testing.assert_allclose(w.radial_boundary_point([0, 1]), [0, 0.5], atol=1e-14)
    assert w.distance_to_boundary([0.0, 0.4]) == pytest.approx(0.1, abs=1e-10)


def test_invalid_models():
    quad = Polynomial.quadratic([1.0, 1.0])
    with pytest.raises(ValidationError):
        HamiltonianModel(np.eye(2), quad, 0.5, beta=-0.1)
    with pytest.raises(ValidationError):
        HamiltonianModel(np.diag([1.0, -1.0]), quad, 0.5)
    with pytest.raises(ValidationError):
        HamiltonianModel([[1.0, 0.3], [0.0, 1.0]], quad, 0.5)
    with pytest.raises(DimensionMismatch):
        HamiltonianModel(np.eye(3), quad, 0.5)
    with pytest.raises(NonFiniteInput):
        PhasePoint([np.nan, 0], [0, 0])
    m = HamiltonianModel(np.eye(2), quad, 0.5)
    with pytest.raises(ValidationError):
        PotentialWell(m, [2.0, 0.0])
    with pytest.raises(DimensionMismatch):
        m.H([0, 0, 0], [0, 0, 0])
