import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from brakechords.curves import DiscreteCurve, EndpointMap, invert_monotone

unit = st.floats(0.0, 1.0, allow_nan=False)
ends = st.tuples(st.booleans(), st.booleans())


@settings(max_examples=200, deadline=None)
@given(w=unit, flags=ends)
def test_endpoint_map_inverts(w, flags):
    emap = EndpointMap(*flags)
    s, sc = emap.s(w), emap.sc(w)
    assert 0.0 <= s <= 1.0
    assert s + sc == pytest.approx(1.0, abs=1e-15)
    assert emap.w(s, sc) == pytest.approx(w, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(w=st.floats(1e-3, 1 - 1e-3), flags=ends)
def test_endpoint_map_derivative(w, flags):
    emap = EndpointMap(*flags)
    h = 1e-6
    fd = (emap.s(w + h) - emap.s(w - h)) / (2 * h)
    assert emap.ds_dw(w) == pytest.approx(fd, rel=1e-6, abs=1e-9)


def test_spline_curve_and_reversal():
    s = np.linspace(0, 1, 21)
    nodes = np.stack([s, s**2], axis=1)
    c = DiscreteCurve(nodes, s)
    q, v = c.evaluate(np.array([0.25, 0.5]))
    np.testing.assert_allclose(q, [[0.25, 0.0625], [0.5, 0.25]], atol=1e-12)
    np.testing.assert_allclose(v, [[1, 0.5], [1, 1.0]], atol=1e-10)
    r = c.reversed()
    qr, vr = r.evaluate(np.array([0.75]))
    np.testing.assert_allclose(qr[0], [0.25, 0.0625], atol=1e-12)
    np.testing.assert_allclose(vr[0], [-1, -0.5], atol=1e-10)
    assert len(c.to_rows()) == 21


def test_curve_validation():
    with pytest.raises(ValueError):
        DiscreteCurve(np.zeros((3, 2)), [0.0, 0.7, 0.5])
    with pytest.raises(ValueError):
        DiscreteCurve(np.array([[0.0, np.nan]]))
    with pytest.raises(ValueError):
        DiscreteCurve(np.zeros((2, 2)), parametrization="arbitrary")
    single = DiscreteCurve(np.zeros((1, 2)))
    q, v = single.evaluate(np.array([0.3]))
    np.testing.assert_array_equal(v, 0.0)


def test_invert_monotone():
    x = invert_monotone(lambda t: t**3, np.array([0.001, 0.125, 0.9]), 0.0, 1.0)
    np.testing.assert_allclose(x, np.cbrt([0.001, 0.125, 0.9]), atol=1e-15)
