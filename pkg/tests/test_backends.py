"""The compiled kernel and the numpy fallback must agree."""

import math
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from brakechords import _backend
from brakechords.flow import integrate_H, integrate_U
from brakechords.model import PhasePoint, scenario

pytestmark = pytest.mark.skipif("cython" not in _backend.available_backends(),
                                reason="compiled kernel not built")

NAMES = ("s1", "s2", "s3")


def pair(name):
    return scenario(name, backend="cython")[0], scenario(name, backend="python")[0]


def test_default_prefers_compiled():
    assert _backend.DEFAULT_BACKEND == "cython"
    assert scenario("s1")[0].backend == "cython"
    with pytest.raises(ValueError):
        _backend.kernel_class("fortran")


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_pointwise_kernels_agree(seed):
    rng = np.random.default_rng(seed)
    Q = rng.uniform(-0.4, 0.4, size=(16, 2))
    P = rng.normal(size=(16, 2))
    Th = P / np.linalg.norm(P, axis=1, keepdims=True)
    for name in NAMES:
        c, p = pair(name)
        a, b = c.kernel, p.kernel
        for fn, args in (("V", (Q,)), ("gradV", (Q,)), ("hessV", (Q,)), ("K", (P,)), ("Kp", (P,)),
                         ("Kpp", (P,)), ("H", (Q, P)), ("omega", (Q, Th)), ("U", (Q, P))):
            np.testing.assert_allclose(getattr(a, fn)(*args), getattr(b, fn)(*args), rtol=1e-12, atol=1e-14)
        for x, y in zip(a.gradU(Q, P), b.gradU(Q, P)):
            np.testing.assert_allclose(x, y, rtol=1e-11, atol=1e-13)
        V = b.gradU(Q, P)[2]
        np.testing.assert_allclose(a.to_momentum(Q, V), b.to_momentum(Q, V), rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("name", NAMES)
def test_integrators_agree(name):
    c, p = pair(name)
    z = PhasePoint([0.3, -0.1], [0.2, 0.4])
    tc = integrate_H(c, z, (0, 3.0), tol=1e-12)
    tp = integrate_H(p, z, (0, 3.0), tol=1e-12)
    np.testing.assert_allclose(tc.q[-1], tp.q[-1], atol=1e-10)
    u = math.sqrt(float(c.kernel.U(z.q[None], z.p[None])[0]))
    x = PhasePoint(z.q, z.p / u)
    uc = integrate_U(c, x, (0, 0.3), tol=1e-12)
    up = integrate_U(p, x, (0, 0.3), tol=1e-12)
    np.testing.assert_allclose(uc.q[-1], up.q[-1], atol=1e-10)


def test_environment_forces_fallback():
    env = {**os.environ, "BRAKECHORDS_PURE_PYTHON": "1"}
    code = "from brakechords import _backend, scenario; print(_backend.DEFAULT_BACKEND, scenario('s1')[0].backend)"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["python", "python"]
