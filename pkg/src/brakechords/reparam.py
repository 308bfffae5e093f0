"""Conversion between Finsler-arclength and physical-time parametrizations.

On the energy shell ``U' = phi * H'`` with ``phi = 2 / <H_p, p>``. A
constant-speed curve ``gamma`` with ``G(gamma, gamma') = c`` is therefore the
trace of a solution of Hamilton's equations, reached at the times

    t(s) = sqrt(c) * int_0^s phi(gamma, gamma'/sqrt(c)) ds'.

Conversely a solution with ``H = E`` has Finsler speed ``F(q, qdot) =
<H_p, p>/2 = 1/phi``. At a boundary endpoint ``phi`` blows up like
``(1 - s)^(-2/3)``; the cubic endpoint substitution of :mod:`curves` removes
the singularity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import CubicHermiteSpline, CubicSpline

from .curves import DiscreteCurve, EndpointMap
from .errors import DegenerateMomentum, NonConvergentQuadrature, ValidationError, ZeroLength
from .flow import CONSERVED_H, Trajectory
from .homogenize import _interior
from .legendre import eval_G, momenta
from .model import HamiltonianModel, TangentPoint

_GL_X, _GL_W = np.polynomial.legendre.leggauss(10)
_GL2_X, _GL2_W = np.polynomial.legendre.leggauss(20)
# maps rate values at the 10 Gauss nodes to Legendre coefficients
_LEG_FIT = np.linalg.inv(np.polynomial.legendre.legvander(_GL_X, len(_GL_X) - 1))


@dataclass(frozen=True)
class ReparamMap:
    """Sampled time reparametrization ``s -> t(s)`` of a constant-speed curve."""

    s_grid: np.ndarray
    t_values: np.ndarray
    c_gamma: float
    time_of: Callable[[np.ndarray], np.ndarray] | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        s = np.asarray(self.s_grid, dtype=float)
        t = np.asarray(self.t_values, dtype=float)
        if s.shape != t.shape or s.ndim != 1:
            raise ValidationError("s_grid and t_values must be matching 1-d arrays")
        if len(t) > 1 and (np.any(np.diff(t) <= 0) or np.any(np.diff(s) <= 0)):
            raise ValidationError("reparametrization must be strictly increasing")
        if not (self.c_gamma > 0 and np.all(np.isfinite(t))):
            raise ValidationError("speed must be positive and times finite")
        object.__setattr__(self, "s_grid", s)
        object.__setattr__(self, "t_values", t)

    @property
    def total_time(self) -> float:
        return float(self.t_values[-1])

    def __call__(self, s) -> np.ndarray:
        s = np.atleast_1d(np.asarray(s, dtype=float))
        if self.time_of is not None:
            return self.time_of(s)
        return np.interp(s, self.s_grid, self.t_values)

    def to_rows(self) -> list[list[float]]:
        """CSV rows ``(s, t)``."""
        return [[float(a), float(b)] for a, b in zip(self.s_grid, self.t_values)]


def _phi_batch(model: HamiltonianModel, P: np.ndarray) -> np.ndarray:
    return 2.0 / np.sum(model.kernel.Kp(P) * P, axis=1)


def eval_phi(model: HamiltonianModel, x: TangentPoint, check: float = 1e-8) -> float:
    """Ratio ``|U'| / |H'|`` at the momentum of the unit vector ``x``.

    Computed by the shell identity ``phi = 2 / <H_p, p>`` and cross-checked
    against the direct ratio of gradient norms.
    """
    q = _interior(model, x.q)
    F = eval_G(model, x).F
    if abs(F - 1.0) > 1e-8:
        raise ValidationError(f"velocity must have unit Finsler norm (F = {F!r})")
    P = momenta(model, q[None], x.v[None])
    if not np.any(P):
        raise DegenerateMomentum("momentum vanishes")
    phi = float(_phi_batch(model, P)[0])
    _, uq, up = model.kernel.gradU(q[None], P)
    dU = math.hypot(np.linalg.norm(uq), np.linalg.norm(up))
    dH = math.hypot(np.linalg.norm(model.kernel.gradV(q[None])), np.linalg.norm(model.kernel.Kp(P)))
    ratio = dU / dH
    if abs(ratio - phi) > check * phi:
        raise NonConvergentQuadrature(f"shell identity {phi!r} disagrees with norm ratio {ratio!r}")
    return phi


def _boundary_ends(model: HamiltonianModel, first: np.ndarray, last: np.ndarray, flags) -> tuple[bool, bool]:
    tol = 1e-9 * (1 + abs(model.energy))
    gaps = model.energy - model.kernel.V(np.vstack([first, last]))
    return bool(flags[0] or gaps[0] <= tol), bool(flags[1] or gaps[1] <= tol)


def _bracketed_newton(f, df, a, b, iters: int = 80, xtol: float = 1e-15):
    """Vectorized safeguarded Newton for increasing ``f`` with ``f(a) <= 0 <= f(b)``."""
    a, b = a.copy(), b.copy()
    x = 0.5 * (a + b)
    for _ in range(iters):
        fx = f(x)
        a = np.where(fx <= 0, x, a)
        b = np.where(fx > 0, x, b)
        d = df(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            xn = x - fx / d
        bad = ~np.isfinite(xn) | (xn <= a) | (xn >= b)
        xn = np.where(bad, 0.5 * (a + b), xn)
        if np.all(np.abs(xn - x) <= xtol * (1 + np.abs(x))):
            return xn
        x = xn
    return x


class _PanelQuadrature:
    """Adaptive Gauss-Legendre panels for a smooth rate on ``[0, 1]``.

    Each accepted panel keeps the Legendre interpolant of the rate at its
    nodes, so partial integrals are cheap polynomial evaluations. Near the
    right end, where the integral up to ``1`` may be far below the rounding
    level of the total, :meth:`tail` integrates directly.
    """

    def __init__(self, rate, tol: float, start=8, max_depth: int = 40, max_panels: int = 200000):
        init = np.linspace(0, 1, start + 1) if np.isscalar(start) else np.asarray(start, dtype=float)
        a, b = init[:-1], init[1:]
        done_a, done_b, done_f = [], [], []
        ok = np.zeros(0, dtype=bool)
        for _ in range(max_depth + 1):
            m = 0.5 * (a + b)
            whole, _ = self._rule(rate, a, b)
            left, fl = self._rule(rate, a, m)
            right, fr = self._rule(rate, m, b)
            if not np.all(np.isfinite(whole + left + right)):
                raise NonConvergentQuadrature("integrand is not finite")
            ok = np.abs(left + right - whole) <= tol * (b - a)
            done_a += [a[ok], m[ok]]
            done_b += [m[ok], b[ok]]
            done_f += [fl[ok], fr[ok]]
            if ok.all():
                break
            a, b, m = a[~ok], b[~ok], m[~ok]
            if 2 * len(a) > max_panels:
                break
            a, b = np.concatenate([a, m]), np.concatenate([m, b])
        if not ok.all():
            raise NonConvergentQuadrature("adaptive quadrature did not converge; "
                                          "integrand does not match the boundary profile")
        starts = np.concatenate(done_a)
        order = np.argsort(starts)
        starts = starts[order]
        ends = np.concatenate(done_b)[order]
        fvals = np.concatenate(done_f)[order]
        half = 0.5 * (ends - starts)
        # Legendre coefficients of the rate, then of its antiderivative from the panel start
        coef = fvals @ _LEG_FIT.T
        self.anti = np.polynomial.legendre.legint(coef, lbnd=-1, axis=1) * half[:, None]
        values = self.anti @ np.ones(self.anti.shape[1])
        self.rate = rate
        self.edges = np.append(starts, ends[-1])
        self.cumulative = np.concatenate([[0.0], np.cumsum(values)])

    @staticmethod
    def _rule(rate, a, b):
        nodes = (0.5 * (a + b))[:, None] + (0.5 * (b - a))[:, None] * _GL_X[None]
        vals = rate(nodes.ravel()).reshape(nodes.shape)
        return 0.5 * (b - a) * (vals @ _GL_W), vals

    @property
    def total(self) -> float:
        return float(self.cumulative[-1])

    def _panel(self, x):
        return np.clip(np.searchsorted(self.edges, x, side="right") - 1, 0, len(self.edges) - 2)

    def __call__(self, x) -> np.ndarray:
        """Integral from 0 to ``x`` (vectorized)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        k = self._panel(x)
        a, b = self.edges[k], self.edges[k + 1]
        local = np.clip((2 * x - a - b) / (b - a), -1.0, 1.0)
        basis = np.polynomial.legendre.legvander(local, self.anti.shape[1] - 1)
        return self.cumulative[k] + np.sum(basis * self.anti[k], axis=1)

    def tail(self, x) -> np.ndarray:
        """Integral from ``x`` to the right end, accurate when small."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = self.cumulative[-1] - self(x)
        last = self._panel(x) == len(self.edges) - 2
        if last.any():
            xl = x[last]
            half = 0.5 * (self.edges[-1] - xl)
            nodes = (xl + half)[:, None] + half[:, None] * _GL2_X[None]
            vals = self.rate(nodes.ravel()).reshape(nodes.shape)
            out[last] = half * (vals @ _GL2_W)
        return out

    def invert(self, targets) -> np.ndarray:
        targets = np.asarray(targets, dtype=float)
        k = np.clip(np.searchsorted(self.cumulative, targets, side="right") - 1, 0, len(self.edges) - 2)
        return _bracketed_newton(lambda x: self(x) - targets, self.rate, self.edges[k], self.edges[k + 1])

    def invert_tail(self, targets) -> np.ndarray:
        targets = np.asarray(targets, dtype=float)
        tails = self.cumulative[-1] - self.cumulative
        k = np.clip(np.searchsorted(-tails, -targets, side="left") - 1, 0, len(self.edges) - 2)
        return _bracketed_newton(lambda x: targets - self.tail(x), self.rate, self.edges[k], self.edges[k + 1])


def hamilton_residual(model: HamiltonianModel, traj: Trajectory) -> float:
    """Largest ``|(qdot, pdot) - X_H(q, p)|`` at the nodes, derivatives from a spline of the nodes."""
    spl = CubicSpline(traj.grid, np.hstack([traj.q, traj.p]), axis=0)
    d = spl(traj.grid, 1)
    n = traj.n
    field_q = model.kernel.Kp(traj.p)
    field_p = -model.kernel.gradV(traj.q)
    return float(np.max(np.linalg.norm(d - np.hstack([field_q, field_p]), axis=1)))


def geodesic_to_orbit(model: HamiltonianModel, gamma: DiscreteCurve, tol: float = 1e-9,
                      npts: int = 2001, breaks=()) -> tuple[Trajectory, ReparamMap]:
    """Physical-time solution tracing the constant-speed curve ``gamma``.

    Returns the solution sampled on ``npts`` uniform times over ``[0, T]`` and
    the reparametrization ``s -> t``. Boundary endpoints are reached at rest.
    ``breaks`` lists parameters where ``gamma`` is pieced together; they
    become panel edges of the time quadrature.
    """
    c = float(gamma.speed)
    if not (c > 0 and math.isfinite(c)) or gamma.m < 2:
        raise ZeroLength("curve must have positive constant speed")
    ends = _boundary_ends(model, gamma.nodes[0], gamma.nodes[-1], gamma.boundary_ends)
    emap = EndpointMap(*ends)
    rootc = math.sqrt(c)

    def rate(w):
        q, v = gamma.evaluate_w(w)
        P = model.kernel.to_momentum(q, v / rootc)
        return rootc * _phi_batch(model, P) * emap.ds_dw(w)

    edges = np.unique(np.concatenate([np.linspace(0, 1, 9), emap.w(np.asarray(breaks, dtype=float))]))
    quad = _PanelQuadrature(rate, tol, start=edges)
    T = quad.total
    if not math.isfinite(T) or T <= 0:
        raise NonConvergentQuadrature("total time is not finite")
    t = np.linspace(0.0, T, npts)
    w = np.empty(npts)
    w[0], w[-1] = 0.0, 1.0
    w[1:-1] = quad.invert(t[1:-1])
    s = emap.s(w)
    q, v = gamma.evaluate_w(w)
    P = np.empty_like(q)
    P[1:-1] = momenta(model, q[1:-1], v[1:-1] / rootc)
    for idx, end, node in ((0, ends[0], gamma.nodes[0]), (-1, ends[1], gamma.nodes[-1])):
        if end:
            q[idx], P[idx] = node, 0.0
        else:
            P[idx] = momenta(model, q[idx][None], v[idx][None] / rootc)[0]
    ell = rootc * s
    speed = 0.5 * np.sum(model.kernel.Kp(P) * P, axis=1)
    dense_spline = CubicHermiteSpline(t, np.hstack([q, P, ell[:, None]]),
                                      np.hstack([model.kernel.Kp(P), -model.kernel.gradV(q), speed[:, None]]),
                                      axis=0)
    drift = float(np.max(np.abs(model.kernel.H(q, P) - model.energy)))
    traj = Trajectory(t, q, P, ell, CONSERVED_H, drift, False, "complete", lambda x: dense_spline(x))

    def time_of(sv):
        return quad(emap.w(sv)) if len(sv) else np.zeros(0)

    return traj, ReparamMap(s, t, c, time_of)


def _onto_shell(model: HamiltonianModel, q: np.ndarray, p: np.ndarray, limit: float = 1e-8) -> np.ndarray:
    """Move ``q`` along ``grad V`` so that ``H(q, p) = E``.

    Removes integration drift from the gap ``E - V``, which matters next to
    the boundary where the gap itself is tiny.
    """
    g = model.kernel.gradV(q)
    g2 = np.sum(g * g, axis=1)
    excess = model.kernel.H(q, p) - model.energy
    with np.errstate(divide="ignore", invalid="ignore"):
        step = -(excess / g2)[:, None] * g
    ok = (g2 > 1e-8) & (np.linalg.norm(step, axis=1) <= limit)
    return np.where(ok[:, None], q + step, q)


def orbit_to_geodesic(model: HamiltonianModel, traj: Trajectory, npts: int = 201,
                      energy_tol: float = 1e-8) -> DiscreteCurve:
    """Constant-speed reparametrization of a solution with ``H = E`` by Finsler arclength."""
    if traj.conserved != CONSERVED_H:
        raise ValidationError("orbit_to_geodesic needs an H-flow trajectory")
    if traj.tolerance > energy_tol:
        raise ValidationError(f"energy residual {traj.tolerance:.2e} exceeds {energy_tol:.1e}")
    if len(traj.grid) < 2 or traj.dense is None:
        raise ZeroLength("trajectory is a single state")
    t0, t1 = traj.span

    def speed(t):
        _, p, _ = traj.state_at(t)
        return 0.5 * np.sum(model.kernel.Kp(p) * p, axis=1)

    scale = t1 - t0
    steps = (traj.grid - t0) / scale
    steps[-1] = 1.0
    quad = _PanelQuadrature(lambda x: scale * speed(t0 + scale * x), 1e-12, start=steps)
    L = quad.total
    if not L > 1e-14:
        raise ZeroLength("trajectory has zero Finsler length")
    s_nodes = np.linspace(0.0, 1.0, npts)

    def tau(s, sc):
        x = np.empty_like(s)
        lo, hi = s <= 0, sc <= 0
        head = ~(lo | hi) & (s <= 0.5)
        back = ~(lo | hi) & (s > 0.5)
        x[lo], x[hi] = 0.0, 1.0
        x[head] = quad.invert(s[head] * L)
        x[back] = quad.invert_tail(sc[back] * L)
        return t0 + scale * x

    def evaluate(s, sc):
        q, p, _ = traj.state_at(tau(s, sc))
        q = _onto_shell(model, q, p)
        qdot = model.kernel.Kp(p)
        F = 0.5 * np.sum(qdot * p, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            vel = L * qdot / F[:, None]
        return q, vel

    nodes = evaluate(s_nodes, 1.0 - s_nodes)[0]
    nodes[0], nodes[-1] = traj.q[0], traj.q[-1]
    ends = _boundary_ends(model, traj.q[0], traj.q[-1], (False, False))
    return DiscreteCurve(nodes, s_nodes, "finsler-arclength", L**2, evaluate, ends)
