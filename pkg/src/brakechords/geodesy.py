"""Finsler geodesics, the curve energy and minimizers to the boundary.

The energy of a curve ``gamma: [0, 1] -> D`` is ``J(gamma) = int G(gamma, gamma') ds``;
for constant-speed curves it equals the squared Finsler length. The squared
distance-to-boundary ``psi(y)`` is the infimum of ``J`` over curves from ``y``
to the boundary. Close to the boundary the minimizer is the reversed,
constant-speed trace of the solution launched at rest from the boundary
point that reaches ``y``; deeper inside it is found by discrete minimization.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from ._parallel import ordered_map
from .curves import DiscreteCurve
from .errors import (
    MinimizationStall,
    NewtonDivergence,
    NoRoot,
    OutsideCollar,
    StepFailure,
    ValidationError,
)
from .flow import CollarCoords, Trajectory, _turn_time, collar_chart, integrate_H, integrate_U
from .legendre import eval_G, metric_batch, momenta
from .model import HamiltonianModel, PhasePoint, PotentialWell, Region, TangentPoint
from .reparam import orbit_to_geodesic


class UnderspecifiedCurveWarning(UserWarning):
    """The curve has no interior nodes to test."""


# ---------------------------------------------------------------------------- curves from flows
def curve_from_launch(model: HamiltonianModel, well: PotentialWell, Q, t_y: float, npts: int = 201,
                      tol: float = 1e-12) -> DiscreteCurve:
    """Constant-speed curve from ``q(t_y, Q)`` back to the boundary point ``Q``.

    The launch ``t -> q(t, Q)`` is reparametrized by Finsler arclength and
    its orientation reversed.
    """
    Q = model._check(Q)
    traj = integrate_H(model, PhasePoint(Q, np.zeros(model.n)), (0.0, t_y), tol=tol)
    return orbit_to_geodesic(model, traj, npts=npts, energy_tol=max(1e-8, 10 * traj.tolerance)).reversed()


def curve_from_flow(model: HamiltonianModel, traj: Trajectory, length: float, npts: int = 201,
                    escaped: bool = False) -> DiscreteCurve:
    """Constant-speed curve ``s -> q(s * length)`` along a unit-speed ``U``-flow trajectory."""
    L = float(length)
    s0 = float(traj.grid[0])

    def evaluate(s, sc=None):
        s = np.atleast_1d(np.asarray(s, dtype=float))
        q, p, _ = traj.state_at(s0 + s * L)
        return q, L * model.kernel.gradU(q, p)[2]

    s_nodes = np.linspace(0.0, 1.0, npts)
    nodes = evaluate(s_nodes)[0]
    nodes[0] = traj.q[0]
    return DiscreteCurve(nodes, s_nodes, "finsler-arclength", L**2, evaluate, (False, False), escaped)


def _geodesic(model: HamiltonianModel, q0, p0, length: float, tol: float, npts: int,
              stop_margin: float | None):
    traj = integrate_U(model, PhasePoint(q0, p0), (0.0, length), tol=tol, stop_margin=stop_margin)
    L = float(traj.grid[-1])
    curve = curve_from_flow(model, traj, L, npts, traj.escaped)
    object.__setattr__(curve, "nodes", np.vstack([curve.nodes[:-1], traj.q[-1]]))
    return curve, traj


def geodesic_ivp(model: HamiltonianModel, x0: TangentPoint, length: float, tol: float = 1e-11,
                 npts: int = 201, stop_margin: float | None = None) -> DiscreteCurve:
    """Unit-speed Finsler geodesic from ``x0`` as the projection of the ``U``-flow.

    The curve is parametrized on ``[0, 1]`` at constant speed ``c = L^2``.
    When the geodesic reaches the boundary margin first it is truncated and
    ``escaped`` is set.
    """
    if length < 0:
        raise ValidationError("length must be non-negative")
    F = eval_G(model, x0).F
    if abs(F - 1.0) > 1e-8:
        raise ValidationError(f"initial velocity must have unit Finsler norm (F = {F!r})")
    if length == 0:
        return DiscreteCurve(x0.q[None], None, "finsler-arclength", 0.0)
    p0 = momenta(model, x0.q[None], x0.v[None])[0]
    margin = 1e-8 * (1 + abs(model.energy)) if stop_margin is None else stop_margin
    return _geodesic(model, x0.q, p0, float(length), tol, npts, margin)[0]


# ---------------------------------------------------------------------------- curve energy
def _gauss_panels(panels: int, order: int) -> tuple[np.ndarray, np.ndarray]:
    x, wts = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(0.0, 1.0, panels + 1)
    a, b = edges[:-1, None], edges[1:, None]
    nodes = 0.5 * (a + b) + 0.5 * (b - a) * x[None]
    weights = 0.5 * (b - a) * wts[None]
    return nodes.ravel(), weights.ravel()


def energy_functional(model: HamiltonianModel, gamma: DiscreteCurve, panels: int = 32,
                      order: int = 10) -> float:
    """``J(gamma) = int_0^1 G(gamma, gamma') ds`` by composite Gauss-Legendre.

    Boundary endpoints are handled through the cubic endpoint substitution, so
    ``G`` is never evaluated on the boundary itself.
    """
    if gamma.m == 1:
        return 0.0
    w, wts = _gauss_panels(panels, order)
    emap = gamma.endpoint_map
    q, v = gamma.evaluate_w(w)
    G = metric_batch(model, q, v)[0]
    return float(np.sum(G * emap.ds_dw(w) * wts))


# ---------------------------------------------------------------------------- first variation
_D1_6 = np.array([-1.0, 9.0, -45.0, 0.0, 45.0, -9.0, 1.0]) / 60.0


def first_variation_residual(model: HamiltonianModel, gamma: DiscreteCurve, npts: int = 401,
                             exclude: float = 0.1) -> float:
    """Scale-normalized Euler-Lagrange defect ``d/ds dG/dv - dG/dq``.

    Along a curve with momentum ``p = dG/dv(gamma, gamma')`` the defect is
    ``dp/ds + U_q(gamma, p)``. It is sampled on a grid uniform in the
    desingularized variable, differentiated by sixth-order central
    differences and maximized over interior nodes relative to the largest
    ``|dp/ds| + |U_q|`` along the curve, skipping the stretch within ``exclude`` of a boundary
    endpoint.
    """
    if gamma.evaluator is None and gamma.m <= 2:
        warnings.warn("curve has no interior nodes; residual is 0 by convention", UnderspecifiedCurveWarning,
                      stacklevel=2)
        return 0.0
    emap = gamma.endpoint_map
    w = np.linspace(0.0, 1.0, npts)
    hw = w[1] - w[0]
    inner = w[1:-1]
    q, v = gamma.evaluate_w(inner)
    P = momenta(model, q, v)
    _, uq, _ = model.kernel.gradU(q, P)
    k = len(inner)
    dp_dw = np.full_like(P, np.nan)
    dp_dw[3:k - 3] = sum(c * P[j:k - 6 + j] for j, c in enumerate(_D1_6) if c) / hw
    dp_ds = dp_dw / emap.ds_dw(inner)[:, None]
    defect = np.linalg.norm(dp_ds + uq, axis=1)
    scale = np.linalg.norm(dp_ds, axis=1) + np.linalg.norm(uq, axis=1) + 1e-300
    keep = np.zeros(k, dtype=bool)
    keep[3:k - 3] = True
    if gamma.boundary_ends[0]:
        keep &= inner > exclude
    if gamma.boundary_ends[1]:
        keep &= inner < 1.0 - exclude
    if not keep.any():
        return 0.0
    return float(np.max(defect[keep]) / np.max(scale[keep]))


# ---------------------------------------------------------------------------- minimizers
@dataclass(frozen=True)
class MinimizerResult:
    """Curve of least energy from ``y`` to the boundary.

    ``J_value`` is the energy of ``curve`` (its squared Finsler length);
    ``endpoint`` the boundary point reached, ``t_y`` the launch time of the
    corresponding boundary solution; ``multiplicity_hint`` counts distinct
    multistart limits with the minimal energy.
    """

    curve: DiscreteCurve
    J_value: float
    first_variation_residual: float
    method: str
    multiplicity_hint: int
    endpoint: np.ndarray
    t_y: float
    polished: bool = True


def _nearest_direction(well: PotentialWell, y: np.ndarray) -> np.ndarray:
    d = well.closest_boundary_point(y) - y
    nrm = np.linalg.norm(d)
    if nrm < 1e-12:
        d = -well.model.grad_V(y)
        nrm = np.linalg.norm(d)
    if nrm < 1e-12:
        d = np.eye(len(y))[0]
        nrm = 1.0
    return d / nrm


def _seed_directions(well: PotentialWell, y: np.ndarray, nrot: int = 8) -> list[np.ndarray]:
    d0 = _nearest_direction(well, y)
    n = len(y)
    dirs = [d0]
    if n == 2:
        for k in range(nrot):
            a = 2 * math.pi * (k + 0.5) / nrot
            c, s = math.cos(a), math.sin(a)
            dirs.append(np.array([c * d0[0] - s * d0[1], s * d0[0] + c * d0[1]]))
    elif n > 2:
        rng = np.random.default_rng(2024)
        for _ in range(nrot):
            d = rng.normal(size=n)
            dirs.append(d / np.linalg.norm(d))
    else:
        dirs.append(-d0)
    return dirs


class _DiscreteEnergy:
    """Midpoint-rule energy of a polygon from ``y`` to the level ``E - V = c``."""

    def __init__(self, model: HamiltonianModel, well: PotentialWell, y: np.ndarray, m: int):
        self.model = model
        self.well = well
        self.y = y
        self.m = m
        self.n = model.n
        self.level = 0.0

    def ray_point(self, d: np.ndarray) -> tuple[np.ndarray, float]:
        """Point where the ray from ``y`` along ``d`` meets ``{E - V = level}``."""
        gap = lambda r: float(self.well.gap(self.y + r * d)[0]) - self.level  # noqa: E731
        r = 0.05
        lo = 0.0
        for _ in range(200):
            if gap(r) <= 0:
                break
            lo, r = r, r * 1.5
        else:
            raise NoRoot("ray does not reach the level set")
        root = optimize.brentq(gap, lo, r, xtol=1e-15)
        return self.y + root * d, root

    def unpack(self, x):
        n, m = self.n, self.m
        interior = x[: (m - 1) * n].reshape(m - 1, n)
        d = x[(m - 1) * n:]
        dn = np.linalg.norm(d)
        dh = d / dn
        e, r = self.ray_point(dh)
        return np.vstack([self.y, interior, e]), dh, dn, r

    def __call__(self, x):
        m = self.m
        try:
            X, dh, dn, r = self.unpack(x)
        except NoRoot:
            return 1e6, np.zeros_like(x)
        gaps = self.well.gap(X)
        over = np.maximum(self.level - gaps[1:-1], 0.0)
        mu = 1e4 / max(self.level, 1e-12) ** 2
        pen = mu * float(np.sum(over**2))
        gpen = np.zeros_like(X)
        gpen[1:-1] = (2 * mu * over)[:, None] * self.model.kernel.gradV(X[1:-1])
        delta = X[1:] - X[:-1]
        mid = 0.5 * (X[1:] + X[:-1])
        if np.any(self.well.gap(mid) <= 0):
            return 1e6 + pen, _gpen_to_x(self, gpen, X, dh, dn, r)
        try:
            G, P, Gq = metric_batch(self.model, mid, m * delta)
        except NewtonDivergence:
            return 1e6 + pen, _gpen_to_x(self, gpen, X, dh, dn, r)
        J = float(np.sum(G)) / m
        g = np.zeros_like(X)
        g[:-1] += 0.5 * Gq / m - P
        g[1:] += 0.5 * Gq / m + P
        g += gpen
        return J + pen, _gpen_to_x(self, g, X, dh, dn, r)

    def initial(self, direction):
        e, _ = self.ray_point(direction)
        X = self.y + np.linspace(0, 1, self.m + 1)[:, None] * (e - self.y)
        return np.concatenate([X[1:-1].ravel(), direction])


def _gpen_to_x(prob: _DiscreteEnergy, gX: np.ndarray, X: np.ndarray, dh, dn, r) -> np.ndarray:
    """Chain the node gradient to the optimization variables."""
    n = prob.n
    gV = prob.model.grad_V(X[-1])
    # endpoint e = y + r(dh) dh on the level set
    M = r * (np.eye(n) - np.outer(dh, gV) / float(gV @ dh))
    Pd = (np.eye(n) - np.outer(dh, dh)) / dn
    gd = Pd.T @ (M.T @ gX[-1])
    return np.concatenate([gX[1:-1].ravel(), gd])


def _discrete_minimize(model, well, y, direction, m, scale, final_gap):
    prob = _DiscreteEnergy(model, well, y, m)
    k = 8
    prob.level = scale / k
    x = prob.initial(direction)
    J = np.inf
    while True:
        res = optimize.minimize(prob, x, jac=True, method="L-BFGS-B",
                                options={"maxiter": 400, "gtol": 1e-10, "ftol": 1e-13})
        if not np.isfinite(res.fun) or res.fun >= 1e6:
            raise MinimizationStall("curve energy could not be reduced", best=x)
        x, J = res.x, float(res.fun)
        if prob.level <= final_gap:
            break
        k *= 2
        prob.level = scale / k
    X = prob.unpack(x)[0]
    return X, J


def _polish(model, well, y, endpoint, tol):
    """Refine a boundary endpoint by shooting: solve ``q(t, Q) = y`` from a nearby guess."""
    Q0 = well.project_to_boundary(endpoint)
    curv = np.linalg.eigvalsh(model.hess_V(well.seed))[-1] * model.mass_eigenvalues[1]
    t_turn, traj = _turn_time(model, well, Q0, 1e-10, math.pi / math.sqrt(max(curv, 1e-12)))
    ts = np.linspace(0.0, min(1.5 * t_turn, traj.grid[-1]), 400)[1:]
    dist = np.linalg.norm(traj.state_at(ts)[0] - y, axis=1)
    t0 = float(ts[np.argmin(dist)])
    guess = CollarCoords(t0, Q0, 1.0, np.inf, 0.0, np.zeros(model.n))
    return collar_chart(model, well, y, guess=guess, tol=tol, cond_max=np.inf, check_depth=False)


def _lexicographic_first(points: list[np.ndarray]) -> int:
    keys = [tuple(np.round(p, 9)) for p in points]
    return min(range(len(points)), key=lambda i: keys[i])


def minimizer_to_boundary(model: HamiltonianModel, well: PotentialWell, y, tol: float = 1e-12,
                          nodes: int = 64, threads: int = 1, use_collar: bool = True,
                          npts: int = 201) -> MinimizerResult:
    """Least-energy curve from the interior point ``y`` to the boundary.

    In the collar the minimizer is the reversed launch trace through ``y``.
    Otherwise a polygon with ``nodes`` segments is minimized on the shrinking
    domains ``{E - V >= c_k}`` (``c_k`` halving from ``2 (E - Vmin)/8``) from
    nine seeds; each limit is then refined by boundary shooting, and the
    smallest energy wins, ties broken by the lexicographically smallest
    endpoint.
    """
    y = model._check(y)
    if well.classify(y) is not Region.INTERIOR:
        raise ValidationError("y must be interior")
    if use_collar:
        try:
            cc = collar_chart(model, well, y, tol=tol)
        except OutsideCollar:
            cc = None
        if cc is not None:
            curve = curve_from_launch(model, well, cc.Q_y, cc.t_y, npts=npts, tol=tol)
            res = first_variation_residual(model, curve)
            return MinimizerResult(curve, cc.length**2, res, "collar", 1, cc.Q_y, cc.t_y)

    vmin, _ = well.min_potential()
    scale = 2.0 * (model.energy - vmin)
    final_gap = 1e-4 * scale

    def run(direction):
        try:
            X, J = _discrete_minimize(model, well, y, direction, nodes, scale, final_gap)
        except (MinimizationStall, NoRoot, NewtonDivergence):
            return None
        try:
            cc = _polish(model, well, y, X[-1], tol)
            return cc.length**2, cc.Q_y, cc.t_y, True, X
        except (OutsideCollar, StepFailure, NewtonDivergence, NoRoot):
            return J, well.project_to_boundary(X[-1]), float("nan"), False, X

    results = [r for r in ordered_map(run, _seed_directions(well, y), threads) if r is not None]
    if not results:
        raise MinimizationStall("no multistart branch converged")
    Jmin = min(r[0] for r in results)
    ties = [r for r in results if r[0] <= Jmin * (1 + 1e-6)]
    distinct: list[np.ndarray] = []
    for r in ties:
        if all(np.linalg.norm(r[1] - e) > 1e-3 for e in distinct):
            distinct.append(r[1])
    best = ties[_lexicographic_first([r[1] for r in ties])]
    J, Q, t_y, polished, X = best
    if polished:
        curve = curve_from_launch(model, well, Q, t_y, npts=npts, tol=tol)
        J = curve.speed
    else:
        curve = DiscreteCurve(np.vstack([X[:-1], Q]), None, "uniform", J, None, (False, True))
    res = first_variation_residual(model, curve)
    return MinimizerResult(curve, float(J), res, "discrete-minimization", len(distinct), Q, t_y, polished)


def energy_lower_bound(model: HamiltonianModel, gamma: DiscreteCurve, nu_max: float) -> float:
    """``min (E - V)/(2 nu_max) * |Euclidean length|^2`` over the curve nodes."""
    gaps = model.energy - model.kernel.V(gamma.nodes)
    length = float(np.sum(np.linalg.norm(np.diff(gamma.nodes, axis=0), axis=1)))
    return float(np.min(gaps) / (2 * nu_max) * length**2)


def energy_upper_bound(model: HamiltonianModel, well: PotentialWell, nu_min: float) -> float:
    """``(E - Vmin) diam^2 / (2 nu_min)``, the energy of a straight chord at worst."""
    vmin, _ = well.min_potential()
    return float((model.energy - vmin) * well.diameter() ** 2 / (2 * nu_min))
