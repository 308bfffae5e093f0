"""Hamiltonian and geodesic flows, boundary launches and the collar chart.

Trajectories are integrated by an adaptive Dormand-Prince 5(4) scheme with
dense output. The state is augmented by the Finsler arclength ``ell`` so that
``d ell/dt = F(q, qdot)`` is integrated alongside: for the ``H``-flow this is
``<H_p, p>/2`` and for the ``U``-flow it is ``sqrt(U)``.

Near the boundary every interior point ``y`` is reached, for a unique time
``t_y`` and boundary point ``Q_y``, by the solution launched at rest from
``Q_y``. The collar chart inverts this map by Newton's method.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize

from . import _pykernel
from .errors import (
    ImmediateEscape,
    NewtonDivergence,
    NoValidEpsilon,
    OutsideCollar,
    StepFailure,
    ValidationError,
)
from .model import HamiltonianModel, PhasePoint, PotentialWell, Region

CONSERVED_H = "H=E"
CONSERVED_U = "U=1"

_STATUS = {
    _pykernel.STATUS_OK: "complete",
    _pykernel.STATUS_MARGIN: "boundary-margin",
    _pykernel.STATUS_MAX_STEPS: "max-steps",
    _pykernel.STATUS_STEP_UNDERFLOW: "step-underflow",
    _pykernel.STATUS_DOMAIN: "left-domain",
}


def _dense_from_rk(ts: np.ndarray, rcont: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    """Vectorized Hairer dense output over the accepted steps."""

    def evaluate(t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        i = np.clip(np.searchsorted(ts, t, side="right") - 1, 0, len(ts) - 2)
        h = ts[i + 1] - ts[i]
        th = ((t - ts[i]) / h)[:, None]
        th1 = 1.0 - th
        r = rcont[i]
        return r[:, 0] + th * (r[:, 1] + th1 * (r[:, 2] + th * (r[:, 3] + th1 * r[:, 4])))

    return evaluate


@dataclass(frozen=True)
class Trajectory:
    """Integrated or sampled phase-space path with dense evaluation.

    Attributes
    ----------
    grid : ndarray, shape (m,)
        Increasing times (``H``-flow) or arclengths (``U``-flow).
    q, p : ndarray, shape (m, n)
        States at the grid nodes.
    arclength : ndarray, shape (m,)
        Finsler arclength accumulated from ``grid[0]``.
    conserved : {"H=E", "U=1"}
    tolerance : float
        Largest drift of the conserved quantity over the nodes.
    escaped : bool
        The path left the closed well (or reached the boundary margin).
    status : str
        Integrator outcome.
    """

    grid: np.ndarray
    q: np.ndarray
    p: np.ndarray
    arclength: np.ndarray
    conserved: str
    tolerance: float
    escaped: bool = False
    status: str = "complete"
    dense: Callable[[np.ndarray], np.ndarray] | None = field(default=None, repr=False, compare=False)

    @property
    def n(self) -> int:
        return self.q.shape[1]

    @property
    def states(self) -> list[PhasePoint]:
        return [PhasePoint(q, p) for q, p in zip(self.q, self.p)]

    @property
    def span(self) -> tuple[float, float]:
        return float(self.grid[0]), float(self.grid[-1])

    def state_at(self, t) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Dense ``(q, p, ell)`` at the times ``t`` (any shape, flattened)."""
        t = np.atleast_1d(np.asarray(t, dtype=float)).reshape(-1)
        n = self.n
        if len(self.grid) == 1:
            y = np.repeat(np.concatenate([self.q[0], self.p[0], self.arclength[:1]])[None], len(t), axis=0)
        elif self.dense is not None:
            y = self.dense(t)
        else:
            raise ValueError("trajectory has no dense output")
        return y[:, :n], y[:, n:2 * n], y[:, 2 * n]

    def final(self) -> PhasePoint:
        return PhasePoint(self.q[-1], self.p[-1])


def _run(model: HamiltonianModel, q0, p0, span: float, flow: int, tol: float, renorm: bool = False,
         stop_margin: float = -1.0, max_steps: int = 200000, hmax: float = math.inf):
    z0 = np.concatenate([q0, p0, [0.0]])
    if span == 0.0:
        return np.array([0.0]), z0[None], np.zeros((0, 5, z0.size)), _pykernel.STATUS_OK
    rtol, atol = 0.1 * tol, 0.01 * tol
    return model.kernel.integrate(z0, float(span), flow, rtol, atol, float(hmax), renorm, stop_margin, max_steps)


def _build(model, ts, ys, rc, status, t0, conserved, reverse_time=False) -> Trajectory:
    n = model.n
    q, p, ell = ys[:, :n], ys[:, n:2 * n], ys[:, 2 * n]
    if conserved == CONSERVED_H:
        drift = np.abs(model.kernel.H(q, p) - model.energy)
    else:
        drift = np.abs(model.kernel.U(q, p) - 1.0)
    dense_fwd = _dense_from_rk(ts, rc) if len(ts) > 1 else None
    if reverse_time:
        # solution run forward from (q0, -p0); map back by t -> t0 - s, p -> -p
        grid = t0 - ts[::-1]
        q, p, ell = q[::-1], -p[::-1], ell[-1] - ell[::-1]
        total = ys[-1, 2 * n]

        def dense(t):
            y = dense_fwd(t0 - t).copy()
            y[:, n:2 * n] *= -1
            y[:, 2 * n] = total - y[:, 2 * n]
            return y
    else:
        grid = t0 + ts

        def dense(t):
            return dense_fwd(t - t0)

    escaped = status in (_pykernel.STATUS_DOMAIN, _pykernel.STATUS_MARGIN) or bool(
        np.any(model.energy - model.kernel.V(q) < -1e-9 * (1 + abs(model.energy))))
    return Trajectory(grid, q.copy(), p.copy(), ell.copy(), conserved, float(np.nanmax(drift)), escaped,
                      _STATUS[status], dense if dense_fwd is not None else None)


def integrate_H(model: HamiltonianModel, z0: PhasePoint, t_span=(0.0, 1.0), tol: float = 1e-10,
                max_steps: int = 200000) -> Trajectory:
    """Integrate Hamilton's equations of ``H`` over ``t_span``.

    Backward spans use evenness of ``H``: the flow from ``(q, -p)`` run forward
    and reflected reproduces the backward flow.

    Raises
    ------
    StepFailure
        If the step size underflows or the step budget is exhausted.
    """
    if tol <= 0:
        raise ValidationError("tol must be positive")
    t0, t1 = map(float, t_span)
    back = t1 < t0
    p0 = -z0.p if back else z0.p
    ts, ys, rc, status = _run(model, z0.q, p0, abs(t1 - t0), 0, tol, max_steps=max_steps)
    if status in (_pykernel.STATUS_MAX_STEPS, _pykernel.STATUS_STEP_UNDERFLOW):
        raise StepFailure(f"integration stopped: {_STATUS[status]} at t={ts[-1]:.6g}")
    return _build(model, ts, ys, rc, status, t0, CONSERVED_H, reverse_time=back)


def integrate_U(model: HamiltonianModel, x0: PhasePoint, s_span=(0.0, 1.0), tol: float = 1e-10,
                renormalize: bool = True, stop_margin: float | None = None,
                shell_tol: float = 1e-8, max_steps: int = 200000) -> Trajectory:
    """Integrate the ``U``-flow (unit-speed Finsler geodesics) over ``s_span``.

    With ``renormalize`` the momentum is rescaled to ``U = 1`` after each
    accepted step. A positive ``stop_margin`` halts once ``E - V`` drops below
    it; leaving the well also halts, and both set ``escaped``.
    """
    if tol <= 0:
        raise ValidationError("tol must be positive")
    u0 = float(model.kernel.U(x0.q[None], x0.p[None])[0])
    if not abs(u0 - 1.0) <= shell_tol:
        raise ValidationError(f"initial state is off the unit shell (U = {u0!r})")
    s0, s1 = map(float, s_span)
    back = s1 < s0
    p0 = -x0.p if back else x0.p
    margin = -1.0 if stop_margin is None else float(stop_margin)
    ts, ys, rc, status = _run(model, x0.q, p0, abs(s1 - s0), 1, tol, renormalize, margin, max_steps)
    if status in (_pykernel.STATUS_MAX_STEPS, _pykernel.STATUS_STEP_UNDERFLOW):
        raise StepFailure(f"integration stopped: {_STATUS[status]} at s={ts[-1]:.6g}")
    return _build(model, ts, ys, rc, status, s0, CONSERVED_U, reverse_time=back)


def launch_from_boundary(model: HamiltonianModel, well: PotentialWell, Q, t_max: float,
                         tol: float = 1e-12) -> Trajectory:
    """Energy-``E`` solution launched at rest from the boundary point ``Q``.

    Raises
    ------
    ImmediateEscape
        If the solution does not enter the well right away.
    """
    Q = model._check(Q)
    if well.classify(Q) is not Region.BOUNDARY:
        raise ValidationError("launch point is not on the boundary")
    traj = integrate_H(model, PhasePoint(Q, np.zeros(model.n)), (0.0, t_max), tol=tol)
    if len(traj.grid) > 1:
        g = model.grad_V(Q)
        qdd = model.kernel.Kpp(np.zeros((1, model.n)))[0] @ g
        if float(g @ qdd) <= 0 or well.gap(traj.q[1])[0] < -well.tol_boundary:
            raise ImmediateEscape("boundary launch does not enter the well")
    return traj


def _launch_point(model, well, Q, t, tol):
    """``(q, p, ell)`` at time ``t`` on the launch from ``Q`` (``t >= 0``)."""
    ts, ys, _, status = _run(model, Q, np.zeros(model.n), t, 0, tol)
    if status != _pykernel.STATUS_OK:
        raise StepFailure(f"launch integration failed: {_STATUS[status]}")
    n = model.n
    return ys[-1, :n], ys[-1, n:2 * n], float(ys[-1, 2 * n])


# ---------------------------------------------------------------------------- collar
@dataclass(frozen=True)
class CollarCoords:
    """Collar chart of ``y``: ``y = q(t_y, Q_y)`` on the launch from ``Q_y``.

    ``length`` is the Finsler arclength of the launch up to ``t_y`` and
    ``momentum`` the momentum there.
    """

    t_y: float
    Q_y: np.ndarray
    jacobian_condition: float
    residual: float
    length: float
    momentum: np.ndarray


@dataclass(frozen=True)
class Collar:
    """Numerical under-approximation of the boundary collar.

    ``depth`` is the Euclidean distance from the boundary within which the
    chart is trusted; ``psi_edge`` is the largest squared launch length
    reached at that depth over the sampled launch points.
    """

    depth: float
    psi_edge: float
    turn_times: np.ndarray
    boundary_points: np.ndarray
    cond_max: float


def _chart_jacobian(model, well, Q, t, q_center, p_center, tol, h):
    n = model.n
    T = well.tangent_basis(Q)
    J = np.empty((n, n))
    J[:, 0] = model.kernel.Kp(p_center[None])[0]
    for j in range(n - 1):
        Qp = well.project_to_boundary(Q + h * T[:, j])
        Qm = well.project_to_boundary(Q - h * T[:, j])
        J[:, 1 + j] = (_launch_point(model, well, Qp, t, tol)[0] - _launch_point(model, well, Qm, t, tol)[0]) / (2 * h)
    return J, T


def _initial_chart_guess(model, well, y):
    Q = well.closest_boundary_point(y)
    acc = model.kernel.Kpp(np.zeros((1, model.n)))[0] @ model.grad_V(Q)
    d = np.linalg.norm(y - Q)
    return Q, math.sqrt(2.0 * d / max(np.linalg.norm(acc), 1e-300))


def collar_chart(model: HamiltonianModel, well: PotentialWell, y, guess: CollarCoords | None = None,
                 collar: Collar | None = None, tol: float = 1e-12, cond_max: float | None = None,
                 check_depth: bool = True, max_iter: int = 40) -> CollarCoords:
    """Solve ``q(t, Q) = y`` for the launch time and boundary point.

    Newton's method over ``(t, u)`` where ``u`` are orthographic coordinates on
    the tangent plane at the current boundary iterate, re-projected onto
    ``{V = E}``. The time column of the Jacobian is the exact velocity; the
    boundary columns are central differences.

    Raises
    ------
    OutsideCollar
        If ``y`` is deeper than the collar, the Jacobian is ill-conditioned or
        Newton's method fails.
    """
    y = model._check(y)
    region = well.classify(y)
    if region is Region.BOUNDARY:
        return CollarCoords(0.0, y.copy(), 1.0, 0.0, 0.0, np.zeros(model.n))
    if region is Region.EXTERIOR:
        raise ValidationError("point is outside the well")
    if collar is None and (check_depth or cond_max is None):
        collar = get_collar(model, well)
    cond_max = collar.cond_max if cond_max is None else cond_max
    if check_depth and well.distance_to_boundary(y) > collar.depth:
        raise OutsideCollar("point is deeper than the collar")
    if guess is not None and guess.t_y > 0:
        Q, t = guess.Q_y.copy(), guess.t_y
    else:
        Q, t = _initial_chart_guess(model, well, y)
    scale = 1.0 + np.linalg.norm(y)
    h = 1e-6 * (1.0 + np.linalg.norm(Q))
    q, p, ell = _launch_point(model, well, Q, t, tol)
    r = q - y
    rn = np.linalg.norm(r)
    J = None
    for _ in range(max_iter):
        J, T = _chart_jacobian(model, well, Q, t, q, p, tol, h)
        if rn <= 1e-13 * scale:
            break
        try:
            step = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(J, -r, rcond=None)[0]
        lam = 1.0
        for _ in range(40):
            tn = t + lam * step[0]
            if 0 < tn <= 4 * t + 1:
                Qn = well.project_to_boundary(Q + lam * (T @ step[1:]))
                try:
                    qn, pn, elln = _launch_point(model, well, Qn, tn, tol)
                except StepFailure:
                    lam *= 0.5
                    continue
                rnn = np.linalg.norm(qn - y)
                if rnn < rn:
                    break
            lam *= 0.5
        else:
            break
        t, Q, q, p, ell, r, rn = tn, Qn, qn, pn, elln, qn - y, rnn
    if J is None or rn > 1e-10 * scale:
        raise OutsideCollar(f"collar Newton did not converge (residual {rn:.2e})")
    # inside the collar the launch is still moving away from the boundary
    if t > 0 and float(-model.grad_V(q) @ model.kernel.Kp(p[None])[0]) <= 0:
        raise OutsideCollar("the launch through the point has already turned back")
    cond = float(np.linalg.cond(J))
    if cond > cond_max:
        raise OutsideCollar(f"collar chart is ill-conditioned (cond {cond:.2e})")
    return CollarCoords(float(t), Q, cond, float(rn), float(ell), p)


def _turn_time(model, well, Q, tol, t_guess):
    """First time the launch from ``Q`` stops moving away from the boundary."""
    t_max = t_guess
    for _ in range(8):
        traj = integrate_H(model, PhasePoint(Q, np.zeros(model.n)), (0.0, t_max), tol=tol)
        qdot = model.kernel.Kp(traj.p)
        rate = -np.sum(model.kernel.gradV(traj.q) * qdot, axis=1)
        idx = np.nonzero(rate[1:] <= 0)[0]
        if len(idx):
            k = idx[0] + 1

            def g(t):
                qq, pp, _ = traj.state_at(t)
                return float(-model.kernel.gradV(qq)[0] @ model.kernel.Kp(pp)[0])

            return optimize.brentq(g, traj.grid[k - 1], traj.grid[k], xtol=1e-12), traj
        t_max *= 2
    raise OutsideCollar("launch never turns back towards the boundary")


def estimate_collar(model: HamiltonianModel, well: PotentialWell, nboundary: int = 32,
                    cond_max: float = 1e6, safety: float = 0.5, tol: float = 1e-11) -> Collar:
    """Estimate how deep the collar chart is valid.

    Each sampled boundary launch is followed until it turns back or the chart
    Jacobian exceeds ``cond_max``; the collar depth is ``safety`` times the
    smallest distance to the boundary reached by then.
    """
    pts = well.boundary_samples(nboundary)
    vmin, _ = well.min_potential()
    curv = np.linalg.eigvalsh(model.hess_V(well.seed))[-1] * model.mass_eigenvalues[1]
    t_guess = math.pi / math.sqrt(max(curv, 1e-12))
    depths, turns, edges = [], [], []
    for Q in pts:
        t_turn, traj = _turn_time(model, well, Q, tol, t_guess)
        times = np.linspace(0.05 * t_turn, t_turn, 40)
        h = 1e-6 * (1.0 + np.linalg.norm(Q))
        T = well.tangent_basis(Q)
        qs, ps, _ = traj.state_at(times)
        cols = []
        for j in range(model.n - 1):
            tp = integrate_H(model, PhasePoint(well.project_to_boundary(Q + h * T[:, j]), np.zeros(model.n)),
                             (0.0, t_turn), tol=tol)
            tm = integrate_H(model, PhasePoint(well.project_to_boundary(Q - h * T[:, j]), np.zeros(model.n)),
                             (0.0, t_turn), tol=tol)
            cols.append((tp.state_at(times)[0] - tm.state_at(times)[0]) / (2 * h))
        t_c = t_turn
        for k, tk in enumerate(times):
            J = np.column_stack([model.kernel.Kp(ps[k:k + 1])[0]] + [c[k] for c in cols])
            if np.linalg.cond(J) > cond_max:
                t_c = times[max(k - 1, 0)]
                break
        turns.append(t_c)
        depths.append(well.distance_to_boundary(traj.state_at(t_c)[0][0]))
    depth = safety * float(min(depths))
    # largest squared launch length at the trusted depth
    for Q, t_c in zip(pts, turns):
        traj = integrate_H(model, PhasePoint(Q, np.zeros(model.n)), (0.0, t_c), tol=tol)

        def f(t):
            return well.distance_to_boundary(traj.state_at(t)[0][0]) - depth

        if f(t_c) <= 0:
            edges.append(traj.arclength[-1] ** 2)
            continue
        t_d = optimize.brentq(f, 0.0, t_c, xtol=1e-10)
        edges.append(float(traj.state_at(t_d)[2][0]) ** 2)
    return Collar(depth, float(max(edges)), np.array(turns), pts, cond_max)


def get_collar(model: HamiltonianModel, well: PotentialWell) -> Collar:
    """Collar estimate cached on the well."""
    key = ("collar", id(model))
    if key not in well._cache:
        well._cache[key] = estimate_collar(model, well)
    return well._cache[key]


# ---------------------------------------------------------------------------- diagnostics
def _d2V_along(model: HamiltonianModel, Q: np.ndarray, P: np.ndarray) -> np.ndarray:
    """Second time derivative of ``V(q(t))`` along the ``H``-flow."""
    g = model.kernel.gradV(Q)
    qdot = model.kernel.Kp(P)
    qddot = np.einsum("mij,mj->mi", model.kernel.Kpp(P), -g)
    hess = model.kernel.hessV(Q)
    return np.einsum("mi,mij,mj->m", qdot, hess, qdot) + np.sum(g * qddot, axis=1)


def _points_at_gap(model, well, B, gaps):
    """Points on the segments seed->B where ``E - V`` equals each gap (bisection)."""
    seed = well.seed
    S = np.repeat(B[:, None, :] - seed, len(gaps), axis=1).reshape(-1, model.n)
    target = np.tile(gaps, len(B))
    lo = np.zeros(len(S))
    hi = np.ones(len(S))
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        inside = well.gap(seed + mid[:, None] * S) > target
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    return seed + hi[:, None] * S


def estimate_epsilon_bar(model: HamiltonianModel, well: PotentialWell, nsamples: int = 400,
                         ratio: float = 0.8, levels: int = 60, seed: int = 0) -> float:
    """Largest rim width ``eps`` on a geometric grid with ``d2V/dt2 <= -eps`` in the rim.

    Shell states are sampled along rays from the seed, concentrated towards
    the boundary, with random momentum directions; a level ``eps`` is valid
    when every sample with ``V >= E - eps`` satisfies the inequality.

    Raises
    ------
    NoValidEpsilon
        If no grid level passes.
    """
    if nsamples < 100:
        raise ValidationError("nsamples must be at least 100")
    rng = np.random.default_rng(seed)
    n = model.n
    dirs = rng.normal(size=(nsamples, n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    B = np.array([well.radial_boundary_point(d) for d in dirs])
    vmin, _ = well.min_potential()
    grid = (model.energy - vmin) * ratio ** np.arange(levels)
    # gaps: every grid level (the rim's inner edge is the critical case) plus random fill
    gaps = np.concatenate([grid, (model.energy - vmin) * rng.random(16), [0.0]])
    Q = _points_at_gap(model, well, B, gaps)
    th = rng.normal(size=Q.shape)
    th /= np.linalg.norm(th, axis=1, keepdims=True)
    gap = well.gap(Q)
    w = np.where(gap > 0, model.kernel.omega(Q, th), 0.0)
    keep = np.isfinite(w)
    Q, P, gap = Q[keep], w[keep, None] * th[keep], gap[keep]
    d2 = _d2V_along(model, Q, P)
    for eps in grid:
        rim = gap <= eps * (1 + 1e-12)
        if np.any(rim) and np.max(d2[rim]) <= -eps:
            return float(eps)
    raise NoValidEpsilon("no rim width passed the second-derivative test")


@dataclass(frozen=True)
class RimInterval:
    start: float
    end: float
    truncated: bool

    @property
    def length(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class RimReport:
    """Maximal time intervals spent in the rim ``V >= E - eps/2``."""

    eps_bar: float
    intervals: list[RimInterval]
    bound: float
    flagged: list[int]

    @property
    def complete_lengths(self) -> list[float]:
        return [iv.length for iv in self.intervals if not iv.truncated]

    def to_dict(self) -> dict:
        return {
            "eps_bar": self.eps_bar,
            "bound": self.bound,
            "intervals": [{"start": iv.start, "end": iv.end, "length": iv.length, "truncated": iv.truncated}
                          for iv in self.intervals],
            "flagged": self.flagged,
        }


def _level_crossings(traj: Trajectory, g: Callable[[np.ndarray], np.ndarray], per_step: int = 8,
                     xtol: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
    """Sign changes of ``g(t)`` located by bisection on the dense output."""
    t0, t1 = traj.span
    nodes = np.unique(np.concatenate([np.linspace(a, b, per_step + 1)
                                      for a, b in zip(traj.grid[:-1], traj.grid[1:])]))
    vals = g(nodes)
    roots = []
    for k in np.nonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))[0]:
        roots.append(optimize.brentq(lambda t: float(g(np.array([t]))[0]), nodes[k], nodes[k + 1], xtol=xtol))
    return np.array(roots), vals


def rim_time_audit(traj: Trajectory, eps_bar: float, model: HamiltonianModel) -> RimReport:
    """Residence intervals in the rim and their comparison with ``2 sqrt(2/eps)``.

    Intervals touching either end of the trajectory are marked truncated.
    Exceeding the bound is flagged, not raised.
    """
    if traj.conserved != CONSERVED_H:
        raise ValidationError("rim audit needs an H-flow trajectory")
    level = model.energy - 0.5 * eps_bar

    def g(t):
        return model.kernel.V(traj.state_at(t)[0]) - level

    roots, vals = _level_crossings(traj, g)
    t0, t1 = traj.span
    edges = np.concatenate([[t0], roots, [t1]])
    intervals = []
    for a, b in zip(edges[:-1], edges[1:]):
        if b <= a:
            continue
        if g(np.array([0.5 * (a + b)]))[0] >= 0:
            intervals.append(RimInterval(float(a), float(b), bool(a == t0 or b == t1)))
    bound = 2.0 * math.sqrt(2.0 / eps_bar)
    flagged = [i for i, iv in enumerate(intervals) if iv.length > bound]
    return RimReport(float(eps_bar), intervals, bound, flagged)


@dataclass(frozen=True)
class ExpansionReport:
    """Remainder of the boundary expansion ``qdot(t) ~ -t d2H/dp2 grad V``."""

    times: np.ndarray
    remainder: np.ndarray
    slope: float
    passed: bool

    def to_dict(self) -> dict:
        return {"times": self.times.tolist(), "remainder": self.remainder.tolist(),
                "slope": self.slope, "passed": self.passed}


def boundary_expansion_check(model: HamiltonianModel, well: PotentialWell, Q0, t_grid,
                             min_slope: float = 1.9) -> ExpansionReport:
    """Log-log slope of ``|qdot(t) + t d2H/dp2(Q0, 0) grad V(Q0)|`` over ``t_grid``."""
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(t_grid <= 0) or np.any(t_grid > 0.2):
        raise ValidationError("t_grid must lie in (0, 0.2]")
    Q0 = model._check(Q0)
    traj = launch_from_boundary(model, well, Q0, float(t_grid.max()), tol=1e-13)
    q, p, _ = traj.state_at(t_grid)
    qdot = model.kernel.Kp(p)
    lead = model.kernel.Kpp(np.zeros((1, model.n)))[0] @ model.grad_V(Q0)
    r = np.linalg.norm(qdot + t_grid[:, None] * lead[None], axis=1)
    slope = float(np.polyfit(np.log(t_grid), np.log(r), 1)[0])
    return ExpansionReport(t_grid, r, slope, slope >= min_slope)
