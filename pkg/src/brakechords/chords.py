"""Orthogonal geodesic chords of the concave region and their brake orbits.

A chord leaves ``dOmega`` along the inward Finsler normal and is followed
along the unit-speed ``U``-flow until it returns to ``{psi = delta_hat}``; it
is orthogonal when its momentum there is normal to the level set. Gluing the
boundary minimizers of its two endpoints to either side gives a
constant-speed curve from the boundary to the boundary, whose physical-time
reparametrization is a brake orbit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._parallel import ordered_map
from .curves import DiscreteCurve
from .errors import (
    CollarPrecondition,
    EmptyRegion,
    EscapedDomain,
    NewtonDivergence,
    NoExit,
    OutsideCollar,
    ParallelismFailure,
    StepFailure,
    ValidationError,
)
from .flow import CollarCoords, Trajectory, collar_chart, get_collar, integrate_H, integrate_U
from .geodesy import curve_from_flow, first_variation_residual
from .legendre import momenta, normal_velocity
from .model import HamiltonianModel, PhasePoint, PotentialWell, _fibonacci_sphere, orthonormal_complement
from .psi import OmegaRegion, _ray_level_point, _refine_to_level, psi_max, select_delta_hat
from .reparam import geodesic_to_orbit, hamilton_residual, orbit_to_geodesic


# ---------------------------------------------------------------------------- shooting
@dataclass(frozen=True)
class ShotResult:
    """Normal geodesic from ``start`` to its first return ``hit`` to ``dOmega``.

    ``residual`` holds the tangential components of the unit momentum at the
    hit, on an orthonormal tangent basis of the level set.
    """

    start: np.ndarray
    hit: np.ndarray
    residual: np.ndarray
    length: float
    trajectory: Trajectory = field(repr=False)
    curve: DiscreteCurve = field(repr=False)


def _chart(model, well, y, guess=None):
    collar = get_collar(model, well)
    return collar_chart(model, well, y, guess=guess, check_depth=False, cond_max=collar.cond_max)


def _tangential(p: np.ndarray, grad: np.ndarray) -> np.ndarray:
    return orthonormal_complement(grad).T @ p / np.linalg.norm(p)


def _max_level_gap(model: HamiltonianModel, omega: OmegaRegion) -> float:
    return float(np.max(model.energy - model.kernel.V(omega.boundary_samples)))


def shoot_orthogonal(model: HamiltonianModel, well: PotentialWell, omega: OmegaRegion, a,
                     budget: float | None = None, tol: float = 1e-12) -> ShotResult:
    """Follow the inward normal geodesic from ``a`` on ``dOmega`` to its exit point.

    ``psi`` is only evaluated where ``E - V`` is at most 1.5 times its
    largest value on ``dOmega``; deeper points count as inside ``Omega``.

    Raises
    ------
    NoExit
        If the geodesic does not return to ``dOmega`` within ``budget``.
    """
    a = model._check(a)
    level = omega.delta_hat
    cc = _chart(model, well, a)
    if abs(cc.length**2 - level) > 1e-8:
        raise ValidationError("start point is not on the level set")
    grad = cc.length * cc.momentum
    x0 = normal_velocity(model, a, grad, grad)
    p0 = momenta(model, a[None], x0.v[None])[0]
    if budget is None:
        budget = 4.0 * math.sqrt(psi_max(model, well))
    # the exit lies on dOmega, well before the boundary; stop short of the singular shell
    min_gap = float(np.min(model.energy - model.kernel.V(omega.boundary_samples)))
    traj = integrate_U(model, PhasePoint(a, p0), (0.0, budget), tol=tol, stop_margin=0.25 * min_gap)
    gap_cut = 1.5 * _max_level_gap(model, omega)

    guess: list[CollarCoords | None] = [cc]

    def psi_at(sig):
        q = traj.state_at(sig)[0][0]
        if model.energy - model.V(q) > gap_cut:
            return math.inf, None
        for g in (guess[0], None):
            try:
                c = _chart(model, well, q, guess=g)
                guess[0] = c
                return c.length**2, c
            except (OutsideCollar, StepFailure):
                continue
        return math.inf, None

    # sqrt(psi) is a Finsler distance, hence 1-Lipschitz in arclength: no
    # crossing can occur within sqrt(psi) - sqrt(level) of the current point
    end = float(traj.grid[-1])
    h_min = 1e-4 * end
    root = math.sqrt(level)
    prev, sg, left_start = 0.0, min(h_min, end), False
    b_sig = None
    while True:
        val = psi_at(sg)[0]
        if math.isinf(val):
            left_start = True
            k = int(np.searchsorted(traj.grid, sg, side="right"))
            nxt = float(traj.grid[min(k, len(traj.grid) - 1)])
        elif not left_start or val > level:
            left_start = left_start or val > level
            nxt = sg + max(0.9 * (math.sqrt(val) - root), h_min)
        else:
            b_sig = _locate_crossing(model, traj, psi_at, prev, sg, level)
            break
        if sg >= end:
            break
        prev, sg = sg, min(nxt, end)
    if b_sig is None:
        raise NoExit("normal geodesic did not return to the level set within the budget")
    q_b, p_b, _ = traj.state_at(b_sig)
    cb = _chart(model, well, q_b[0])
    residual = _tangential(p_b[0], cb.length * cb.momentum)
    curve = curve_from_flow(model, traj, b_sig)
    object.__setattr__(curve, "nodes", np.vstack([curve.nodes[:-1], q_b]))
    return ShotResult(a, q_b[0], residual, float(b_sig), traj, curve)


def _locate_crossing(model, traj, psi_at, lo, hi, level, iters: int = 80):
    """Bisection and Newton on ``psi(q(s)) = level`` with ``psi(lo) > level >= psi(hi)``."""
    x = hi
    for _ in range(iters):
        val, c = psi_at(x)
        if val <= level:
            hi = x
        else:
            lo = x
        if c is not None and abs(val - level) <= 1e-14 * (1 + level):
            return x
        xn = 0.5 * (lo + hi)
        if c is not None:
            q, p, _ = traj.state_at(x)
            slope = float((c.length * c.momentum) @ model.kernel.gradU(q, p)[2][0])
            if slope < 0:
                cand = x - (val - level) / slope
                if lo < cand < hi:
                    xn = cand
        if hi - lo <= 1e-15 * (1 + hi):
            return hi
        x = xn
    return hi


# ---------------------------------------------------------------------------- chords
@dataclass(frozen=True)
class GeodesicChord:
    """Orthogonal Finsler geodesic chord from ``a`` to ``b`` on ``dOmega``."""

    curve: DiscreteCurve
    a: np.ndarray
    b: np.ndarray
    orthogonality_residuals: np.ndarray
    length: float
    first_variation: float
    min_interior_psi: float
    trajectory: Trajectory = field(repr=False, compare=False)

    def to_dict(self) -> dict:
        return {"a": self.a.tolist(), "b": self.b.tolist(), "length": self.length,
                "orthogonality_residuals": self.orthogonality_residuals.tolist(),
                "first_variation_residual": self.first_variation, "min_interior_psi": self.min_interior_psi,
                "nodes": self.curve.nodes.tolist()}


def _start_points(model, well, omega, nstarts):
    _, center = well.min_potential()
    if model.n == 2:
        ang = 2 * np.pi * (np.arange(nstarts) + 0.5) / nstarts
        dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    else:
        dirs = _fibonacci_sphere(nstarts, model.n)
    return [_ray_level_point(model, well, center, d, omega.delta_hat) for d in dirs]


def _on_level(model, well, base, u, level):
    g = _chart(model, well, base)
    T = orthonormal_complement(g.length * g.momentum)
    return _refine_to_level(model, well, base + T @ u, level)


def _newton_chord(model, well, omega, a0, tol, max_iter, budget):
    level = omega.delta_hat
    k = model.n - 1
    a = a0
    shot = shoot_orthogonal(model, well, omega, a, budget)
    r = shot.residual
    for _ in range(max_iter):
        rn = float(np.linalg.norm(r))
        if rn <= tol:
            return shot
        h = 1e-6 * (1 + np.linalg.norm(a))
        J = np.empty((k, k))
        for j in range(k):
            e = np.zeros(k)
            e[j] = h
            J[:, j] = (shoot_orthogonal(model, well, omega, _on_level(model, well, a, e, level), budget).residual
                       - r) / h
        step = np.linalg.lstsq(J, -r, rcond=None)[0]
        lam = 1.0
        for _ in range(30):
            try:
                an = _on_level(model, well, a, lam * step, level)
                sn = shoot_orthogonal(model, well, omega, an, budget)
            except (NoExit, NewtonDivergence, OutsideCollar, StepFailure, ValidationError):
                lam *= 0.5
                continue
            if np.linalg.norm(sn.residual) < rn:
                break
            lam *= 0.5
        else:
            return None
        a, shot, r = an, sn, sn.residual
    return shot if np.linalg.norm(r) <= tol else None


def _as_chord(model, well, omega, shot: ShotResult) -> GeodesicChord:
    c0 = _chart(model, well, shot.start)
    p0 = shot.trajectory.p[0]
    res_a = float(np.linalg.norm(_tangential(p0, c0.length * c0.momentum)))
    res_b = float(np.linalg.norm(shot.residual))
    inner = shot.curve.evaluate(np.linspace(0, 1, 41)[1:-1])[0]
    gap_cut = 1.5 * _max_level_gap(model, omega)
    vals = []
    for q in inner:
        if model.energy - model.V(q) > gap_cut:
            continue
        try:
            vals.append(_chart(model, well, q).length ** 2)
        except (OutsideCollar, StepFailure):
            continue
    min_psi = min(vals) if vals else math.inf
    fv = first_variation_residual(model, shot.curve)
    return GeodesicChord(shot.curve, shot.start, shot.hit, np.array([res_a, res_b]), shot.length, fv, min_psi,
                         shot.trajectory)


def _same_chord(c1: GeodesicChord, c2: GeodesicChord, tol: float) -> bool:
    fwd = np.linalg.norm(c1.a - c2.a) <= tol and np.linalg.norm(c1.b - c2.b) <= tol
    rev = np.linalg.norm(c1.a - c2.b) <= tol and np.linalg.norm(c1.b - c2.a) <= tol
    return bool(fwd or rev)


def find_chords(model: HamiltonianModel, well: PotentialWell, omega: OmegaRegion, nstarts: int = 16,
                tol: float = 1e-10, max_iter: int = 40, threads: int = 1, dedup: float = 1e-4,
                budget: float | None = None) -> list[GeodesicChord]:
    """Multistart Newton for orthogonal chords over boundary coordinates of the start point.

    Chords that agree, up to reversal, within ``dedup`` are merged; the
    result is ordered by length and then by start point.
    """
    if nstarts < 8:
        raise ValidationError("find_chords needs at least 8 starts")
    starts = _start_points(model, well, omega, nstarts)

    def run(a0):
        try:
            shot = _newton_chord(model, well, omega, a0, tol, max_iter, budget)
        except (NoExit, NewtonDivergence, OutsideCollar, StepFailure, EscapedDomain):
            return None
        return None if shot is None else _as_chord(model, well, omega, shot)

    found = [c for c in ordered_map(run, starts, threads) if c is not None]
    unique: list[GeodesicChord] = []
    for c in found:
        if not any(_same_chord(c, u, dedup) for u in unique):
            unique.append(c)
    unique.sort(key=lambda c: (round(c.length, 9), tuple(np.round(c.a, 9))))
    return unique


# ---------------------------------------------------------------------------- brake orbits
@dataclass(frozen=True)
class CertificateItem:
    value: float
    threshold: float

    @property
    def passed(self) -> bool:
        return bool(self.value <= self.threshold)


@dataclass(frozen=True)
class BrakeCertificate:
    """Independent checks of a brake orbit; every item must stay below its threshold."""

    items: dict[str, CertificateItem]

    @property
    def passed(self) -> bool:
        return all(i.passed for i in self.items.values())

    def __getitem__(self, key: str) -> CertificateItem:
        return self.items[key]

    def to_dict(self) -> dict:
        return {k: {"value": v.value, "threshold": v.threshold, "passed": v.passed} for k, v in self.items.items()}


@dataclass(frozen=True)
class BrakeOrbit:
    """Solution of Hamilton's equations from rest on the boundary to rest on the boundary.

    ``curve`` is the glued constant-speed geodesic the orbit was built from
    and ``trajectory`` the dense physical-time solution, when available.
    """

    time_grid: np.ndarray
    q: np.ndarray
    p: np.ndarray
    period_half: float
    certificate: BrakeCertificate | None = None
    junctions: dict = field(default_factory=dict)
    curve: DiscreteCurve | None = field(default=None, repr=False, compare=False)
    trajectory: Trajectory | None = field(default=None, repr=False, compare=False)

    @property
    def states(self) -> list[PhasePoint]:
        return [PhasePoint(q, p) for q, p in zip(self.q, self.p)]

    def with_certificate(self, cert: BrakeCertificate) -> "BrakeOrbit":
        return BrakeOrbit(self.time_grid, self.q, self.p, self.period_half, cert, self.junctions, self.curve,
                          self.trajectory)

    def to_rows(self) -> list[list[float]]:
        """CSV rows ``(t, q..., p...)``."""
        return [[float(t), *map(float, q), *map(float, p)] for t, q, p in zip(self.time_grid, self.q, self.p)]

    def to_dict(self) -> dict:
        return {"period_half": self.period_half, "endpoints": [self.q[0].tolist(), self.q[-1].tolist()],
                "junctions": self.junctions,
                "certificate": None if self.certificate is None else self.certificate.to_dict()}


def verify_brake_orbit(model: HamiltonianModel, well: PotentialWell, orbit: BrakeOrbit,
                       energy_tol: float = 1e-8, hamilton_tol: float = 1e-6,
                       momentum_tol: float = 1e-6) -> BrakeCertificate:
    """Recompute every certificate entry from the raw states."""
    q, p, t = orbit.q, orbit.p, orbit.time_grid
    energy = float(np.max(np.abs(model.kernel.H(q, p) - model.energy)))
    traj = Trajectory(t, q, p, np.zeros(len(t)), "H=E", energy)
    ham = hamilton_residual(model, traj)
    mom = float(max(np.linalg.norm(p[0]), np.linalg.norm(p[-1])))
    ends = float(max(abs(well.gap(q[0])[0]), abs(well.gap(q[-1])[0])))
    gaps = well.gap(q[1:-1])
    interior = float(max(0.0, -np.min(gaps))) if len(gaps) else 0.0
    return BrakeCertificate({
        "energy_residual": CertificateItem(energy, energy_tol),
        "hamilton_residual": CertificateItem(ham, hamilton_tol),
        "endpoint_momentum": CertificateItem(mom, momentum_tol),
        "endpoint_boundary_defect": CertificateItem(ends, well.tol_boundary),
        "interior_violation": CertificateItem(interior, 0.0),
    })


def _angle(u: np.ndarray, v: np.ndarray) -> float:
    c = float(u @ v) / (np.linalg.norm(u) * np.linalg.norm(v))
    s = np.linalg.norm(u / np.linalg.norm(u) - c * v / np.linalg.norm(v))
    return float(math.atan2(s, c))


def _glue(pieces: list[DiscreteCurve]) -> tuple[DiscreteCurve, list[float]]:
    lengths = np.array([c.length for c in pieces])
    L = float(lengths.sum())
    frac = lengths / L
    starts = np.concatenate([[0.0], np.cumsum(frac)[:-1]])
    last = len(pieces) - 1

    def evaluate(s, sc):
        q = np.empty((len(s), pieces[0].n))
        v = np.empty_like(q)
        idx = np.clip(np.searchsorted(starts, s, side="right") - 1, 0, last)
        for k, piece in enumerate(pieces):
            m = idx == k
            if not m.any():
                continue
            sl = (s[m] - starts[k]) / frac[k]
            # the last piece is addressed from the right end to keep precision there
            scl = sc[m] / frac[k] if k == last else 1.0 - sl
            qk, vk = piece.evaluate(sl, scl)
            q[m], v[m] = qk, vk * (L / lengths[k])
        return q, v

    s_nodes = np.linspace(0.0, 1.0, 601)
    nodes = evaluate(s_nodes, 1.0 - s_nodes)[0]
    nodes[0], nodes[-1] = pieces[0].nodes[0], pieces[-1].nodes[-1]
    ends = (pieces[0].boundary_ends[0], pieces[-1].boundary_ends[1])
    return DiscreteCurve(nodes, s_nodes, "finsler-arclength", L**2, evaluate, ends), list(starts[1:])


def _launch_curve(model, cc: CollarCoords, tol):
    traj = integrate_H(model, PhasePoint(cc.Q_y, np.zeros(model.n)), (0.0, cc.t_y), tol=tol)
    return orbit_to_geodesic(model, traj, energy_tol=max(1e-8, 10 * traj.tolerance))


def extend_to_brake_orbit(model: HamiltonianModel, well: PotentialWell, chord: GeodesicChord,
                          angle_tol: float = 1e-6, tol: float = 1e-12, npts: int = 2001) -> BrakeOrbit:
    """Glue the boundary minimizers of the chord ends to the chord and convert to physical time.

    Raises
    ------
    CollarPrecondition
        If an endpoint is deeper than the collar.
    ParallelismFailure
        If the chord and a minimizer meet at an angle above ``angle_tol``.
    """
    collar = get_collar(model, well)
    charts = []
    for y in (chord.a, chord.b):
        if well.distance_to_boundary(y) > collar.depth:
            raise CollarPrecondition("chord endpoint lies deeper than the collar")
        try:
            charts.append(collar_chart(model, well, y, tol=tol))
        except OutsideCollar as exc:
            raise CollarPrecondition(str(exc)) from exc
    ca, cb = charts
    # chord velocities at its ends versus the launch velocities through them
    v_a = model.kernel.Kp(chord.trajectory.state_at(chord.trajectory.grid[0])[1])[0]
    v_b = model.kernel.Kp(chord.trajectory.state_at(chord.trajectory.grid[0] + chord.length)[1])[0]
    ang_a = _angle(v_a, model.kernel.Kp(ca.momentum[None])[0])
    ang_b = _angle(v_b, -model.kernel.Kp(cb.momentum[None])[0])
    if max(ang_a, ang_b) > angle_tol:
        raise ParallelismFailure(f"junction angles {ang_a:.2e}, {ang_b:.2e} exceed {angle_tol:.1e}")
    into_a = _launch_curve(model, ca, tol)
    out_of_b = _launch_curve(model, cb, tol).reversed()
    glued, breaks = _glue([into_a, chord.curve, out_of_b])
    traj, rmap = geodesic_to_orbit(model, glued, npts=npts, breaks=breaks)
    junctions = {
        "position_gap": [float(np.linalg.norm(into_a.nodes[-1] - chord.a)),
                         float(np.linalg.norm(out_of_b.nodes[0] - chord.b))],
        "angle": [ang_a, ang_b],
        "times": [float(x) for x in rmap(np.array(breaks))],
        "boundary_points": [ca.Q_y.tolist(), cb.Q_y.tolist()],
    }
    orbit = BrakeOrbit(traj.grid, traj.q, traj.p, rmap.total_time, None, junctions, glued, traj)
    return orbit.with_certificate(verify_brake_orbit(model, well, orbit))


@dataclass(frozen=True)
class BrakeSolution:
    omega: OmegaRegion
    chords: list[GeodesicChord]
    orbits: list[BrakeOrbit]
    lowered: bool
    failures: list[str]

    def to_dict(self) -> dict:
        return {"omega": self.omega.to_dict(), "lowered_delta_hat": self.lowered, "failures": self.failures,
                "chords": [c.to_dict() for c in self.chords], "orbits": [o.to_dict() for o in self.orbits]}


def solve_brake_orbits(model: HamiltonianModel, well: PotentialWell, omega: OmegaRegion | None = None,
                       nstarts: int = 16, budget: int = 100, threads: int = 1) -> BrakeSolution:
    """Certified region, its orthogonal chords and their brake orbits.

    When a chord endpoint falls outside the collar, ``delta_hat`` is halved
    and the search repeated once.
    """
    if omega is None:
        omega = select_delta_hat(model, well, budget=budget, threads=threads)
    lowered = False
    while True:
        chords = find_chords(model, well, omega, nstarts, threads=threads)
        orbits, failures = [], []
        retry = False
        for c in chords:
            try:
                orbits.append(extend_to_brake_orbit(model, well, c))
            except CollarPrecondition as exc:
                retry = True
                failures.append(f"CollarPrecondition: {exc}")
            except (ParallelismFailure, NewtonDivergence, StepFailure) as exc:
                failures.append(f"{type(exc).__name__}: {exc}")
        if retry and not lowered:
            try:
                omega = select_delta_hat(model, well, budget=budget, start=0.5 * omega.delta_hat, threads=threads)
            except EmptyRegion:
                break
            lowered = True
            continue
        return BrakeSolution(omega, chords, orbits, lowered, failures)
    return BrakeSolution(omega, chords, orbits, lowered, failures)
