"""The squared boundary distance ``psi``, its derivatives and the concave region.

``psi(y)`` is the least curve energy from ``y`` to the boundary. Inside the
collar it equals ``ell(t_y, Q_y)^2`` and its differential is
``dpsi(y) = sqrt(psi) * p(t_y, Q_y)``, the rescaled momentum of the boundary
launch through ``y``. The region ``Omega = {psi > delta}`` is certified by
sampling the second derivative of ``psi`` along geodesics tangent to its
boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ._parallel import ordered_map
from .errors import (
    CertificationFailure,
    EmptyRegion,
    EscapedDomain,
    NewtonDivergence,
    OutsideCollar,
    StepFailure,
    ValidationError,
)
from .flow import CollarCoords, collar_chart, get_collar, integrate_U
from .geodesy import minimizer_to_boundary
from .legendre import finsler_norm, momenta
from .model import HamiltonianModel, PhasePoint, PotentialWell, Region, _fibonacci_sphere, orthonormal_complement


@dataclass(frozen=True)
class PsiSample:
    """``psi`` at ``y``; ``grad`` is set when evaluated through the collar."""

    y: np.ndarray
    psi: float
    grad: np.ndarray | None
    method: str


def _collar_psi(model, well, y, guess: CollarCoords | None = None, check_depth: bool = True):
    cc = collar_chart(model, well, y, guess=guess, check_depth=check_depth,
                      cond_max=None if check_depth else np.inf)
    return cc.length**2, cc


def eval_psi(model: HamiltonianModel, well: PotentialWell, y, **minimizer_options) -> PsiSample:
    """``psi(y)``: through the collar chart when possible, else by minimization."""
    y = model._check(y)
    region = well.classify(y)
    if region is Region.EXTERIOR:
        raise ValidationError("y must lie in the closed well")
    if region is Region.BOUNDARY:
        return PsiSample(y, 0.0, None, "boundary")
    try:
        psi, cc = _collar_psi(model, well, y)
        return PsiSample(y, psi, cc.length * cc.momentum, "collar")
    except OutsideCollar:
        pass
    res = minimizer_to_boundary(model, well, y, use_collar=False, **minimizer_options)
    return PsiSample(y, res.J_value, None, res.method)


def grad_psi(model: HamiltonianModel, well: PotentialWell, y) -> np.ndarray:
    """``dpsi(y) = -dG/dv(y, gamma_y'(0))``, which equals ``ell * p`` at ``y``.

    Raises
    ------
    OutsideCollar
        If ``y`` is not covered by the collar chart.
    """
    y = model._check(y)
    if well.classify(y) is not Region.INTERIOR:
        raise ValidationError("y must be interior")
    cc = collar_chart(model, well, y)
    return cc.length * cc.momentum


def collar_points(model: HamiltonianModel, well: PotentialWell, k: int, seed: int = 0,
                  depth_range: tuple[float, float] = (0.1, 0.8)) -> np.ndarray:
    """Random points inside the collar, at a fraction of its depth below the boundary."""
    rng = np.random.default_rng(seed)
    depth = get_collar(model, well).depth
    Q = well.boundary_samples(max(k, 8))[rng.permutation(max(k, 8))[:k]]
    normals = model.kernel.gradV(Q)
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    d = depth * rng.uniform(*depth_range, size=k)
    return Q - d[:, None] * normals


@dataclass(frozen=True)
class GradientCheck:
    """Collar gradient of ``psi`` against central differences, per point."""

    points: np.ndarray
    collar: np.ndarray
    finite_difference: np.ndarray
    relative_error: np.ndarray

    @property
    def max_relative_error(self) -> float:
        return float(np.max(self.relative_error))

    def to_rows(self) -> list[list[float]]:
        return [[*map(float, y), *map(float, g), *map(float, f), float(e)]
                for y, g, f, e in zip(self.points, self.collar, self.finite_difference, self.relative_error)]


def gradient_check(model: HamiltonianModel, well: PotentialWell, points, h: float = 1e-5,
                   threads: int = 1) -> GradientCheck:
    """Compare ``ell * p`` from the collar chart with central differences of ``psi``."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    E = np.eye(model.n)

    def one(y):
        psi0, cc = _collar_psi(model, well, y, check_depth=False)
        g = cc.length * cc.momentum
        fd = np.array([(_collar_psi(model, well, y + h * e, cc, False)[0]
                        - _collar_psi(model, well, y - h * e, cc, False)[0]) / (2 * h) for e in E])
        return g, fd

    res = ordered_map(one, list(points), threads)
    G = np.array([r[0] for r in res])
    FD = np.array([r[1] for r in res])
    err = np.linalg.norm(G - FD, axis=1) / np.linalg.norm(G, axis=1)
    return GradientCheck(points, G, FD, err)


# ---------------------------------------------------------------------------- second derivative
@dataclass(frozen=True)
class HessianEstimate:
    """Richardson-extrapolated second derivative of ``f`` along a geodesic.

    ``coarse`` and ``fine`` are the second differences with steps ``h`` and
    ``h/2``; ``offsets`` holds ``f(eta(+-h)) - f(y)``.
    """

    value: float
    h: float
    coarse: float
    fine: float
    offsets: tuple[float, float]

    @property
    def halving_ratio(self) -> float:
        return abs(self.fine - self.coarse) / max(abs(self.fine), 1e-300)


def _geodesic_points(model: HamiltonianModel, y: np.ndarray, xi: np.ndarray, h: float) -> np.ndarray:
    """``eta(+-h), eta(+-h/2)`` on the geodesic with ``eta(0) = y``, ``eta'(0) = xi``."""
    F = float(finsler_norm(model, y[None], xi[None])[0])
    p0 = momenta(model, y[None], (xi / F)[None])[0]
    sigma = F * h
    margin = 1e-9 * (1 + abs(model.energy))
    out = []
    for sign in (1.0, -1.0):
        traj = integrate_U(model, PhasePoint(y, sign * p0), (0.0, sigma), tol=1e-12, stop_margin=margin)
        if traj.escaped or traj.grid[-1] < sigma * (1 - 1e-12):
            raise EscapedDomain("tangent geodesic reached the boundary before the step")
        q, _, _ = traj.state_at(np.array([sigma, 0.5 * sigma]))
        out.append(q)
    return np.array([out[0][0], out[1][0], out[0][1], out[1][1]])


def hessian_estimate(model: HamiltonianModel, well: PotentialWell, y, xi, h: float | None = None,
                     field: Callable[[np.ndarray], np.ndarray] | None = None,
                     tangency_tol: float = 1e-6) -> HessianEstimate:
    """Second derivative of ``psi`` (or ``field``) along the geodesic through ``(y, xi)``.

    The default step makes the Finsler length of ``eta([0, h])`` a tenth of
    ``sqrt(psi(y))`` (or of the distance scale of ``field``), so the estimate
    scales exactly quadratically in ``xi``.
    """
    y = model._check(y)
    xi = model._check(xi)
    if not np.any(xi):
        raise ValidationError("xi must be nonzero")
    if field is None:
        f0, cc = _collar_psi(model, well, y)
        grad = cc.length * cc.momentum

        def values(P):
            return np.array([_collar_psi(model, well, p, guess=cc, check_depth=False)[0] for p in P])

        scale = math.sqrt(f0)
    else:
        f0 = float(field(y[None])[0])
        eps = 1e-6 * (1 + np.linalg.norm(y))
        E = np.eye(model.n) * eps
        grad = (field(y + E) - field(y - E)) / (2 * eps)
        values = field
        scale = well.distance_to_boundary(y)
    if abs(grad @ xi) > tangency_tol * np.linalg.norm(grad) * np.linalg.norm(xi):
        raise ValidationError("xi is not tangent to the level set of psi")
    if h is None:
        F = float(finsler_norm(model, y[None], xi[None])[0])
        h = 0.1 * scale / F
    pts = _geodesic_points(model, y, xi, h)
    f = values(pts)
    coarse = (f[0] - 2 * f0 + f[1]) / h**2
    fine = (f[2] - 2 * f0 + f[3]) / (0.5 * h) ** 2
    value = (4 * fine - coarse) / 3
    return HessianEstimate(float(value), float(h), float(coarse), float(fine), (f[0] - f0, f[1] - f0))


def hessian_along(model: HamiltonianModel, well: PotentialWell, y, xi, h: float | None = None) -> float:
    """``H_psi(y)[xi, xi]``: second derivative of ``psi`` along the geodesic through ``(y, xi)``."""
    return hessian_estimate(model, well, y, xi, h).value


# ---------------------------------------------------------------------------- certification
@dataclass(frozen=True)
class CertificateEntry:
    point: np.ndarray
    tangent: np.ndarray
    value: float
    h: float
    halving_ratio: float
    min_offset: float

    def to_dict(self) -> dict:
        return {"point": self.point.tolist(), "tangent": self.tangent.tolist(), "value": self.value, "h": self.h,
                "halving_ratio": self.halving_ratio, "min_offset": self.min_offset}


@dataclass(frozen=True)
class ConcavityCertificate:
    """Sampled concavity test on a level set.

    ``passed`` iff every value exceeds ``margin`` and its step-halving ratio
    is at most ``consistency``.
    """

    level: float
    margin: float
    entries: list[CertificateEntry]
    failures: list[str] = field(default_factory=list)
    consistency: float = 0.05

    @property
    def passed(self) -> bool:
        return not self.failures and bool(self.entries) and all(
            e.value > self.margin and e.halving_ratio <= self.consistency for e in self.entries)

    @property
    def worst(self) -> CertificateEntry | None:
        return min(self.entries, key=lambda e: e.value) if self.entries else None

    def to_dict(self) -> dict:
        return {"level": self.level, "margin": self.margin, "consistency": self.consistency, "passed": self.passed,
                "failures": self.failures, "entries": [e.to_dict() for e in self.entries]}


def certify_concavity(model: HamiltonianModel, well: PotentialWell, level: float, samples,
                      margin: float | None = None, field: Callable[[np.ndarray], np.ndarray] | None = None,
                      threads: int = 1) -> ConcavityCertificate:
    """Test ``H_psi > margin`` at points of ``{psi = level}`` along all tangent directions.

    ``samples`` are points on the level set. With ``field`` the level set of
    that function is tested instead of ``psi``. Failures to evaluate (escape,
    leaving the collar) are recorded and fail the certificate.
    """
    P = np.atleast_2d(np.asarray(samples, dtype=float))
    if P.shape[1] != model.n or len(P) == 0:
        raise ValidationError("samples must have shape (k, n) with k >= 1")
    margin = 1e-6 * level if margin is None else margin

    def one(y):
        if field is None:
            g = grad_psi(model, well, y)
        else:
            eps = 1e-6 * (1 + np.linalg.norm(y))
            E = np.eye(model.n) * eps
            g = (field(y + E) - field(y - E)) / (2 * eps)
        out = []
        for xi in orthonormal_complement(g).T:
            est = hessian_estimate(model, well, y, xi, field=field)
            out.append(CertificateEntry(y.copy(), xi, est.value, est.h, est.halving_ratio, float(min(est.offsets))))
        return out

    def guarded(y):
        try:
            return one(y), None
        except (EscapedDomain, OutsideCollar, StepFailure, NewtonDivergence) as exc:
            return [], f"{type(exc).__name__} at {np.round(y, 12).tolist()}: {exc}"

    results = ordered_map(guarded, list(P), threads)
    entries = [e for r, _ in results for e in r]
    failures = [msg for _, msg in results if msg]
    return ConcavityCertificate(float(level), float(margin), entries, failures)


# ---------------------------------------------------------------------------- fields and level sets
@dataclass(frozen=True)
class PsiGrid:
    """``psi`` on a tensor grid; ``values[i, j] = psi(xs[j], ys[i])``, NaN where not evaluated."""

    xs: np.ndarray
    ys: np.ndarray
    values: np.ndarray

    def to_rows(self) -> list[list[float]]:
        """CSV rows ``(x, y, psi)`` for the evaluated nodes."""
        rows = []
        for i, yv in enumerate(self.ys):
            for j, xv in enumerate(self.xs):
                if np.isfinite(self.values[i, j]):
                    rows.append([float(xv), float(yv), float(self.values[i, j])])
        return rows


def psi_field(model: HamiltonianModel, well: PotentialWell, resolution: int = 64, pad: float = 0.02,
              collar_only: bool = True, threads: int = 1) -> PsiGrid:
    """``psi`` on a square grid over the well's bounding box (two degrees of freedom).

    With ``collar_only`` the deep interior, where ``psi`` is not smooth in
    general, is left as NaN; otherwise it is filled by minimization.
    """
    if model.n != 2:
        raise ValidationError("psi_field needs two degrees of freedom")
    lo, hi = well.bounding_box()
    span = hi - lo
    xs = np.linspace(lo[0] - pad * span[0], hi[0] + pad * span[0], resolution)
    ys = np.linspace(lo[1] - pad * span[1], hi[1] + pad * span[1], resolution)
    collar = get_collar(model, well)

    def row(i):
        out = np.full(resolution, np.nan)
        guess = None
        for j, xv in enumerate(xs):
            y = np.array([xv, ys[i]])
            region = well.classify(y)
            if region is Region.EXTERIOR:
                continue
            if region is Region.BOUNDARY:
                out[j] = 0.0
                continue
            # charted a little beyond the certified depth so level curves near it stay unbroken
            if well.distance_to_boundary(y) <= 2 * collar.depth:
                for attempt in (guess, None) if guess is not None else (None,):
                    try:
                        cc = collar_chart(model, well, y, guess=attempt, collar=collar, check_depth=False,
                                          cond_max=collar.cond_max)
                        out[j], guess = cc.length**2, cc
                        break
                    except OutsideCollar:
                        guess = None
                if np.isfinite(out[j]):
                    continue
            if not collar_only:
                out[j] = eval_psi(model, well, y).psi
        return out

    values = np.array(ordered_map(row, range(resolution), threads))
    return PsiGrid(xs, ys, values)


def _refine_to_level(model, well, y, level, tol=1e-10, max_iter=30):
    """Damped Newton along ``grad psi`` onto ``{psi = level}``."""
    guess = None
    cond_max = get_collar(model, well).cond_max
    for _ in range(max_iter):
        cc = collar_chart(model, well, y, guess=guess, check_depth=False, cond_max=cond_max)
        psi = cc.length**2
        g = cc.length * cc.momentum
        if abs(psi - level) <= tol * max(level, 1e-300):
            return y
        step = -(psi - level) / float(g @ g) * g
        while well.classify(y + step) is not Region.INTERIOR:
            step *= 0.5
            if np.linalg.norm(step) < 1e-15:
                raise NewtonDivergence("level-set refinement left the well")
        y = y + step
        guess = cc
    raise NewtonDivergence("level-set refinement did not converge")


def _resample_closed(poly: np.ndarray, k: int) -> np.ndarray:
    seg = np.linalg.norm(np.diff(poly, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    targets = np.linspace(0.0, cum[-1], k, endpoint=False)
    return np.column_stack([np.interp(targets, cum, poly[:, d]) for d in range(poly.shape[1])])


def _winds_around(poly: np.ndarray, point: np.ndarray) -> bool:
    rel = poly - point
    ang = np.arctan2(rel[:, 1], rel[:, 0])
    total = np.sum(np.angle(np.exp(1j * np.diff(ang))))
    return abs(total) > np.pi


def level_set_samples(model: HamiltonianModel, well: PotentialWell, level: float, k: int = 64,
                      resolution: int = 64, grid: PsiGrid | None = None) -> tuple[np.ndarray, bool]:
    """``k`` points on ``{psi = level}`` and whether it is a single closed curve.

    Two degrees of freedom use marching squares on the collar grid followed
    by Newton refinement; higher dimensions intersect rays from the potential
    minimum with the level set.
    """
    if model.n == 2:
        from skimage.measure import find_contours

        grid = psi_field(model, well, resolution) if grid is None else grid
        finite = np.isfinite(grid.values)
        contours = find_contours(np.where(finite, grid.values, 0.0), level, mask=finite)
        if not contours:
            raise EmptyRegion(f"no point of the collar has psi = {level:g}")
        to_xy = [np.column_stack([np.interp(c[:, 1], np.arange(len(grid.xs)), grid.xs),
                                  np.interp(c[:, 0], np.arange(len(grid.ys)), grid.ys)]) for c in contours]
        longest = max(to_xy, key=len)
        _, center = well.min_potential()
        closed = np.allclose(longest[0], longest[-1])
        single = len(to_xy) == 1 and closed and _winds_around(longest, center)
        pts = _resample_closed(longest, k)
        return np.array([_refine_to_level(model, well, p, level) for p in pts]), single
    _, center = well.min_potential()
    dirs = _fibonacci_sphere(k, model.n) if model.n > 2 else np.array([[1.0], [-1.0]])
    pts = [_ray_level_point(model, well, center, d, level) for d in dirs]
    return np.array(pts), True


def _ray_level_point(model, well, origin, d, level):
    Q = well.radial_boundary_point(d, origin)
    collar = get_collar(model, well)
    r_b = float(np.linalg.norm(Q - origin))
    lo, hi = max(r_b - collar.depth, 0.0), r_b  # psi(lo) >= level >= psi(hi) = 0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        try:
            psi = _collar_psi(model, well, origin + mid * d)[0]
        except OutsideCollar:
            psi = np.inf
        if psi > level:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-6 * r_b:
            break
    return _refine_to_level(model, well, origin + 0.5 * (lo + hi) * d, level)


# ---------------------------------------------------------------------------- concave region
@dataclass(frozen=True)
class OmegaRegion:
    """Candidate region ``{psi > delta_hat}`` with its sampled certificate."""

    delta_hat: float
    boundary_samples: np.ndarray
    concavity_certificate: ConcavityCertificate
    homeomorphism_check: bool
    inside_collar: bool
    levels_tried: tuple[float, ...] = ()

    @property
    def certified(self) -> bool:
        return self.concavity_certificate.passed and self.inside_collar

    def to_dict(self) -> dict:
        return {"level": self.delta_hat, "certified": self.certified,
                "homeomorphism_check": self.homeomorphism_check, "inside_collar": self.inside_collar,
                "levels_tried": list(self.levels_tried), "boundary": self.boundary_samples.tolist(),
                "certificate": self.concavity_certificate.to_dict()}


def psi_max(model: HamiltonianModel, well: PotentialWell) -> float:
    """``psi`` at the potential minimum, used as the range of ``psi``."""
    key = ("psi_max", id(model))
    if key not in well._cache:
        _, center = well.min_potential()
        well._cache[key] = eval_psi(model, well, center).psi
    return well._cache[key]


def omega_region(model: HamiltonianModel, well: PotentialWell, delta_hat: float, budget: int = 64,
                 resolution: int = 64, threads: int = 1, margin: float | None = None) -> OmegaRegion:
    """Extract ``{psi = delta_hat}`` and certify it (without searching other levels)."""
    if delta_hat <= 0:
        raise ValidationError("delta_hat must be positive")
    if delta_hat >= psi_max(model, well):
        raise EmptyRegion(f"delta_hat = {delta_hat:g} is not below the largest value of psi")
    collar = get_collar(model, well)
    pts, single = level_set_samples(model, well, delta_hat, budget, resolution)
    inside = delta_hat <= collar.psi_edge and all(well.distance_to_boundary(p) <= collar.depth for p in pts)
    cert = certify_concavity(model, well, delta_hat, pts, margin=margin, threads=threads)
    return OmegaRegion(float(delta_hat), pts, cert, bool(single), bool(inside), (float(delta_hat),))


def select_delta_hat(model: HamiltonianModel, well: PotentialWell, budget: int = 64, start: float | None = None,
                     max_levels: int = 20, resolution: int = 64, threads: int = 1) -> OmegaRegion:
    """Halve ``delta_hat`` from ``start`` until the sampled concavity certificate passes.

    The default start is the smaller of a quarter of the range of ``psi`` and
    the collar edge value, so ``{psi = delta_hat}`` lies where ``psi`` is
    smooth.

    Raises
    ------
    CertificationFailure
        With the worst sample of the last level if no level passes.
    """
    if budget < 50:
        raise ValidationError("budget must be at least 50 boundary samples")
    top = psi_max(model, well)
    collar = get_collar(model, well)
    level = min(0.25 * top, collar.psi_edge) if start is None else float(start)
    if level >= top:
        raise EmptyRegion(f"start level {level:g} is not below the largest value of psi")
    tried: list[float] = []
    last = None
    grid = psi_field(model, well, resolution, threads=threads) if model.n == 2 else None
    for _ in range(max_levels):
        tried.append(level)
        try:
            pts, single = level_set_samples(model, well, level, budget, resolution, grid=grid)
        except (EmptyRegion, NewtonDivergence, OutsideCollar):
            level *= 0.5
            continue
        if not single:
            # the level curve is cut by the edge of the charted band
            level *= 0.5
            continue
        inside = level <= collar.psi_edge and all(well.distance_to_boundary(p) <= collar.depth for p in pts)
        cert = certify_concavity(model, well, level, pts, threads=threads)
        last = OmegaRegion(level, pts, cert, bool(single), bool(inside), tuple(tried))
        if last.certified:
            return last
        level *= 0.5
    worst = last.concavity_certificate.worst if last is not None else None
    raise CertificationFailure(f"no level passed among {len(tried)} tried", sample=worst)
