"""Classical-type Hamiltonians, potential wells and their convexity constants.

Two families are built in::

    natural       H = 1/2 p^T A p + V(q)
    p4-perturbed  H = 1/2 p^T A p + beta * sum(p_i^4) + V(q),  beta >= 0

with ``A`` a constant symmetric positive-definite mass matrix and ``V`` a
polynomial. Both are even and strictly convex in ``p``, so every derivative is
available in closed form and evaluated by a compiled kernel when present.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
from scipy import optimize

from . import _backend
from .errors import (
    DegenerateBoundary,
    DimensionMismatch,
    NonFiniteInput,
    NoRoot,
    SampledNonConvex,
    ValidationError,
)

FAMILIES = ("natural", "p4-perturbed")


def _vector(x, name="array") -> np.ndarray:
    arr = np.array(x, dtype=float).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteInput(f"{name} has non-finite entries")
    return arr


@dataclass(frozen=True)
class PhasePoint:
    """Momentum-side phase-space point ``(q, p)``."""

    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        q = _vector(self.q, "q")
        p = _vector(self.p, "p")
        if q.shape != p.shape or q.size == 0:
            raise DimensionMismatch(f"q has shape {q.shape} but p has shape {p.shape}")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)

    @property
    def n(self) -> int:
        return self.q.size


@dataclass(frozen=True)
class TangentPoint:
    """Velocity-side point ``(q, v)``."""

    q: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        q = _vector(self.q, "q")
        v = _vector(self.v, "v")
        if q.shape != v.shape or q.size == 0:
            raise DimensionMismatch(f"q has shape {q.shape} but v has shape {v.shape}")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "v", v)

    @property
    def n(self) -> int:
        return self.q.size


@dataclass(frozen=True)
class Polynomial:
    """Polynomial ``sum_k c_k prod_j q_j^{e_kj}`` in ``n`` variables."""

    coefs: np.ndarray
    exponents: np.ndarray

    def __post_init__(self):
        c = np.array(self.coefs, dtype=float).reshape(-1)
        e = np.array(self.exponents, dtype=np.int64)
        if e.ndim != 2 or e.shape[0] != c.size:
            raise ValidationError("exponent table must have one row per coefficient")
        if np.any(e < 0):
            raise ValidationError("exponents must be non-negative integers")
        if not np.all(np.isfinite(c)):
            raise NonFiniteInput("polynomial coefficients must be finite")
        object.__setattr__(self, "coefs", c)
        object.__setattr__(self, "exponents", e)

    @property
    def n(self) -> int:
        return self.exponents.shape[1]

    @classmethod
    def from_terms(cls, terms: dict[tuple[int, ...], float]) -> "Polynomial":
        """Build from ``{exponent tuple: coefficient}``."""
        keys = list(terms)
        return cls(np.array([terms[k] for k in keys]), np.array(keys, dtype=np.int64))

    @classmethod
    def quadratic(cls, diag: Sequence[float]) -> "Polynomial":
        """``sum_i diag_i * q_i^2 / 2``."""
        n = len(diag)
        return cls(0.5 * np.asarray(diag, dtype=float), 2 * np.eye(n, dtype=np.int64))

    def __call__(self, q) -> float:
        q = np.asarray(q, dtype=float)
        return float(np.prod(q[None, :] ** self.exponents, axis=1) @ self.coefs)


class HamiltonianModel:
    """Evaluator bundle for a built-in classical-type Hamiltonian.

    Parameters
    ----------
    mass : array_like, shape (n, n)
        Symmetric positive-definite mass matrix ``A``.
    potential : Polynomial
        The potential ``V(q)``.
    energy : float
        Energy level ``E``.
    beta : float, optional
        Quartic momentum coefficient; nonzero selects the p4-perturbed family.
    family : {"natural", "p4-perturbed"}, optional
        Inferred from ``beta`` when omitted.
    backend : {"cython", "python"}, optional
        Kernel implementation; defaults to the compiled one when available.
    name : str, optional
        Label carried into reports.
    """

    def __init__(self, mass, potential: Polynomial, energy: float, beta: float = 0.0,
                 family: str | None = None, backend: str | None = None, name: str = ""):
        A = np.array(mass, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise DimensionMismatch("mass matrix must be square")
        if not np.all(np.isfinite(A)):
            raise NonFiniteInput("mass matrix has non-finite entries")
        if not np.allclose(A, A.T, rtol=1e-12, atol=1e-14):
            raise ValidationError("mass matrix must be symmetric")
        eig = np.linalg.eigvalsh(A)
        if eig[0] <= 0:
            raise ValidationError("mass matrix must be positive definite")
        if potential.n != A.shape[0]:
            raise DimensionMismatch("potential and mass matrix dimensions differ")
        if not np.isfinite(energy) or not np.isfinite(beta):
            raise NonFiniteInput("energy and beta must be finite")
        if beta < 0:
            raise ValidationError("beta must be non-negative for H to be convex in p")
        family = family or ("natural" if beta == 0 else "p4-perturbed")
        if family not in FAMILIES:
            raise ValidationError(f"unknown family {family!r}")
        if family == "natural" and beta != 0:
            raise ValidationError("natural family requires beta = 0")
        self.n = A.shape[0]
        self.mass = A
        self.inverse_mass = np.linalg.inv(A)
        self.potential = potential
        self.energy = float(energy)
        self.beta = float(beta)
        self.family = family
        self.name = name
        self.mass_eigenvalues = (float(eig[0]), float(eig[-1]))
        cls = _backend.kernel_class(backend)
        self.kernel = cls(A, self.beta, potential.coefs, potential.exponents, self.energy, eig[0], eig[-1])
        self.backend = self.kernel.backend

    @property
    def E(self) -> float:
        return self.energy

    def with_backend(self, backend: str) -> "HamiltonianModel":
        """Same model on another kernel backend."""
        return HamiltonianModel(self.mass, self.potential, self.energy, self.beta, self.family, backend, self.name)

    def _check(self, q, p=None):
        q = _vector(q, "q")
        if q.size != self.n:
            raise DimensionMismatch(f"expected dimension {self.n}, got {q.size}")
        if p is None:
            return q
        p = _vector(p, "p")
        if p.size != self.n:
            raise DimensionMismatch(f"expected dimension {self.n}, got {p.size}")
        return q, p

    # scalar evaluators ------------------------------------------------------
    def V(self, q) -> float:
        return float(self.kernel.V(self._check(q)[None])[0])

    def grad_V(self, q) -> np.ndarray:
        return self.kernel.gradV(self._check(q)[None])[0]

    def hess_V(self, q) -> np.ndarray:
        return self.kernel.hessV(self._check(q)[None])[0]

    def K(self, q, p) -> float:
        """Kinetic part ``H(q, p) - V(q)``."""
        _, p = self._check(q, p)
        return float(self.kernel.K(p[None])[0])

    def H(self, q, p) -> float:
        q, p = self._check(q, p)
        return float(self.kernel.H(q[None], p[None])[0])

    def dH(self, q, p) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(dH/dq, dH/dp, d2H/dp2)`` at ``(q, p)``."""
        q, p = self._check(q, p)
        return self.kernel.gradV(q[None])[0], self.kernel.Kp(p[None])[0], self.kernel.Kpp(p[None])[0]

    def d2H_dqdp(self, q, p) -> np.ndarray:
        """Mixed derivative; identically zero for the built-in families."""
        self._check(q, p)
        return np.zeros((self.n, self.n))

    def fd_derivatives(self, q, p) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Central-difference ``(dH/dq, dH/dp, d2H/dp2)`` for auditing."""
        q, p = self._check(q, p)
        eps3 = np.finfo(float).eps ** (1.0 / 3.0)
        hq = eps3 * (1.0 + np.linalg.norm(q))
        hp = eps3 * (1.0 + np.linalg.norm(p))
        E = np.eye(self.n)
        dq = np.array([(self.H(q + hq * e, p) - self.H(q - hq * e, p)) / (2 * hq) for e in E])
        dp = np.array([(self.H(q, p + hp * e) - self.H(q, p - hp * e)) / (2 * hp) for e in E])
        d2 = np.array([(self.dH(q, p + hp * e)[1] - self.dH(q, p - hp * e)[1]) / (2 * hp) for e in E])
        return dq, dp, 0.5 * (d2 + d2.T)

    def hamiltonian_field(self, Q: np.ndarray, P: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Batch ``(qdot, pdot) = (dH/dp, -dH/dq)`` for arrays of shape (m, n)."""
        return self.kernel.Kp(P), -self.kernel.gradV(Q)

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"<HamiltonianModel{label} n={self.n} family={self.family} E={self.energy} backend={self.backend}>"


def eval_hamiltonian(model: HamiltonianModel, z: PhasePoint) -> float:
    """``H(q, p)``."""
    return model.H(z.q, z.p)


def eval_derivatives(model: HamiltonianModel, z: PhasePoint) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(dH/dq, dH/dp, d2H/dp2)`` at ``z``."""
    return model.dH(z.q, z.p)


class Region(str, Enum):
    INTERIOR = "interior"
    BOUNDARY = "boundary"
    EXTERIOR = "exterior"


class PotentialWell:
    """Connected component of ``{V < E}`` containing ``seed``.

    Parameters
    ----------
    model : HamiltonianModel
    seed : array_like
        Interior point ``y0`` with ``V(y0) < E``.
    tol_boundary : float, optional
        Boundary tolerance on ``E - V``; default ``1e-10 * (1 + |E|)``.
    """

    def __init__(self, model: HamiltonianModel, seed, tol_boundary: float | None = None):
        self.model = model
        self.seed = model._check(seed)
        self.tol_boundary = 1e-10 * (1.0 + abs(model.energy)) if tol_boundary is None else float(tol_boundary)
        if not model.V(self.seed) < model.energy - self.tol_boundary:
            raise ValidationError("seed must satisfy V(seed) < E")
        self._cache: dict = {}
        samples = self.boundary_samples(64)
        gnorm = np.linalg.norm(model.kernel.gradV(samples), axis=1)
        if np.min(gnorm) <= 1e-8:
            raise DegenerateBoundary("grad V vanishes on the sampled boundary")

    # membership -------------------------------------------------------------
    def classify(self, q) -> Region:
        gap = self.model.energy - self.model.V(q)
        if abs(gap) <= self.tol_boundary:
            return Region.BOUNDARY
        return Region.INTERIOR if gap > 0 else Region.EXTERIOR

    def gap(self, Q) -> np.ndarray:
        """``E - V`` for a batch of points."""
        return self.model.energy - self.model.kernel.V(np.atleast_2d(Q))

    # boundary geometry ------------------------------------------------------
    def radial_boundary_point(self, direction, origin=None) -> np.ndarray:
        """First crossing of ``{V = E}`` along a ray from ``origin`` (default the seed)."""
        d = _vector(direction, "direction")
        d = d / np.linalg.norm(d)
        o = self.seed if origin is None else self.model._check(origin)
        E = self.model.energy
        V = self.model.V

        def f(r):
            return V(o + r * d) - E

        if f(0.0) >= 0:
            raise NoRoot("ray origin is not interior")
        r = self._cache.get("ray_step", 0.05)
        lo = 0.0
        for _ in range(200):
            if f(r) > 0:
                break
            lo = r
            r *= 1.25
        else:
            raise NoRoot("no boundary crossing along the ray")
        root = optimize.brentq(f, lo, r, xtol=1e-15, rtol=4 * np.finfo(float).eps)
        return self.project_to_boundary(o + root * d)

    def project_to_boundary(self, x, max_iter: int = 50) -> np.ndarray:
        """Newton along ``grad V`` onto ``{V = E}``."""
        x = self.model._check(x).copy()
        E = self.model.energy
        tol = 1e-15 * (1.0 + abs(E))
        for _ in range(max_iter):
            r = self.model.V(x) - E
            if abs(r) <= tol:
                break
            g = self.model.grad_V(x)
            g2 = float(g @ g)
            if g2 <= 1e-300:
                raise DegenerateBoundary("grad V vanishes during projection")
            x = x - r * g / g2
        return x

    def boundary_samples(self, k: int) -> np.ndarray:
        """``k`` boundary points along evenly spread directions from the seed."""
        key = ("samples", k)
        if key not in self._cache:
            n = self.model.n
            if n == 1:
                dirs = np.array([[1.0], [-1.0]])
            elif n == 2:
                ang = 2 * np.pi * np.arange(k) / k
                dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
            else:
                dirs = _fibonacci_sphere(k, n)
            self._cache[key] = np.array([self.radial_boundary_point(d) for d in dirs])
        return self._cache[key]

    def tangent_basis(self, Q) -> np.ndarray:
        """Orthonormal basis of the tangent hyperplane at ``Q``, shape (n, n-1)."""
        g = self.model.grad_V(Q)
        return orthonormal_complement(g)

    def distance_to_boundary(self, y) -> float:
        """Euclidean distance from ``y`` to the sampled-and-refined boundary."""
        return float(np.linalg.norm(y - self.closest_boundary_point(y)))

    def closest_boundary_point(self, y) -> np.ndarray:
        y = self.model._check(y)
        pts = self.boundary_samples(256)
        Q = pts[np.argmin(np.linalg.norm(pts - y, axis=1))]
        for _ in range(60):
            T = self.tangent_basis(Q)
            step = T @ (T.T @ (y - Q))
            Qn = self.project_to_boundary(Q + step)
            if np.linalg.norm(Qn - Q) <= 1e-14 * (1 + np.linalg.norm(Q)):
                Q = Qn
                break
            Q = Qn
        return Q

    def diameter(self) -> float:
        if "diameter" not in self._cache:
            pts = self.boundary_samples(128)
            diff = pts[:, None, :] - pts[None, :, :]
            self._cache["diameter"] = float(np.max(np.linalg.norm(diff, axis=2)))
        return self._cache["diameter"]

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        pts = self.boundary_samples(256)
        return pts.min(axis=0), pts.max(axis=0)

    def min_potential(self) -> tuple[float, np.ndarray]:
        """Minimum of ``V`` over the well and its location."""
        if "vmin" not in self._cache:
            res = optimize.minimize(self.model.V, self.seed, jac=self.model.grad_V, method="BFGS",
                                    options={"gtol": 1e-12})
            x = res.x if self.model.V(res.x) <= self.model.V(self.seed) else self.seed
            self._cache["vmin"] = (float(self.model.V(x)), np.array(x))
        return self._cache["vmin"]

    def sample_interior(self, k: int, rng: np.random.Generator) -> np.ndarray:
        """Uniform rejection samples of the open well."""
        lo, hi = self.bounding_box()
        out = []
        while sum(len(o) for o in out) < k:
            X = lo + (hi - lo) * rng.random((4 * k, self.model.n))
            out.append(X[self.gap(X) > self.tol_boundary])
        return np.concatenate(out)[:k]


def orthonormal_complement(g: np.ndarray) -> np.ndarray:
    """Orthonormal basis of ``g``'s orthogonal complement, shape (n, n-1)."""
    g = np.asarray(g, dtype=float)
    n = g.size
    if n == 2:
        t = np.array([-g[1], g[0]])
        return (t / np.linalg.norm(t))[:, None]
    q, _ = np.linalg.qr(np.column_stack([g, np.eye(n)]))
    return q[:, 1:n]


def _fibonacci_sphere(k: int, n: int) -> np.ndarray:
    if n == 3:
        i = np.arange(k) + 0.5
        phi = np.arccos(1 - 2 * i / k)
        theta = np.pi * (1 + 5**0.5) * i
        return np.stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)], axis=1)
    rng = np.random.default_rng(12345)
    d = rng.normal(size=(k, n))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def well_classify(well: PotentialWell, q) -> Region:
    """Interior, boundary or exterior, with tolerance ``well.tol_boundary``."""
    return well.classify(q)


def boundary_conormal(well: PotentialWell, Q) -> np.ndarray:
    """Outward Euclidean unit conormal ``grad V / |grad V|`` at a boundary point."""
    if well.classify(Q) is not Region.BOUNDARY:
        raise ValidationError("point is not on the boundary")
    g = well.model.grad_V(Q)
    nrm = np.linalg.norm(g)
    if nrm <= 1e-10 * (1 + abs(well.model.energy)):
        raise DegenerateBoundary("grad V vanishes at the boundary point")
    return g / nrm


@dataclass(frozen=True)
class ConvexityBounds:
    """Sampled convexity constants of the kinetic part and of ``U``.

    ``nu_min``/``nu_max`` bound the eigenvalues of ``d2K/dp2`` on the sampled
    region, ``nu_degeneration`` bounds ``(E - V) |U'|`` from below on the shell,
    and ``grad_min``/``grad_max`` bound ``|H'|`` on the closed shell.
    """

    nu_min: float
    nu_max: float
    nu_degeneration: float
    grad_min: float
    grad_max: float
    p_max: float = field(default=np.nan)

    def __post_init__(self):
        vals = (self.nu_min, self.nu_max, self.nu_degeneration, self.grad_min, self.grad_max)
        if not all(np.isfinite(v) and v > 0 for v in vals):
            raise ValidationError("convexity constants must be finite and positive")
        if self.nu_min > self.nu_max or self.grad_min > self.grad_max:
            raise ValidationError("convexity bounds out of order")


def momentum_cap(model: HamiltonianModel, well: PotentialWell) -> float:
    """Radius containing every shell momentum: ``sqrt(2 (E - Vmin) / lambda_min(A))``."""
    vmin, _ = well.min_potential()
    return float(np.sqrt(2.0 * (model.energy - vmin) / model.mass_eigenvalues[0]))


def sample_shell(model: HamiltonianModel, well: PotentialWell, k: int,
                 rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Random interior shell states ``(Q, P)`` with ``H = E``."""
    Q = well.sample_interior(k, rng)
    th = rng.normal(size=Q.shape)
    th /= np.linalg.norm(th, axis=1, keepdims=True)
    w = model.kernel.omega(Q, th)
    ok = np.isfinite(w)
    return Q[ok], w[ok, None] * th[ok]


def convexity_constants(model: HamiltonianModel, well: PotentialWell, nsamples: int = 1000,
                        seed: int = 0) -> ConvexityBounds:
    """Sample the constants bounding the kinetic Hessian and the shell gradients.

    Raises
    ------
    SampledNonConvex
        If ``d2K/dp2`` has a non-positive eigenvalue at some sample.
    """
    from .homogenize import shell_gradient_norms

    if nsamples < 100:
        raise ValidationError("nsamples must be at least 100")
    rng = np.random.default_rng(seed)
    n = model.n
    pmax = momentum_cap(model, well)
    # momenta: the ball of radius pmax, plus its centre and axis extremes
    P = rng.normal(size=(nsamples, n))
    P *= (pmax * rng.random(nsamples) ** (1.0 / n) / np.linalg.norm(P, axis=1))[:, None]
    axes = np.concatenate([np.eye(n), -np.eye(n)]) * pmax
    P = np.concatenate([np.zeros((1, n)), axes, P])
    eig = np.linalg.eigvalsh(model.kernel.Kpp(P))
    worst = int(np.argmin(eig[:, 0]))
    if eig[worst, 0] <= 0:
        raise SampledNonConvex("d2K/dp2 is not positive definite", sample=P[worst])
    nu_min, nu_max = float(eig[:, 0].min()), float(eig[:, -1].max())

    Q, Ps = sample_shell(model, well, nsamples, rng)
    Qb = well.boundary_samples(max(16, nsamples // 20))
    Qall = np.concatenate([Q, Qb])
    Pall = np.concatenate([Ps, np.zeros_like(Qb)])
    hq = model.kernel.gradV(Qall)
    hp = model.kernel.Kp(Pall)
    hnorm = np.sqrt(np.sum(hq**2, axis=1) + np.sum(hp**2, axis=1))
    nu3 = float(np.min(shell_gradient_norms(model, Q, Ps) * well.gap(Q)))
    return ConvexityBounds(nu_min, nu_max, nu3, float(hnorm.min()), float(hnorm.max()), pmax)


# ---------------------------------------------------------------------------- scenarios
SCENARIOS = ("s1", "s2", "s3")


def scenario(name: str, backend: str | None = None) -> tuple[HamiltonianModel, PotentialWell]:
    """Built-in desk-scale scenarios.

    ``s1``  iso-harmonic: ``H = |p|^2/2 + |q|^2/2``, ``E = 1/2``, unit disk.
    ``s2``  aniso-natural: ``H = (p1^2 + p2^2/2)/2 + q1^2/2 + 2 q2^2``, ``E = 1/2``.
    ``s3``  quartic: ``H = |p|^2/2 + 0.1 (p1^4 + p2^4) + |q|^2/2``, ``E = 1/2``.
    """
    key = name.lower()
    if key == "s1":
        model = HamiltonianModel(np.eye(2), Polynomial.quadratic([1.0, 1.0]), 0.5, backend=backend, name="s1")
    elif key == "s2":
        model = HamiltonianModel(np.diag([1.0, 0.5]), Polynomial.quadratic([1.0, 4.0]), 0.5,
                                 backend=backend, name="s2")
    elif key == "s3":
        model = HamiltonianModel(np.eye(2), Polynomial.quadratic([1.0, 1.0]), 0.5, beta=0.1,
                                 backend=backend, name="s3")
    else:
        raise ValidationError(f"unknown scenario {name!r}; choose from {SCENARIOS}")
    return model, PotentialWell(model, np.zeros(2))
