"""Degree-2 homogenization of ``H`` on the energy shell.

``U(q, p)`` is the unique function positively homogeneous of degree 2 in ``p``
that equals 1 on ``{H = E}``. Writing ``p = r * theta`` with ``|theta| = 1``,

    U(q, p) = r^2 / omega(q, theta)^2,

where ``omega > 0`` solves ``H(q, omega * theta) = E``. Gradients use the
shell-reduction rule: on the shell the level sets of ``U`` and ``H`` coincide,
so ``U' = mu * H'`` with ``mu = 2 / <H_p, p>`` fixed by Euler's identity;
off the shell the point is first rescaled to ``p / sqrt(U)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BoundViolation, DegenerateMomentum, NoRoot, ValidationError
from .model import ConvexityBounds, HamiltonianModel, PotentialWell, convexity_constants, sample_shell


@dataclass(frozen=True)
class EnergyShell:
    """``{(q, p): q in D, |H(q, p) - E| <= tol}``."""

    model: HamiltonianModel
    tol: float = 1e-10

    def contains(self, q, p) -> bool:
        m = self.model
        return bool(m.V(q) < m.energy and abs(m.H(q, p) - m.energy) <= self.tol)


@dataclass(frozen=True)
class HomogenizedEval:
    """``omega``, ``U`` and the gradient of ``U`` at one point."""

    omega: float
    U: float
    dUdq: np.ndarray
    dUdp: np.ndarray


def _interior(model: HamiltonianModel, q) -> np.ndarray:
    q = model._check(q)
    if not model.V(q) < model.energy:
        raise NoRoot("q is not interior to the well")
    return q


def omega(model: HamiltonianModel, q, theta) -> float:
    """Shell scale: the unique ``w > 0`` with ``H(q, w * theta) = E``.

    Raises
    ------
    NoRoot
        If ``q`` is not interior or the bracket from the kinetic bounds fails.
    """
    q = _interior(model, q)
    th = model._check(theta)
    if abs(np.linalg.norm(th) - 1.0) > 1e-12:
        raise ValidationError("theta must be a unit vector")
    w = float(model.kernel.omega(q[None], th[None])[0])
    if not np.isfinite(w):
        raise NoRoot("shell equation has no bracketed root")
    return w


def eval_U(model: HamiltonianModel, q, p) -> float:
    """Homogenized Hamiltonian ``U(q, p)``."""
    q = _interior(model, q)
    p = model._check(p)
    u = float(model.kernel.U(q[None], p[None])[0])
    if not np.isfinite(u):
        raise NoRoot("shell equation has no bracketed root")
    return u


def grad_U(model: HamiltonianModel, q, p) -> tuple[np.ndarray, np.ndarray]:
    """``(dU/dq, dU/dp)`` by the shell-reduction rule (``p != 0``)."""
    q = _interior(model, q)
    p = model._check(p)
    if not np.any(p):
        raise ValidationError("grad_U is not defined at p = 0")
    ph = p / np.linalg.norm(p)
    w = omega(model, q, ph)
    hp = model.kernel.Kp((w * ph)[None])[0]
    if not float(hp @ ph) > 0:
        raise DegenerateMomentum("<dH/dp, p> <= 0 on the shell")
    _, uq, up = model.kernel.gradU(q[None], p[None])
    return uq[0], up[0]


def homogenized(model: HamiltonianModel, q, p) -> HomogenizedEval:
    """Bundle ``omega``, ``U`` and its gradient at ``(q, p != 0)``."""
    q = _interior(model, q)
    p = model._check(p)
    r = np.linalg.norm(p)
    w = omega(model, q, p / r)
    dq, dp = grad_U(model, q, p)
    return HomogenizedEval(w, (r / w) ** 2, dq, dp)


def shell_gradient_norms(model: HamiltonianModel, Q: np.ndarray, P: np.ndarray) -> np.ndarray:
    """``|U'(q, p)|`` for a batch of points."""
    _, uq, up = model.kernel.gradU(Q, P)
    return np.sqrt(np.sum(uq**2, axis=1) + np.sum(up**2, axis=1))


@dataclass(frozen=True)
class BoundsAudit:
    """Worst margins of the sampled a-priori bounds (non-negative means satisfied).

    ``lower_margin``/``upper_margin`` are relative margins of the two-sided
    bound ``nu_min |p|^2 / (2(E-V)) <= U <= nu_max |p|^2 / (2(E-V))``;
    ``gradient_margin`` is the relative margin of ``|U'| >= nu_deg / (E-V)``.
    """

    nsamples: int
    lower_margin: float
    upper_margin: float
    gradient_margin: float
    bounds: ConvexityBounds

    def to_dict(self) -> dict:
        return {
            "nsamples": self.nsamples,
            "lower_margin": self.lower_margin,
            "upper_margin": self.upper_margin,
            "gradient_margin": self.gradient_margin,
            "nu_min": self.bounds.nu_min,
            "nu_max": self.bounds.nu_max,
            "nu_degeneration": self.bounds.nu_degeneration,
        }


def audit_bounds(model: HamiltonianModel, well: PotentialWell, nsamples: int = 1000,
                 bounds: ConvexityBounds | None = None, seed: int = 1,
                 gradient_slack: float = 1e-2) -> BoundsAudit:
    """Check the two-sided ``U`` bound and the gradient degeneration bound.

    The ``U`` bounds are exact consequences of the kinetic eigenvalue bounds
    and are checked to ``1e-10``. The gradient constant is itself a sampled
    minimum, so fresh samples are allowed to undercut it by ``gradient_slack``.

    Raises
    ------
    BoundViolation
        With the offending sample, if a bound fails.
    """
    if nsamples <= 0:
        raise ValidationError("audit needs at least one sample")
    bounds = bounds or convexity_constants(model, well, max(100, nsamples))
    rng = np.random.default_rng(seed)
    Q, P = sample_shell(model, well, nsamples, rng)
    if len(Q) == 0:
        raise ValidationError("no shell samples drawn")
    gap = well.gap(Q)
    # off-shell momenta exercise the homogeneity of the bound
    scale = np.exp(rng.uniform(-2, 2, size=len(Q)))
    Ps = P * scale[:, None]
    u = model.kernel.U(Q, Ps)
    r2 = np.sum(Ps**2, axis=1)
    lower = (u - bounds.nu_min * r2 / (2 * gap)) / u
    upper = (bounds.nu_max * r2 / (2 * gap) - u) / u
    grad = shell_gradient_norms(model, Q, P)
    gmargin = (grad * gap - bounds.nu_degeneration) / bounds.nu_degeneration
    for name, arr, tol in (("lower U bound", lower, 1e-10), ("upper U bound", upper, 1e-10),
                           ("gradient bound", gmargin, gradient_slack)):
        k = int(np.argmin(arr))
        if arr[k] < -tol:
            raise BoundViolation(f"{name} violated by {arr[k]:.3e}", sample=(Q[k], P[k]))
    return BoundsAudit(len(Q), float(lower.min()), float(upper.min()), float(gmargin.min()), bounds)
