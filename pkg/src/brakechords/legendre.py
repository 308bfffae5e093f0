"""Legendre map between momenta and velocities, and the Jacobi-Finsler metric.

``L(q, p) = (q, dU/dp(q, p))`` is a diffeomorphism away from ``p = 0``. Its
fiberwise Legendre transform ``G(q, v) = max_p (<v, p> - U(q, p))`` is the
square of the Jacobi-Finsler metric ``F = sqrt(G)``, and because ``U`` is
2-homogeneous, ``G(q, dU/dp(q, p)) = U(q, p)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateConormal, NewtonDivergence, NoRoot, WrongFamily
from .homogenize import _interior
from .model import HamiltonianModel, PhasePoint, TangentPoint


@dataclass(frozen=True)
class MetricEval:
    """``G``, ``F = sqrt(G)`` and the partial derivatives of ``G`` at ``(q, v)``."""

    G: float
    F: float
    dGdv: np.ndarray
    dGdq: np.ndarray


def to_velocity(model: HamiltonianModel, z: PhasePoint) -> TangentPoint:
    """``v = dU/dp(q, p)``; ``p = 0`` maps to ``v = 0``."""
    q = _interior(model, z.q)
    if not np.any(z.p):
        return TangentPoint(q, np.zeros(model.n))
    _, _, up = model.kernel.gradU(q[None], z.p[None])
    if not np.all(np.isfinite(up)):
        raise NoRoot("shell equation has no bracketed root")
    return TangentPoint(q, up[0])


def momenta(model: HamiltonianModel, Q: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Batch inverse Legendre map; raises if any row fails."""
    P = model.kernel.to_momentum(np.atleast_2d(Q), np.atleast_2d(V))
    if not np.all(np.isfinite(P)):
        bad = int(np.argmax(~np.all(np.isfinite(P), axis=1)))
        raise NewtonDivergence(f"inverse Legendre map failed at row {bad}")
    return P


def to_momentum(model: HamiltonianModel, x: TangentPoint) -> PhasePoint:
    """Solve ``dU/dp(q, p) = v`` by damped Newton; ``v = 0`` maps to ``p = 0``."""
    q = _interior(model, x.q)
    return PhasePoint(q, momenta(model, q[None], x.v[None])[0])


def metric_batch(model: HamiltonianModel, Q: np.ndarray, V: np.ndarray):
    """Batch ``(G, dG/dv, dG/dq)`` for arrays of shape (m, n)."""
    P = momenta(model, Q, V)
    u, uq, _ = model.kernel.gradU(Q, P)
    G = np.sum(V * P, axis=1) - u
    return G, P, -uq


def eval_G(model: HamiltonianModel, x: TangentPoint) -> MetricEval:
    """Jacobi-Finsler quadratic form at ``(q, v)`` via its maximizer ``p*``."""
    q = _interior(model, x.q)
    G, P, Gq = metric_batch(model, q[None], x.v[None])
    g = max(float(G[0]), 0.0)
    return MetricEval(g, float(np.sqrt(g)), P[0], Gq[0])


def finsler_norm(model: HamiltonianModel, Q: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Batch ``F(q, v)``."""
    G = metric_batch(model, Q, V)[0]
    return np.sqrt(np.maximum(G, 0.0))


def riemannian_oracle_G(model: HamiltonianModel, x: TangentPoint) -> float:
    """Closed form ``G = (E - V) v^T A^{-1} v / 2`` for natural models."""
    if model.family != "natural":
        raise WrongFamily("the Riemannian closed form needs the natural family")
    gap = model.energy - model.V(x.q)
    return float(0.5 * gap * x.v @ model.inverse_mass @ x.v)


def normal_velocity(model: HamiltonianModel, Q, conormal, inward) -> TangentPoint:
    """Unit-``F`` velocity at ``Q`` that is Finsler-orthogonal to ``conormal``'s kernel.

    Orthogonality ``dG/dv(Q, v)[xi] = 0`` for every ``xi`` perpendicular to
    the conormal is equivalent to ``p* = dG/dv`` lying on the conormal line,
    so ``p* = s n / sqrt(U(Q, n))`` with the sign chosen so that ``v`` points
    along ``inward``.
    """
    Q = _interior(model, Q)
    n = model._check(conormal)
    nrm = np.linalg.norm(n)
    if nrm <= 1e-14:
        raise DegenerateConormal("conormal must be nonzero")
    n = n / nrm
    u = float(model.kernel.U(Q[None], n[None])[0])
    if not np.isfinite(u) or u <= 0:
        raise NoRoot("U is undefined along the conormal")
    p = n / np.sqrt(u)
    v = model.kernel.gradU(Q[None], p[None])[2][0]
    if float(v @ model._check(inward)) < 0:
        v = -v
    return TangentPoint(Q, v)
