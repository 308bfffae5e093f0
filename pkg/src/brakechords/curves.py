"""Sampled configuration-space curves and the boundary-endpoint substitution.

A curve reaching the boundary of the well at constant Finsler speed behaves
like ``q(s) - Q ~ (1 - s)^(2/3)`` at that end. The substitution

    s(w) = w^3 / (w^3 + (1 - w)^3)        (both ends on the boundary)
    s(w) = 1 - (1 - w)^3                  (only s = 1)
    s(w) = w^3                            (only s = 0)

makes the curve smooth in ``w`` (``q - Q ~ (1 - w)^2``) and cancels the
endpoint singularity of the integrands built from it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline

PARAMETRIZATIONS = ("finsler-arclength", "uniform", "physical-time")

# ``(s, 1 - s) -> (gamma(s), gamma'(s))``; the complement is passed separately
# so that evaluators keep full precision next to ``s = 1``.
Evaluator = Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class EndpointMap:
    """Monotone map ``w -> s`` of ``[0, 1]`` cubic at the boundary ends."""

    at_start: bool = False
    at_end: bool = False

    def s(self, w):
        w = np.asarray(w, dtype=float)
        if self.at_start and self.at_end:
            a, b = w**3, (1 - w) ** 3
            return a / (a + b)
        if self.at_end:
            return 1 - (1 - w) ** 3
        if self.at_start:
            return w**3
        return w.copy()

    def sc(self, w):
        """``1 - s(w)`` without cancellation."""
        w = np.asarray(w, dtype=float)
        if self.at_start and self.at_end:
            a, b = w**3, (1 - w) ** 3
            return b / (a + b)
        if self.at_end:
            return (1 - w) ** 3
        if self.at_start:
            return 1 - w**3
        return 1 - w

    def ds_dw(self, w):
        w = np.asarray(w, dtype=float)
        if self.at_start and self.at_end:
            a, b = w**3, (1 - w) ** 3
            return 3 * w**2 * (1 - w) ** 2 / (a + b) ** 2
        if self.at_end:
            return 3 * (1 - w) ** 2
        if self.at_start:
            return 3 * w**2
        return np.ones_like(w)

    def w(self, s, sc=None):
        s = np.asarray(s, dtype=float)
        sc = 1 - s if sc is None else np.asarray(sc, dtype=float)
        if self.at_start and self.at_end:
            with np.errstate(divide="ignore", invalid="ignore"):
                r = np.cbrt(sc / s)
            return np.where(sc <= 0, 1.0, 1 / (1 + r))
        if self.at_end:
            return 1 - np.cbrt(sc)
        if self.at_start:
            return np.cbrt(s)
        return s.copy()


@dataclass(frozen=True)
class DiscreteCurve:
    """Configuration-space curve on ``s in [0, 1]``.

    Attributes
    ----------
    nodes : ndarray, shape (m, n)
        Sample points ``gamma(s_i)``.
    s : ndarray, shape (m,)
        Parameter values of the nodes, increasing from 0 to 1.
    parametrization : {"finsler-arclength", "uniform", "physical-time"}
    speed : float
        Constant ``G``-speed ``c = L^2`` for Finsler-arclength curves.
    evaluator : callable, optional
        Exact ``s -> (gamma(s), gamma'(s))``; without it the nodes are
        interpolated by a cubic spline in the desingularized variable.
    boundary_ends : tuple of bool
        Whether ``gamma(0)`` and ``gamma(1)`` lie on the well boundary.
    escaped : bool
        The generating geodesic reached the boundary early.
    """

    nodes: np.ndarray
    s: np.ndarray | None = None
    parametrization: str = "uniform"
    speed: float = float("nan")
    evaluator: Evaluator | None = field(default=None, repr=False, compare=False)
    boundary_ends: tuple[bool, bool] = (False, False)
    escaped: bool = False

    def __post_init__(self):
        X = np.array(self.nodes, dtype=float)
        if X.ndim != 2 or len(X) < 1:
            raise ValueError("nodes must have shape (m, n) with m >= 1")
        if not np.all(np.isfinite(X)):
            raise ValueError("nodes must be finite")
        s = np.linspace(0.0, 1.0, len(X)) if self.s is None else np.array(self.s, dtype=float)
        if s.shape != (len(X),):
            raise ValueError("s must have one entry per node")
        if len(s) > 1 and (np.any(np.diff(s) <= 0) or s[0] != 0.0 or s[-1] != 1.0):
            raise ValueError("s must increase strictly from 0 to 1")
        if self.parametrization not in PARAMETRIZATIONS:
            raise ValueError(f"unknown parametrization {self.parametrization!r}")
        object.__setattr__(self, "nodes", X)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "boundary_ends", tuple(bool(b) for b in self.boundary_ends))

    @property
    def m(self) -> int:
        return len(self.nodes)

    @property
    def n(self) -> int:
        return self.nodes.shape[1]

    @property
    def length(self) -> float:
        """Finsler length ``sqrt(c)`` of a constant-speed curve."""
        return float(np.sqrt(self.speed))

    @property
    def endpoint_map(self) -> EndpointMap:
        return EndpointMap(*self.boundary_ends)

    def evaluate(self, s, sc=None) -> tuple[np.ndarray, np.ndarray]:
        """``(gamma(s), gamma'(s))`` for an array of parameters.

        ``sc`` optionally supplies ``1 - s`` at full precision.
        """
        s = np.atleast_1d(np.asarray(s, dtype=float))
        sc = 1.0 - s if sc is None else np.atleast_1d(np.asarray(sc, dtype=float))
        if self.evaluator is not None:
            return self.evaluator(s, sc)
        return self._spline_evaluator()(s, sc)

    def evaluate_w(self, w) -> tuple[np.ndarray, np.ndarray]:
        """Evaluate at the desingularized parameter ``w``."""
        emap = self.endpoint_map
        return self.evaluate(emap.s(w), emap.sc(w))

    def _spline_evaluator(self) -> Evaluator:
        if self.m < 2:
            X = self.nodes

            def constant(s, sc):
                return np.repeat(X, len(s), axis=0), np.zeros((len(s), self.n))

            return constant
        emap = self.endpoint_map
        w_nodes = emap.w(self.s)
        kind = "not-a-knot" if self.m >= 4 else "natural"
        spl = CubicSpline(w_nodes, self.nodes, axis=0, bc_type=kind)
        dspl = spl.derivative()

        def interp(s, sc):
            w = emap.w(s, sc)
            with np.errstate(divide="ignore", invalid="ignore"):
                return spl(w), dspl(w) / emap.ds_dw(w)[:, None]

        return interp

    def reversed(self) -> "DiscreteCurve":
        ev = None
        if self.evaluator is not None:
            base = self.evaluator

            def ev(s, sc):
                q, v = base(sc, s)
                return q, -v

        return DiscreteCurve(self.nodes[::-1].copy(), 1.0 - self.s[::-1], self.parametrization, self.speed, ev,
                             self.boundary_ends[::-1], self.escaped)

    def to_rows(self) -> list[list[float]]:
        """CSV rows ``(s, q...)``."""
        return [[float(si), *map(float, qi)] for si, qi in zip(self.s, self.nodes)]


def invert_monotone(fun: Callable[[np.ndarray], np.ndarray], targets: np.ndarray, lo: float, hi: float,
                    iters: int = 56) -> np.ndarray:
    """Vectorized bisection for ``fun(x) = targets`` with ``fun`` increasing on ``[lo, hi]``."""
    targets = np.asarray(targets, dtype=float)
    a = np.full(targets.shape, float(lo))
    b = np.full(targets.shape, float(hi))
    for _ in range(iters):
        mid = 0.5 * (a + b)
        below = fun(mid) < targets
        a = np.where(below, mid, a)
        b = np.where(below, b, mid)
    return 0.5 * (a + b)
