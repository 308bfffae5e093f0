"""Exception hierarchy.

Every numerical failure raised by the package derives from
:class:`BrakeChordsError`, so callers (and the CLI exit-code mapping) can
distinguish validation problems from numerical breakdowns.
"""

from __future__ import annotations


class BrakeChordsError(Exception):
    """Base class for all package errors."""


class ValidationError(BrakeChordsError, ValueError):
    """Invalid model, well or configuration input."""


class DimensionMismatch(ValidationError):
    """Arrays of incompatible dimension."""


class NonFiniteInput(ValidationError):
    """NaN or infinite entries in an input array."""


class WrongFamily(ValidationError):
    """Operation requires a different Hamiltonian family."""


class SampledNonConvex(ValidationError):
    """The kinetic Hessian lost positive definiteness on a sample."""

    def __init__(self, message, sample=None):
        super().__init__(message)
        self.sample = sample


class DegenerateBoundary(ValidationError):
    """The potential gradient vanishes at a boundary point."""


class NumericalError(BrakeChordsError, ArithmeticError):
    """A numerical procedure failed to deliver its accuracy contract."""


class NoRoot(NumericalError):
    """The shell equation H(q, w*theta) = E has no bracketed root."""


class DegenerateMomentum(NumericalError):
    """<dH/dp, p> <= 0 where the shell reduction needs it positive."""


class NewtonDivergence(NumericalError):
    """A Newton iteration failed to converge."""


class StepFailure(NumericalError):
    """The ODE integrator could not complete the requested span."""


class ImmediateEscape(NumericalError):
    """A boundary launch left the closed well right away."""


class OutsideCollar(NumericalError):
    """The point is too deep for the boundary collar chart."""


class NoValidEpsilon(NumericalError):
    """No rim width passed the sampled second-derivative test."""


class BoundViolation(NumericalError):
    """A sampled a-priori bound on U or its gradient was violated."""

    def __init__(self, message, sample=None):
        super().__init__(message)
        self.sample = sample


class NonConvergentQuadrature(NumericalError):
    """Adaptive quadrature did not reach its tolerance."""


class ZeroLength(NumericalError):
    """A curve or trajectory has zero Finsler length."""


class MinimizationStall(NumericalError):
    """The curve-energy minimization could not make progress."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class NoExit(NumericalError):
    """A shot geodesic did not leave the region within its budget."""


class EmptyRegion(NumericalError):
    """The requested level exceeds every sampled value of psi."""


class CertificationFailure(BrakeChordsError):
    """No concavity level passed within the search budget."""

    def __init__(self, message, sample=None):
        super().__init__(message)
        self.sample = sample


class ParallelismFailure(NumericalError):
    """Chord and boundary minimizer velocities are not parallel."""


class CollarPrecondition(NumericalError):
    """A chord endpoint lies outside the boundary collar."""


class DegenerateConormal(ValidationError):
    """A zero conormal was supplied."""


class EscapedDomain(NumericalError):
    """A geodesic reached the boundary before the requested length."""
