"""Brake orbits of classical-type Hamiltonians through Finsler geodesic chords.

The pipeline turns the energy shell ``H = E`` of a potential well into a
Jacobi-Finsler metric, measures the squared distance ``psi`` to the well
boundary, certifies a strongly concave sublevel region ``Omega`` and finds its
orthogonal geodesic chords. Each chord extends to a brake orbit of ``H``.
"""

from ._backend import available_backends
from .chords import (
    BrakeCertificate,
    BrakeOrbit,
    BrakeSolution,
    GeodesicChord,
    ShotResult,
    extend_to_brake_orbit,
    find_chords,
    shoot_orthogonal,
    solve_brake_orbits,
    verify_brake_orbit,
)
from .curves import DiscreteCurve
from .flow import (
    Trajectory,
    boundary_expansion_check,
    collar_chart,
    estimate_epsilon_bar,
    integrate_H,
    integrate_U,
    launch_from_boundary,
    rim_time_audit,
)
from .geodesy import (
    energy_functional,
    first_variation_residual,
    geodesic_ivp,
    minimizer_to_boundary,
)
from .homogenize import audit_bounds, eval_U, grad_U, omega
from .legendre import eval_G, finsler_norm, normal_velocity, to_momentum, to_velocity
from .model import (
    HamiltonianModel,
    PhasePoint,
    Polynomial,
    PotentialWell,
    TangentPoint,
    convexity_constants,
    scenario,
)
from .psi import (
    OmegaRegion,
    certify_concavity,
    eval_psi,
    grad_psi,
    hessian_along,
    omega_region,
    psi_field,
    select_delta_hat,
)
from .reparam import eval_phi, geodesic_to_orbit, hamilton_residual, orbit_to_geodesic

__version__ = "0.1.0"

__all__ = [
    "BrakeCertificate", "BrakeOrbit", "BrakeSolution", "DiscreteCurve", "GeodesicChord", "HamiltonianModel",
    "OmegaRegion", "PhasePoint", "Polynomial", "PotentialWell", "ShotResult", "TangentPoint", "Trajectory",
    "audit_bounds", "available_backends", "boundary_expansion_check", "certify_concavity", "collar_chart",
    "convexity_constants", "energy_functional", "estimate_epsilon_bar", "eval_G", "eval_U", "eval_phi",
    "eval_psi", "extend_to_brake_orbit", "find_chords", "finsler_norm", "first_variation_residual",
    "geodesic_ivp", "geodesic_to_orbit", "grad_U", "grad_psi", "hamilton_residual", "hessian_along",
    "integrate_H", "integrate_U", "launch_from_boundary", "minimizer_to_boundary", "normal_velocity", "omega",
    "omega_region", "orbit_to_geodesic", "psi_field", "rim_time_audit", "scenario", "select_delta_hat",
    "shoot_orthogonal", "solve_brake_orbits", "to_momentum", "to_velocity", "verify_brake_orbit",
]
