"""Command-line driver: configuration, pipeline orchestration and result files.

Usage::

    brakechords [--config PATH] [--out DIR] [--seed N] [--threads N]
                [--scenario {s1,s2,s3,custom}] GROUP ACTION

Each command writes ``<group>_<action>.json`` (with ``schema: 1``) and CSV
tables into ``--out``. Exit codes: 0 success, 2 invalid input, 3 a
certificate or verification failed, 4 a numerical procedure failed.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import chords, flow, homogenize, legendre, psi
from .errors import BrakeChordsError, CertificationFailure, NumericalError, ValidationError
from .model import SCENARIOS, HamiltonianModel, Polynomial, PotentialWell, TangentPoint, scenario

SCHEMA = 1
EXIT_OK, EXIT_INVALID, EXIT_UNCERTIFIED, EXIT_NUMERICAL = 0, 2, 3, 4


# ---------------------------------------------------------------------------- configuration
@dataclass
class ScenarioConfig:
    """Validated run configuration.

    A config file is TOML with one level of sections, for example::

        [model]
        scenario = "custom"
        mass = [[1.0, 0.0], [0.0, 0.5]]
        potential = [[0.5, 2, 0], [2.0, 0, 2]]   # rows: coefficient, exponents
        energy = 0.5
        beta = 0.0
        seed_point = [0.0, 0.0]

        [tol]
        integration = 1e-12

    Keys may also be written dotted at top level (``tol.newton = 1e-10``).
    """

    scenario: str = "s1"
    mass: list | None = None
    potential: list | None = None
    energy: float = 0.5
    beta: float = 0.0
    seed_point: list | None = None
    tol_integration: float = 1e-12
    tol_quadrature: float = 1e-9
    tol_newton: float = 1e-10
    tol_boundary: float | None = None
    grid_resolution: int = 64
    grid_samples: int = 1000
    certificate_samples: int = 100
    nstarts: int = 16
    gradient_points: int = 50
    seed: int = 0
    threads: int = 1

    _KEYS = {
        "model.scenario": "scenario", "model.mass": "mass", "model.potential": "potential",
        "model.energy": "energy", "model.beta": "beta", "model.seed_point": "seed_point",
        "tol.integration": "tol_integration", "tol.quadrature": "tol_quadrature",
        "tol.newton": "tol_newton", "tol.boundary": "tol_boundary",
        "grid.resolution": "grid_resolution", "grid.samples": "grid_samples",
        "search.certificate_samples": "certificate_samples", "search.nstarts": "nstarts",
        "search.gradient_points": "gradient_points", "run.seed": "seed", "run.threads": "threads",
    }

    @classmethod
    def from_mapping(cls, data: dict) -> "ScenarioConfig":
        flat = {}
        for key, value in data.items():
            if isinstance(value, dict):
                for sub, v in value.items():
                    if isinstance(v, dict):
                        raise ValidationError(f"config nests deeper than one level at {key}.{sub}")
                    flat[f"{key}.{sub}"] = v
            else:
                flat[key] = value
        cfg = cls()
        for key, value in flat.items():
            if key not in cls._KEYS:
                raise ValidationError(f"unknown config key {key!r}")
            setattr(cfg, cls._KEYS[key], value)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "ScenarioConfig":
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ValidationError(f"cannot read config {path}: {exc}") from exc
        return cls.from_mapping(data)

    def validate(self) -> None:
        if self.scenario not in (*SCENARIOS, "custom"):
            raise ValidationError(f"unknown scenario {self.scenario!r}")
        for name in ("tol_integration", "tol_quadrature", "tol_newton"):
            if not float(getattr(self, name)) > 0:
                raise ValidationError(f"{name} must be positive")
        if self.tol_boundary is not None and not float(self.tol_boundary) > 0:
            raise ValidationError("tol_boundary must be positive")
        for name in ("grid_resolution", "grid_samples", "certificate_samples", "nstarts", "gradient_points",
                     "threads"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name} must be a positive integer")
        if self.scenario == "custom" and (self.mass is None or self.potential is None):
            raise ValidationError("a custom scenario needs model.mass and model.potential")
        if float(self.beta) < 0:
            raise ValidationError("beta must be non-negative")

    def build(self) -> tuple[HamiltonianModel, PotentialWell]:
        if self.scenario != "custom":
            model, well = scenario(self.scenario)
            if self.tol_boundary is not None:
                well = PotentialWell(model, well.seed, self.tol_boundary)
            return model, well
        rows = np.asarray(self.potential, dtype=float)
        if rows.ndim != 2 or rows.shape[1] < 2:
            raise ValidationError("model.potential rows must be [coefficient, exponents...]")
        if np.any(rows[:, 1:] != np.round(rows[:, 1:])):
            raise ValidationError("potential exponents must be integers")
        poly = Polynomial(rows[:, 0], rows[:, 1:].astype(np.int64))
        model = HamiltonianModel(self.mass, poly, float(self.energy), float(self.beta), name="custom")
        seed_point = np.zeros(model.n) if self.seed_point is None else self.seed_point
        return model, PotentialWell(model, seed_point, self.tol_boundary)


# ---------------------------------------------------------------------------- output
def _plain(obj: Any) -> Any:
    """JSON-ready copy: arrays to lists, non-finite floats to ``None``."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else None
    return obj


class Output:
    """Ordered writer for the JSON report and CSV tables of one command."""

    def __init__(self, out_dir: Path, stem: str):
        self.dir = out_dir
        self.stem = stem
        self.files: list[str] = []
        out_dir.mkdir(parents=True, exist_ok=True)

    def csv(self, name: str, header: list[str], rows) -> None:
        path = self.dir / f"{name}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                w.writerow([repr(float(x)) for x in row])
        self.files.append(path.name)

    def json(self, payload: dict) -> Path:
        path = self.dir / f"{self.stem}.json"
        body = {"schema": SCHEMA, "command": self.stem.replace("_", " "), **_plain(payload),
                "files": sorted(self.files)}
        path.write_text(json.dumps(body, indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")
        return path


def _axes(n: int, prefix: str) -> list[str]:
    return [f"{prefix}{i + 1}" for i in range(n)]


# ---------------------------------------------------------------------------- commands
@dataclass
class Context:
    config: ScenarioConfig
    model: HamiltonianModel
    well: PotentialWell
    out: Output
    failed: list[str] = field(default_factory=list)


def cmd_scenario_validate(ctx: Context) -> dict:
    m, w = ctx.model, ctx.well
    bounds = homogenize.convexity_constants(m, w, ctx.config.grid_samples, seed=ctx.config.seed)
    audit = homogenize.audit_bounds(m, w, ctx.config.grid_samples, bounds, seed=ctx.config.seed + 1)
    vmin, xmin = w.min_potential()
    return {"model": {"n": m.n, "family": m.family, "energy": m.energy, "beta": m.beta,
                      "mass": m.mass, "backend": m.backend},
            "well": {"seed_point": w.seed, "tol_boundary": w.tol_boundary, "min_potential": vmin,
                     "argmin": xmin, "bounding_box": w.bounding_box()},
            "convexity": {"nu_min": bounds.nu_min, "nu_max": bounds.nu_max,
                          "nu_degeneration": bounds.nu_degeneration, "grad_min": bounds.grad_min,
                          "grad_max": bounds.grad_max},
            "bounds_audit": audit.to_dict()}


def metric_suite(model: HamiltonianModel, well: PotentialWell, nsamples: int, seed: int) -> dict:
    """Oracle agreement and structural identities of the metric on random interior samples."""
    rng = np.random.default_rng(seed)
    Q = well.sample_interior(nsamples, rng)
    Vel = rng.normal(size=Q.shape) * np.exp(rng.uniform(-2, 2, size=(len(Q), 1)))
    G, P, _ = legendre.metric_batch(model, Q, Vel)
    u, _, up = model.kernel.gradU(Q, P)
    report: dict[str, Any] = {"nsamples": int(len(Q))}
    report["round_trip"] = float(np.max(np.linalg.norm(up - Vel, axis=1) / np.linalg.norm(Vel, axis=1)))
    Pr = rng.normal(size=Q.shape)
    ur, _, upr = model.kernel.gradU(Q, Pr)
    report["euler_identity"] = float(np.max(np.abs(np.sum(upr * Pr, axis=1) - 2 * ur) / ur))
    Gr = legendre.metric_batch(model, Q, upr)[0]
    report["G_of_Up_equals_U"] = float(np.max(np.abs(Gr - ur) / ur))
    t = np.exp(rng.uniform(-1, 1, size=len(Q)))
    Gt = legendre.metric_batch(model, Q, Vel * t[:, None])[0]
    report["homogeneity"] = float(np.max(np.abs(Gt - t**2 * G) / (t**2 * G)))
    if model.family == "natural":
        oracle = np.array([legendre.riemannian_oracle_G(model, TangentPoint(q, v)) for q, v in zip(Q, Vel)])
        report["riemannian_oracle"] = float(np.max(np.abs(G - oracle) / oracle))
    else:
        report["riemannian_oracle"] = None
    limits = {"round_trip": 1e-9, "euler_identity": 1e-10, "G_of_Up_equals_U": 1e-8, "homogeneity": 1e-9,
              "riemannian_oracle": 1e-6}
    report["limits"] = limits
    report["passed"] = all(report[k] is None or report[k] <= v for k, v in limits.items())
    return report


def cmd_metric_verify(ctx: Context) -> dict:
    report = metric_suite(ctx.model, ctx.well, ctx.config.grid_samples, ctx.config.seed)
    if not report["passed"]:
        ctx.failed.append("metric suite")
    return report


def cmd_flow_demo(ctx: Context) -> dict:
    m, w = ctx.model, ctx.well
    Q0 = w.radial_boundary_point(np.eye(m.n)[0])
    period = 2 * math.pi / math.sqrt(np.linalg.eigvalsh(m.hess_V(w.seed))[0] * m.mass_eigenvalues[0])
    traj = flow.integrate_H(m, flow.PhasePoint(Q0, np.zeros(m.n)), (0.0, period), tol=ctx.config.tol_integration)
    energy = m.kernel.H(traj.q, traj.p) - m.energy
    ctx.out.csv("flow_trajectory", ["t", *_axes(m.n, "q"), *_axes(m.n, "p"), "H_minus_E"],
                (np.concatenate([[t], q, p, [e]]) for t, q, p, e in zip(traj.grid, traj.q, traj.p, energy)))
    expansion = flow.boundary_expansion_check(m, w, Q0, np.geomspace(1e-3, 1e-1, 12))
    try:
        eps = flow.estimate_epsilon_bar(m, w)
        rim = flow.rim_time_audit(traj, eps, m).to_dict()
    except NumericalError as exc:
        eps, rim = None, {"error": str(exc)}
    return {"start": Q0, "span": period, "max_energy_error": float(np.max(np.abs(energy))),
            "expansion": expansion.to_dict(), "eps_bar": eps, "rim": rim}


def cmd_psi_field(ctx: Context) -> dict:
    m, w, c = ctx.model, ctx.well, ctx.config
    grid = psi.psi_field(m, w, resolution=c.grid_resolution, threads=c.threads)
    ctx.out.csv("psi_field", [*_axes(m.n, "y"), "psi"], grid.to_rows())
    check = psi.gradient_check(m, w, psi.collar_points(m, w, c.gradient_points, c.seed), threads=c.threads)
    ctx.out.csv("psi_gradient_check", [*_axes(m.n, "y"), *_axes(m.n, "grad"), *_axes(m.n, "fd"), "rel_error"],
                check.to_rows())
    collar = flow.get_collar(m, w)
    passed = check.max_relative_error <= 1e-4
    if not passed:
        ctx.failed.append("psi gradient check")
    return {"collar": {"depth": collar.depth, "psi_edge": collar.psi_edge},
            "grid": {"resolution": c.grid_resolution, "finite_values": int(np.isfinite(grid.values).sum())},
            "gradient_check": {"points": len(check.points), "max_relative_error": check.max_relative_error,
                               "limit": 1e-4, "passed": passed}}


def _omega(ctx: Context) -> psi.OmegaRegion:
    c = ctx.config
    return psi.select_delta_hat(ctx.model, ctx.well, budget=c.certificate_samples, resolution=c.grid_resolution,
                                threads=c.threads)


def _write_omega(ctx: Context, omega: psi.OmegaRegion) -> None:
    n = ctx.model.n
    ctx.out.csv("omega_boundary", _axes(n, "y"), omega.boundary_samples)
    ctx.out.csv("omega_certificate", [*_axes(n, "y"), *_axes(n, "xi"), "H_psi", "h", "halving_ratio"],
                ([*e.point, *e.tangent, e.value, e.h, e.halving_ratio]
                 for e in omega.concavity_certificate.entries))


def cmd_psi_certify(ctx: Context) -> dict:
    omega = _omega(ctx)
    _write_omega(ctx, omega)
    if not omega.certified:
        ctx.failed.append("omega certificate")
    return {"omega": omega.to_dict()}


def _write_chords(ctx: Context, found: list[chords.GeodesicChord]) -> None:
    n = ctx.model.n
    for k, ch in enumerate(found):
        ctx.out.csv(f"chord_{k}", ["s", *_axes(n, "q")],
                    (np.concatenate([[s], q]) for s, q in zip(ch.curve.s, ch.curve.nodes)))


def cmd_chords_find(ctx: Context) -> dict:
    c = ctx.config
    omega = _omega(ctx)
    _write_omega(ctx, omega)
    found = chords.find_chords(ctx.model, ctx.well, omega, c.nstarts, tol=c.tol_newton, threads=c.threads)
    _write_chords(ctx, found)
    return {"omega": omega.to_dict(), "nstarts": c.nstarts,
            "chords": [{k: v for k, v in ch.to_dict().items() if k != "nodes"} for ch in found]}


def _orbit_header(n: int) -> list[str]:
    return ["t", *_axes(n, "q"), *_axes(n, "p")]


def cmd_brake_solve(ctx: Context) -> dict:
    c = ctx.config
    sol = chords.solve_brake_orbits(ctx.model, ctx.well, nstarts=c.nstarts, budget=c.certificate_samples,
                                    threads=c.threads)
    _write_omega(ctx, sol.omega)
    _write_chords(ctx, sol.chords)
    for k, orbit in enumerate(sol.orbits):
        ctx.out.csv(f"orbit_{k}", _orbit_header(ctx.model.n), orbit.to_rows())
    if not sol.orbits or not all(o.certificate.passed for o in sol.orbits):
        ctx.failed.append("brake orbit certificates")
    payload = sol.to_dict()
    for ch in payload["chords"]:
        ch.pop("nodes")
    return payload


def load_orbit(path: Path, n: int) -> chords.BrakeOrbit:
    """Read a ``t, q..., p...`` CSV written by ``brake solve``."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != 1 + 2 * n:
        raise ValidationError(f"{path.name}: expected {1 + 2 * n} columns")
    t = data[:, 0]
    return chords.BrakeOrbit(t, data[:, 1:1 + n], data[:, 1 + n:], float(t[-1] - t[0]))


def cmd_brake_verify(ctx: Context) -> dict:
    paths = sorted(ctx.out.dir.glob("orbit_*.csv"), key=lambda p: int(p.stem.split("_")[1]))
    if not paths:
        raise ValidationError(f"no orbit_*.csv files in {ctx.out.dir}")
    results = []
    for path in paths:
        orbit = load_orbit(path, ctx.model.n)
        cert = chords.verify_brake_orbit(ctx.model, ctx.well, orbit)
        if not cert.passed:
            ctx.failed.append(path.name)
        results.append({"file": path.name, "period_half": orbit.period_half, "passed": cert.passed,
                        "certificate": cert.to_dict()})
    return {"orbits": results}


COMMANDS: dict[tuple[str, str], Callable[[Context], dict]] = {
    ("scenario", "validate"): cmd_scenario_validate,
    ("metric", "verify"): cmd_metric_verify,
    ("flow", "demo"): cmd_flow_demo,
    ("psi", "field"): cmd_psi_field,
    ("psi", "certify"): cmd_psi_certify,
    ("chords", "find"): cmd_chords_find,
    ("brake", "solve"): cmd_brake_solve,
    ("brake", "verify"): cmd_brake_verify,
}


# ---------------------------------------------------------------------------- entry points
def run(command: tuple[str, str], config: ScenarioConfig, out_dir: str | Path) -> int:
    """Run one command and return its exit code; diagnostics go to standard error."""
    if command not in COMMANDS:
        print(f"error: unknown command {' '.join(command)!r}", file=sys.stderr)
        return EXIT_INVALID
    out = Output(Path(out_dir), "_".join(command))
    try:
        model, well = config.build()
        ctx = Context(config, model, well, out)
        payload = COMMANDS[command](ctx)
    except ValidationError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except CertificationFailure as exc:
        print(f"certification failed: {exc}", file=sys.stderr)
        return EXIT_UNCERTIFIED
    except BrakeChordsError as exc:
        print(f"numerical failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    payload["scenario"] = config.scenario
    payload["seed"] = config.seed
    payload["passed"] = not ctx.failed
    path = out.json(payload)
    print(path)
    if ctx.failed:
        print(f"failed checks: {', '.join(ctx.failed)}", file=sys.stderr)
        return EXIT_UNCERTIFIED
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="brakechords", description=__doc__.split("\n\n")[0])
    parser.add_argument("group", choices=sorted({g for g, _ in COMMANDS}))
    parser.add_argument("action", choices=sorted({a for _, a in COMMANDS}))
    parser.add_argument("--config", type=Path, help="TOML configuration file")
    parser.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    parser.add_argument("--seed", type=int, help="random seed for sampled checks")
    parser.add_argument("--threads", type=int, help="worker threads")
    parser.add_argument("--scenario", choices=[*SCENARIOS, "custom"], help="built-in scenario")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = ScenarioConfig.load(args.config) if args.config else ScenarioConfig()
        if args.scenario is not None:
            config.scenario = args.scenario
        if args.seed is not None:
            config.seed = args.seed
        if args.threads is not None:
            config.threads = args.threads
        config.validate()
    except ValidationError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return run((args.group, args.action), config, args.out)
