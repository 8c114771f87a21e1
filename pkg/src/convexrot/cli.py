"""
Command-line front end.

Exit codes: 0 success, 1 invalid input, 2 solver failure, 3 line search
failure (artifacts are still written).
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from convexrot.config import ConfigError, RunConfig
from convexrot.deformation import UzawaError
from convexrot.eigen import (
    SolverError,
    asymmetry,
    critical_mass,
    dirichlet_eigen,
    insulation_eigen,
)
from convexrot.geometry import GeneratrixBoundary, GeometryError, half_disk, half_ellipse, segments_for
from convexrot.io import boundary_values_from_csv, write_curvature_profile, write_eigen_solution
from convexrot.mesh import MeshError, MeshTemplate
from convexrot.optimizer import LINESEARCH_FAILED, optimize
from convexrot.shape_gradient import DirichletObjective, InsulationObjective

log = logging.getLogger("convexrot")

EXIT_OK, EXIT_INPUT, EXIT_SOLVER, EXIT_LINESEARCH = 0, 1, 2, 3


# -- building blocks ----------------------------------------------------------

def initial_boundary(shape: str, a: float, h: float, volume: float) -> GeneratrixBoundary:
    """Polygonal half-disk or half-ellipse with chords <= h, scaled to ``volume``."""
    if shape == "half_disk":
        b = half_disk(segments_for(h, 1.0))
    else:
        b = half_ellipse(a, segments_for(h, a, volume), volume)
    b = b.refined(h)
    return b.scaled((volume / b.volume()) ** (1.0 / 3.0))


def make_objective(cfg: RunConfig, boundary: GeneratrixBoundary):
    template = MeshTemplate.for_boundary(boundary, cfg.h)
    if cfg.problem == "dirichlet":
        return DirichletObjective(template)
    return InsulationObjective(template, cfg.m, cfg.eps, cfg.flow())


def _solve_fixed(cfg: RunConfig, mesh):
    if cfg.problem == "dirichlet":
        return dirichlet_eigen(mesh)
    return insulation_eigen(mesh, cfg.m, cfg.eps, cfg.flow())


# -- commands -----------------------------------------------------------------

def cmd_eigen(cfg: RunConfig) -> dict:
    """Eigenproblem on the fixed initial shape; writes the solution and its asymmetry."""
    out = Path(cfg.output_dir)
    boundary = initial_boundary(cfg.initial_shape, cfg.a, cfg.h, cfg.volume)
    mesh = MeshTemplate.for_boundary(boundary, cfg.h).map(boundary)
    sol = _solve_fixed(cfg, mesh)
    asym = asymmetry(mesh, sol.u)
    write_eigen_solution(out / "eigen", sol, mesh, {"asymmetry": asym},
                         ell_scale=0.1 if cfg.scale_ell else 1.0)
    boundary.to_csv(out / "boundary.csv")
    print(f"lambda = {sol.lam:.12g}\nasymmetry = {asym:.6g}")
    return {"lambda": sol.lam, "asymmetry": asym, "solution": sol, "mesh": mesh}


def cmd_optimize(cfg: RunConfig, shape: str | None = None, a: float | None = None) -> dict:
    """Shape optimization from the configured start; writes trace, boundary and final solution."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    boundary = initial_boundary(shape or cfg.initial_shape, cfg.a if a is None else a, cfg.h, cfg.volume)
    objective = make_objective(cfg, boundary)
    snap = out / "snapshots"

    def callback(rec):
        if cfg.snapshots:
            snap.mkdir(exist_ok=True)
            rec.boundary.to_csv(snap / f"boundary_{rec.iter:04d}.csv")

    final, ev, trace = optimize(boundary, objective, cfg.line_search(), cfg.volume, callback)
    trace.to_csv(out / "trace.csv")
    final.to_csv(out / "boundary_final.csv")
    asym = asymmetry(ev.mesh, ev.solution.u)
    write_eigen_solution(out / "final", ev.solution, ev.mesh,
                         {"asymmetry": asym, "volume": final.volume(), "termination": trace.termination},
                         ell_scale=0.1 if cfg.scale_ell else 1.0)
    print(f"lambda = {ev.value:.12g}\nvolume = {final.volume():.12g}\ntermination = {trace.termination}")
    return {"lambda": ev.value, "initial": trace.records[0].objective, "boundary": final,
            "evaluation": ev, "trace": trace, "asymmetry": asym}


def cmd_sweep(cfg: RunConfig, m_list=None) -> list[dict]:
    """Ball start versus prolate start for each mass; writes sweep.csv."""
    m_list = list(m_list if m_list is not None else cfg.m_list)
    if not m_list:
        raise ConfigError("m_list is empty")
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for m in m_list:
        row = {"m": m, "lambda_ball": np.nan, "lambda_asym": np.nan, "delta": np.nan, "status": "ok"}
        try:
            sub = cfg.replace(problem="insulation", m=m)
            ball = cmd_optimize(sub.replace(output_dir=str(out / f"m{m:g}_ball")), shape="half_disk")
            asym = cmd_optimize(sub.replace(output_dir=str(out / f"m{m:g}_asym")),
                                shape="half_ellipsoid", a=cfg.asym_a)
            row.update(lambda_ball=ball["lambda"], lambda_asym=asym["lambda"],
                       delta=ball["lambda"] - asym["lambda"])
        except (SolverError, MeshError, GeometryError, UzawaError) as exc:
            row["status"] = f"failed: {exc}"
        rows.append(row)
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["m", "lambda_ball", "lambda_asym", "delta", "status"])
        for r in rows:
            w.writerow([f"{r['m']:.12g}", f"{r['lambda_ball']:.12g}", f"{r['lambda_asym']:.12g}",
                        f"{r['delta']:.12g}", r["status"]])
    return rows


def cmd_critical_mass(cfg: RunConfig) -> dict:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    boundary = initial_boundary("half_disk", 1.0, cfg.h, cfg.volume)
    mesh = MeshTemplate.for_boundary(boundary, cfg.h).map(boundary)
    res = critical_mass(mesh, (cfg.bracket_lo, cfg.bracket_hi), cfg.eps, flow=cfg.flow())
    with open(out / "critical_mass.txt", "w") as fh:
        fh.write(f"m0 = {res['m0']:.12g}\nmu2 = {res['mu2']:.12g}\n")
        for m, lam in res["path"]:
            fh.write(f"lambda({m:.12g}) = {lam:.12g}\n")
    print(f"m0 = {res['m0']:.12g}\nmu2 = {res['mu2']:.12g}")
    return res


def cmd_curvature(boundary: GeneratrixBoundary, u_boundary, path) -> np.ndarray:
    """Write ``z,u,H`` for the given boundary and boundary values of u."""
    return write_curvature_profile(path, boundary, u_boundary)


def cmd_validate(extra_args=()) -> int:
    """Run the acceptance suite with pytest (needs the source checkout)."""
    try:
        import pytest
    except ImportError:
        print("pytest is required for 'validate'", file=sys.stderr)
        return EXIT_INPUT
    root = Path(__file__).resolve().parents[2]
    suite = root / "tests" / "test_acceptance.py"
    if not suite.exists():
        print(f"acceptance suite not found at {suite}", file=sys.stderr)
        return EXIT_INPUT
    return int(pytest.main([str(suite), "-v", "-s", *extra_args]))


# -- argument parsing -----------------------------------------------------------

def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="key = value configuration file")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        default = f.default if f.default is not dataclasses.MISSING else None
        if f.name == "m_list":
            p.add_argument(flag, type=lambda s: [float(x) for x in s.split(",")], default=None)
        elif isinstance(default, bool):
            p.add_argument(flag, type=lambda s: s.lower() in ("1", "true", "yes"), default=None)
        elif isinstance(default, (int, float)) and not isinstance(default, bool):
            p.add_argument(flag, type=type(default), default=None)
        else:
            p.add_argument(flag, default=None)


def _config_from(args) -> RunConfig:
    overrides = {f.name: getattr(args, f.name, None) for f in fields(RunConfig)}
    if args.config is not None:
        return RunConfig.load(args.config, **overrides)
    return RunConfig(**{k: v for k, v in overrides.items() if v is not None})


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="convexrot", description=__doc__.splitlines()[1])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in [("eigen", "solve on the fixed initial shape"),
                        ("optimize", "run the shape optimization"),
                        ("sweep", "ball versus asymmetric start over m_list"),
                        ("critical-mass", "bisection for the critical film mass"),
                        ("print-config", "print the effective configuration")]:
        _add_config_args(sub.add_parser(name, help=help_))
    p = sub.add_parser("curvature", help="mean curvature and u along a boundary")
    _add_config_args(p)
    p.add_argument("--boundary", type=Path, required=True, help="boundary CSV (r,z)")
    p.add_argument("--solution", type=Path, help="vertex CSV (vertex,r,z,u); solved if omitted")
    sub.add_parser("validate", help="run the acceptance suite")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.command == "validate":
        return cmd_validate()
    try:
        cfg = _config_from(args)
        if args.command == "print-config":
            sys.stdout.write(cfg.dumps())
        elif args.command == "eigen":
            cmd_eigen(cfg)
        elif args.command == "optimize":
            if cmd_optimize(cfg)["trace"].termination == LINESEARCH_FAILED:
                return EXIT_LINESEARCH
        elif args.command == "sweep":
            rows = cmd_sweep(cfg)
            for r in rows:
                print(f"m={r['m']:g}  ball={r['lambda_ball']:.6f}  asym={r['lambda_asym']:.6f}  {r['status']}")
            if any(r["status"] != "ok" for r in rows):
                return EXIT_SOLVER
        elif args.command == "critical-mass":
            cmd_critical_mass(cfg)
        elif args.command == "curvature":
            boundary = GeneratrixBoundary.from_csv(args.boundary)
            if args.solution is not None:
                u = boundary_values_from_csv(args.solution, boundary)
            else:
                mesh = MeshTemplate.for_boundary(boundary, cfg.h).map(boundary)
                u = _solve_fixed(cfg, mesh).u[mesh.out_vertices]
            out = Path(cfg.output_dir)
            out.mkdir(parents=True, exist_ok=True)
            cmd_curvature(boundary, u, out / "curvature.csv")
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (SolverError, MeshError, UzawaError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
