"""File output shared by the command-line tools: eigen solutions and curvature profiles."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from convexrot.eigen import EigenSolution
from convexrot.geometry import GeneratrixBoundary
from convexrot.mesh import TriMesh


def _g(x) -> str:
    return f"{x:.12g}"


def write_eigen_solution(prefix, sol: EigenSolution, mesh: TriMesh, extra: dict | None = None,
                         ell_scale: float = 1.0) -> list[Path]:
    """
    Write ``<prefix>_meta.txt`` (key = value), ``<prefix>_u.csv``
    (vertex,r,z,u) and, for insulation solutions, ``<prefix>_ell.csv``
    (z,r,ell) over the free boundary ordered by z.
    """
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    meta = {"kind": sol.kind, "lambda": _g(sol.lam),
            "m": "" if sol.m is None else _g(sol.m),
            "epsilon": "" if sol.epsilon is None else _g(sol.epsilon),
            "iterations": str(sol.n_iter), "residual": _g(sol.residual),
            "vertices": str(mesh.nv), "triangles": str(mesh.nt)}
    for k, v in (extra or {}).items():
        meta[k] = _g(v) if isinstance(v, (float, np.floating)) else str(v)
    paths = [prefix.with_name(prefix.name + "_meta.txt"), prefix.with_name(prefix.name + "_u.csv")]
    paths[0].write_text("".join(f"{k} = {v}\n" for k, v in meta.items()))
    with open(paths[1], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["vertex", "r", "z", "u"])
        for i, ((r, z), u) in enumerate(zip(mesh.vertices, sol.u)):
            w.writerow([i, _g(r), _g(z), _g(u)])
    if sol.ell is not None:
        x = mesh.vertices[mesh.out_vertices]
        order = np.argsort(x[:, 1], kind="stable")
        p = prefix.with_name(prefix.name + "_ell.csv")
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["z", "r", "ell"])
            for k in order:
                w.writerow([_g(x[k, 1]), _g(x[k, 0]), _g(ell_scale * sol.ell[k])])
        paths.append(p)
    return paths


def read_eigen_meta(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        if "=" in line:
            k, v = (s.strip() for s in line.split("=", 1))
            out[k] = v
    return out


def read_vertex_values(path) -> np.ndarray:
    """Per-vertex ``u`` column of a ``*_u.csv`` file."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return np.array([float(r["u"]) for r in rows])


def boundary_values_from_csv(path, boundary: GeneratrixBoundary, tol: float = 1e-9) -> np.ndarray:
    """Values of a ``*_u.csv`` file at the vertices coinciding with the boundary nodes."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    pts = np.array([(float(r["r"]), float(r["z"])) for r in rows])
    u = np.array([float(r["u"]) for r in rows])
    dist, idx = cKDTree(pts).query(boundary.nodes)
    if np.max(dist) > tol * max(1.0, float(np.abs(pts).max())):
        raise ValueError(f"{path}: boundary node not found among the solution vertices")
    return u[idx]


def mean_curvature(boundary: GeneratrixBoundary) -> tuple[np.ndarray, np.ndarray]:
    """
    Discrete mean curvature of the surface of revolution at the boundary
    nodes with r > 0.

    The meridian curvature is the turning angle at the node divided by half
    the length of the two adjacent segments; the parallel curvature is
    n_r / r with n the angle-bisector outward normal. Returns (indices, H).
    """
    x = boundary.nodes
    idx = np.flatnonzero(x[:, 0] > 0)
    idx = idx[(idx > 0) & (idx < len(x) - 1)]
    d0 = x[idx] - x[idx - 1]
    d1 = x[idx + 1] - x[idx]
    l0, l1 = np.hypot(*d0.T), np.hypot(*d1.T)
    turn = np.arctan2(d0[:, 0] * d1[:, 1] - d0[:, 1] * d1[:, 0], np.sum(d0 * d1, axis=1))
    k_meridian = turn / (0.5 * (l0 + l1))
    t = d0 / l0[:, None] + d1 / l1[:, None]
    t /= np.hypot(*t.T)[:, None]
    k_parallel = t[:, 1] / x[idx, 0]
    return idx, 0.5 * (k_meridian + k_parallel)


def write_curvature_profile(path, boundary: GeneratrixBoundary, u_boundary) -> np.ndarray:
    """CSV ``z,u,H`` over the free boundary (poles excluded), ordered by z."""
    idx, H = mean_curvature(boundary)
    u = np.asarray(u_boundary, dtype=float)
    z = boundary.z[idx]
    order = np.argsort(z, kind="stable")
    rows = np.column_stack([z[order], u[idx][order], H[order]])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["z", "u", "H"])
        for row in rows:
            w.writerow([_g(v) for v in row])
    return rows
