"""
Triangulations of generatrix domains.

Meshes of arbitrary convex generatrix domains are images of a fixed reference
triangulation of the half-disk {r^2 + z^2 <= 1, r >= 0}: boundary vertices are
sent to the target boundary polyline, interior vertices are placed by a
discrete harmonic map with cotangent weights of the (Delaunay) reference. A
Delaunay reference has non-negative cotangent weights, so for a convex target
the map is a Tutte embedding and never folds a triangle.

The connectivity of a :class:`MeshTemplate` never changes, which keeps the
discrete objectives smooth functions of the boundary nodes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.spatial import Delaunay

from convexrot.geometry import GeneratrixBoundary, GeometryError, FEASIBILITY_TOL

OUT = "OUT"
AXIS = "AXIS"

DEFAULT_CUSR_CAP = 10.0

# reference point spacing relative to the requested max element diameter
_SPACING = 1.0 / 1.45


class MeshError(RuntimeError):
    """Raised when a triangulation is invalid or too poorly shaped."""


@dataclass(frozen=True, eq=False)
class TriMesh:
    """
    Conforming triangulation of a generatrix domain.

    Attributes
    ----------
    vertices : (nv, 2) float array of (r, z)
    triangles : (nt, 3) int array, counter-clockwise
    boundary_edges : (ne, 2) int array
    edge_markers : (ne,) array of "OUT" / "AXIS"
    out_vertices : vertex indices of the free boundary, ordered from the lower
        pole to the upper pole (both poles included)
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    edge_markers: np.ndarray
    out_vertices: np.ndarray = field(default=None)

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64)
        e = np.ascontiguousarray(self.boundary_edges, dtype=np.int64).reshape(-1, 2)
        mk = np.asarray(self.edge_markers, dtype=object)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        object.__setattr__(self, "boundary_edges", e)
        object.__setattr__(self, "edge_markers", mk)
        if self.out_vertices is None:
            object.__setattr__(self, "out_vertices", _out_path(v, e, mk))
        else:
            object.__setattr__(self, "out_vertices", np.asarray(self.out_vertices, dtype=np.int64))
        for a in (v, t, e):
            a.setflags(write=False)

    @property
    def nv(self) -> int:
        return self.vertices.shape[0]

    @property
    def nt(self) -> int:
        return self.triangles.shape[0]

    @cached_property
    def areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def edges(self) -> np.ndarray:
        """All unique edges (ne, 2), sorted vertex pairs."""
        return self._edge_data[0]

    @cached_property
    def triangle_edges(self) -> np.ndarray:
        """(nt, 3) edge index opposite to local vertex k."""
        return self._edge_data[1]

    @cached_property
    def _edge_data(self):
        t = self.triangles
        # local edge k is opposite local vertex k
        loc = np.stack([t[:, [1, 2]], t[:, [2, 0]], t[:, [0, 1]]], axis=1).reshape(-1, 2)
        loc = np.sort(loc, axis=1)
        edges, inv = np.unique(loc, axis=0, return_inverse=True)
        return edges, inv.reshape(-1, 3)

    @cached_property
    def axis_edge_mask(self) -> np.ndarray:
        """Mask over :attr:`edges` marking edges on the rotation axis."""
        key = {tuple(sorted(e)) for e, m in zip(self.boundary_edges.tolist(), self.edge_markers) if m == AXIS}
        return np.array([tuple(e) in key for e in self.edges.tolist()], dtype=bool)

    @cached_property
    def out_edge_list(self) -> np.ndarray:
        ov = self.out_vertices
        return np.column_stack([ov[:-1], ov[1:]])

    @cached_property
    def axis_vertices(self) -> np.ndarray:
        ids = self.boundary_edges[self.edge_markers == AXIS].ravel()
        return np.unique(ids)

    def boundary(self) -> GeneratrixBoundary:
        """Free boundary polyline of this mesh."""
        return GeneratrixBoundary(self.vertices[self.out_vertices])

    @cached_property
    def h(self) -> float:
        return check_regularity(self)[0]

    @cached_property
    def c_usr(self) -> float:
        return check_regularity(self)[1]

    def weighted_area(self) -> float:
        """Sum over triangles of the exact integral of r."""
        rbar = self.vertices[self.triangles, 0].mean(axis=1)
        return float(np.sum(self.areas * rbar))

    def scaled(self, t: float) -> "TriMesh":
        return TriMesh(t * self.vertices, self.triangles, self.boundary_edges, self.edge_markers, self.out_vertices)

    def validate(self) -> None:
        if np.any(self.areas <= 0.0):
            raise MeshError("triangle with non-positive area")
        ax = self.boundary_edges[self.edge_markers == AXIS]
        if ax.size and np.any(self.vertices[ax.ravel(), 0] != 0.0):
            raise MeshError("AXIS edge with vertex off the axis")
        # conformity: interior edges shared by exactly two triangles
        cnt = np.bincount(self.triangle_edges.ravel(), minlength=len(self.edges))
        nb = int(np.sum(cnt == 1))
        if np.any(cnt > 2) or nb != len(self.boundary_edges):
            raise MeshError("mesh is not conforming")

    # -- io -------------------------------------------------------------------

    def to_file(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(f"{self.nv} {self.nt} {len(self.boundary_edges)}\n")
            for r, z in self.vertices:
                fh.write(f"{float(r)!r} {float(z)!r}\n")
            for i, j, k in self.triangles:
                fh.write(f"{i} {j} {k}\n")
            for (i, j), m in zip(self.boundary_edges, self.edge_markers):
                fh.write(f"{i} {j} {m}\n")

    @classmethod
    def from_file(cls, path) -> "TriMesh":
        with open(path) as fh:
            lines = [ln.split() for ln in fh if ln.strip()]
        nv, nt, ne = (int(x) for x in lines[0])
        v = np.array([[float(a), float(b)] for a, b in lines[1 : 1 + nv]])
        t = np.array([[int(x) for x in ln] for ln in lines[1 + nv : 1 + nv + nt]], dtype=np.int64)
        eb = lines[1 + nv + nt : 1 + nv + nt + ne]
        e = np.array([[int(a), int(b)] for a, b, _ in eb], dtype=np.int64)
        mk = np.array([m for _, _, m in eb], dtype=object)
        if not set(mk) <= {OUT, AXIS}:
            raise MeshError(f"{path}: unknown boundary marker")
        return cls(v, t, e, mk)


def _out_path(v, e, mk) -> np.ndarray:
    """Order the OUT edges into a path from the lower pole to the upper pole."""
    out = e[mk == OUT]
    if out.size == 0:
        return np.zeros(0, dtype=np.int64)
    nbr: dict[int, list[int]] = {}
    for a, b in out.tolist():
        nbr.setdefault(a, []).append(b)
        nbr.setdefault(b, []).append(a)
    ends = [k for k, n in nbr.items() if len(n) == 1]
    if len(ends) != 2:
        raise MeshError("OUT edges do not form a single open path")
    start = min(ends, key=lambda k: v[k, 1])
    path = [start]
    prev = -1
    while True:
        nxt = [k for k in nbr[path[-1]] if k != prev]
        if not nxt:
            break
        prev = path[-1]
        path.append(nxt[0])
    return np.array(path, dtype=np.int64)


def check_regularity(mesh: TriMesh) -> tuple[float, float]:
    """
    Max element diameter and max ratio h_T / rho_T (rho_T the inradius).
    """
    p = mesh.vertices[mesh.triangles]
    l = np.stack(
        [np.linalg.norm(p[:, 1] - p[:, 2], axis=1),
         np.linalg.norm(p[:, 2] - p[:, 0], axis=1),
         np.linalg.norm(p[:, 0] - p[:, 1], axis=1)],
        axis=1,
    )
    hT = l.max(axis=1)
    area = np.abs(mesh.areas)
    with np.errstate(divide="ignore"):
        rho = 2.0 * area / l.sum(axis=1)
        ratio = np.where(rho > 0, hT / rho, np.inf)
    return float(hT.max()), float(ratio.max())


# -- reference triangulation --------------------------------------------------

def _ring_points(h: float, arc_angles=None):
    s = _SPACING * h
    n_rings = max(1, int(np.ceil(1.0 / s)))
    pts = [np.array([[0.0, 0.0]])]
    for k in range(1, n_rings + 1):
        rho = k / n_rings
        if k == n_rings and arc_angles is not None:
            th = np.asarray(arc_angles, dtype=float)
        else:
            nk = max(2, int(np.ceil(np.pi * rho / s)))
            th = np.linspace(-0.5 * np.pi, 0.5 * np.pi, nk + 1)
        ring = np.column_stack([rho * np.cos(th), rho * np.sin(th)])
        ring[0] = (0.0, -rho)
        ring[-1] = (0.0, rho)
        pts.append(ring)
    arc_count = len(pts[-1])
    pts = np.vstack(pts)
    arc = np.arange(len(pts) - arc_count, len(pts))
    return pts, arc


def _build_reference(h: float, arc_angles=None) -> TriMesh:
    if not (0.0 < h <= 1.0):
        raise ValueError(f"mesh size h must lie in (0, 1], got {h}")
    pts, arc = _ring_points(h, arc_angles)
    tri = Delaunay(pts).simplices.astype(np.int64)
    p = pts[tri]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    area = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    flip = area < 0
    tri[flip] = tri[flip][:, [0, 2, 1]]
    keep = np.abs(area) > 1e-14 * h * h
    tri = tri[keep]

    on_axis = np.flatnonzero(pts[:, 0] == 0.0)
    on_axis = on_axis[np.argsort(pts[on_axis, 1])]
    axis_edges = np.column_stack([on_axis[:-1], on_axis[1:]])
    out_edges = np.column_stack([arc[:-1], arc[1:]])
    edges = np.vstack([out_edges, axis_edges])
    markers = np.array([OUT] * len(out_edges) + [AXIS] * len(axis_edges), dtype=object)
    mesh = TriMesh(pts, tri, edges, markers, out_vertices=arc)
    mesh.validate()
    return mesh


def reference_half_disk(h: float) -> TriMesh:
    """
    Triangulation of the unit half-disk with maximal element diameter <= h.

    Vertices lie on concentric half circles; the outer circle is approximated by
    its inscribed polygon.
    """
    return _build_reference(h)


class MeshTemplate:
    """
    Fixed reference triangulation plus the harmonic extension operator that
    maps it onto generatrix domains with a given number of boundary nodes.
    """

    def __init__(self, reference: TriMesh):
        self.reference = reference
        v = reference.vertices
        nv = reference.nv
        self.out = reference.out_vertices
        self.axis = reference.axis_vertices
        bnd = np.union1d(self.out, self.axis)
        self.interior = np.setdiff1d(np.arange(nv), bnd)
        self.bnd = bnd

        L = _cotangent_laplacian(v, reference.triangles)
        self._L_IB = L[self.interior][:, bnd].tocsc()
        L_II = L[self.interior][:, self.interior].tocsc()
        self._solve = spla.factorized(L_II) if len(self.interior) else None
        # reference axis coordinate in [-1, 1] -> fraction along the target axis
        self._axis_frac = 0.5 * (v[self.axis, 1] + 1.0)

    @property
    def n_out(self) -> int:
        return len(self.out)

    @classmethod
    def for_boundary(cls, boundary: GeneratrixBoundary, h: float) -> "MeshTemplate":
        """Reference whose arc nodes are spaced like the nodes of ``boundary``."""
        L = boundary.segment_lengths()
        s = np.concatenate([[0.0], np.cumsum(L)]) / np.sum(L)
        angles = -0.5 * np.pi + np.pi * s
        return cls(_build_reference(h, arc_angles=angles))

    def map(self, boundary: GeneratrixBoundary, validate: bool = True) -> TriMesh:
        x = boundary.nodes
        if x.shape[0] != self.n_out:
            raise MeshError(f"template expects {self.n_out} boundary nodes, got {x.shape[0]}")
        ref = self.reference
        v = np.empty_like(ref.vertices)
        v[self.out] = x
        z0, z1 = x[0, 1], x[-1, 1]
        v[self.axis, 0] = 0.0
        v[self.axis, 1] = z0 + self._axis_frac * (z1 - z0)
        # poles are both OUT and AXIS vertices: keep the exact boundary nodes
        v[self.out[0]] = x[0]
        v[self.out[-1]] = x[-1]
        if self._solve is not None:
            rhs = -(self._L_IB @ v[self.bnd])
            v[self.interior, 0] = self._solve(np.ascontiguousarray(rhs[:, 0]))
            v[self.interior, 1] = self._solve(np.ascontiguousarray(rhs[:, 1]))
        mesh = TriMesh(v, ref.triangles, ref.boundary_edges, ref.edge_markers, out_vertices=self.out)
        if validate and np.any(mesh.areas <= 0.0):
            raise MeshError("harmonic map produced a folded triangle")
        return mesh


def _cotangent_laplacian(v: np.ndarray, tri: np.ndarray) -> sp.csr_matrix:
    p = v[tri]
    rows, cols, vals = [], [], []
    for k in range(3):
        i, j, o = tri[:, (k + 1) % 3], tri[:, (k + 2) % 3], tri[:, k]
        a = p[:, (k + 1) % 3] - p[:, k]
        b = p[:, (k + 2) % 3] - p[:, k]
        cross = np.abs(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])
        cot = np.sum(a * b, axis=1) / cross
        rows += [i, j]
        cols += [j, i]
        vals += [0.5 * cot, 0.5 * cot]
    W = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(len(v),) * 2)
    W.data = np.maximum(W.data, 1e-8 * W.data.max())
    return (sp.diags(np.asarray(W.sum(axis=1)).ravel()) - W).tocsr()


def mesh_from_boundary(
    boundary: GeneratrixBoundary,
    h: float,
    template: MeshTemplate | None = None,
    c_usr_cap: float = DEFAULT_CUSR_CAP,
) -> TriMesh:
    """
    Triangulate the polygon bounded by ``boundary`` and the axis segment.

    Without a template, boundary segments longer than ``h`` are subdivided and
    a reference matched to the boundary node spacing is built. With a template
    the boundary is used as given and must have ``template.n_out`` nodes.
    """
    res = boundary.convexity_residuals()
    if np.any(res > FEASIBILITY_TOL):
        raise GeometryError(f"boundary not convex (max residual {res.max():.3e})")
    if boundary.is_self_intersecting():
        raise GeometryError("boundary is self-intersecting")
    if template is None:
        boundary = boundary.refined(h)
        template = MeshTemplate.for_boundary(boundary, h)
    mesh = template.map(boundary)
    _, c = check_regularity(mesh)
    if c > c_usr_cap:
        raise MeshError(f"shape regularity {c:.3g} exceeds cap {c_usr_cap:.3g}; reduce h")
    return mesh
