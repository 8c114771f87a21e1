"""
Generatrix boundaries of rotationally symmetric bodies.

A body of revolution about the z-axis is described by one half of its cross
section, the generatrix domain, lying in the half plane r >= 0. The free part
of its boundary is stored as an ordered polyline running counter-clockwise
from the lower pole (0, z_min) to the upper pole (0, z_max); the segment on the
rotation axis closing the polygon is implicit.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

# residuals up to this value count as feasible (collinear triples give exact zeros)
FEASIBILITY_TOL = 1e-12


class GeometryError(ValueError):
    """Raised for malformed, non-convex or self-intersecting boundaries."""


@dataclass(frozen=True)
class ConvexityReport:
    residuals: np.ndarray
    jacobian: sp.csr_matrix
    feasible: bool


class GeneratrixBoundary:
    """
    Ordered polyline of the free boundary of a generatrix domain.

    Parameters
    ----------
    nodes : array_like, shape (N, 2)
        Node coordinates (r, z). Node 0 and node N-1 lie on the axis r = 0,
        all other nodes have r > 0.
    """

    def __init__(self, nodes):
        x = np.array(nodes, dtype=float)
        if x.ndim != 2 or x.shape[1] != 2:
            raise GeometryError("boundary nodes must have shape (N, 2)")
        if x.shape[0] < 3:
            raise GeometryError(f"need at least 3 boundary nodes, got {x.shape[0]}")
        if not np.all(np.isfinite(x)):
            raise GeometryError("boundary nodes must be finite")
        if x[0, 0] != 0.0 or x[-1, 0] != 0.0:
            raise GeometryError("first and last node must lie on the axis r = 0")
        if np.any(x[1:-1, 0] <= 0.0):
            raise GeometryError("interior boundary nodes must have r > 0")
        if x[0, 1] == x[-1, 1]:
            raise GeometryError("axis segment is degenerate (z_1 == z_N)")
        seg = np.diff(x, axis=0)
        if np.any(np.hypot(seg[:, 0], seg[:, 1]) == 0.0):
            raise GeometryError("duplicate consecutive boundary nodes")
        x.setflags(write=False)
        self._nodes = x

    @property
    def nodes(self) -> np.ndarray:
        return self._nodes

    @property
    def n(self) -> int:
        return self._nodes.shape[0]

    @property
    def r(self) -> np.ndarray:
        return self._nodes[:, 0]

    @property
    def z(self) -> np.ndarray:
        return self._nodes[:, 1]

    def __len__(self):
        return self.n

    def __repr__(self):
        return f"GeneratrixBoundary(n={self.n}, z=[{self.z[0]:.4g}, {self.z[-1]:.4g}])"

    def moved(self, displacement) -> "GeneratrixBoundary":
        """Return the boundary with every node shifted by ``displacement`` (N, 2)."""
        return GeneratrixBoundary(self._nodes + np.asarray(displacement, dtype=float))

    def scaled(self, t: float) -> "GeneratrixBoundary":
        return GeneratrixBoundary(t * self._nodes)

    # -- geometric quantities ------------------------------------------------

    def convexity_residuals(self) -> np.ndarray:
        return convexity_residuals(self)

    def convexity_jacobian(self) -> sp.csr_matrix:
        return convexity_jacobian(self)

    def convexity_report(self, tol: float = FEASIBILITY_TOL) -> ConvexityReport:
        res = convexity_residuals(self)
        return ConvexityReport(res, convexity_jacobian(self), bool(np.all(res <= tol)))

    def is_convex(self, tol: float = FEASIBILITY_TOL) -> bool:
        return bool(np.all(convexity_residuals(self) <= tol))

    def is_self_intersecting(self) -> bool:
        return is_self_intersecting(self)

    def weighted_area(self) -> float:
        return weighted_area(self)

    def volume(self) -> float:
        """Volume of the body of revolution, 2*pi times the r-weighted area."""
        return 2.0 * np.pi * weighted_area(self)

    def segment_lengths(self) -> np.ndarray:
        d = np.diff(self._nodes, axis=0)
        return np.hypot(d[:, 0], d[:, 1])

    def perimeter_weight(self) -> float:
        """Integral of r over the free boundary, exact for the polyline."""
        L = self.segment_lengths()
        return float(np.sum(L * 0.5 * (self.r[:-1] + self.r[1:])))

    def check_feasible(self, tol: float = FEASIBILITY_TOL) -> None:
        """Raise GeometryError unless the boundary is convex and simple."""
        res = convexity_residuals(self)
        if np.any(res > tol):
            i = int(np.argmax(res))
            raise GeometryError(f"boundary not convex: residual {res[i]:.3e} at node {i}")
        if is_self_intersecting(self):
            raise GeometryError("boundary is self-intersecting")

    def refined(self, h: float) -> "GeneratrixBoundary":
        """Subdivide segments longer than ``h`` into equal parts."""
        out = [self._nodes[:1]]
        for a, b in zip(self._nodes[:-1], self._nodes[1:]):
            k = max(1, int(np.ceil(np.hypot(*(b - a)) / h - 1e-12)))
            t = np.arange(1, k + 1)[:, None] / k
            out.append(a + t * (b - a))
        return GeneratrixBoundary(np.vstack(out))

    # -- io -------------------------------------------------------------------

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("r,z\n")
            for r, z in self._nodes:
                fh.write(f"{float(r)!r},{float(z)!r}\n")

    @classmethod
    def from_csv(cls, path) -> "GeneratrixBoundary":
        with open(Path(path), newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["r", "z"]:
                raise GeometryError(f"{path}: expected header 'r,z'")
            rows = [(float(row["r"]), float(row["z"])) for row in reader]
        return cls(rows)


def _nodes_of(boundary) -> np.ndarray:
    if isinstance(boundary, GeneratrixBoundary):
        return boundary.nodes
    x = np.asarray(boundary, dtype=float)
    if x.ndim != 2 or x.shape[0] < 3:
        raise GeometryError("need at least 3 boundary nodes")
    return x


def convexity_residuals(boundary) -> np.ndarray:
    """
    Cross-product convexity residuals, one per boundary node.

    Interior nodes: C_i = (r_{i-1}-r_i)(z_{i+1}-z_i) - (z_{i-1}-z_i)(r_{i+1}-r_i),
    which is <= 0 iff the interior angle at node i is at most pi. The pole rows
    C_1 = -2 r_2 (z_2 - z_1) and C_N = 2 r_{N-1} (z_{N-1} - z_N) are the same
    test against the node mirrored across the axis, i.e. the angle between the
    first (last) segment and the axis is at most pi/2 so the rotated body has
    no cusp at the pole.
    """
    x = _nodes_of(boundary)
    a = x[:-2] - x[1:-1]
    b = x[2:] - x[1:-1]
    res = np.empty(x.shape[0])
    res[1:-1] = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
    res[0] = -2.0 * x[1, 0] * (x[1, 1] - x[0, 1])
    res[-1] = 2.0 * x[-2, 0] * (x[-2, 1] - x[-1, 1])
    return res


def convexity_jacobian(boundary) -> sp.csr_matrix:
    """
    Exact Jacobian of :func:`convexity_residuals`.

    Columns are ordered (r_1, z_1, r_2, z_2, ..., r_N, z_N).
    """
    x = _nodes_of(boundary)
    n = x.shape[0]
    rows, cols, vals = [], [], []

    def put(i, node, comp, v):
        rows.append(i)
        cols.append(2 * node + comp)
        vals.append(v)

    # pole rows
    put(0, 0, 1, 2.0 * x[1, 0])
    put(0, 1, 0, -2.0 * (x[1, 1] - x[0, 1]))
    put(0, 1, 1, -2.0 * x[1, 0])
    put(n - 1, n - 2, 0, 2.0 * (x[-2, 1] - x[-1, 1]))
    put(n - 1, n - 2, 1, 2.0 * x[-2, 0])
    put(n - 1, n - 1, 1, -2.0 * x[-2, 0])

    i = np.arange(1, n - 1)
    a = x[:-2] - x[1:-1]
    b = x[2:] - x[1:-1]
    blocks = (
        (i - 1, 0, b[:, 1]),
        (i - 1, 1, -b[:, 0]),
        (i, 0, a[:, 1] - b[:, 1]),
        (i, 1, b[:, 0] - a[:, 0]),
        (i + 1, 0, -a[:, 1]),
        (i + 1, 1, a[:, 0]),
    )
    rows = np.concatenate([rows] + [i for _ in blocks])
    cols = np.concatenate([cols] + [2 * node + comp for node, comp, _ in blocks])
    vals = np.concatenate([vals] + [v for _, _, v in blocks])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, 2 * n))


def repair_convexity(nodes, max_angle: float = 1e-3, tol: float = FEASIBILITY_TOL,
                     sweeps: int = 10) -> np.ndarray | None:
    """
    Remove small convexity violations by moving offending nodes.

    A node whose residual is positive but whose excess angle (sine of the
    amount by which the interior angle exceeds pi) is at most ``max_angle``
    is moved along the gradient of its own residual until the residual
    vanishes; C_i is affine in node i, so one step suffices. Poles move along
    the axis only. Returns the repaired nodes, or None if a violation is too
    large or persists after ``sweeps`` passes.
    """
    x = np.array(nodes, dtype=float)
    n = len(x)
    for _ in range(sweeps):
        res = convexity_residuals(x)
        bad = np.flatnonzero(res > tol)
        if bad.size == 0:
            return x
        for i in bad:
            res_i = convexity_residuals(x)[i]
            if res_i <= tol:
                continue
            if i == 0:
                grad, scale = np.array([0.0, 2.0 * x[1, 0]]), 2.0 * x[1, 0] * np.hypot(*(x[1] - x[0]))
            elif i == n - 1:
                grad, scale = np.array([0.0, -2.0 * x[-2, 0]]), 2.0 * x[-2, 0] * np.hypot(*(x[-2] - x[-1]))
            else:
                a, b = x[i - 1], x[i + 1]
                # C_i = a x b - a x x_i - x_i x b is affine in x_i
                grad = np.array([a[1] - b[1], b[0] - a[0]])
                scale = np.hypot(*(a - x[i])) * np.hypot(*(b - x[i]))
            if scale <= 0 or res_i > max_angle * scale:
                return None
            # aim slightly inside the feasible side so rounding cannot undo the repair
            x[i] -= (res_i + tol) / (grad @ grad) * grad
    return x if np.all(convexity_residuals(x) <= tol) else None


def polygon_weighted_area(nodes) -> float:
    """
    Integral of r over the polygon closed by the axis segment.

    Uses the boundary form 1/2 * closed-integral of r^2 dz, which is exact
    segment by segment; the axis segment contributes nothing.
    """
    x = np.asarray(nodes, dtype=float)
    ra, rb = x[:-1, 0], x[1:, 0]
    dz = np.diff(x[:, 1])
    return float(np.sum(dz * (ra * ra + ra * rb + rb * rb)) / 6.0)


def weighted_area(boundary) -> float:
    if is_self_intersecting(boundary):
        raise GeometryError("weighted area undefined for a self-intersecting boundary")
    return polygon_weighted_area(_nodes_of(boundary))


def _closed_segments(x: np.ndarray):
    p = x
    q = np.vstack([x[1:], x[:1]])  # last segment is the axis closing segment
    return p, q


def _orient(ax, ay, bx, by, cx, cy):
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


def is_self_intersecting(boundary) -> bool:
    """
    True iff two non-adjacent segments of the closed curve (free boundary plus
    axis segment) intersect, or two adjacent segments fold back onto each other.
    """
    x = _nodes_of(boundary)
    p, q = _closed_segments(x)
    m = p.shape[0]
    scale = max(1.0, float(np.max(np.abs(x))))
    eps = 1e-14 * scale * scale

    P = p[:, None, :]
    Q = q[:, None, :]
    R = p[None, :, :]
    S = q[None, :, :]
    o1 = _orient(P[..., 0], P[..., 1], Q[..., 0], Q[..., 1], R[..., 0], R[..., 1])
    o2 = _orient(P[..., 0], P[..., 1], Q[..., 0], Q[..., 1], S[..., 0], S[..., 1])
    o3 = _orient(R[..., 0], R[..., 1], S[..., 0], S[..., 1], P[..., 0], P[..., 1])
    o4 = _orient(R[..., 0], R[..., 1], S[..., 0], S[..., 1], Q[..., 0], Q[..., 1])
    s1, s2, s3, s4 = (np.where(np.abs(o) <= eps, 0, np.sign(o)) for o in (o1, o2, o3, o4))
    proper = (s1 * s2 < 0) & (s3 * s4 < 0)

    def on_seg(a, b, c):
        return (
            (np.minimum(a[..., 0], b[..., 0]) - 1e-14 <= c[..., 0])
            & (c[..., 0] <= np.maximum(a[..., 0], b[..., 0]) + 1e-14)
            & (np.minimum(a[..., 1], b[..., 1]) - 1e-14 <= c[..., 1])
            & (c[..., 1] <= np.maximum(a[..., 1], b[..., 1]) + 1e-14)
        )

    touch = (
        ((s1 == 0) & on_seg(P, Q, R))
        | ((s2 == 0) & on_seg(P, Q, S))
        | ((s3 == 0) & on_seg(R, S, P))
        | ((s4 == 0) & on_seg(R, S, Q))
    )
    hit = proper | touch

    idx = np.arange(m)
    diff = np.abs(idx[:, None] - idx[None, :])
    adjacent = (diff == 1) | (diff == m - 1)
    nonadj = ~adjacent & (diff != 0)
    if np.any(hit[nonadj]):
        return True

    # adjacent segments may only share their common endpoint: detect fold-backs
    d = q - p
    d_next = np.roll(d, -1, axis=0)
    cross = d[:, 0] * d_next[:, 1] - d[:, 1] * d_next[:, 0]
    dot = np.sum(d * d_next, axis=1)
    return bool(np.any((np.abs(cross) <= eps) & (dot < 0)))


def half_ellipse(a: float, n_segments: int, volume: float = 4.0 * np.pi / 3.0) -> GeneratrixBoundary:
    """
    Polygonal generatrix of a half-ellipsoid with z-semi-axis ``a``.

    The r-semi-axis is chosen so that the smooth ellipsoid has the given
    volume; nodes are the image of equally spaced points on the unit half
    circle under (r, z) -> (b r, a z), so the inscribed polygons for all
    ``a`` share the same weighted area.
    """
    if a <= 0 or n_segments < 2:
        raise GeometryError("need a > 0 and at least two segments")
    # volume of the ellipsoid: 4/3 pi a b^2
    b = np.sqrt(volume / (4.0 * np.pi / 3.0) / a)
    theta = np.linspace(-0.5 * np.pi, 0.5 * np.pi, n_segments + 1)
    r = b * np.cos(theta)
    z = a * np.sin(theta)
    r[0] = r[-1] = 0.0
    return GeneratrixBoundary(np.column_stack([r, z]))


def half_disk(n_segments: int, radius: float = 1.0) -> GeneratrixBoundary:
    theta = np.linspace(-0.5 * np.pi, 0.5 * np.pi, n_segments + 1)
    r = radius * np.cos(theta)
    r[0] = r[-1] = 0.0
    return GeneratrixBoundary(np.column_stack([r, radius * np.sin(theta)]))


def segments_for(h: float, a: float = 1.0, volume: float = 4.0 * np.pi / 3.0) -> int:
    """Number of arc segments so that a half ellipse with z-semi-axis ``a`` has chords <= h."""
    b = np.sqrt(volume / (4.0 * np.pi / 3.0) / a)
    stretch = max(a, b)
    # chord of an angle step dt on the unit circle is 2 sin(dt/2) <= dt
    return int(np.ceil(np.pi * stretch / h))
