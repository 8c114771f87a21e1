"""
Descent deformation fields from a Stokes-type saddle problem.

The field minimizes 1/2 y^T A y - f^T y subject to the weighted divergence
constraint B y = g (first-order volume preservation) and the linearized
convexity constraints C y <= c. The inequality-constrained saddle problem is
solved by the Uzawa iteration with projected inequality multipliers.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from convexrot.fem import assemble_cr, cr_vertex_operator, write_triplets
from convexrot.geometry import GeneratrixBoundary, convexity_jacobian, convexity_residuals, polygon_weighted_area
from convexrot.mesh import TriMesh
from convexrot.shape_gradient import BoundaryGradient


class UzawaError(RuntimeError):
    """Uzawa did not reach the KKT tolerance. ``report`` holds the residuals."""

    def __init__(self, msg, report=None, last=None):
        super().__init__(msg)
        self.report = report
        self.last = last


@dataclass
class SaddleSystem:
    """
    Quadratic program min 1/2 y^T A y - f^T y  s.t.  B y = g,  C y <= c.

    When assembled from a mesh, ``y`` lives on the CR dofs that are not
    glide-constrained (``free``) and the rows of B and C are rescaled for
    conditioning; ``row_scale_B`` and ``row_scale_C`` record the factors.
    """

    A: sp.spmatrix
    B: sp.spmatrix
    C: sp.spmatrix
    f: np.ndarray
    g: np.ndarray
    c: np.ndarray
    free: np.ndarray | None = None
    n_full: int | None = None
    row_scale_B: np.ndarray | None = None
    row_scale_C: np.ndarray | None = None
    boundary_eval: sp.spmatrix | None = None   # full CR dofs -> interleaved boundary displacements

    def __post_init__(self):
        self.A = sp.csr_matrix(self.A)
        n = self.A.shape[0]
        self.B = sp.csr_matrix(self.B) if self.B is not None else sp.csr_matrix((0, n))
        self.C = sp.csr_matrix(self.C) if self.C is not None else sp.csr_matrix((0, n))
        self.f = np.asarray(self.f, dtype=float)
        self.g = np.zeros(self.B.shape[0]) if self.g is None else np.asarray(self.g, dtype=float)
        self.c = np.zeros(self.C.shape[0]) if self.c is None else np.asarray(self.c, dtype=float)
        if self.A.shape != (n, n) or self.B.shape[1] != n or self.C.shape[1] != n or self.f.shape != (n,):
            raise ValueError("inconsistent saddle system dimensions")
        if self.g.shape != (self.B.shape[0],) or self.c.shape != (self.C.shape[0],):
            raise ValueError("inconsistent right-hand side dimensions")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    def expand(self, y: np.ndarray) -> np.ndarray:
        """Reduced unknowns -> full CR dof vector (glide dofs set to zero)."""
        if self.free is None:
            return y
        full = np.zeros(self.n_full)
        full[self.free] = y
        return full

    def dump(self, prefix) -> None:
        """Write A, B, C as 'i j value' triplets and f, g, c as columns."""
        for name in ("A", "B", "C"):
            write_triplets(f"{prefix}_{name}.txt", getattr(self, name))
        for name in ("f", "g", "c"):
            np.savetxt(f"{prefix}_{name}.txt", getattr(self, name), fmt="%.17g")


def boundary_evaluation(mesh: TriMesh) -> sp.csr_matrix:
    """
    (2N, 2 ne) operator from CR dofs to interleaved displacements
    (V_r(x_1), V_z(x_1), V_r(x_2), ...) at the free-boundary nodes.

    A node value is the mean of the CR values at the midpoints of its two
    boundary edges. Midpoint values carry the flux seen by the divergence
    constraint, so fields with zero boundary flux do not move the boundary
    at first order; averaging over adjacent triangles instead would let
    nonconforming modes produce spurious normal motion. The radial component
    at the two poles is zero.
    """
    ne = len(mesh.edges)
    index = {tuple(e): k for k, e in enumerate(mesh.edges.tolist())}

    def edge(a, b):
        return index[(min(a, b), max(a, b))]

    ov = mesh.out_vertices
    N = len(ov)
    out_e = [edge(ov[i], ov[i + 1]) for i in range(N - 1)]
    ax = mesh.edges[mesh.axis_edge_mask]
    pole_axis = []
    for p in (ov[0], ov[-1]):
        k = np.flatnonzero((ax[:, 0] == p) | (ax[:, 1] == p))
        pole_axis.append(edge(*ax[k[0]]))

    rows, cols, vals = [], [], []
    for i in range(N):
        if i == 0 or i == N - 1:
            es = [out_e[0] if i == 0 else out_e[-1], pole_axis[0 if i == 0 else 1]]
            comps = (1,)
        else:
            es = [out_e[i - 1], out_e[i]]
            comps = (0, 1)
        for comp in comps:
            for e in es:
                rows.append(2 * i + comp)
                cols.append(comp * ne + e)
                vals.append(0.5)
    return sp.csr_matrix((vals, (rows, cols)), shape=(2 * N, 2 * ne))


def assemble_saddle(mesh: TriMesh, grad: BoundaryGradient, boundary: GeneratrixBoundary | None = None,
                    t0: float = 1.0, glide: str = "axis") -> SaddleSystem:
    """
    Assemble the deformation QP on ``mesh``.

    Parameters
    ----------
    mesh : TriMesh whose free-boundary path matches ``boundary``.
    grad : shape gradient at the boundary nodes.
    boundary : defaults to ``mesh.boundary()``.
    t0 : linearization step of the convexity rows C_i(X) + t0 DC_i(X) V <= 0.
    glide : dofs with zero radial component, see :func:`assemble_cr`.
    """
    if t0 <= 0:
        raise ValueError("t0 must be positive")
    boundary = boundary if boundary is not None else mesh.boundary()
    N = boundary.n
    if len(mesh.out_vertices) != N or len(grad.g) != N:
        raise ValueError("mesh, boundary and gradient sizes differ")
    if not np.allclose(mesh.vertices[mesh.out_vertices], boundary.nodes, rtol=0, atol=1e-12):
        raise ValueError("mesh free boundary does not match the boundary nodes")

    ops = assemble_cr(mesh, glide=glide)
    free = np.flatnonzero(~ops.glide_mask)
    P = boundary_evaluation(mesh)

    # equivalent rows (1 / (sqrt|T| rbar)) int_T div(r v) keep B A^-1 B^T well conditioned
    rbar = mesh.vertices[mesh.triangles, 0].mean(axis=1)
    sB = 1.0 / (np.sqrt(mesh.areas) * rbar)
    B = (sp.diags(sB) @ ops.B)[:, free]

    A = ops.A[free][:, free].tocsc()
    C = (convexity_jacobian(boundary) @ P)[:, free].tocsr()
    c = -convexity_residuals(boundary) / t0
    # scale convexity rows so that diag(C A^-1 C^T) matches the spectral radius
    # of B A^-1 B^T; this balances the two blocks of the dual problem
    lu = spla.splu(A)
    rho_B = _spectral_radius(lambda x: B @ lu.solve(B.T @ x), B.shape[0])
    Ct = C.T.toarray()
    nrm = np.sqrt(np.maximum(np.einsum("ij,ij->j", Ct, lu.solve(Ct)), 0.0))
    sC = np.sqrt(rho_B) / np.where(nrm > 0, nrm, np.inf)
    sC[nrm == 0] = 1.0
    C = sp.diags(sC) @ C
    c = sC * c

    q = np.empty(2 * N)
    q[0::2] = grad.nodal * grad.normals[:, 0]
    q[1::2] = grad.nodal * grad.normals[:, 1]
    f = -(P.T @ q)[free]
    return SaddleSystem(A, B, C, f, np.zeros(B.shape[0]), c, free=free, n_full=2 * ops.n_edges,
                        row_scale_B=sB, row_scale_C=sC, boundary_eval=P)


# -- Uzawa ------------------------------------------------------------------

@dataclass
class UzawaResult:
    y: np.ndarray
    z1: np.ndarray
    z2: np.ndarray
    n_iter: int
    alpha: float
    report: dict = field(default_factory=dict)


def kkt_report(sys: SaddleSystem, y, z1, z2) -> dict:
    stat = sys.A @ y - sys.f + sys.B.T @ z1 + sys.C.T @ z2
    slack = sys.C @ y - sys.c
    scale = max(1.0, float(np.max(np.abs(sys.f), initial=0.0)))
    return {
        "stationarity": float(np.max(np.abs(stat), initial=0.0)) / scale,
        "equality": float(np.max(np.abs(sys.B @ y - sys.g), initial=0.0)),
        "inequality": float(np.max(slack, initial=0.0)),
        "complementarity": float(np.max(np.abs(z2 * slack), initial=0.0)),
        "dual_sign": float(np.max(-z2, initial=0.0)),
    }


def _spectral_radius(op, n, iters=60, seed=0) -> float:
    if n == 0:
        return 0.0
    x = np.random.default_rng(seed).standard_normal(n)
    lam = 0.0
    for _ in range(iters):
        y = op(x)
        ny = np.linalg.norm(y)
        if ny == 0:
            return 0.0
        lam, x = ny / np.linalg.norm(x), y / ny
    return lam


def _equality_solver(sys: SaddleSystem):
    """Factorization of [[A, B^T], [B, 0]]; returns solve(rhs_y) -> (y, z1) with B y = g."""
    n, m1 = sys.n, sys.B.shape[0]
    if m1 == 0:
        lu = spla.splu(sys.A.tocsc())
        return lambda r, g=None: (lu.solve(r), np.zeros((0,) + np.shape(r)[1:]))
    K = sp.bmat([[sys.A, sys.B.T], [sys.B, None]], format="csc")
    try:
        lu = spla.splu(K)
    except RuntimeError as exc:
        raise UzawaError(f"equality constraints are rank deficient: {exc}") from exc

    def solve(r, g=None):
        tail = np.zeros((m1,) + np.shape(r)[1:]) if g is None else g
        x = lu.solve(np.concatenate([r, tail]))
        return x[:n], x[n:]
    return solve


def uzawa(sys: SaddleSystem, alpha: float | None = None, tol: float = 1e-8,
          max_iter: int = 50000, window: int = 50, accelerate: bool = True) -> UzawaResult:
    """
    Uzawa iteration with a projected inequality multiplier.

    The equality block is eliminated exactly: for given z2 the pair (y, z1)
    solves A y + B^T z1 = f - C^T z2, B y = g with one sparse factorization.
    The iteration then acts on the inequality multiplier only,
    z2 = max(z2 + alpha (C y(z2) - c), 0), through the small dense operator
    C y(z2). With ``accelerate`` the step is taken from a Nesterov
    extrapolated point with adaptive restart; otherwise the plain projected
    step is used.

    Parameters
    ----------
    alpha : float, optional
        Dual step. Defaults to 1 / rho with rho the largest eigenvalue of the
        reduced dual operator. In the plain iteration the step is halved
        whenever the KKT residual grows over ``window`` iterations.
    tol : float
        Bound on every KKT residual of :func:`kkt_report`.
    """
    solve = _equality_solver(sys)
    y0, z10 = solve(sys.f, sys.g if sys.B.shape[0] else None)
    nc = sys.C.shape[0]
    if nc == 0:
        report = kkt_report(sys, y0, z10, np.zeros(0))
        if max(report.values()) > tol:
            raise UzawaError("equality-constrained solve is inaccurate", report=report, last=y0)
        return UzawaResult(y0, z10, np.zeros(0), 0, 0.0, report)

    Ct = sys.C.T.toarray()
    Y, Z1 = solve(Ct)                      # y(z2) = y0 - Y z2, z1(z2) = z10 - Z1 z2
    H = sys.C @ Y
    H = 0.5 * (H + H.T)
    if alpha is None:
        rho = float(np.linalg.eigvalsh(H)[-1])
        alpha = 1.0 / rho if rho > 0 else 1.0
    if alpha <= 0:
        raise ValueError("alpha must be positive")

    s0 = sys.C @ y0 - sys.c                # slack at z2 = 0
    z = np.zeros(nc)
    w, t = z, 1.0
    ref, err = np.inf, np.inf
    for it in range(1, max_iter + 1):
        s = s0 - H @ w
        z_new = np.maximum(w + alpha * s, 0.0)
        slack = s0 - H @ z_new
        err = max(float(np.max(slack, initial=0.0)), float(np.max(np.abs(z_new * slack), initial=0.0)))
        if err <= tol:
            z = z_new
            break
        if accelerate:
            t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            if (z_new - z) @ s < 0:
                w, t = z_new, 1.0
            else:
                w, t = z_new + (t - 1.0) / t_new * (z_new - z), t_new
        else:
            w = z_new
            if it % window == 0:
                if err > ref:
                    alpha *= 0.5
                ref = err
        z = z_new
    y = y0 - Y @ z
    z1 = z10 - Z1 @ z
    report = kkt_report(sys, y, z1, z)
    if max(report.values()) > tol:
        raise UzawaError(f"Uzawa did not converge in {max_iter} iterations (KKT {max(report.values()):.2e})",
                         report=report, last=y)
    return UzawaResult(y, z1, z, it, alpha, report)


# -- extraction -------------------------------------------------------------

@dataclass(frozen=True)
class DeformationField:
    cr_dofs: np.ndarray          # [r-components | z-components] over all edges
    vertex_values: np.ndarray    # (nv, 2); free-boundary rows equal boundary_values
    boundary_values: np.ndarray  # (N, 2) at the free-boundary nodes, lower pole first
    pressure: np.ndarray         # per-triangle multiplier of int_T div(r v) = 0
    z2: np.ndarray               # convexity multipliers (unscaled rows)


def extract_field(result: UzawaResult, sys: SaddleSystem, mesh: TriMesh) -> DeformationField:
    """Vertex values of the converged field, with exactly zero radial motion on the axis."""
    y = sys.expand(result.y)
    ne = len(mesh.edges)
    E = cr_vertex_operator(mesh)
    V = np.column_stack([E @ y[:ne], E @ y[ne:]])
    V[mesh.axis_vertices, 0] = 0.0
    Vb = (sys.boundary_eval @ y).reshape(-1, 2) if sys.boundary_eval is not None else V[mesh.out_vertices]
    V[mesh.out_vertices] = Vb
    p = result.z1 * sys.row_scale_B if sys.row_scale_B is not None else result.z1
    z2 = result.z2 * sys.row_scale_C if sys.row_scale_C is not None else result.z2
    return DeformationField(y, V, Vb.copy(), p, z2)


def volume_gradient(boundary: GeneratrixBoundary) -> np.ndarray:
    """(N, 2) derivative of the polygon volume 2 pi |omega|_r with respect to the nodes."""
    x = boundary.nodes
    d = np.diff(x, axis=0)
    n = np.column_stack([d[:, 1], -d[:, 0]])       # outward normal times segment length
    ra, rb = x[:-1, 0], x[1:, 0]
    g = np.zeros_like(x)
    g[:-1] += ((2.0 * ra + rb) / 6.0)[:, None] * n
    g[1:] += ((ra + 2.0 * rb) / 6.0)[:, None] * n
    return 2.0 * np.pi * g


def remove_dilation(boundary: GeneratrixBoundary, V: np.ndarray, target_volume: float | None = None,
                    t0: float = 1.0) -> tuple[np.ndarray, float]:
    """
    Subtract s * x from the boundary displacement V so that the linearized
    volume after a step t0 equals ``target_volume`` (default: the current
    volume); returns (corrected V, s).

    The midpoint-flux divergence constraint preserves the volume only up to
    discretization error, which a descent field can exploit by growing the
    body, and second-order effects make the volume drift over many steps. The
    position field x changes the volume at rate 3 vol, keeps axis nodes on the
    axis and scales every convexity residual by the same factor.
    """
    G = volume_gradient(boundary)
    x = boundary.nodes
    deficit = 0.0
    if target_volume is not None:
        deficit = (target_volume - 2.0 * np.pi * polygon_weighted_area(x)) / t0
    s = float((np.sum(G * V) - deficit) / np.sum(G * x))
    return V - s * x, s


def deformation_field(mesh: TriMesh, grad: BoundaryGradient, boundary=None, t0: float = 1.0,
                      glide: str = "axis", tol: float = 1e-8, max_iter: int = 50000):
    """Assemble, solve and extract; returns (field, uzawa result, system)."""
    sys = assemble_saddle(mesh, grad, boundary, t0, glide)
    res = uzawa(sys, tol=tol, max_iter=max_iter)
    return extract_field(res, sys, mesh), res, sys
