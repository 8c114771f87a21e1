"""
Eigenvalue solvers on r-weighted P1 spaces.

* Dirichlet Laplacian: shifted inverse power iteration.
* Optimal insulation: the regularized nonlinear eigenvalue
  J(u) = (grad u, grad u)_r + (2 pi / m) (sum_z beta_z |u_z|_eps)^2 on the unit
  sphere of L^2_r, minimized by a semi-implicit gradient flow.
* Neumann Laplacian: second eigenvalue by deflated inverse iteration.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.spatial import cKDTree

from convexrot.fem import P1Operators, apply_dirichlet, assemble_p1, dirichlet_mask
from convexrot.mesh import TriMesh

DIRICHLET = "DIRICHLET"
INSULATION = "INSULATION"
NEUMANN = "NEUMANN"


class SolverError(RuntimeError):
    """Iterative solver failure. ``last`` holds the last iterate, if any."""

    def __init__(self, msg, last=None):
        super().__init__(msg)
        self.last = last


@dataclass
class FlowParams:
    """
    Gradient flow controls.

    Each step solves (M + tau (K + R(u_k))) w = M u_k and normalizes w.
    ``tau = inf`` is the inverse-iteration limit. A step that increases J is
    rejected and retried with a halved (finite) tau; accepted finite steps
    double tau again.

    Once the residual drops below ``newton_switch`` the iterate is polished
    with Newton steps on the Euler-Lagrange system; a Newton step is kept
    only if it lowers both J and the residual. Set ``newton_switch = 0`` for
    the plain flow.
    """

    tau: float = math.inf
    tol_lambda: float = 1e-10
    tol_residual: float = 1e-8
    max_iter: int = 20000
    perturbation: float = 0.5
    newton_switch: float = 1e-3
    newton_steps: int = 8


@dataclass
class EigenSolution:
    lam: float
    u: np.ndarray
    kind: str
    m: float | None = None
    epsilon: float | None = None
    ell: np.ndarray | None = None
    n_iter: int = 0
    residual: float = 0.0
    history: np.ndarray = field(default_factory=lambda: np.zeros(0))


def default_epsilon(mesh: TriMesh) -> float:
    """eps = N^{-1/2} / 10 with N the number of mesh nodes."""
    return mesh.nv ** -0.5 / 10.0


def weighted_norm(u, M) -> float:
    return float(np.sqrt(u @ (M @ u)))


# -- Dirichlet --------------------------------------------------------------

def dirichlet_eigen(mesh: TriMesh, ops: P1Operators | None = None, u0=None,
                    tol: float = 1e-10, max_iter: int = 10000) -> EigenSolution:
    """Smallest eigenpair of K u = lam M u with u = 0 on the free boundary."""
    ops = ops or assemble_p1(mesh)
    mask = dirichlet_mask(mesh)
    K, free = apply_dirichlet(ops.K, mask)
    M, _ = apply_dirichlet(ops.M, mask)
    if len(free) == 0:
        raise SolverError("no free dofs for the Dirichlet problem")
    try:
        lu = spla.splu(K.tocsc())
    except RuntimeError as exc:
        raise SolverError(f"singular Dirichlet stiffness: {exc}") from exc

    x = np.ones(len(free)) if u0 is None else np.asarray(u0, dtype=float)[free].copy()
    if not np.any(x):
        x = np.ones(len(free))
    x /= weighted_norm(x, M)
    lam_old = np.inf
    res = np.inf
    for it in range(1, max_iter + 1):
        y = lu.solve(M @ x)
        y /= weighted_norm(y, M)
        Ky, My = K @ y, M @ y
        lam = float(y @ Ky)
        res = float(np.linalg.norm(Ky - lam * My) / np.linalg.norm(My))
        x = y
        if abs(lam - lam_old) <= tol * abs(lam) and res <= 1e-9:
            break
        lam_old = lam
    else:
        raise SolverError(f"inverse iteration did not converge (residual {res:.2e})", last=x)
    u = np.zeros(mesh.nv)
    u[free] = x
    if np.sum(ops.M @ u) < 0:
        u = -u
    return EigenSolution(lam, u, DIRICHLET, n_iter=it, residual=res)


# -- Neumann ----------------------------------------------------------------

def neumann_eigen2(mesh: TriMesh, ops: P1Operators | None = None, shift: float = 1.0,
                   tol: float = 1e-10, max_iter: int = 10000) -> float:
    """First non-zero eigenvalue of K u = mu M u (constants deflated)."""
    ops = ops or assemble_p1(mesh)
    K, M = ops.K, ops.M
    lu = spla.splu((K + shift * M).tocsc())
    one = np.ones(mesh.nv)
    one /= weighted_norm(one, M)
    Mone = M @ one
    x = mesh.vertices[:, 1] - mesh.vertices[:, 1].mean() + 0.1 * mesh.vertices[:, 0]
    mu_old = np.inf
    for _ in range(max_iter):
        x = x - (Mone @ x) * one
        x /= weighted_norm(x, M)
        y = lu.solve(M @ x)
        y = y - (Mone @ y) * one
        y /= weighted_norm(y, M)
        mu = float(y @ (K @ y))
        x = y
        if abs(mu - mu_old) <= tol * abs(mu):
            return mu
        mu_old = mu
    raise SolverError("Neumann inverse iteration did not converge", last=x)


# -- optimal insulation -----------------------------------------------------

def insulation_functional(u, K, beta, m: float, eps: float) -> tuple[float, float]:
    """Return (J(u), regularized weighted L1 boundary norm of u)."""
    S = float(np.sum(beta * np.sqrt(u * u + eps * eps)))
    return float(u @ (K @ u)) + 2.0 * np.pi / m * S * S, S


class _BoundaryDiagSolver:
    """
    Solves (P + diag_b(d)) x = b for a fixed sparse SPD P and a diagonal
    perturbation supported on the boundary dofs, via the Schur complement
    on those dofs.
    """

    def __init__(self, P: sp.csr_matrix, bnd: np.ndarray):
        n = P.shape[0]
        self.b = bnd
        self.i = np.setdiff1d(np.arange(n), bnd)
        P = P.tocsr()
        P_II = P[self.i][:, self.i].tocsc()
        self.P_bI = P[self.b][:, self.i]
        self.lu = spla.splu(P_II)
        self.W = self.lu.solve(self.P_bI.T.toarray())
        S0 = P[self.b][:, self.b].toarray() - self.P_bI @ self.W
        self.S0 = 0.5 * (S0 + S0.T)

    def solve(self, d_b: np.ndarray, rhs: np.ndarray) -> np.ndarray:
        y = self.lu.solve(rhs[self.i])
        S = self.S0 + np.diag(d_b)
        xb = la.cho_solve(la.cho_factor(S), rhs[self.b] - self.P_bI @ y)
        x = np.empty_like(rhs)
        x[self.b] = xb
        x[self.i] = y - self.W @ xb
        return x


def insulation_residual(u, K, M, beta, m: float, eps: float) -> float:
    """
    Residual of the discrete Euler-Lagrange equation for a normalized u,
    measured in the lumped dual L^2_r norm.
    """
    ue = np.sqrt(u * u + eps * eps)
    S = float(np.sum(beta * ue))
    r = K @ u + 2.0 * np.pi / m * S * beta * u / ue
    Mu = M @ u
    r = r - float(u @ r) * Mu
    ml = np.asarray(M.sum(axis=1)).ravel()
    return float(np.sqrt(np.sum(r * r / ml)))


def initial_guess(mesh: TriMesh, perturbation: float = 0.5) -> np.ndarray:
    """
    Constant plus a linear function of z, odd about the mid height. The odd
    part lets the flow leave the symmetric critical point quickly when the
    minimizer is not symmetric.
    """
    z = mesh.vertices[:, 1]
    zc, hz = 0.5 * (z.min() + z.max()), 0.5 * (z.max() - z.min())
    return np.ones(mesh.nv) + perturbation * (z - zc) / hz


def insulation_eigen(mesh: TriMesh, m: float, epsilon: float | None = None,
                     flow: FlowParams | None = None, ops: P1Operators | None = None,
                     u0=None) -> EigenSolution:
    """
    Minimize J_{m,eps,h} over the unit sphere of L^2_r by a gradient flow.

    ``u0`` warm-starts the flow; by default the flow starts from
    :func:`initial_guess`.
    """
    if m <= 0:
        raise ValueError("mass m must be positive")
    flow = flow or FlowParams()
    eps = default_epsilon(mesh) if epsilon is None else float(epsilon)
    if eps <= 0:
        raise ValueError("epsilon must be positive")
    ops = ops or assemble_p1(mesh)
    K, M, beta = ops.K, ops.M, ops.beta
    bnd = np.flatnonzero(beta > 0)
    c = 2.0 * np.pi / m

    u = initial_guess(mesh, flow.perturbation) if u0 is None else np.array(u0, dtype=float)
    u /= weighted_norm(u, M)
    J, S = insulation_functional(u, K, beta, m, eps)
    hist = [J]
    solvers: dict[float, _BoundaryDiagSolver] = {}
    tau = flow.tau
    res = insulation_residual(u, K, M, beta, m, eps)

    cooldown = 0
    for it in range(1, flow.max_iter + 1):
        d = c * S * beta[bnd] / np.sqrt(u[bnd] ** 2 + eps * eps)
        Mu = M @ u
        while True:
            if tau not in solvers:
                P = K if math.isinf(tau) else K + M / tau
                solvers[tau] = _BoundaryDiagSolver(P, bnd)
            w = solvers[tau].solve(d, Mu)
            w /= weighted_norm(w, M)
            Jw, Sw = insulation_functional(w, K, beta, m, eps)
            if Jw <= J + 1e-12:
                break
            tau = 1.0 if math.isinf(tau) else 0.5 * tau
            if tau < 1e-12:
                raise SolverError("gradient flow step size underflow", last=u)
        u, J, S = w, Jw, Sw
        hist.append(J)
        if not math.isinf(tau):
            tau = math.inf if tau > 1e6 else 2.0 * tau
        cooldown -= 1
        if abs(hist[-2] - J) > flow.tol_lambda and (cooldown > 0 or it % 10):
            continue
        res = insulation_residual(u, K, M, beta, m, eps)
        if res <= flow.tol_residual and abs(hist[-2] - J) <= flow.tol_lambda:
            break
        if cooldown <= 0 and res < flow.newton_switch:
            u, J, S, res, ok = _newton_polish(u, J, res, K, M, beta, m, eps, flow)
            hist.append(J)
            if ok:
                break
            cooldown = 50
    else:
        raise SolverError(f"gradient flow did not converge in {flow.max_iter} steps (residual {res:.2e})", last=u)

    if np.sum(M @ u) < 0:
        u = -u
    return EigenSolution(J, u, INSULATION, m=m, epsilon=eps,
                         ell=insulation_thickness(mesh, u, beta, m),
                         n_iter=it, residual=res, history=np.array(hist))


def _newton_polish(u, J, res, K, M, beta, m, eps, flow):
    """
    Newton steps on K u + c S(u) g(u) = lam M u, u^T M u = 1, with
    g = beta u / |u|_eps. The rank-one part c g g^T of the Hessian is
    carried by an auxiliary unknown sigma = g^T du to keep the system sparse.
    """
    c = 2.0 * np.pi / m
    n = len(u)
    S = float(np.sum(beta * np.sqrt(u * u + eps * eps)))
    for _ in range(flow.newton_steps):
        ue = np.sqrt(u * u + eps * eps)
        g = beta * u / ue
        Mu = M @ u
        grad = K @ u + c * S * g
        lam = float(u @ grad)
        F = grad - lam * Mu
        H = K + sp.diags(c * S * beta * eps * eps / ue ** 3) - lam * M
        aug = sp.bmat([[H, sp.csr_matrix(c * g[:, None]), sp.csr_matrix(-Mu[:, None])],
                       [sp.csr_matrix(c * g[None, :]), sp.csr_matrix([[-c]]), None],
                       [sp.csr_matrix(-Mu[None, :]), None, sp.csr_matrix((1, 1))]], format="csc")
        try:
            step = spla.splu(aug).solve(np.concatenate([-F, [0.0, 0.0]]))
        except RuntimeError:
            return u, J, S, res, False
        w = u + step[:n]
        w /= weighted_norm(w, M)
        Jw, Sw = insulation_functional(w, K, beta, m, eps)
        rw = insulation_residual(w, K, M, beta, m, eps)
        if not (np.all(np.isfinite(w)) and Jw <= J + 1e-12 and rw < res):
            return u, J, S, res, False
        u, J, S, res = w, Jw, Sw, rw
        if res <= flow.tol_residual:
            return u, J, S, res, True
    return u, J, S, res, False


def insulation_thickness(mesh: TriMesh, u, beta, m: float) -> np.ndarray:
    """
    Optimal film thickness at the free-boundary vertices (lower pole first):
    ell = m |u| / (2 pi sum_z beta_z |u_z|), so that 2 pi sum_z beta_z ell_z = m.
    """
    ov = mesh.out_vertices
    au = np.abs(u[ov])
    return m * au / (2.0 * np.pi * float(np.sum(beta[ov] * au)))


def regularization_gap(u, beta, eps: float) -> float:
    """sum beta |u|_eps - sum beta |u|; lies in [0, eps * sum beta]."""
    return float(np.sum(beta * (np.sqrt(u * u + eps * eps) - np.abs(u))))


# -- diagnostics ------------------------------------------------------------

def locate_points(mesh: TriMesh, pts: np.ndarray, k: int = 8):
    """Containing triangle and barycentric coordinates for each point."""
    pts = np.atleast_2d(pts)
    tri = mesh.triangles
    v = mesh.vertices
    cen = v[tri].mean(axis=1)
    tree = cKDTree(cen)
    k = min(k, mesh.nt)
    _, cand = tree.query(pts, k=k)
    cand = cand.reshape(len(pts), k)
    p0, p1, p2 = v[tri[cand, 0]], v[tri[cand, 1]], v[tri[cand, 2]]
    d1, d2 = p1 - p0, p2 - p0
    q = pts[:, None, :] - p0
    det = d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0]
    l1 = (q[..., 0] * d2[..., 1] - q[..., 1] * d2[..., 0]) / det
    l2 = (d1[..., 0] * q[..., 1] - d1[..., 1] * q[..., 0]) / det
    lam = np.stack([1 - l1 - l2, l1, l2], axis=-1)
    best = np.argmax(lam.min(axis=-1), axis=1)
    rows = np.arange(len(pts))
    bary = np.clip(lam[rows, best], 0.0, None)
    bary /= bary.sum(axis=1, keepdims=True)
    return cand[rows, best], bary


def evaluate_p1(mesh: TriMesh, u, pts) -> np.ndarray:
    t, bary = locate_points(mesh, np.asarray(pts, dtype=float))
    return np.sum(np.asarray(u)[mesh.triangles[t]] * bary, axis=1)


def asymmetry(mesh: TriMesh, u, ops: P1Operators | None = None) -> float:
    """
    ||u(r, z) - u(r, 2 z_c - z)||_{L^2_r} / ||u||_{L^2_r} with z_c the midpoint
    of the axis segment; zero for functions symmetric about the equator.
    """
    ops = ops or assemble_p1(mesh)
    v = mesh.vertices
    ov = mesh.out_vertices
    zc = 0.5 * (v[ov[0], 1] + v[ov[-1], 1])
    mirrored = np.column_stack([v[:, 0], 2.0 * zc - v[:, 1]])
    d = np.asarray(u) - evaluate_p1(mesh, u, mirrored)
    return weighted_norm(d, ops.M) / weighted_norm(np.asarray(u), ops.M)


# -- derived quantities -----------------------------------------------------

def critical_mass(mesh: TriMesh, bracket=(4.0, 8.0), epsilon: float | None = None,
                  width: float = 1e-2, flow: FlowParams | None = None,
                  ops: P1Operators | None = None) -> dict:
    """
    Mass at which the insulation eigenvalue equals the first non-zero Neumann
    eigenvalue, by bisection on m -> lam_m - mu_2.

    Returns a dict with keys ``m0``, ``mu2``, ``bracket``, ``path`` (list of
    (m, lam)) and ``solutions`` (the corresponding EigenSolution objects).
    """
    ops = ops or assemble_p1(mesh)
    flow = flow or FlowParams()
    eps = default_epsilon(mesh) if epsilon is None else epsilon
    mu2 = neumann_eigen2(mesh, ops)
    lo, hi = map(float, bracket)
    if not (0 < lo < hi):
        raise ValueError(f"invalid bracket {bracket}")
    path, sols = [], []
    seed = initial_guess(mesh, flow.perturbation)

    def lam_at(mm):
        sol = insulation_eigen(mesh, mm, eps, flow, ops, u0=seed)
        path.append((mm, sol.lam))
        sols.append(sol)
        return sol.lam

    f_lo, f_hi = lam_at(lo) - mu2, lam_at(hi) - mu2
    if not (f_lo > 0 > f_hi):
        raise ValueError(f"bracket [{lo}, {hi}] does not enclose m0: "
                         f"lam(lo)-mu2={f_lo:.4g}, lam(hi)-mu2={f_hi:.4g}")
    while hi - lo > width:
        mid = 0.5 * (lo + hi)
        if lam_at(mid) - mu2 > 0:
            lo = mid
        else:
            hi = mid
    return {"m0": 0.5 * (lo + hi), "mu2": mu2, "bracket": (lo, hi), "path": path, "solutions": sols}


def scaling_check(mesh: TriMesh, m: float, t: float, epsilon: float | None = None,
                  flow: FlowParams | None = None) -> tuple[float, float]:
    """
    Returns (t^-2 lam_m(omega), lam_{m t^3}(t omega)); both computed with the
    same regularization parameter.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    eps = default_epsilon(mesh) if epsilon is None else epsilon
    lhs = insulation_eigen(mesh, m, eps, flow).lam / t ** 2
    if t == 1.0:
        return lhs, lhs
    rhs = insulation_eigen(mesh.scaled(t), m * t ** 3, eps, flow).lam
    return lhs, rhs
