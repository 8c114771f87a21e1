"""
Finite-difference shape gradients on the free boundary.

A shape functional J is represented by a nodal density g on the boundary
polyline: moving node i a distance ``delta`` along its unit normal changes J by
about ``delta * g_i * weights_i``, where ``weights_i`` is the lumped
r-weighted boundary mass of the node. The directional derivative along a
deformation V is then sum_i g_i weights_i (V(x_i) . n_i).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from convexrot.eigen import (
    EigenSolution,
    FlowParams,
    SolverError,
    default_epsilon,
    dirichlet_eigen,
    insulation_eigen,
)
from convexrot.fem import assemble_p1, cr_vertex_operator
from convexrot.geometry import GeneratrixBoundary, GeometryError, polygon_weighted_area
from convexrot.mesh import MeshError, MeshTemplate, TriMesh


# -- objectives -------------------------------------------------------------

@dataclass(frozen=True)
class Evaluation:
    value: float
    mesh: TriMesh | None = None
    solution: EigenSolution | None = None


class VolumeObjective:
    """Volume of the body of revolution, 2 pi |omega|_r. No state equation."""

    name = "volume"

    def evaluate(self, boundary: GeneratrixBoundary, warm: Evaluation | None = None) -> Evaluation:
        return Evaluation(2.0 * np.pi * polygon_weighted_area(boundary.nodes))

    def __call__(self, boundary: GeneratrixBoundary) -> float:
        return self.evaluate(boundary).value


class _MeshObjective:
    """
    Objective evaluated on the image of a fixed reference triangulation.

    Every boundary with the template's node count is meshed by the same
    harmonic map, so values depend smoothly on the nodes. Evaluations do not
    mutate the objective; a previous :class:`Evaluation` may be passed as a
    warm start.
    """

    name = ""

    def __init__(self, template: MeshTemplate):
        self.template = template

    @classmethod
    def for_boundary(cls, boundary: GeneratrixBoundary, h: float, **kwargs):
        return cls(MeshTemplate.for_boundary(boundary, h), **kwargs)

    def mesh(self, boundary: GeneratrixBoundary) -> TriMesh:
        return self.template.map(boundary)

    def solve(self, mesh: TriMesh, warm: Evaluation | None) -> EigenSolution:
        raise NotImplementedError

    def evaluate(self, boundary: GeneratrixBoundary, warm: Evaluation | None = None) -> Evaluation:
        mesh = self.mesh(boundary)
        sol = self.solve(mesh, warm)
        return Evaluation(sol.lam, mesh, sol)

    def __call__(self, boundary: GeneratrixBoundary) -> float:
        return self.evaluate(boundary).value


class DirichletObjective(_MeshObjective):
    """Smallest Dirichlet eigenvalue of the Laplacian on the body."""

    name = "dirichlet"

    def solve(self, mesh, warm):
        u0 = warm.solution.u if warm is not None and warm.solution is not None else None
        return dirichlet_eigen(mesh, u0=u0)


class InsulationObjective(_MeshObjective):
    """
    Regularized optimal insulation eigenvalue for film mass ``m``.

    The regularization parameter defaults to N^{-1/2}/10 for the template's
    node count and is then held fixed for all boundaries.
    """

    name = "insulation"

    def __init__(self, template: MeshTemplate, m: float, epsilon: float | None = None,
                 flow: FlowParams | None = None):
        super().__init__(template)
        if m <= 0:
            raise ValueError("mass m must be positive")
        self.m = float(m)
        self.epsilon = default_epsilon(template.reference) if epsilon is None else float(epsilon)
        self.flow = flow or FlowParams()

    def solve(self, mesh, warm):
        u0 = warm.solution.u if warm is not None and warm.solution is not None else None
        return insulation_eigen(mesh, self.m, self.epsilon, self.flow, u0=u0)


# -- gradient ---------------------------------------------------------------

@dataclass(frozen=True)
class BoundaryGradient:
    """
    Nodal shape-gradient density on the free boundary.

    Attributes
    ----------
    nodes : (N, 2) boundary nodes the gradient was computed at.
    g : (N,) density per unit normal displacement and unit r-weighted length.
    normals : (N, 2) outward unit normals (pure +-z at the poles).
    weights : (N,) lumped r-weighted boundary mass of each node.
    arc_weights : (N,) lumped (unweighted) arclength of each node.
    value : objective value at ``nodes``.
    """

    nodes: np.ndarray
    g: np.ndarray
    normals: np.ndarray
    weights: np.ndarray
    arc_weights: np.ndarray
    value: float

    @property
    def nodal(self) -> np.ndarray:
        """Derivative of J with respect to the normal offset of each node."""
        return self.g * self.weights

    @property
    def arclength_density(self) -> np.ndarray:
        """Density with respect to plain arclength of the generatrix."""
        return self.nodal / self.arc_weights

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node_index", "r", "z", "nr", "nz", "g", "beta"])
            for i in range(len(self.g)):
                w.writerow([i] + [f"{v:.12g}" for v in (*self.nodes[i], *self.normals[i],
                                                        self.g[i], self.weights[i])])


def node_normals(boundary: GeneratrixBoundary) -> np.ndarray:
    """Angle-bisector outward normals; the poles get -e_z and +e_z."""
    x = boundary.nodes
    d = np.diff(x, axis=0)
    d /= np.hypot(d[:, 0], d[:, 1])[:, None]
    seg_n = np.column_stack([d[:, 1], -d[:, 0]])
    n = np.zeros_like(x)
    n[1:-1] = seg_n[:-1] + seg_n[1:]
    n[1:-1] /= np.hypot(n[1:-1, 0], n[1:-1, 1])[:, None]
    s = np.sign(x[-1, 1] - x[0, 1])
    n[0] = (0.0, -s)
    n[-1] = (0.0, s)
    return n


def node_weights(boundary: GeneratrixBoundary) -> tuple[np.ndarray, np.ndarray]:
    """
    Lumped boundary masses: (1/2)(|e_{i-1}| rbar_{i-1} + |e_i| rbar_i) and the
    unweighted (1/2)(|e_{i-1}| + |e_i|), rbar being segment-midpoint radii.
    """
    L = boundary.segment_lengths()
    rbar = 0.5 * (boundary.r[:-1] + boundary.r[1:])
    w = np.zeros(boundary.n)
    a = np.zeros(boundary.n)
    w[:-1] += 0.5 * L * rbar
    w[1:] += 0.5 * L * rbar
    a[:-1] += 0.5 * L
    a[1:] += 0.5 * L
    return w, a


def default_delta(boundary: GeneratrixBoundary, scale: float = 1e-3) -> np.ndarray:
    """Per-node step: ``scale`` times the mean length of the adjacent segments."""
    L = boundary.segment_lengths()
    d = np.empty(boundary.n)
    d[0], d[-1] = L[0], L[-1]
    d[1:-1] = 0.5 * (L[:-1] + L[1:])
    return scale * d


def shape_gradient_fd(boundary: GeneratrixBoundary, objective, delta=None,
                      base: Evaluation | None = None) -> BoundaryGradient:
    """
    One-sided difference quotients of ``objective`` along the node normals.

    Parameters
    ----------
    boundary : GeneratrixBoundary
    objective : object with ``evaluate(boundary, warm=None) -> Evaluation``
    delta : float or array, optional
        Normal offsets; by default 1e-3 of the local mean segment length.
    base : Evaluation, optional
        Objective at ``boundary`` if already known; also used as warm start.

    Notes
    -----
    A forward offset that self-intersects the boundary or cannot be meshed is
    replaced by the inward (backward) quotient. Offsets that merely violate
    convexity are evaluated as they are.
    """
    n = node_normals(boundary)
    w, a = node_weights(boundary)
    N = boundary.n
    delta = default_delta(boundary) if delta is None else np.broadcast_to(np.asarray(delta, float), (N,))
    if np.any(delta <= 0):
        raise ValueError("delta must be positive")
    base = base or objective.evaluate(boundary)
    J0 = base.value
    x = boundary.nodes
    g = np.empty(N)
    for i in range(N):
        quotient = None
        for sign in (1.0, -1.0):
            y = x.copy()
            y[i] += sign * delta[i] * n[i]
            try:
                moved = GeneratrixBoundary(y)
                if moved.is_self_intersecting():
                    continue
                Ji = objective.evaluate(moved, warm=base).value
            except (GeometryError, MeshError):
                continue
            quotient = sign * (Ji - J0) / delta[i]
            break
        if quotient is None:
            raise SolverError(f"no admissible difference quotient at boundary node {i}")
        g[i] = quotient / w[i]
    return BoundaryGradient(x.copy(), g, n, w, a, J0)


def vertex_displacements(mesh: TriMesh, cr_dofs: np.ndarray) -> np.ndarray:
    """(nv, 2) vertex values of a CR vector field [r-components | z-components]."""
    E = cr_vertex_operator(mesh)
    ne = E.shape[1]
    return np.column_stack([E @ cr_dofs[:ne], E @ cr_dofs[ne:]])


def apply_functional(grad: BoundaryGradient, field) -> float:
    """
    Directional derivative sum_i g_i weights_i (V(x_i) . n_i).

    ``field`` is either an (N, 2) array of displacements at the boundary
    nodes or an object with a ``boundary_values`` attribute of that shape.
    """
    V = np.asarray(getattr(field, "boundary_values", field), dtype=float)
    if V.shape != grad.normals.shape:
        raise ValueError(f"field shape {V.shape} does not match boundary {grad.normals.shape}")
    return float(np.sum(grad.nodal * np.sum(V * grad.normals, axis=1)))
