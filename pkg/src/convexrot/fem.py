"""
Finite element operators for the r-weighted (axisymmetric) forms.

P1 (conforming) operators carry the weight r; volume integrals use the
three-point edge-midpoint rule, boundary weights are integrated exactly.
Crouzeix-Raviart operators provide the vector Stokes-type system used to
compute deformation fields.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from convexrot.mesh import TriMesh


@dataclass(frozen=True)
class P1Operators:
    K: sp.csr_matrix        # (grad u, grad v)_r
    M: sp.csr_matrix        # (u, v)_r
    beta: np.ndarray        # integral of phi_z * r over the free boundary, per vertex


@dataclass(frozen=True)
class CROperators:
    A: sp.csr_matrix        # vector mass + broken stiffness, dofs [r-components | z-components]
    B: sp.csr_matrix        # rows: integral over T of div(r v)
    glide_mask: np.ndarray  # dofs forced to zero
    n_edges: int


def barycentric_gradients(mesh: TriMesh) -> np.ndarray:
    """(nt, 3, 2) gradients of the barycentric coordinates."""
    p = mesh.vertices[mesh.triangles]
    A2 = 2.0 * mesh.areas
    g = np.empty((mesh.nt, 3, 2))
    for k in range(3):
        a, b = p[:, (k + 1) % 3], p[:, (k + 2) % 3]
        g[:, k, 0] = (a[:, 1] - b[:, 1]) / A2
        g[:, k, 1] = (b[:, 0] - a[:, 0]) / A2
    return g


def _scatter(tri: np.ndarray, local: np.ndarray, n: int) -> sp.csr_matrix:
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def boundary_weights(mesh: TriMesh) -> np.ndarray:
    """beta_z = integral over the free boundary of phi_z r ds (exact per segment)."""
    e = mesh.out_edge_list
    x = mesh.vertices
    ra, rb = x[e[:, 0], 0], x[e[:, 1], 0]
    L = np.linalg.norm(x[e[:, 1]] - x[e[:, 0]], axis=1)
    beta = np.zeros(mesh.nv)
    np.add.at(beta, e[:, 0], L * (2.0 * ra + rb) / 6.0)
    np.add.at(beta, e[:, 1], L * (ra + 2.0 * rb) / 6.0)
    return beta


def assemble_p1(mesh: TriMesh) -> P1Operators:
    tri = mesh.triangles
    A = mesh.areas
    g = barycentric_gradients(mesh)
    r = mesh.vertices[tri, 0]
    rbar = r.mean(axis=1)
    # grad phi is constant, so the midpoint rule integrates r exactly
    Kloc = np.einsum("tid,tjd->tij", g, g) * (A * rbar)[:, None, None]

    # edge midpoint m_k (opposite vertex k): phi_i(m_k) = 1/2 for i != k, 0 else
    rm = 0.5 * (np.roll(r, -1, axis=1) + np.roll(r, -2, axis=1))
    phi = 0.5 * (1.0 - np.eye(3))            # phi[k, i] = phi_i(m_k)
    Mloc = np.einsum("tk,ki,kj->tij", rm, phi, phi) * (A / 3.0)[:, None, None]

    n = mesh.nv
    return P1Operators(_scatter(tri, Kloc, n), _scatter(tri, Mloc, n), boundary_weights(mesh))


def dirichlet_mask(mesh: TriMesh) -> np.ndarray:
    """Vertices on the closure of the free boundary (poles included)."""
    mask = np.zeros(mesh.nv, dtype=bool)
    mask[mesh.out_vertices] = True
    return mask


def apply_dirichlet(matrix, mask):
    """
    Remove the rows and columns of constrained dofs.

    Returns the reduced matrix and the indices of the free dofs.
    """
    free = np.flatnonzero(~np.asarray(mask, dtype=bool))
    m = sp.csr_matrix(matrix)
    return m[free][:, free], free


def assemble_cr(mesh: TriMesh, weighted: bool = False, glide: str = "axis") -> CROperators:
    """
    Crouzeix-Raviart vector operators.

    Parameters
    ----------
    weighted : bool
        Weight the mass and stiffness terms with r as well. By default only the
        divergence coupling carries the weight.
    glide : {"axis", "out"}
        Edges whose r-component is constrained to zero.
    """
    tri = mesh.triangles
    te = mesh.triangle_edges
    ne = len(mesh.edges)
    A = mesh.areas
    g = barycentric_gradients(mesh)
    r = mesh.vertices[tri, 0]
    rbar = r.mean(axis=1)

    # CR basis on T for the edge opposite vertex k: 1 - 2 lambda_k
    gcr = -2.0 * g
    Sloc = np.einsum("tid,tjd->tij", gcr, gcr) * A[:, None, None]
    Mloc = np.broadcast_to(np.eye(3), (mesh.nt, 3, 3)) * (A / 3.0)[:, None, None]
    if weighted:
        rm = 0.5 * (np.roll(r, -1, axis=1) + np.roll(r, -2, axis=1))
        Sloc = Sloc * rbar[:, None, None]
        Mloc = Mloc * rm[:, :, None]
    scal = _scatter(te, Sloc + Mloc, ne)
    Amat = sp.block_diag([scal, scal], format="csr")

    # integral_T div(r v) = integral_T (v_r + r dv_r/dr + r dv_z/dz), exact by midpoint rule
    rows = np.repeat(np.arange(mesh.nt), 3)
    br = (A / 3.0)[:, None] + (A * rbar)[:, None] * gcr[:, :, 0]
    bz = (A * rbar)[:, None] * gcr[:, :, 1]
    B = sp.csr_matrix(
        (np.concatenate([br.ravel(), bz.ravel()]),
         (np.concatenate([rows, rows]), np.concatenate([te.ravel(), ne + te.ravel()]))),
        shape=(mesh.nt, 2 * ne),
    )

    glide_mask = np.zeros(2 * ne, dtype=bool)
    if glide == "axis":
        glide_mask[:ne] = mesh.axis_edge_mask
    elif glide == "out":
        out_keys = {tuple(sorted(e)) for e in mesh.out_edge_list.tolist()}
        glide_mask[:ne] = [tuple(e) in out_keys for e in mesh.edges.tolist()]
    else:
        raise ValueError(f"unknown glide option {glide!r}")
    return CROperators(Amat, B, glide_mask, ne)


def cr_vertex_operator(mesh: TriMesh) -> sp.csr_matrix:
    """
    (nv, n_edges) map from scalar CR coefficients to vertex values.

    The value at a vertex is the mean over adjacent triangles of the local
    linear function; on T the value at vertex k is v_{k+1} + v_{k+2} - v_k
    (edges indexed by their opposite vertex). Globally affine fields are
    reproduced exactly.
    """
    tri = mesh.triangles
    te = mesh.triangle_edges
    coef = 1.0 - 2.0 * np.eye(3)     # coef[k, l] = phi_l(p_k)
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(te, (1, 3)).ravel()
    vals = np.tile(coef.ravel(), mesh.nt)
    P = sp.csr_matrix((vals, (rows, cols)), shape=(mesh.nv, len(mesh.edges)))
    count = np.bincount(tri.ravel(), minlength=mesh.nv).astype(float)
    return sp.diags(1.0 / count) @ P


def cr_interpolate(mesh: TriMesh, field) -> np.ndarray:
    """CR coefficients [r-components | z-components] of a vector field callable f(r, z) -> (vr, vz)."""
    mid = mesh.vertices[mesh.edges].mean(axis=1)
    vr, vz = field(mid[:, 0], mid[:, 1])
    ne = len(mesh.edges)
    return np.concatenate([np.broadcast_to(vr, ne), np.broadcast_to(vz, ne)]).astype(float)


def write_triplets(path, matrix) -> None:
    """Write a sparse matrix as 'i j value' lines."""
    m = sp.coo_matrix(matrix)
    with open(path, "w") as fh:
        for i, j, v in zip(m.row, m.col, m.data):
            fh.write(f"{i} {j} {float(v)!r}\n")


def read_triplets(path, shape) -> sp.csr_matrix:
    data = np.loadtxt(path, ndmin=2)
    if data.size == 0:
        return sp.csr_matrix(shape)
    return sp.csr_matrix((data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))), shape=shape)
