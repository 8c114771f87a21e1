import numpy as np
import pytest

from convexrot.fem import (
    apply_dirichlet,
    assemble_cr,
    assemble_p1,
    boundary_weights,
    cr_interpolate,
    cr_vertex_operator,
    dirichlet_mask,
    read_triplets,
    write_triplets,
)


def _segment_integrals(x):
    """Exact integrals over the free boundary polyline of r, r z and r^2 dz-moment."""
    a, b = x[:-1], x[1:]
    L = np.linalg.norm(b - a, axis=1)
    ra, rb, za, zb = a[:, 0], b[:, 0], a[:, 1], b[:, 1]
    int_r = np.sum(L * (ra + rb) / 2)
    int_rz = np.sum(L * (2 * ra * za + ra * zb + rb * za + 2 * rb * zb) / 6)
    return int_r, int_rz


def _int_r2(x):
    """Integral of r^2 over the polygon: (1/3) closed-integral r^3 dz, exact per segment."""
    ra, rb = x[:-1, 0], x[1:, 0]
    dz = np.diff(x[:, 1])
    return float(np.sum(dz * (ra ** 3 + ra ** 2 * rb + ra * rb ** 2 + rb ** 3) / 4) / 3)


@pytest.fixture(scope="module")
def ops(coarse_ellipse):
    return assemble_p1(coarse_ellipse[1])


def test_stiffness_kills_constants(coarse_ellipse, ops):
    np.testing.assert_allclose(ops.K @ np.ones(coarse_ellipse[1].nv), 0, atol=1e-12)


def test_stiffness_linear_functions(coarse_ellipse, ops):
    mesh = coarse_ellipse[1]
    r, z = mesh.vertices.T
    area = mesh.weighted_area()
    assert z @ ops.K @ z == pytest.approx(area, rel=1e-12)
    assert r @ ops.K @ r == pytest.approx(area, rel=1e-12)
    assert r @ ops.K @ z == pytest.approx(0.0, abs=1e-12)


def test_mass_moments(coarse_ellipse, ops):
    mesh = coarse_ellipse[1]
    one = np.ones(mesh.nv)
    r = mesh.vertices[:, 0]
    assert one @ ops.M @ one == pytest.approx(mesh.weighted_area(), rel=1e-12)
    # the midpoint rule is exact for quadratic integrands
    assert one @ ops.M @ r == pytest.approx(_int_r2(coarse_ellipse[0].nodes), rel=1e-12)


def test_mass_symmetric_positive(coarse_ellipse, ops):
    M = ops.M.toarray()
    np.testing.assert_allclose(M, M.T, atol=1e-15)
    assert np.linalg.eigvalsh(M).min() > 0


def test_boundary_weights_exact(coarse_ellipse, ops):
    b, mesh = coarse_ellipse
    int_r, int_rz = _segment_integrals(b.nodes)
    assert ops.beta.sum() == pytest.approx(int_r, rel=1e-12)
    assert ops.beta @ mesh.vertices[:, 1] == pytest.approx(int_rz, abs=1e-12)
    assert ops.beta.sum() == pytest.approx(b.perimeter_weight(), rel=1e-12)
    inner = np.setdiff1d(np.arange(mesh.nv), mesh.out_vertices)
    assert np.all(ops.beta[inner] == 0)
    np.testing.assert_array_equal(boundary_weights(mesh), ops.beta)


def test_apply_dirichlet(coarse_ellipse, ops):
    mesh = coarse_ellipse[1]
    mask = dirichlet_mask(mesh)
    K, free = apply_dirichlet(ops.K, mask)
    assert K.shape == (len(free), len(free))
    assert not np.any(np.isin(free, mesh.out_vertices))
    assert np.linalg.eigvalsh(K.toarray()).min() > 0


def test_cr_vertex_operator_reproduces_affine(coarse_ellipse):
    mesh = coarse_ellipse[1]
    E = cr_vertex_operator(mesh)
    mid = mesh.vertices[mesh.edges].mean(axis=1)
    f = lambda p: 0.3 - 1.7 * p[:, 0] + 2.2 * p[:, 1]
    np.testing.assert_allclose(E @ f(mid), f(mesh.vertices), atol=1e-12)


def test_cr_divergence_rows(coarse_ellipse):
    mesh = coarse_ellipse[1]
    cr = assemble_cr(mesh)
    # translation along the axis: div(r e_z) = 0
    v = cr_interpolate(mesh, lambda r, z: (0.0, 1.0))
    np.testing.assert_allclose(cr.B @ v, 0, atol=1e-14)
    # radial field v = (r, 0): div(r v) = 2 r, integral over T is 2 |T| rbar
    v = cr_interpolate(mesh, lambda r, z: (r, 0.0 * r))
    rbar = mesh.vertices[mesh.triangles, 0].mean(axis=1)
    np.testing.assert_allclose(cr.B @ v, 2 * mesh.areas * rbar, atol=1e-14)
    # linear z-field v = (0, z): div(r v) = r
    v = cr_interpolate(mesh, lambda r, z: (0.0 * r, z))
    np.testing.assert_allclose(cr.B @ v, mesh.areas * rbar, atol=1e-14)


@pytest.mark.parametrize("weighted", [False, True])
def test_cr_matrix_spd(coarse_ball, weighted):
    cr = assemble_cr(coarse_ball[1], weighted=weighted)
    A = cr.A.toarray()
    np.testing.assert_allclose(A, A.T, atol=1e-14)
    assert np.linalg.eigvalsh(A).min() > 0


def test_glide_masks(coarse_ball):
    mesh = coarse_ball[1]
    ne = len(mesh.edges)
    axis = assemble_cr(mesh, glide="axis").glide_mask
    assert axis[:ne].sum() == mesh.axis_edge_mask.sum()
    assert not axis[ne:].any()
    out = assemble_cr(mesh, glide="out").glide_mask
    assert out[:ne].sum() == len(mesh.out_edge_list)
    with pytest.raises(ValueError):
        assemble_cr(mesh, glide="nowhere")


def test_triplet_round_trip(tmp_path, coarse_ball, ops):
    p = tmp_path / "K.txt"
    K = assemble_p1(coarse_ball[1]).K
    write_triplets(p, K)
    K2 = read_triplets(p, K.shape)
    assert abs(K - K2).max() == 0
