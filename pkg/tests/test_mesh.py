import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from convexrot.geometry import GeneratrixBoundary, GeometryError, half_disk, half_ellipse, segments_for
from convexrot.mesh import AXIS, OUT, MeshError, MeshTemplate, TriMesh, check_regularity, mesh_from_boundary, reference_half_disk


@pytest.mark.parametrize("h", [2.0 ** -2, 2.0 ** -3, 2.0 ** -4])
def test_reference_mesh_size_and_validity(h):
    mesh = reference_half_disk(h)
    mesh.validate()
    hmax, ratio = check_regularity(mesh)
    assert hmax <= h
    assert ratio < 10.0
    assert np.all(mesh.areas > 0)
    # OUT path runs from the lower to the upper pole
    ov = mesh.out_vertices
    assert mesh.vertices[ov[0], 1] == -1.0 and mesh.vertices[ov[-1], 1] == 1.0
    assert np.all(mesh.vertices[mesh.axis_vertices, 0] == 0.0)


def test_mesh_area_equals_polygon_area(ball_boundary_4, ball_mesh_4):
    assert ball_mesh_4.weighted_area() == pytest.approx(ball_boundary_4.weighted_area(), rel=1e-12)
    assert np.sum(ball_mesh_4.areas) == pytest.approx(_shoelace(ball_boundary_4.nodes), rel=1e-12)


def _shoelace(x):
    # closed polygon area (axis segment closes it)
    r, z = x[:, 0], x[:, 1]
    return 0.5 * np.sum(r * np.roll(z, -1) - np.roll(r, -1) * z)


def test_edge_bookkeeping(coarse_ball):
    _, mesh = coarse_ball
    nv, nt, ne = mesh.nv, mesh.nt, len(mesh.edges)
    assert nv - ne + nt == 1                      # Euler characteristic of a disk
    assert mesh.axis_edge_mask.sum() == np.sum(mesh.edge_markers == AXIS)
    assert len(mesh.out_edge_list) == np.sum(mesh.edge_markers == OUT)


def test_template_maps_ellipses():
    h = 2.0 ** -3
    for a in (0.6, 1.0, 1.8):
        b = half_ellipse(a, segments_for(h, a)).refined(h)
        mesh = MeshTemplate.for_boundary(b, h).map(b)
        mesh.validate()
        np.testing.assert_array_equal(mesh.vertices[mesh.out_vertices], b.nodes)
        assert mesh.weighted_area() == pytest.approx(b.weighted_area(), rel=1e-12)


def test_template_node_count_mismatch(coarse_ball):
    b, _ = coarse_ball
    tmpl = MeshTemplate.for_boundary(b, 0.25)
    with pytest.raises(MeshError):
        tmpl.map(b.refined(0.05))


def test_mesh_from_boundary_rejects_nonconvex():
    x = np.array([[0.0, -1.0], [1.0, -1.0], [0.3, 0.0], [1.0, 1.0], [0.0, 1.0]])
    with pytest.raises(GeometryError):
        mesh_from_boundary(GeneratrixBoundary(x), 0.25)


def test_mesh_from_boundary_cylinder():
    b = GeneratrixBoundary([[0, -0.5], [0.5, -0.5], [0.5, 0.5], [0, 0.5]])
    mesh = mesh_from_boundary(b, 0.125, c_usr_cap=20.0)
    mesh.validate()
    assert mesh.h <= 0.125 * 1.5
    with pytest.raises(MeshError):
        mesh_from_boundary(b, 0.125, c_usr_cap=3.0)
    assert mesh.weighted_area() == pytest.approx(0.5 * 0.25 * 1.0)


def test_scaled_mesh(coarse_ball):
    _, mesh = coarse_ball
    assert mesh.scaled(2.0).weighted_area() == pytest.approx(8.0 * mesh.weighted_area())


def test_file_round_trip(tmp_path, coarse_ellipse):
    _, mesh = coarse_ellipse
    p = tmp_path / "m.txt"
    mesh.to_file(p)
    m2 = TriMesh.from_file(p)
    np.testing.assert_array_equal(mesh.vertices, m2.vertices)
    np.testing.assert_array_equal(mesh.triangles, m2.triangles)
    np.testing.assert_array_equal(mesh.out_vertices, m2.out_vertices)
    assert list(mesh.edge_markers) == list(m2.edge_markers)


def test_validate_detects_flipped_triangle(coarse_ball):
    _, mesh = coarse_ball
    tri = mesh.triangles.copy()
    tri[0] = tri[0, [0, 2, 1]]
    bad = TriMesh(mesh.vertices, tri, mesh.boundary_edges, mesh.edge_markers, mesh.out_vertices)
    with pytest.raises(MeshError):
        bad.validate()


@settings(max_examples=15, deadline=None)
@given(st.floats(0.5, 2.0))
def test_harmonic_map_valid_for_ellipses(a):
    h = 2.0 ** -3
    b = half_ellipse(a, segments_for(h, a)).refined(h)
    mesh = MeshTemplate.for_boundary(b, h).map(b)
    assert np.all(mesh.areas > 0)


def test_reference_area_second_order():
    errs = [abs(reference_half_disk(h).weighted_area() - 2.0 / 3.0) for h in (2.0 ** -2, 2.0 ** -3, 2.0 ** -4)]
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 1.8)
