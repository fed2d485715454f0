import numpy as np
import pytest

from services import synthetic
from services.geodesic_service import GeodesicService


@pytest.mark.parametrize("subdivisions, n_vertices", [(0, 12), (1, 42), (2, 162)])
def test_icosphere_counts(subdivisions, n_vertices):
    mesh = synthetic.icosphere(subdivisions, radius=2.0)
    assert mesh.n_vertices == n_vertices
    assert mesh.n_faces == 20 * 4 ** subdivisions
    np.testing.assert_allclose(np.linalg.norm(mesh.vertices, axis=1), 2.0)


def test_icosphere_is_closed_manifold():
    mesh = synthetic.icosphere(2)
    assert (mesh.edge_face_counts == 2).all()
    # outward orientation
    assert (np.einsum("ij,ij->i", mesh.vertex_normals, mesh.vertices) > 0).all()


def test_cylinder_layout(tube):
    assert tube.n_vertices == 8 * 5
    assert tube.n_faces == 2 * 8 * 4
    np.testing.assert_allclose(np.hypot(tube.vertices[:, 0], tube.vertices[:, 1]), 0.25)
    assert tube.vertices[:, 2].min() == 0.0
    assert tube.vertices[:, 2].max() == 1.0


def test_cylinder_rejects_degenerate_rings():
    with pytest.raises(ValueError):
        synthetic.cylinder(n_around=2)


def test_zero_bend_keeps_positions(tube):
    np.testing.assert_array_equal(synthetic.bend(tube, 0.0).vertices, tube.vertices)


def test_bend_preserves_axis_length():
    straight = synthetic.cylinder(n_around=16, n_along=30, radius=0.05, length=2.0)
    bent = synthetic.bend(straight, np.pi / 2)
    rel = np.abs(bent.edge_lengths - straight.edge_lengths) / straight.edge_lengths
    # thin tube: only the radial offset stretches edges
    assert rel.max() < 0.05
    d_straight = GeodesicService.single_source(straight, 0).dist
    d_bent = GeodesicService.single_source(bent, 0).dist
    np.testing.assert_allclose(d_bent, d_straight, rtol=0.05)


def test_rotation_matrix_is_orthonormal():
    R = synthetic.rotation_matrix([1.0, -2.0, 0.5], 1.1)
    np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(R) == pytest.approx(1.0)


def test_rigid_motion_preserves_geodesics(sphere):
    moved = synthetic.rigid_motion(sphere, synthetic.rotation_matrix([0, 0, 1], 0.4), [1.0, 2.0, 3.0])
    np.testing.assert_allclose(
        GeodesicService.single_source(moved, 5).dist,
        GeodesicService.single_source(sphere, 5).dist,
        atol=1e-12,
    )
    np.testing.assert_array_equal(moved.faces, sphere.faces)
