import struct

import numpy as np
import pytest

from models.mesh import TriMesh
from services.errors import (
    DisconnectedMeshError,
    FaceIndexError,
    InputError,
    MeshFormatError,
    SizeMismatchError,
)
from services.mesh_service import MeshService

TETRA_OBJ = """# tetrahedron
v 0 0 0
v 1 0 0
v 0 1 0
v 0 0 1
f 1 3 2
f 1 2 4
f 1 4 3
f 2 3 4
"""


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestLoadMesh:

    def test_obj_keeps_vertex_order(self, tmp_path):
        mesh = MeshService.load_mesh(write(tmp_path, "t.obj", TETRA_OBJ))
        assert mesh.n_vertices == 4
        assert mesh.n_faces == 4
        np.testing.assert_array_equal(mesh.vertices[1], [1.0, 0.0, 0.0])
        np.testing.assert_array_equal(mesh.faces[0], [0, 2, 1])

    def test_obj_quad_is_triangulated(self, tmp_path):
        text = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n"
        mesh = MeshService.load_mesh(write(tmp_path, "quad.obj", text))
        assert mesh.n_faces == 2
        assert mesh.surface_area == pytest.approx(1.0)
        np.testing.assert_array_equal(mesh.vertices[2], [1.0, 1.0, 0.0])

    def test_off(self, tmp_path):
        text = "OFF\n4 4 0\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 2 1\n3 0 1 3\n3 0 3 2\n3 1 2 3\n"
        mesh = MeshService.load_mesh(write(tmp_path, "t.off", text))
        assert mesh.n_vertices == 4
        assert mesh.surface_area == pytest.approx(1.5 + np.sqrt(3) / 2)

    def test_ascii_ply_with_colors(self, tmp_path):
        text = "\n".join([
            "ply", "format ascii 1.0",
            "element vertex 3",
            "property float x", "property float y", "property float z",
            "property uchar red", "property uchar green", "property uchar blue",
            "element face 1",
            "property list uchar int vertex_indices",
            "end_header",
            "0 0 0 255 0 0", "1 0 0 0 255 0", "0 1 0 0 0 255",
            "3 0 1 2",
        ]) + "\n"
        mesh = MeshService.load_mesh(write(tmp_path, "t.ply", text))
        assert mesh.n_faces == 1
        np.testing.assert_array_equal(mesh.vertex_colors[2], [0, 0, 255])

    def test_binary_ply(self, tmp_path):
        header = "\n".join([
            "ply", "format binary_little_endian 1.0",
            "element vertex 3",
            "property double x", "property double y", "property double z",
            "element face 1",
            "property list uchar int vertex_indices",
            "end_header",
        ]) + "\n"
        body = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype="<f8").tobytes()
        body += struct.pack("<Biii", 3, 0, 1, 2)
        path = tmp_path / "b.ply"
        path.write_bytes(header.encode("ascii") + body)
        mesh = MeshService.load_mesh(path)
        np.testing.assert_array_equal(mesh.vertices[1], [1.0, 0.0, 0.0])
        np.testing.assert_array_equal(mesh.faces, [[0, 1, 2]])

    def test_missing_file(self, tmp_path):
        with pytest.raises(MeshFormatError) as e:
            MeshService.load_mesh(tmp_path / "nope.obj")
        assert e.value.exit_code == 2

    def test_unknown_suffix(self, tmp_path):
        with pytest.raises(MeshFormatError):
            MeshService.load_mesh(write(tmp_path, "t.stl", "solid"))

    def test_face_index_out_of_range(self, tmp_path):
        text = "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 7\n"
        with pytest.raises(MeshFormatError) as e:
            MeshService.load_mesh(write(tmp_path, "bad.off", text))
        assert e.value.exit_code == 2

    @pytest.mark.parametrize("name, body", [
        ("count.ply", "ply\nformat ascii 1.0\nelement vertex three\nproperty float x\nend_header\n"),
        ("junk.ply", "this is not a mesh\n"),
        ("empty.off", ""),
    ])
    def test_malformed_file_is_an_input_error(self, tmp_path, name, body):
        with pytest.raises(MeshFormatError) as e:
            MeshService.load_mesh(write(tmp_path, name, body))
        assert e.value.exit_code == 2
        assert name in str(e.value)

    def test_disconnected(self, tmp_path):
        text = TETRA_OBJ + "v 5 5 5\nv 6 5 5\nv 5 6 5\nf 5 6 7\n"
        with pytest.raises(DisconnectedMeshError):
            MeshService.load_mesh(write(tmp_path, "two.obj", text))


class TestTriMesh:

    def test_degenerate_face_rejected(self):
        with pytest.raises(FaceIndexError):
            TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 1]])

    def test_single_vertex(self):
        mesh = TriMesh([[1.0, 2.0, 3.0]], np.zeros((0, 3)))
        assert mesh.n_vertices == 1
        assert mesh.mean_edge_length == 0.0

    def test_tetrahedron_quantities(self, tetrahedron):
        assert len(tetrahedron.edges) == 6
        assert tetrahedron.mean_edge_length == pytest.approx((3 + 3 * np.sqrt(2)) / 6)
        np.testing.assert_allclose(np.linalg.norm(tetrahedron.vertex_normals, axis=1), 1.0)
        assert not tetrahedron.vertices.flags.writeable

    def test_digest_depends_on_geometry(self, tetrahedron):
        moved = tetrahedron.with_vertices(tetrahedron.vertices + 1.0)
        assert moved.digest != tetrahedron.digest
        assert tetrahedron.with_vertices(tetrahedron.vertices).digest == tetrahedron.digest


class TestWriters:

    @pytest.mark.parametrize("suffix", ["obj", "off", "ply"])
    def test_save_and_reload_keeps_order(self, tmp_path, sphere, suffix):
        path = MeshService.save_mesh(sphere, tmp_path / f"s.{suffix}")
        again = MeshService.load_mesh(path)
        np.testing.assert_allclose(again.vertices, sphere.vertices, atol=1e-6)
        np.testing.assert_array_equal(again.faces, sphere.faces)

    def test_colored_ply(self, tmp_path, tetrahedron):
        colors = MeshService.normal_coded_colors(tetrahedron)
        path = MeshService.save_colored_mesh(tetrahedron, colors, tmp_path / "c.ply")
        np.testing.assert_array_equal(MeshService.load_mesh(path).vertex_colors, colors)

    def test_colored_mesh_needs_one_color_per_vertex(self, tmp_path, tetrahedron):
        with pytest.raises(SizeMismatchError):
            MeshService.save_colored_mesh(tetrahedron, np.zeros((3, 3)), tmp_path / "c.ply")

    def test_normal_coded_colors_deterministic(self, sphere):
        a = MeshService.normal_coded_colors(sphere)
        b = MeshService.normal_coded_colors(sphere)
        np.testing.assert_array_equal(a, b)
        assert a.dtype == np.uint8

    def test_patch_colors(self):
        colors = MeshService.patch_colors(12, seed=1)
        assert colors.shape == (12, 3)
        assert len({tuple(c) for c in colors}) == 12
        np.testing.assert_array_equal(colors, MeshService.patch_colors(12, seed=1))

    def test_index_map_round_trip_keeps_discards(self, tmp_path):
        path = MeshService.write_index_map([3, -1, 0], tmp_path / "m.txt")
        np.testing.assert_array_equal(MeshService.read_index_map(path), [3, -1, 0])

    def test_index_map_rejects_text(self, tmp_path):
        with pytest.raises(MeshFormatError):
            MeshService.read_index_map(write(tmp_path, "m.txt", "1\nx\n"))

    def test_read_scalar_field_missing(self, tmp_path):
        with pytest.raises(InputError):
            MeshService.read_scalar_field(tmp_path / "none.txt")
