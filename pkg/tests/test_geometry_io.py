"""Tests for OBJ, point list and handles I/O."""

import tempfile
from pathlib import Path

import numpy as np
import pytest

from geometry.io import GeometryError, Mesh, PointSet, load_handles, load_obj, load_points, save_obj, save_points


def _write(tmpdir: str, name: str, text: str) -> Path:
    path = Path(tmpdir) / name
    path.write_text(text)
    return path


def test_load_triangle():
    """Test that a single triangle loads with 0-based faces."""
    with tempfile.TemporaryDirectory() as tmpdir:
        path = _write(tmpdir, "tri.obj", "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
        mesh = load_obj(path)
        assert mesh.vertices.shape == (3, 3)
        assert mesh.faces.tolist() == [[0, 1, 2]]


def test_load_vertex_only():
    """Test that a file with one vertex and no faces loads."""
    with tempfile.TemporaryDirectory() as tmpdir:
        mesh = load_obj(_write(tmpdir, "v.obj", "v 1 2 3\n"))
        assert mesh.vertices.tolist() == [[1.0, 2.0, 3.0]]
        assert len(mesh.faces) == 0


def test_face_index_out_of_range():
    """Test that a face referencing a missing vertex is rejected with its line number."""
    with tempfile.TemporaryDirectory() as tmpdir:
        path = _write(tmpdir, "bad.obj", "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n")
        with pytest.raises(GeometryError, match=r":4: face index 9 out of range"):
            load_obj(path)


def test_malformed_vertex_reports_line():
    """Test that a malformed number is reported with its line number."""
    with tempfile.TemporaryDirectory() as tmpdir:
        path = _write(tmpdir, "bad.obj", "# header\nv 0 0 0\nv 1 x 0\n")
        with pytest.raises(GeometryError, match=r":3:"):
            load_obj(path)


def test_missing_file():
    """Test that a missing OBJ raises FileNotFoundError."""
    with pytest.raises(FileNotFoundError):
        load_obj(Path("/nonexistent/mesh.obj"))


def test_comments_slashes_and_unknown_records():
    """Test that comments, vt records and f a/b/c syntax are handled."""
    with tempfile.TemporaryDirectory() as tmpdir:
        text = "# comment\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvt 0 0\ng patch\nf 1/1/1 2/2/2 3/3/3 4/4/4\nf -4 -3 -2\n"
        mesh = load_obj(_write(tmpdir, "quad.obj", text))
        assert mesh.faces.tolist() == [[0, 1, 2], [0, 2, 3], [0, 1, 2]]


def test_round_trip():
    """Test that save then load reproduces vertices and faces."""
    with tempfile.TemporaryDirectory() as tmpdir:
        mesh = Mesh(vertices=np.array([[1 / 3, 0, 0], [1, 0, 0], [0, 1, 0]]), faces=np.array([[0, 1, 2]]))
        path = Path(tmpdir) / "out.obj"
        save_obj(mesh, path)
        again = load_obj(path)
        assert np.max(np.abs(again.vertices - mesh.vertices)) <= 1e-6
        assert again.vertices[0, 0] == pytest.approx(0.333333, abs=1e-6)
        assert again.faces.tolist() == mesh.faces.tolist()


def test_save_without_faces_writes_only_vertices():
    """Test that a mesh without faces writes only v records."""
    with tempfile.TemporaryDirectory() as tmpdir:
        path = Path(tmpdir) / "pts.obj"
        save_obj(Mesh(vertices=np.array([[0.0, 0.0, 0.0], [1.0, 2.0, 3.0]])), path)
        lines = path.read_text().splitlines()
        assert len(lines) == 2
        assert all(line.startswith("v ") for line in lines)


def test_mesh_invariants():
    """Test Mesh validation and bounding-box diagonal."""
    with pytest.raises(GeometryError):
        Mesh(vertices=np.zeros((0, 3)))
    with pytest.raises(GeometryError):
        Mesh(vertices=np.zeros((2, 3)), faces=np.array([[0, 1, 2]]))
    mesh = Mesh(vertices=np.array([[0.0, 0.0, 0.0], [3.0, 4.0, 0.0]]))
    assert mesh.diagonal == pytest.approx(5.0)


def test_point_set_normals():
    """Test that non-unit normals are rejected and unit normals round-trip."""
    with pytest.raises(GeometryError):
        PointSet(points=np.zeros((1, 3)), normals=np.array([[0.0, 0.0, 2.0]]))
    with tempfile.TemporaryDirectory() as tmpdir:
        path = Path(tmpdir) / "scan.obj"
        points = PointSet(points=np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]), normals=np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0]]))
        save_points(points, path)
        again = load_points(path)
        assert np.array_equal(again.points, points.points)
        assert np.allclose(again.normals, points.normals)


def test_load_handles():
    """Test that handle lines parse and unknown ids are rejected."""
    with tempfile.TemporaryDirectory() as tmpdir:
        ids, targets = load_handles(_write(tmpdir, "h.txt", "# id x y z\n0 0 0 1\n2 1.5 0 0\n"), vertex_count=3)
        assert ids.tolist() == [0, 2]
        assert targets.tolist() == [[0.0, 0.0, 1.0], [1.5, 0.0, 0.0]]

        with pytest.raises(GeometryError, match="unknown vertex id 7"):
            load_handles(_write(tmpdir, "bad.txt", "7 0 0 0\n"), vertex_count=3)
        with pytest.raises(GeometryError, match=":1:"):
            load_handles(_write(tmpdir, "short.txt", "1 0 0\n"), vertex_count=3)
