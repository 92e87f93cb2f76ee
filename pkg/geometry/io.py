"""Mesh and point-set I/O (ASCII OBJ, handle lists)."""

from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np


class GeometryError(ValueError):
    """Raised for malformed geometry files or invalid geometry."""
    pass


@dataclass(frozen=True, eq=False)
class Mesh:
    """Vertices (n, 3) float64 with optional triangle faces (f, 3) int64."""
    vertices: np.ndarray
    faces: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))

    def __post_init__(self):
        vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if len(vertices) < 1:
            raise GeometryError("Mesh needs at least one vertex")
        if faces.size and (faces.min() < 0 or faces.max() >= len(vertices)):
            raise GeometryError("Face index out of range")
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "faces", faces)

    @property
    def diagonal(self) -> float:
        """Length of the axis-aligned bounding-box diagonal."""
        return float(np.linalg.norm(self.vertices.max(axis=0) - self.vertices.min(axis=0)))

    def with_vertices(self, vertices: np.ndarray) -> "Mesh":
        return Mesh(vertices=vertices, faces=self.faces)


@dataclass(frozen=True, eq=False)
class PointSet:
    """Target points (n, 3) with optional unit normals."""
    points: np.ndarray
    normals: Optional[np.ndarray] = None

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        object.__setattr__(self, "points", points)
        if self.normals is not None:
            normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if normals.shape != points.shape:
                raise GeometryError("normals must match points")
            if len(normals) and np.max(np.abs(np.linalg.norm(normals, axis=1) - 1.0)) > 1e-9:
                raise GeometryError("normals must have unit length")
            object.__setattr__(self, "normals", normals)

    def __len__(self) -> int:
        return len(self.points)


def _parse_floats(parts: List[str], count: int, path: Path, line_num: int) -> List[float]:
    if len(parts) < count:
        raise GeometryError(f"{path}:{line_num}: expected {count} numbers, got {len(parts)}")
    try:
        return [float(p) for p in parts[:count]]
    except ValueError:
        raise GeometryError(f"{path}:{line_num}: malformed number in {' '.join(parts)!r}")


def _read_obj(path: Path) -> Tuple[List[List[float]], List[List[int]], List[List[float]]]:
    if not path.exists():
        raise FileNotFoundError(f"OBJ file not found: {path}")

    vertices: List[List[float]] = []
    normals: List[List[float]] = []
    faces: List[Tuple[List[int], int]] = []

    with open(path, "r", encoding="utf-8") as f:
        for line_num, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            record, *parts = line.split()
            if record == "v":
                vertices.append(_parse_floats(parts, 3, path, line_num))
            elif record == "vn":
                normals.append(_parse_floats(parts, 3, path, line_num))
            elif record == "f":
                if len(parts) < 3:
                    raise GeometryError(f"{path}:{line_num}: face needs at least 3 vertices")
                try:
                    # "f 1/2/3 ..." keeps only the position index
                    ids = [int(p.split("/")[0]) for p in parts]
                except ValueError:
                    raise GeometryError(f"{path}:{line_num}: malformed face record")
                faces.append((ids, line_num))
            # other record types are skipped

    resolved: List[List[int]] = []
    for ids, line_num in faces:
        zero_based = []
        for idx in ids:
            # negative indices are relative to the vertices read so far
            k = idx - 1 if idx > 0 else len(vertices) + idx
            if idx == 0 or k < 0 or k >= len(vertices):
                raise GeometryError(f"{path}:{line_num}: face index {idx} out of range")
            zero_based.append(k)
        # fan-triangulate polygons
        for a in range(1, len(zero_based) - 1):
            resolved.append([zero_based[0], zero_based[a], zero_based[a + 1]])

    return vertices, resolved, normals


def load_obj(path: Path) -> Mesh:
    """Load an ASCII OBJ file; faces are returned 0-based.

    Raises:
        FileNotFoundError: If the file doesn't exist
        GeometryError: On malformed records (with line number) or bad face indices
    """
    path = Path(path)
    vertices, faces, _ = _read_obj(path)
    if not vertices:
        raise GeometryError(f"{path}: no vertex records")
    return Mesh(vertices=np.array(vertices, dtype=np.float64), faces=np.array(faces, dtype=np.int64).reshape(-1, 3))


def load_points(path: Path) -> PointSet:
    """Load an OBJ point list; `vn` records become normals when one per point."""
    path = Path(path)
    vertices, _, normals = _read_obj(path)
    points = np.array(vertices, dtype=np.float64).reshape(-1, 3)
    if normals and len(normals) == len(vertices):
        n = np.array(normals, dtype=np.float64)
        return PointSet(points=points, normals=n / np.linalg.norm(n, axis=1, keepdims=True))
    return PointSet(points=points)


def save_obj(mesh: Mesh, path: Path) -> None:
    """Write a mesh as ASCII OBJ with 1-based faces.

    Coordinates use repr-precision so a reload reproduces them exactly.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"v {float(x)!r} {float(y)!r} {float(z)!r}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def save_points(points: PointSet, path: Path) -> None:
    """Write a point set as OBJ `v` (and `vn`) records."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"v {float(x)!r} {float(y)!r} {float(z)!r}" for x, y, z in points.points]
    if points.normals is not None:
        lines += [f"vn {float(x)!r} {float(y)!r} {float(z)!r}" for x, y, z in points.normals]
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def load_handles(path: Path, vertex_count: int) -> Tuple[np.ndarray, np.ndarray]:
    """Read `vertex_id tx ty tz` lines.

    Returns:
        (vertex ids (h,), target positions (h, 3))

    Raises:
        GeometryError: On malformed lines or unknown vertex ids
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Handles file not found: {path}")

    ids: List[int] = []
    targets: List[List[float]] = []
    with open(path, "r", encoding="utf-8") as f:
        for line_num, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 4:
                raise GeometryError(f"{path}:{line_num}: expected 'vertex_id tx ty tz'")
            try:
                vid = int(parts[0])
            except ValueError:
                raise GeometryError(f"{path}:{line_num}: malformed vertex id {parts[0]!r}")
            if vid < 0 or vid >= vertex_count:
                raise GeometryError(f"{path}:{line_num}: unknown vertex id {vid}")
            ids.append(vid)
            targets.append(_parse_floats(parts[1:], 3, path, line_num))

    return np.array(ids, dtype=np.int64), np.array(targets, dtype=np.float64).reshape(-1, 3)
