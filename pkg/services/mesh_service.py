"""
Mesh service for the patchmatch toolkit.
Reads and writes OBJ, OFF and PLY meshes through trimesh, colored PLY
exports and index-per-line correspondence files.
"""
import logging
import os
import tempfile
from pathlib import Path
from typing import Iterator, List, Optional, Tuple, Union

import numpy as np
import trimesh

from models.mesh import TriMesh
from services.errors import (
    DisconnectedMeshError,
    InputError,
    MeshFormatError,
    SizeMismatchError,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

SUPPORTED_FORMATS = ("obj", "off", "ply")

# exporter options per format; vertex order and face indices are written as given
EXPORT_OPTIONS = {
    "obj": {"include_normals": False, "include_texture": False},
    "off": {},
    "ply": {"encoding": "ascii"},
}


def _tokens(path: Path) -> Iterator[Tuple[int, List[str]]]:
    """Yield (line number, tokens) for non-empty, non-comment lines"""
    with open(path, "r", encoding="utf-8", errors="replace") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if line:
                yield lineno, line.split()


class MeshService:
    """
    Service for mesh file I/O.
    Vertex order is always preserved as in the file.
    """

    @staticmethod
    def detect_format(path: PathLike) -> str:
        fmt = Path(path).suffix.lower().lstrip(".")
        if fmt not in SUPPORTED_FORMATS:
            raise MeshFormatError(path, f"unsupported mesh format '{fmt}'")
        return fmt

    @staticmethod
    def load_mesh(path: PathLike, format: Optional[str] = None) -> TriMesh:
        """
        Load and validate a triangle mesh.

        Args:
            path: Mesh file path
            format: One of obj, off, ply; detected from the suffix when None

        Returns:
            TriMesh: validated mesh, vertex order as in the file
        """
        path = Path(path)
        if not path.is_file():
            raise MeshFormatError(path, "file not found")
        fmt = format or MeshService.detect_format(path)
        if fmt not in SUPPORTED_FORMATS:
            raise MeshFormatError(path, f"unsupported mesh format '{fmt}'")
        try:
            loaded = trimesh.load(
                str(path),
                file_type=fmt,
                force="mesh",
                process=False,
                validate=False,
                maintain_order=True,
            )
        except Exception as e:
            raise MeshFormatError(path, f"cannot parse {fmt.upper()} ({type(e).__name__}: {e})") from e
        if not isinstance(loaded, trimesh.Trimesh) or len(loaded.vertices) == 0:
            raise MeshFormatError(path, "no triangle mesh in file")

        colors = None
        if loaded.visual.kind == "vertex":
            colors = np.asarray(loaded.visual.vertex_colors)[:, :3]
        try:
            mesh = TriMesh(loaded.vertices, loaded.faces, vertex_colors=colors, name=path.name)
        except DisconnectedMeshError as e:
            raise DisconnectedMeshError(f"{path}: {e}") from e
        logger.info(f"Loaded {mesh}")
        return mesh

    @staticmethod
    def atomic_write(path: Path, data: Union[str, bytes]):
        """Write text or bytes through a temporary file and rename it into place"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
        try:
            if isinstance(data, bytes):
                with os.fdopen(fd, "wb") as f:
                    f.write(data)
            else:
                with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
                    f.write(data)
            os.replace(tmp, path)
        except OSError as e:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise InputError(f"{path}: cannot write ({e})") from e

    @staticmethod
    def _export(path: Path, fmt: str, vertices: np.ndarray, faces: np.ndarray, colors: Optional[np.ndarray] = None) -> Path:
        out = trimesh.Trimesh(
            vertices=vertices,
            faces=faces,
            vertex_colors=colors,
            process=False,
            validate=False,
        )
        MeshService.atomic_write(path, out.export(file_type=fmt, **EXPORT_OPTIONS[fmt]))
        logger.info(f"Wrote {fmt.upper()} mesh {path}")
        return path

    @staticmethod
    def save_mesh(mesh: TriMesh, path: PathLike, vertices: Optional[np.ndarray] = None) -> Path:
        """Write a mesh as OBJ, OFF or ASCII PLY (by suffix)"""
        path = Path(path)
        fmt = MeshService.detect_format(path)
        v = mesh.vertices if vertices is None else np.asarray(vertices, dtype=np.float64)
        return MeshService._export(path, fmt, v, mesh.faces)

    @staticmethod
    def save_colored_mesh(mesh: TriMesh, colors, path: PathLike) -> Path:
        """
        Write a PLY with per-vertex uchar RGB.

        Args:
            mesh: Mesh to export
            colors: (n, 3) RGB values in [0, 255]
            path: Output .ply path
        """
        colors = np.asarray(colors)
        if colors.ndim != 2 or colors.shape[1] != 3 or len(colors) != mesh.n_vertices:
            raise SizeMismatchError(
                f"{len(colors)} colors for {mesh.n_vertices} vertices"
            )
        if colors.min() < 0 or colors.max() > 255:
            raise InputError("colors must lie in [0, 255]")
        path = Path(path)
        if path.suffix.lower() != ".ply":
            raise MeshFormatError(path, "colored meshes are written as .ply")
        return MeshService._export(path, "ply", mesh.vertices, mesh.faces, colors.astype(np.uint8))

    @staticmethod
    def normal_coded_colors(mesh: TriMesh) -> np.ndarray:
        """
        Deterministic color coding from the bounding-box normalized position.
        Flat axes map to the box middle, so a point-like mesh is mid-gray.
        """
        lo, hi = mesh.bounding_box
        extent = hi - lo
        p = np.full_like(mesh.vertices, 0.5)
        live = extent > 0
        p[:, live] = (mesh.vertices[:, live] - lo[live]) / extent[live]
        mix = 0.25 * (p.sum(axis=1, keepdims=True) - p)
        rgb = 0.5 * p + mix
        return np.rint(np.clip(rgb, 0.0, 1.0) * 255).astype(np.uint8)

    @staticmethod
    def patch_colors(n_patches: int, seed: int = 0) -> np.ndarray:
        """One well-spread color per patch (golden-ratio hue walk)"""
        hues = (np.arange(n_patches) * 0.618033988749895 + (seed % 97) / 97.0) % 1.0
        h6 = hues * 6.0
        x = 1.0 - np.abs(h6 % 2.0 - 1.0)
        sector = np.floor(h6).astype(int) % 6
        table = np.array([[1, 2, 0], [2, 1, 0], [0, 1, 2], [0, 2, 1], [2, 0, 1], [1, 0, 2]])
        # value 0 = zero, 1 = full, 2 = ramp
        choose = table[sector]
        rgb = np.where(choose == 1, 1.0, np.where(choose == 2, x[:, None], 0.0))
        rgb = 0.25 + 0.7 * rgb
        return np.rint(rgb * 255).astype(np.uint8)

    @staticmethod
    def write_index_map(indices, path: PathLike) -> Path:
        """One 0-based index per line (-1 marks a discarded entry)"""
        path = Path(path)
        text = "\n".join(str(int(i)) for i in np.asarray(indices).ravel()) + "\n"
        MeshService.atomic_write(path, text)
        return path

    @staticmethod
    def read_index_map(path: PathLike) -> np.ndarray:
        path = Path(path)
        if not path.is_file():
            raise InputError(f"{path}: file not found")
        values = []
        for lineno, tok in _tokens(path):
            try:
                values.append(int(tok[0]))
            except ValueError:
                raise MeshFormatError(path, "expected an integer index", lineno)
        return np.asarray(values, dtype=np.int64)

    @staticmethod
    def read_scalar_field(path: PathLike) -> np.ndarray:
        """One float per line (ground-truth distance-to-surface files)"""
        path = Path(path)
        if not path.is_file():
            raise InputError(f"{path}: file not found")
        values = []
        for lineno, tok in _tokens(path):
            try:
                values.append(float(tok[0]))
            except ValueError:
                raise MeshFormatError(path, "expected a number", lineno)
        return np.asarray(values, dtype=np.float64)
