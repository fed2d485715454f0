"""
Triangle mesh model for the patchmatch toolkit.
Immutable vertex/face arrays plus derived normals, area and edge graph.
"""
import hashlib
import logging
from functools import cached_property
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from services.errors import DisconnectedMeshError, FaceIndexError, SizeMismatchError

logger = logging.getLogger(__name__)

# Normal assigned to vertices whose incident faces all have zero area
FALLBACK_NORMAL = np.array([0.0, 0.0, 1.0])


class TriMesh:
    """
    Triangle mesh with validated connectivity.

    Vertex order is preserved exactly as given; correspondence files are
    index based. Arrays are made read-only after construction.
    """

    def __init__(
        self,
        vertices,
        faces,
        vertex_colors: Optional[np.ndarray] = None,
        name: str = "mesh",
    ):
        self.name = name
        self.vertices = np.array(vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.array(faces, dtype=np.int64).reshape(-1, 3)
        self.vertex_colors = None
        if vertex_colors is not None:
            colors = np.array(vertex_colors, dtype=np.uint8).reshape(-1, 3)
            if len(colors) != len(self.vertices):
                raise SizeMismatchError(
                    f"{name}: {len(colors)} colors for {len(self.vertices)} vertices"
                )
            self.vertex_colors = colors
            self.vertex_colors.flags.writeable = False
        self.vertices.flags.writeable = False
        self.faces.flags.writeable = False
        self._validate()

    def _validate(self):
        n = self.n_vertices
        if n == 0:
            raise DisconnectedMeshError(f"{self.name}: mesh has no vertices")
        if self.faces.size:
            bad = np.flatnonzero((self.faces < 0).any(axis=1) | (self.faces >= n).any(axis=1))
            if bad.size:
                raise FaceIndexError(self.name, f"face {int(bad[0])} has an index outside [0, {n})")
            f = self.faces
            degenerate = np.flatnonzero((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2]))
            if degenerate.size:
                raise FaceIndexError(self.name, f"face {int(degenerate[0])} repeats a vertex index")
        components, _ = connected_components(self.connectivity, directed=False)
        if components != 1:
            raise DisconnectedMeshError(f"{self.name}: mesh is disconnected ({components} components)")
        nonmanifold = int((self.edge_face_counts > 2).sum())
        if nonmanifold:
            logger.warning(f"{self.name}: {nonmanifold} non-manifold edges")
        if self.normal_flags.any():
            logger.warning(f"{self.name}: {int(self.normal_flags.sum())} vertices with zero-area stars")

    def __repr__(self):
        return f"<TriMesh(name={self.name}, vertices={self.n_vertices}, faces={self.n_faces})>"

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @cached_property
    def _edge_data(self):
        """Unique undirected edges (sorted pairs) and how many faces use each"""
        if not self.faces.size:
            return np.zeros((0, 2), dtype=np.int64), np.zeros(0, dtype=np.int64)
        f = self.faces
        pairs = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        pairs.sort(axis=1)
        edges, counts = np.unique(pairs, axis=0, return_counts=True)
        return edges, counts

    @property
    def edges(self) -> np.ndarray:
        """Each undirected edge once, as (a, b) with a < b"""
        return self._edge_data[0]

    @property
    def edge_face_counts(self) -> np.ndarray:
        return self._edge_data[1]

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        e = self.edges
        return np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1)

    @property
    def mean_edge_length(self) -> float:
        """Mean over undirected edges; 0.0 for an edgeless single vertex"""
        if not len(self.edge_lengths):
            return 0.0
        return float(self.edge_lengths.mean())

    @cached_property
    def connectivity(self) -> sparse.csr_matrix:
        """Unweighted symmetric vertex adjacency"""
        n = self.n_vertices
        e = self.edges
        data = np.ones(2 * len(e))
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        return sparse.csr_matrix((data, (rows, cols)), shape=(n, n))

    @cached_property
    def edge_graph(self) -> sparse.csr_matrix:
        """Symmetric adjacency weighted by Euclidean edge length"""
        n = self.n_vertices
        e = self.edges
        # csgraph drops explicit zeros, so coincident vertices keep a tiny weight
        w = np.maximum(self.edge_lengths, np.finfo(np.float64).tiny)
        data = np.concatenate([w, w])
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        return sparse.csr_matrix((data, (rows, cols)), shape=(n, n))

    @cached_property
    def face_areas(self) -> np.ndarray:
        if not self.faces.size:
            return np.zeros(0)
        return 0.5 * np.linalg.norm(self._face_cross, axis=1)

    @cached_property
    def _face_cross(self) -> np.ndarray:
        v = self.vertices
        f = self.faces
        return np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])

    @property
    def surface_area(self) -> float:
        return float(self.face_areas.sum())

    @cached_property
    def _normals(self):
        n = self.n_vertices
        acc = np.zeros((n, 3))
        if self.faces.size:
            # the cross product is already area weighted
            for k in range(3):
                np.add.at(acc, self.faces[:, k], self._face_cross)
        norms = np.linalg.norm(acc, axis=1)
        flags = norms <= 1e-300
        normals = np.empty_like(acc)
        normals[~flags] = acc[~flags] / norms[~flags, None]
        normals[flags] = FALLBACK_NORMAL
        normals.flags.writeable = False
        return normals, flags

    @property
    def vertex_normals(self) -> np.ndarray:
        """Area-weighted average of incident face normals, unit length"""
        return self._normals[0]

    @property
    def normal_flags(self) -> np.ndarray:
        """True where the vertex got FALLBACK_NORMAL"""
        return self._normals[1]

    @property
    def bounding_box(self) -> np.ndarray:
        return np.stack([self.vertices.min(axis=0), self.vertices.max(axis=0)])

    @property
    def bbox_diagonal(self) -> float:
        lo, hi = self.bounding_box
        return float(np.linalg.norm(hi - lo))

    @cached_property
    def digest(self) -> str:
        """Content hash of geometry and connectivity, used to key caches"""
        h = hashlib.sha1()
        h.update(self.vertices.tobytes())
        h.update(self.faces.tobytes())
        return h.hexdigest()

    def with_vertices(self, vertices, name: Optional[str] = None) -> "TriMesh":
        """Same connectivity, new positions"""
        return TriMesh(vertices, self.faces, name=name or self.name)
