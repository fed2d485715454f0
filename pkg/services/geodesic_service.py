"""
Geodesic service for the patchmatch toolkit.
Edge-graph shortest paths, center distance matrices, diameter estimates
and the binary distance-matrix cache.
"""
import logging
import os
import struct
import tempfile
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from scipy.sparse.csgraph import dijkstra

from models.geodesic import DistanceMap, DistanceMatrix, Normalization
from models.mesh import TriMesh
from services.errors import (
    CacheMismatchError,
    CacheNotFoundError,
    InputError,
    UnreachableVertexError,
)

logger = logging.getLogger(__name__)

CACHE_MAGIC = b"PMDM"
CACHE_VERSION = 2
# magic, version u32, vertex count u64, mesh sha1 digest, centers hash u64, tag u8, rows u64, cols u64
CACHE_HEADER = struct.Struct("<4sIQ20sQBQQ")

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
MASK64 = 0xFFFFFFFFFFFFFFFF

# Sources per Dijkstra batch; bounds the dense block to chunk x |V|
DIJKSTRA_CHUNK = 256


def fnv1a_64(indices: Sequence[int]) -> int:
    """FNV-1a over the little-endian u64 encoding of each index"""
    h = FNV_OFFSET
    for byte in np.asarray(indices, dtype="<u8").tobytes():
        h ^= byte
        h = (h * FNV_PRIME) & MASK64
    return h


class GeodesicService:
    """
    Service for graph-geodesic distances on triangle meshes.
    Distances are shortest paths on the edge graph with Euclidean weights.
    """

    @staticmethod
    def _check_sources(mesh: TriMesh, sources) -> np.ndarray:
        sources = np.atleast_1d(np.asarray(sources, dtype=np.int64))
        if sources.size == 0:
            raise InputError("no source vertices given")
        bad = sources[(sources < 0) | (sources >= mesh.n_vertices)]
        if bad.size:
            raise InputError(f"source vertex {int(bad[0])} outside [0, {mesh.n_vertices})")
        return sources

    @staticmethod
    def multi_source(mesh: TriMesh, sources, limit: float = np.inf) -> np.ndarray:
        """
        Distance rows from each source, shape (len(sources), |V|).
        With a finite limit, entries beyond it are inf and are not an error.
        """
        sources = GeodesicService._check_sources(mesh, sources)
        rows = []
        for start in range(0, len(sources), DIJKSTRA_CHUNK):
            chunk = sources[start:start + DIJKSTRA_CHUNK]
            rows.append(dijkstra(mesh.edge_graph, directed=False, indices=chunk, limit=limit))
        dist = np.vstack(rows)
        if np.isinf(limit) and not np.isfinite(dist).all():
            raise UnreachableVertexError(f"{mesh.name}: vertex unreachable from a source")
        return dist

    @staticmethod
    def single_source(mesh: TriMesh, source: int) -> DistanceMap:
        """Exact edge-graph shortest-path distances from one vertex"""
        dist = GeodesicService.multi_source(mesh, [source])[0]
        return DistanceMap(source=int(source), dist=dist)

    @staticmethod
    def geodesic_diameter(mesh: TriMesh, samples: int = 32) -> float:
        """
        Max distance seen from `samples` farthest-point sources.
        A lower bound on the graph diameter, exact when samples = |V|.
        """
        if samples < 1:
            raise InputError("samples must be >= 1")
        samples = min(samples, mesh.n_vertices)
        coverage = np.full(mesh.n_vertices, np.inf)
        taken = np.zeros(mesh.n_vertices, dtype=bool)
        source = 0
        diameter = 0.0
        for _ in range(samples):
            d = GeodesicService.single_source(mesh, source).dist
            diameter = max(diameter, float(d.max()))
            taken[source] = True
            coverage = np.minimum(coverage, d)
            if taken.all():
                break
            source = int(np.argmax(np.where(taken, -1.0, coverage)))
        return diameter

    @staticmethod
    def normalization_factor(
        mesh: TriMesh,
        normalization: Union[Normalization, str],
        diameter_samples: int = 32,
    ) -> float:
        normalization = Normalization(normalization)
        if normalization is Normalization.NONE:
            return 1.0
        if normalization is Normalization.SQRT_AREA:
            factor = float(np.sqrt(mesh.surface_area))
        else:
            factor = GeodesicService.geodesic_diameter(mesh, diameter_samples)
        if factor <= 0:
            raise InputError(f"{mesh.name}: {normalization.value} normalization factor is zero")
        return factor

    @staticmethod
    def center_matrix(
        mesh: TriMesh,
        centers,
        normalization: Union[Normalization, str] = Normalization.SQRT_AREA,
        distances: Optional[np.ndarray] = None,
    ) -> DistanceMatrix:
        """
        Geodesic distances between patch centers divided by the chosen factor.

        Args:
            mesh: Source mesh
            centers: Vertex indices of the patch centers
            normalization: sqrt_area, diameter or none
            distances: Optional precomputed (len(centers), |V|) distance rows
        """
        centers = GeodesicService._check_sources(mesh, centers)
        normalization = Normalization(normalization)
        if distances is None:
            distances = GeodesicService.multi_source(mesh, centers)
        values = distances[:, centers]
        # exact symmetry; Dijkstra rows can differ in the last ulp
        values = 0.5 * (values + values.T)
        np.fill_diagonal(values, 0.0)
        factor = GeodesicService.normalization_factor(mesh, normalization)
        return DistanceMatrix(
            row_points=centers.copy(),
            col_points=centers.copy(),
            values=values / factor,
            normalization=normalization,
            factor=factor,
        )

    @staticmethod
    def store_matrix(matrix: DistanceMatrix, path: Union[str, Path], mesh: TriMesh) -> Path:
        """Write a square center matrix in the PMDM binary format, atomically"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        rows, cols = matrix.values.shape
        header = CACHE_HEADER.pack(
            CACHE_MAGIC,
            CACHE_VERSION,
            mesh.n_vertices,
            bytes.fromhex(mesh.digest),
            fnv1a_64(matrix.row_points),
            matrix.normalization.tag,
            rows,
            cols,
        )
        payload = np.ascontiguousarray(matrix.values, dtype="<f8").tobytes()
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
        with os.fdopen(fd, "wb") as f:
            f.write(header)
            f.write(payload)
        os.replace(tmp, path)
        logger.debug(f"Cached {rows}x{cols} distance matrix at {path}")
        return path

    @staticmethod
    def load_matrix(
        path: Union[str, Path],
        mesh: TriMesh,
        centers,
        normalization: Union[Normalization, str],
    ) -> DistanceMatrix:
        """
        Load a cached matrix, refusing it unless vertex count, mesh digest,
        center hash and normalization tag all match the current request.
        """
        path = Path(path)
        if not path.is_file():
            raise CacheNotFoundError(f"{path}: distance cache not found")
        normalization = Normalization(normalization)
        centers = np.asarray(centers, dtype=np.int64)
        data = path.read_bytes()
        if len(data) < CACHE_HEADER.size:
            raise CacheMismatchError(f"{path}: truncated header")
        magic, version, n_vertices, digest, center_hash, tag, rows, cols = CACHE_HEADER.unpack_from(data)
        if magic != CACHE_MAGIC or version != CACHE_VERSION:
            raise CacheMismatchError(f"{path}: not a distance cache (version {version})")
        if n_vertices != mesh.n_vertices:
            raise CacheMismatchError(
                f"{path}: cache built for {n_vertices} vertices, mesh has {mesh.n_vertices}"
            )
        if digest.hex() != mesh.digest:
            raise CacheMismatchError(f"{path}: cache built for another mesh ({digest.hex()[:12]})")
        if center_hash != fnv1a_64(centers) or rows != len(centers):
            raise CacheMismatchError(f"{path}: center list hash mismatch")
        if tag != normalization.tag:
            raise CacheMismatchError(f"{path}: cached with {Normalization.from_tag(tag).value} normalization")
        if len(data) != CACHE_HEADER.size + 8 * rows * cols:
            raise CacheMismatchError(f"{path}: payload size does not match header")
        values = np.frombuffer(data, dtype="<f8", count=rows * cols, offset=CACHE_HEADER.size).reshape(rows, cols).copy()
        return DistanceMatrix(
            row_points=centers.copy(),
            col_points=centers.copy(),
            values=values,
            normalization=normalization,
        )

    @staticmethod
    def cached_center_matrix(
        mesh: TriMesh,
        centers,
        normalization: Union[Normalization, str],
        cache_dir: Optional[Path] = None,
        distances: Optional[np.ndarray] = None,
    ) -> DistanceMatrix:
        """center_matrix through the on-disk cache when a cache dir is set"""
        normalization = Normalization(normalization)
        centers = np.asarray(centers, dtype=np.int64)
        if cache_dir is None:
            return GeodesicService.center_matrix(mesh, centers, normalization, distances)
        name = f"{mesh.digest[:16]}_{fnv1a_64(centers):016x}_{normalization.value}.pmdm"
        path = Path(cache_dir) / name
        try:
            return GeodesicService.load_matrix(path, mesh, centers, normalization)
        except CacheNotFoundError:
            pass
        except CacheMismatchError as e:
            logger.warning(f"Ignoring stale cache entry: {e}")
        matrix = GeodesicService.center_matrix(mesh, centers, normalization, distances)
        GeodesicService.store_matrix(matrix, path, mesh)
        return matrix
