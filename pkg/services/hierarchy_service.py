"""
Hierarchy service for the patchmatch toolkit.
Geodesic farthest point sampling, Voronoi patch extraction and the
unpool / max-pool operators between levels.
"""
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
from scipy import sparse

from models.hierarchy import PatchHierarchy
from models.mesh import TriMesh
from schemas.hierarchy import HierarchyExport, HierarchyLevelExport
from services.errors import HierarchyError, InputError, SizeMismatchError
from services.geodesic_service import GeodesicService
from services.segments import segment_max

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FPSResult:
    """Greedy sample order, the prefix for each target and the covering radius after each pick"""
    samples: np.ndarray
    prefixes: List[np.ndarray]
    covering_radius: np.ndarray


class HierarchyService:
    """
    Service for building and using patch hierarchies.
    """

    @staticmethod
    def start_vertex(n_vertices: int, seed: Optional[int]) -> int:
        """First FPS sample drawn from a seeded generator"""
        rng = np.random.default_rng(seed)
        return int(rng.integers(n_vertices))

    @staticmethod
    def fps_sample(
        mesh: TriMesh,
        targets: Sequence[int],
        seed: Optional[int] = 0,
        start: Optional[int] = None,
    ) -> FPSResult:
        """
        Geodesic farthest point sampling, stopped at several target counts.

        Args:
            mesh: Mesh to sample
            targets: Strictly ascending sample counts
            seed: Seed for the start vertex
            start: Explicit start vertex, overrides the seed

        Returns:
            FPSResult: one sample run, prefixes per target
        """
        targets = [int(t) for t in targets]
        if not targets:
            raise InputError("no FPS targets given")
        if any(b <= a for a, b in zip(targets, targets[1:])) or targets[0] < 1:
            raise InputError(f"FPS targets must be positive and strictly ascending, got {targets}")
        n = mesh.n_vertices
        if targets[-1] > n:
            raise InputError(f"FPS target {targets[-1]} exceeds vertex count {n}")

        current = HierarchyService.start_vertex(n, seed) if start is None else int(start)
        samples = []
        radius = []
        coverage = np.full(n, np.inf)
        taken = np.zeros(n, dtype=bool)
        for _ in range(targets[-1]):
            samples.append(current)
            taken[current] = True
            coverage = np.minimum(coverage, GeodesicService.single_source(mesh, current).dist)
            radius.append(float(coverage.max()))
            if taken.all():
                break
            # np.argmax keeps the lowest index among ties
            current = int(np.argmax(np.where(taken, -1.0, coverage)))
        samples = np.asarray(samples, dtype=np.int64)
        return FPSResult(
            samples=samples,
            prefixes=[samples[:t] for t in targets],
            covering_radius=np.asarray(radius),
        )

    @staticmethod
    def patch_adjacency(mesh: TriMesh, assignment: np.ndarray, n_patches: int) -> sparse.csr_matrix:
        """Patches are adjacent iff a mesh edge joins their members"""
        e = mesh.edges
        a, b = assignment[e[:, 0]], assignment[e[:, 1]]
        cross = a != b
        rows = np.concatenate([a[cross], b[cross]])
        cols = np.concatenate([b[cross], a[cross]])
        adj = sparse.csr_matrix(
            (np.ones(len(rows), dtype=bool), (rows, cols)), shape=(n_patches, n_patches)
        )
        adj.sum_duplicates()
        adj.sort_indices()
        return adj

    @staticmethod
    def build_hierarchy(
        mesh: TriMesh,
        patch_counts: Sequence[int] = (800, 200, 50),
        seed: Optional[int] = 0,
        start: Optional[int] = None,
    ) -> PatchHierarchy:
        """
        Build levels [vertices, patch_counts[0], patch_counts[1], ...].

        Args:
            mesh: Mesh to decompose
            patch_counts: Strictly descending patch counts, each <= |V|
            seed: Seed for the first FPS sample
            start: Explicit first sample, overrides the seed
        """
        counts = [int(c) for c in patch_counts]
        if any(b >= a for a, b in zip(counts, counts[1:])):
            raise InputError(f"patch counts must be strictly descending, got {counts}")
        if counts and (counts[0] > mesh.n_vertices or counts[-1] < 1):
            raise InputError(f"patch counts {counts} must lie in [1, {mesh.n_vertices}]")

        n = mesh.n_vertices
        identity = np.arange(n, dtype=np.int64)
        assignment = [identity]
        centers = [identity]
        positions = [mesh.vertices.copy()]
        adjacency = [HierarchyService.patch_adjacency(mesh, identity, n)]
        radius = [np.zeros(n)]
        distances = [None]
        fps = FPSResult(np.zeros(0, dtype=np.int64), [], np.zeros(0))

        if counts:
            fps = HierarchyService.fps_sample(mesh, sorted(counts), seed=seed, start=start)
            for count in counts:
                level_centers = fps.samples[:count]
                dist = GeodesicService.multi_source(mesh, level_centers)
                # argmin keeps the lowest center index among ties
                level_assignment = np.argmin(dist, axis=0).astype(np.int64)
                sizes = np.bincount(level_assignment, minlength=count)
                if (sizes == 0).any():
                    raise HierarchyError(f"empty patch at the {count}-patch level")
                own = level_assignment[level_centers]
                if not np.array_equal(own, np.arange(count)):
                    raise HierarchyError(f"a center left its own patch at the {count}-patch level")
                member_dist = dist[level_assignment, identity]
                assignment.append(level_assignment)
                centers.append(level_centers.copy())
                positions.append(mesh.vertices[level_centers].copy())
                adjacency.append(HierarchyService.patch_adjacency(mesh, level_assignment, count))
                radius.append(np.bincount(level_assignment, weights=member_dist, minlength=count) / sizes)
                distances.append(dist)
                logger.info(f"{mesh.name}: level {len(assignment) - 1} with {count} patches")

        return PatchHierarchy(
            n_vertices=n,
            assignment=assignment,
            centers=centers,
            center_positions=positions,
            adjacency=adjacency,
            patch_radius=radius,
            center_distances=distances,
            fps_samples=fps.samples,
            seed=seed,
        )

    @staticmethod
    def unpool_to_vertices(h: PatchHierarchy, level: int, values) -> np.ndarray:
        """Every vertex takes the row of its patch at `level`"""
        values = np.asarray(values)
        if len(values) != h.level_sizes[h.check_level(level)]:
            raise SizeMismatchError(f"{len(values)} rows for {h.level_sizes[level]} patches")
        return values[h.assignment[level]]

    @staticmethod
    def maxpool_to_level(h: PatchHierarchy, level: int, rows) -> np.ndarray:
        """Componentwise max over the vertices of each patch at `level`"""
        rows = np.asarray(rows)
        if len(rows) != h.n_vertices:
            raise SizeMismatchError(f"{len(rows)} rows for {h.n_vertices} vertices")
        return segment_max(rows, h.layouts[h.check_level(level)])

    @staticmethod
    def repool(h: PatchHierarchy, from_level: int, to_level: int, rows) -> np.ndarray:
        """Unpool to vertices, then max-pool to the target level"""
        return HierarchyService.maxpool_to_level(
            h, to_level, HierarchyService.unpool_to_vertices(h, from_level, rows)
        )

    @staticmethod
    def to_export(h: PatchHierarchy) -> HierarchyExport:
        levels = [
            HierarchyLevelExport(
                level=l,
                size=h.level_sizes[l],
                centers=h.centers[l].tolist(),
                assignment=h.assignment[l].tolist(),
                patch_radius=h.patch_radius[l].tolist(),
            )
            for l in range(h.n_levels)
        ]
        return HierarchyExport(n_vertices=h.n_vertices, seed=h.seed, levels=levels)

    @staticmethod
    def export_json(h: PatchHierarchy, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(HierarchyService.to_export(h).model_dump_json(indent=1), encoding="utf-8")
        logger.info(f"Wrote hierarchy with levels {h.level_sizes} to {path}")
        return path

    @staticmethod
    def load_json(path: Union[str, Path]) -> HierarchyExport:
        path = Path(path)
        if not path.is_file():
            raise InputError(f"{path}: file not found")
        return HierarchyExport.model_validate(json.loads(path.read_text(encoding="utf-8")))
