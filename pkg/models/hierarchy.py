"""
Patch hierarchy model.
Level 0 is the vertex level; coarser levels are geodesic Voronoi cells of
farthest-point samples.
"""
from dataclasses import dataclass, field
from functools import cached_property
from typing import List, Optional

import numpy as np
from scipy import sparse

from services.segments import SegmentLayout


@dataclass
class PatchHierarchy:
    """
    Multi-resolution surface patches of one mesh.

    Attributes:
        n_vertices: Vertex count of the mesh
        assignment: Per level, patch id of every vertex
        centers: Per level, center vertex index of every patch
        center_positions: Per level, (n_l, 3) center coordinates
        adjacency: Per level, symmetric irreflexive patch adjacency
        patch_radius: Per level, mean geodesic member distance to the center
        center_distances: Per level >= 1, (n_l, |V|) geodesic distance rows
        fps_samples: The full farthest-point sample order
        seed: Seed that picked the first sample
    """
    n_vertices: int
    assignment: List[np.ndarray]
    centers: List[np.ndarray]
    center_positions: List[np.ndarray]
    adjacency: List[sparse.csr_matrix]
    patch_radius: List[np.ndarray]
    center_distances: List[Optional[np.ndarray]] = field(repr=False)
    fps_samples: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0, dtype=np.int64))
    seed: Optional[int] = None

    def __post_init__(self):
        for arrays in (self.assignment, self.centers, self.center_positions, self.patch_radius):
            for a in arrays:
                a.flags.writeable = False

    @property
    def n_levels(self) -> int:
        return len(self.assignment)

    @property
    def top_level(self) -> int:
        """Index L of the coarsest level"""
        return self.n_levels - 1

    @property
    def level_sizes(self) -> List[int]:
        return [len(c) for c in self.centers]

    def check_level(self, level: int) -> int:
        if not 0 <= level < self.n_levels:
            raise IndexError(f"level {level} outside [0, {self.n_levels})")
        return level

    @cached_property
    def layouts(self) -> List[SegmentLayout]:
        """Vertex rows grouped by patch, per level"""
        return [SegmentLayout.from_labels(a, n) for a, n in zip(self.assignment, self.level_sizes)]

    def members(self, level: int, patch: int) -> np.ndarray:
        layout = self.layouts[self.check_level(level)]
        start = layout.starts[patch]
        return np.sort(layout.order[start:start + layout.sizes[patch]])

    def neighbors(self, level: int, patch: int) -> np.ndarray:
        adj = self.adjacency[self.check_level(level)]
        return adj.indices[adj.indptr[patch]:adj.indptr[patch + 1]]

    def adjacent_pairs(self, level: int) -> np.ndarray:
        """Ordered (i, j) pairs with P_j a neighbor of P_i; each unordered pair twice"""
        coo = self.adjacency[self.check_level(level)].tocoo()
        pairs = np.stack([coo.row, coo.col], axis=1).astype(np.int64)
        return pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]
