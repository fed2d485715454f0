"""
Association service for the patchmatch toolkit.
Feature initialization, coarse-to-fine feature combination and
softmax association matrices. Every operation has a tape form used by the
optimizer and an array form built on a throwaway tape.
"""
import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse

from models.association import AssociationMap, CombinedFeatures, FeatureField
from models.hierarchy import PatchHierarchy
from models.mesh import TriMesh
from services import tape as T
from services.errors import SizeMismatchError, ZeroFeatureError
from services.tape import Tape, Tensor

logger = logging.getLogger(__name__)

ZERO_NORM = 1e-300


def smoothing_operator(adjacency: sparse.csr_matrix) -> sparse.csr_matrix:
    """S = I/2 + D^-1 A / 2; a patch with no neighbors keeps its row"""
    n = adjacency.shape[0]
    a = sparse.csr_matrix(adjacency, dtype=np.float64)
    degree = np.asarray(a.sum(axis=1)).ravel()
    isolated = degree == 0
    inv = np.where(isolated, 0.0, 1.0 / np.where(isolated, 1.0, degree))
    mean = sparse.diags(inv) @ a
    half = np.where(isolated, 1.0, 0.5)
    return (sparse.diags(half) + 0.5 * mean).tocsr()


class AssociationService:
    """
    Service for feature fields and association maps.
    """

    @staticmethod
    def init_features(
        hierarchy: PatchHierarchy,
        dims: Sequence[int],
        seed: int = 0,
        mesh: Optional[TriMesh] = None,
        geometric_seeding: bool = False,
        init_scale: float = 0.1,
    ) -> FeatureField:
        """
        Uniform random features in [-init_scale, init_scale].

        Args:
            hierarchy: Owning hierarchy, fixes the row count per level
            dims: Feature width per level
            seed: Generator seed
            mesh: Needed for geometric seeding
            geometric_seeding: Overwrite level-0 columns with [position | normal] at unit RMS

        Returns:
            FeatureField
        """
        dims = [int(d) for d in dims]
        if len(dims) != hierarchy.n_levels:
            raise SizeMismatchError(f"{len(dims)} feature dims for {hierarchy.n_levels} levels")
        if any(d < 1 for d in dims):
            raise ValueError("feature dims must be positive")
        rng = np.random.default_rng(seed)
        levels = [rng.uniform(-init_scale, init_scale, size=(n, d)) for n, d in zip(hierarchy.level_sizes, dims)]

        if geometric_seeding:
            if mesh is None or mesh.n_vertices != hierarchy.n_vertices:
                raise SizeMismatchError("geometric seeding needs the hierarchy's mesh")
            geometric = np.hstack([mesh.vertices, mesh.vertex_normals])
            rms = np.sqrt(np.mean(geometric ** 2))
            if rms > 0:
                geometric = geometric / rms
            width = min(dims[0], geometric.shape[1])
            levels[0][:, :width] = geometric[:, :width]

        for f in levels:
            zero = np.flatnonzero(~f.any(axis=1))
            while zero.size:
                f[zero] = rng.uniform(-init_scale, init_scale, size=(zero.size, f.shape[1]))
                zero = np.flatnonzero(~f.any(axis=1))
        return FeatureField(levels=levels, seed=seed)

    @staticmethod
    def combine_tensors(
        hierarchy: PatchHierarchy,
        features: Sequence[Tensor],
        smoothing_steps: int = 1,
    ) -> List[Tensor]:
        """Tape form of combine"""
        if len(features) != hierarchy.n_levels:
            raise SizeMismatchError(f"{len(features)} feature levels for {hierarchy.n_levels}")
        for l, (f, n) in enumerate(zip(features, hierarchy.level_sizes)):
            if f.shape[0] != n:
                raise SizeMismatchError(f"level {l}: {f.shape[0]} feature rows for {n} patches")
        top = hierarchy.top_level
        combined: List[Optional[Tensor]] = [None] * hierarchy.n_levels
        combined[top] = features[top]
        for l in range(top - 1, -1, -1):
            per_vertex = T.gather_rows(combined[l + 1], hierarchy.assignment[l + 1])
            parent = T.segment_max(per_vertex, hierarchy.layouts[l])
            block = T.concat([features[l], parent], axis=1)
            if smoothing_steps:
                op = smoothing_operator(hierarchy.adjacency[l])
                for _ in range(smoothing_steps):
                    block = T.sparse_matmul(op, block)
            combined[l] = block
        return combined

    @staticmethod
    def combine(hierarchy: PatchHierarchy, field: FeatureField, smoothing_steps: int = 1) -> CombinedFeatures:
        """
        Concatenate each level's features with the repooled combined features of
        its parent level, then smooth across patch adjacency. The top level
        passes through unchanged.
        """
        tape = Tape()
        out = AssociationService.combine_tensors(
            hierarchy, [tape.constant(f) for f in field.levels], smoothing_steps
        )
        return CombinedFeatures(levels=[t.value for t in out])

    @staticmethod
    def _check_pair(a: np.ndarray, b: np.ndarray):
        if a.shape[1] != b.shape[1]:
            raise SizeMismatchError(f"feature widths differ ({a.shape[1]} vs {b.shape[1]})")
        for name, f in (("first", a), ("second", b)):
            norms = np.linalg.norm(f, axis=1)
            if (norms <= ZERO_NORM).any():
                raise ZeroFeatureError(f"{name} feature matrix has a zero row {int(np.argmin(norms))}")

    @staticmethod
    def associate_tensors(a: Tensor, b: Tensor, tau: float) -> Tuple[Tensor, Tensor]:
        """Tape form of associate"""
        AssociationService._check_pair(a.value, b.value)
        an = a / T.row_norms(a)
        bn = b / T.row_norms(b)
        similarity = an @ bn.T
        return T.softmax_rows(similarity / tau), T.softmax_rows(similarity.T / tau)

    @staticmethod
    def self_associate_tensor(a: Tensor, tau: float) -> Tensor:
        AssociationService._check_pair(a.value, a.value)
        an = a / T.row_norms(a)
        return T.softmax_rows((an @ an.T) / tau)

    @staticmethod
    def associate(a: np.ndarray, b: np.ndarray, tau: float, level: int = 0) -> Tuple[AssociationMap, AssociationMap]:
        """
        Cosine-similarity softmax in both directions.

        Returns:
            (Pi_xy, Pi_yx), both row-stochastic
        """
        if tau <= 0:
            raise ValueError("tau must be positive")
        tape = Tape()
        pxy, pyx = AssociationService.associate_tensors(tape.constant(a), tape.constant(b), tau)
        return AssociationMap(level, pxy.value, tau), AssociationMap(level, pyx.value, tau)

    @staticmethod
    def self_associate(a: np.ndarray, tau: float, level: int = 0) -> AssociationMap:
        return AssociationService.associate(a, a, tau, level)[0]

    @staticmethod
    def extract_point_map(pi) -> np.ndarray:
        """Row argmax; ties go to the lowest index"""
        matrix = pi.matrix if isinstance(pi, AssociationMap) else np.asarray(pi)
        return np.argmax(matrix, axis=1).astype(np.int64)
