"""
Deformation model objects: per-patch rigid parameters, blending weights
and the precomputed index triples of the rigidity energy.
"""
from dataclasses import dataclass
from typing import List

import numpy as np
from scipy import sparse

from models.hierarchy import PatchHierarchy

IDENTITY_ROT6 = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])


@dataclass
class DeformationParams:
    """Per level: rot6 (n_l, 6) and new center positions u (n_l, 3)"""
    rot6: List[np.ndarray]
    u: List[np.ndarray]

    @classmethod
    def identity(cls, hierarchy: PatchHierarchy) -> "DeformationParams":
        return cls(
            rot6=[np.tile(IDENTITY_ROT6, (n, 1)) for n in hierarchy.level_sizes],
            u=[np.array(c, dtype=np.float64) for c in hierarchy.center_positions],
        )

    @property
    def n_levels(self) -> int:
        return len(self.rot6)


@dataclass(frozen=True)
class BlendWeights:
    """
    Normalized Gaussian blending at one level.

    Attributes:
        level: Hierarchy level
        alpha: (|V|, n_l) row-stochastic sparse weights
        sigma: (n_l,) bandwidth per patch, mesh units
    """
    level: int
    alpha: sparse.csr_matrix
    sigma: np.ndarray

    @property
    def n_patches(self) -> int:
        return self.alpha.shape[1]

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.alpha.sum(axis=1)).ravel()


@dataclass(frozen=True)
class RigidityTerms:
    """
    One entry per (i, j, v): ordered adjacent patches i, j and v in P_i or P_j.

    Attributes:
        first, second: Patch indices i and j
        vertex: Vertex v
        weight: alpha_i(v) + alpha_j(v)
        offset_first, offset_second: x0(v) - c_i and x0(v) - c_j
    """
    first: np.ndarray
    second: np.ndarray
    vertex: np.ndarray
    weight: np.ndarray
    offset_first: np.ndarray
    offset_second: np.ndarray

    def __len__(self):
        return len(self.vertex)
