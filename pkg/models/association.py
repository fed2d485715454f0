"""
Feature fields and association matrices.
"""
from dataclasses import dataclass
from typing import List

import numpy as np

ROW_SUM_TOLERANCE = 1e-9


@dataclass
class FeatureField:
    """Per-level (n_l, d_l) feature matrices of one shape; optimizable in place"""
    levels: List[np.ndarray]
    seed: int = 0

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def dims(self) -> List[int]:
        return [f.shape[1] for f in self.levels]

    @property
    def sizes(self) -> List[int]:
        return [f.shape[0] for f in self.levels]


@dataclass(frozen=True)
class CombinedFeatures:
    """Per level: own block followed by the repooled blocks of every coarser level"""
    levels: List[np.ndarray]

    @property
    def widths(self) -> List[int]:
        return [f.shape[1] for f in self.levels]


@dataclass(frozen=True)
class AssociationMap:
    """Row-stochastic soft map between the patches of two shapes at one level"""
    level: int
    matrix: np.ndarray
    tau: float

    def __post_init__(self):
        self.matrix.flags.writeable = False

    @property
    def shape(self):
        return self.matrix.shape

    def is_row_stochastic(self, tol: float = ROW_SUM_TOLERANCE) -> bool:
        return bool(np.all(np.abs(self.matrix.sum(axis=1) - 1.0) <= tol))
