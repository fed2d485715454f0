"""
Geodesic distance records.
"""
from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class Normalization(str, Enum):
    """Divisor applied to raw graph distances"""
    SQRT_AREA = "sqrt_area"
    DIAMETER = "diameter"
    NONE = "none"

    @property
    def tag(self) -> int:
        """Byte stored in cache headers"""
        return {"sqrt_area": 0, "diameter": 1, "none": 2}[self.value]

    @classmethod
    def from_tag(cls, tag: int) -> "Normalization":
        return {0: cls.SQRT_AREA, 1: cls.DIAMETER, 2: cls.NONE}[tag]


@dataclass(frozen=True)
class DistanceMap:
    """Graph-geodesic distances from one source vertex"""
    source: int
    dist: np.ndarray

    def __post_init__(self):
        self.dist.flags.writeable = False


@dataclass(frozen=True)
class DistanceMatrix:
    """Pairwise distances between two vertex lists, optionally normalized"""
    row_points: np.ndarray
    col_points: np.ndarray
    values: np.ndarray
    normalization: Normalization = Normalization.NONE
    factor: float = field(default=1.0, compare=False)

    def __post_init__(self):
        self.values.flags.writeable = False

    @property
    def shape(self):
        return self.values.shape

    @property
    def is_square(self) -> bool:
        return np.array_equal(self.row_points, self.col_points)
