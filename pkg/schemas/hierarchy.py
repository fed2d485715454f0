"""
Pydantic schemas for patch hierarchy exports.
"""
from typing import List, Optional

from pydantic import BaseModel, Field


class HierarchyLevelExport(BaseModel):
    """One level of the decomposition"""
    level: int = Field(..., ge=0, description="0 is the vertex level")
    size: int = Field(..., ge=1, description="Number of patches n_l")
    centers: List[int] = Field(..., description="Center vertex index per patch")
    assignment: List[int] = Field(..., description="Patch id per vertex")
    patch_radius: List[float] = Field(default_factory=list, description="Mean member distance to the center")


class HierarchyExport(BaseModel):
    """Schema for the decompose command output"""
    n_vertices: int
    seed: Optional[int] = None
    levels: List[HierarchyLevelExport]

    @property
    def level_sizes(self) -> List[int]:
        return [lvl.size for lvl in self.levels]
