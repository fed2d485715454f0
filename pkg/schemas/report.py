"""
Pydantic schemas for loss logs, metrics and run manifests.
"""
from datetime import datetime
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, Field


class LevelLoss(BaseModel):
    """Raw criterion values at one level; None when the criterion was not evaluated"""
    level: int
    geodesic: Optional[float] = None
    cycle: Optional[float] = None
    reconstruction: Optional[float] = None
    matching: Optional[float] = None
    rigidity: Optional[float] = None


class LossReport(BaseModel):
    """One optimization step; serialized as one JSON line"""
    step: int = 0
    epoch: int = 0
    lr: Optional[float] = None
    levels: List[LevelLoss]
    total: float


class MetricReport(BaseModel):
    """Schema for the eval command output"""
    mge: float = Field(..., ge=0, description="Mean geodesic error")
    cycle_ge: Optional[float] = Field(None, ge=0, description="Cycle geodesic error")
    p2p: float = Field(..., ge=0, le=1, description="Point-to-point accuracy")
    curve: List[Tuple[float, float]] = Field(default_factory=list, description="(tolerance, fraction)")
    normalization: str
    evaluated: int = Field(0, description="Non-discarded source vertices")
    discarded: int = 0


class PairJob(BaseModel):
    """One entry of a --pairs batch file"""
    mesh_a: str
    mesh_b: str
    out_dir: Optional[str] = None


class RunManifest(BaseModel):
    """Written atomically at the end of every match run"""
    app_version: str
    status: str = Field(..., description="finished, diverged or failed")
    seed: int
    config_hash: str
    config: dict
    mesh_a: str
    mesh_b: str
    loss_log: str
    outputs: Dict[str, str] = Field(default_factory=dict)
    steps: int = 0
    final_loss: Optional[float] = None
    message: Optional[str] = None
    started_at: datetime
    finished_at: Optional[datetime] = None
