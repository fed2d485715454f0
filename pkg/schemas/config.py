"""
Pydantic schemas for run configuration.
RunConfig is validated on load, rejects unknown keys and is echoed into
the run manifest.
"""
import hashlib
import json
import logging
from pathlib import Path
from typing import List, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from models.geodesic import Normalization
from services.errors import InputError

logger = logging.getLogger(__name__)

CRITERIA = ("geodesic", "cycle", "reconstruction", "matching", "rigidity")


class CriterionWeights(BaseModel):
    """Weights of the five criteria at one level"""
    model_config = ConfigDict(extra="forbid")

    geodesic: float = Field(0.01, ge=0, description="lambda_g")
    cycle: float = Field(1.0, ge=0, description="lambda_c")
    reconstruction: float = Field(1.0, ge=0, description="lambda_r")
    matching: float = Field(1.0, ge=0, description="lambda_m")
    rigidity: float = Field(0.1, ge=0, description="lambda_ri")

    def get(self, criterion: str) -> float:
        return getattr(self, criterion)


class LossWeights(BaseModel):
    """Per-level criterion weights; the geodesic weight at level 0 is always 0"""
    model_config = ConfigDict(extra="forbid")

    levels: List[CriterionWeights]

    @model_validator(mode="after")
    def no_vertex_geodesic(self):
        if self.levels and self.levels[0].geodesic != 0:
            logger.warning("geodesic weight at the vertex level forced to 0")
            self.levels[0] = self.levels[0].model_copy(update={"geodesic": 0.0})
        return self

    @classmethod
    def default(cls, n_levels: int) -> "LossWeights":
        levels = [CriterionWeights() for _ in range(n_levels)]
        if levels:
            levels[0] = CriterionWeights(geodesic=0.0)
        return cls(levels=levels)

    def weight(self, level: int, criterion: str) -> float:
        return self.levels[level].get(criterion)

    def masked(self, active_from: int, use_deformation: bool = True) -> "LossWeights":
        """Zero every level below `active_from`; drop deformation criteria if disabled"""
        zero = CriterionWeights(geodesic=0, cycle=0, reconstruction=0, matching=0, rigidity=0)
        levels = []
        for l, w in enumerate(self.levels):
            w = zero if l < active_from else w
            if not use_deformation:
                w = w.model_copy(update={"matching": 0.0, "rigidity": 0.0})
            levels.append(w)
        return LossWeights(levels=levels)


class RunConfig(BaseModel):
    """
    Parameters of one matching run.
    Precedence when assembled by the CLI: flags > config file > defaults.
    """
    model_config = ConfigDict(extra="forbid")

    # Hierarchy
    patch_counts: List[int] = Field([800, 200, 50], description="Patches per level, finest first")

    # Association
    feature_dims: Union[int, List[int]] = Field(32, description="d_l, one value or one per level")
    tau: float = Field(1e-2, gt=0, description="Softmax temperature")
    smoothing_steps: int = Field(1, ge=0, description="Patch-adjacency averaging rounds")
    init_scale: float = Field(0.1, gt=0, description="Features start uniform in [-s, s]")
    geometric_seeding: bool = Field(True, description="Seed level-0 features with [position | normal]")

    # Deformation
    use_deformation: bool = Field(True, description="False drops matching and rigidity criteria")
    sigma_scale: float = Field(1.0, gt=0, description="Blending bandwidth over patch radius")
    support_sigmas: float = Field(6.0, gt=0, description="Blend support truncation in sigmas")

    # Criteria
    loss_weights: Optional[List[CriterionWeights]] = Field(None, description="One entry per level")
    normalization: Normalization = Field(Normalization.SQRT_AREA, description="Divisor of D^l")

    # Optimizer
    epochs: int = Field(50, ge=0)
    steps_per_epoch: int = Field(20, ge=1)
    clip_norm: float = Field(1.0, gt=0)
    lr_schedule: List[float] = Field([1e-3, 5e-4, 2.5e-4], description="Learning rate per phase")
    lr_milestones: List[int] = Field([1, 10], description="Epochs where the next phase starts")
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    coarse_to_fine_epochs: int = Field(0, ge=0, description="0 = all levels jointly")
    seed: int = 0

    @field_validator("patch_counts")
    @classmethod
    def descending_counts(cls, v: List[int]) -> List[int]:
        if any(c < 1 for c in v):
            raise ValueError("patch counts must be positive")
        if any(b >= a for a, b in zip(v, v[1:])):
            raise ValueError("patch counts must be strictly descending")
        return v

    @field_validator("feature_dims")
    @classmethod
    def positive_dims(cls, v):
        dims = [v] if isinstance(v, int) else v
        if not dims or any(d < 1 for d in dims):
            raise ValueError("feature dims must be positive")
        return v

    @model_validator(mode="after")
    def consistent_levels(self):
        n_levels = len(self.patch_counts) + 1
        if isinstance(self.feature_dims, list) and len(self.feature_dims) != n_levels:
            raise ValueError(f"feature_dims needs {n_levels} entries")
        if self.loss_weights is not None and len(self.loss_weights) != n_levels:
            raise ValueError(f"loss_weights needs {n_levels} entries")
        if len(self.lr_schedule) != len(self.lr_milestones) + 1:
            raise ValueError("lr_schedule needs one more entry than lr_milestones")
        if any(b <= a for a, b in zip(self.lr_milestones, self.lr_milestones[1:])):
            raise ValueError("lr_milestones must be strictly ascending")
        return self

    @property
    def n_levels(self) -> int:
        return len(self.patch_counts) + 1

    @property
    def dims(self) -> List[int]:
        if isinstance(self.feature_dims, int):
            return [self.feature_dims] * self.n_levels
        return list(self.feature_dims)

    @property
    def weights(self) -> LossWeights:
        if self.loss_weights is None:
            return LossWeights.default(self.n_levels)
        return LossWeights(levels=self.loss_weights)

    def effective_dump(self) -> dict:
        """JSON dump with loss_weights resolved to the per-level weights a run uses"""
        data = self.model_dump(mode="json")
        data["loss_weights"] = [w.model_dump(mode="json") for w in self.weights.levels]
        return data

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()

    @classmethod
    def from_sources(cls, path: Optional[Union[str, Path]] = None, **overrides) -> "RunConfig":
        """
        Defaults, then the JSON file, then non-None overrides.
        Raises InputError on unreadable files or invalid values.
        """
        data = {}
        if path is not None:
            path = Path(path)
            try:
                data = json.loads(path.read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as e:
                raise InputError(f"{path}: cannot read config ({e})") from e
            if not isinstance(data, dict):
                raise InputError(f"{path}: config must be a JSON object")
        data.update({k: v for k, v in overrides.items() if v is not None})
        try:
            return cls.model_validate(data)
        except ValidationError as e:
            raise InputError(f"invalid config: {e}") from e
