"""
Optimizer service for the patchmatch toolkit.
Adam with global-norm gradient clipping and a piecewise-constant
learning-rate schedule over epochs.
"""
import logging
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from services.errors import NonFiniteError, SizeMismatchError

logger = logging.getLogger(__name__)


@dataclass
class OptimState:
    """
    Adam state over named parameter arrays, which are updated in place.
    """
    params: Dict[str, np.ndarray]
    clip_norm: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_schedule: List[float] = field(default_factory=lambda: [1e-3, 5e-4, 2.5e-4])
    lr_milestones: List[int] = field(default_factory=lambda: [1, 10])
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        for name, p in self.params.items():
            self.m.setdefault(name, np.zeros_like(p))
            self.v.setdefault(name, np.zeros_like(p))

    def reset_rows(self, name: str, rows) -> None:
        """Forget the moments of re-initialized parameter rows"""
        self.m[name][rows] = 0.0
        self.v[name][rows] = 0.0


class OptimService:
    """
    Service for parameter updates.
    """

    @staticmethod
    def lr_at(epoch: int, schedule: Sequence[float], milestones: Sequence[int]) -> float:
        """Phase k runs from milestones[k-1] (inclusive) to milestones[k]"""
        if len(schedule) != len(milestones) + 1:
            raise ValueError("schedule needs one more entry than milestones")
        return float(schedule[bisect_right(list(milestones), epoch)])

    @staticmethod
    def global_norm(grads: Dict[str, np.ndarray]) -> float:
        return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))

    @staticmethod
    def clip_gradients(grads: Dict[str, np.ndarray], clip_norm: float) -> Tuple[Dict[str, np.ndarray], float]:
        """Scale all gradients together so their joint norm is at most clip_norm"""
        norm = OptimService.global_norm(grads)
        if norm <= clip_norm or norm == 0:
            return grads, norm
        scale = clip_norm / norm
        return {k: g * scale for k, g in grads.items()}, norm

    @staticmethod
    def adam_step(state: OptimState, grads: Dict[str, np.ndarray], lr: float) -> float:
        """
        One clipped Adam update.

        Args:
            state: Parameters and moments, updated in place
            grads: Gradient per parameter name
            lr: Learning rate for this step

        Returns:
            Gradient norm before clipping
        """
        for name, g in grads.items():
            if name not in state.params:
                raise KeyError(f"gradient for unknown parameter {name}")
            if g.shape != state.params[name].shape:
                raise SizeMismatchError(f"{name}: gradient {g.shape} for parameter {state.params[name].shape}")
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(f"nonfinite gradient for {name}")
        grads, norm = OptimService.clip_gradients(grads, state.clip_norm)
        state.step += 1
        t = state.step
        c1 = 1.0 - state.beta1 ** t
        c2 = 1.0 - state.beta2 ** t
        for name, g in grads.items():
            m = state.m[name]
            v = state.v[name]
            m *= state.beta1
            m += (1.0 - state.beta1) * g
            v *= state.beta2
            v += (1.0 - state.beta2) * g * g
            state.params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        return norm
