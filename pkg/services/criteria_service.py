"""
Criteria service for the patchmatch toolkit.
The five self-supervised criteria and their weighted total. Each criterion
accepts tensors (inside an optimization graph) or plain arrays (returns a
float).
"""
import logging
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from schemas.config import CRITERIA, LossWeights
from schemas.report import LevelLoss, LossReport
from services import tape as T
from services.errors import NonFiniteError, SizeMismatchError
from services.tape import Tape, Tensor

logger = logging.getLogger(__name__)

Operand = Union[Tensor, np.ndarray]


def _lift(*operands: Operand) -> Tuple[List[Tensor], bool]:
    """Put every operand on one tape; reports whether the caller passed arrays only"""
    tape = next((o.tape for o in operands if isinstance(o, Tensor)), None)
    plain = tape is None
    tape = Tape() if tape is None else tape
    return [tape.lift(o) for o in operands], plain


def _result(value: Tensor, plain: bool):
    return float(value.value) if plain else value


def _check_matmul(name: str, left: Tensor, right: Tensor):
    if left.shape[1] != right.shape[0]:
        raise SizeMismatchError(f"{name}: {left.shape} and {right.shape} do not compose")


def _check_same(name: str, a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise SizeMismatchError(f"{name}: {a.shape} vs {b.shape}")


def _check_transposed(name: str, pi_xy: Tensor, pi_yx: Tensor):
    if pi_xy.shape[::-1] != pi_yx.shape:
        raise SizeMismatchError(f"{name}: association shapes {pi_xy.shape} and {pi_yx.shape}")


class CriteriaService:
    """
    Service for the loss criteria of one hierarchy level.
    """

    @staticmethod
    def geodesic_loss(pi_xy: Operand, pi_yx: Operand, d_x: Operand, d_y: Operand):
        """|Pi_xy D_y Pi_xy^T - D_x|^2 + |Pi_yx D_x Pi_yx^T - D_y|^2"""
        (pxy, pyx, dx, dy), plain = _lift(pi_xy, pi_yx, d_x, d_y)
        _check_matmul("geodesic", pxy, dy)
        _check_matmul("geodesic", pyx, dx)
        _check_transposed("geodesic", pxy, pyx)
        forward = (pxy @ dy) @ T.transpose(pxy) - dx
        backward = (pyx @ dx) @ T.transpose(pyx) - dy
        return _result(T.sum_squares(forward) + T.sum_squares(backward), plain)

    @staticmethod
    def cycle_loss(pi_xy: Operand, pi_yx: Operand, c_x: Operand, c_y: Operand):
        """|Pi_xy (Pi_yx C_x) - C_x|^2 + |Pi_yx (Pi_xy C_y) - C_y|^2"""
        (pxy, pyx, cx, cy), plain = _lift(pi_xy, pi_yx, c_x, c_y)
        _check_matmul("cycle", pyx, cx)
        _check_matmul("cycle", pxy, cy)
        _check_transposed("cycle", pxy, pyx)
        there = pxy @ (pyx @ cx) - cx
        back = pyx @ (pxy @ cy) - cy
        return _result(T.sum_squares(there) + T.sum_squares(back), plain)

    @staticmethod
    def self_reconstruction_loss(pi_xx: Operand, c_x: Operand, pi_yy: Operand, c_y: Operand):
        """|Pi_xx C_x - C_x|^2 + |Pi_yy C_y - C_y|^2"""
        (pxx, cx, pyy, cy), plain = _lift(pi_xx, c_x, pi_yy, c_y)
        _check_matmul("reconstruction", pxx, cx)
        _check_matmul("reconstruction", pyy, cy)
        return _result(T.sum_squares(pxx @ cx - cx) + T.sum_squares(pyy @ cy - cy), plain)

    @staticmethod
    def matching_loss(
        deformed_x: Operand,
        pi_xy: Operand,
        c_y: Operand,
        deformed_y: Operand,
        pi_yx: Operand,
        c_x: Operand,
    ):
        """|C^{X_l} - Pi_xy C_y|^2 + |C^{Y_l} - Pi_yx C_x|^2"""
        (dx, pxy, cy, dy, pyx, cx), plain = _lift(deformed_x, pi_xy, c_y, deformed_y, pi_yx, c_x)
        _check_matmul("matching", pxy, cy)
        _check_matmul("matching", pyx, cx)
        _check_same("matching", dx, cx)
        _check_same("matching", dy, cy)
        return _result(T.sum_squares(dx - pxy @ cy) + T.sum_squares(dy - pyx @ cx), plain)

    @staticmethod
    def total_tensor(level_terms: Sequence[Dict[str, Tensor]], weights: LossWeights, tape: Tape) -> Tensor:
        """Weighted sum over levels and criteria; terms with weight 0 are left out"""
        total: Optional[Tensor] = None
        for level, terms in enumerate(level_terms):
            for criterion, value in terms.items():
                w = weights.weight(level, criterion)
                if w == 0:
                    continue
                term = value * w
                total = term if total is None else total + term
        return total if total is not None else tape.constant(0.0)

    @staticmethod
    def report(
        level_terms: Sequence[Dict[str, Tensor]],
        total: Tensor,
        step: int = 0,
        epoch: int = 0,
        lr: Optional[float] = None,
    ) -> LossReport:
        """Read the current values; nonfinite values raise naming level and criterion"""
        levels = []
        for level, terms in enumerate(level_terms):
            values = {}
            for criterion in CRITERIA:
                if criterion not in terms:
                    continue
                v = float(terms[criterion].value)
                if not np.isfinite(v):
                    raise NonFiniteError(f"nonfinite {criterion} criterion at level {level}")
                values[criterion] = v
            levels.append(LevelLoss(level=level, **values))
        value = float(total.value)
        if not np.isfinite(value):
            raise NonFiniteError("nonfinite total loss")
        return LossReport(step=step, epoch=epoch, lr=lr, levels=levels, total=value)

    @staticmethod
    def total_loss(
        level_terms: Sequence[Dict[str, Operand]],
        weights: LossWeights,
    ) -> LossReport:
        """
        Weighted sum of the per-level criteria.

        Args:
            level_terms: Per level, criterion name -> value (tensor or scalar)
            weights: Per-level criterion weights

        Returns:
            LossReport with raw values and the weighted total
        """
        if len(level_terms) > len(weights.levels):
            raise SizeMismatchError(f"{len(level_terms)} levels of terms for {len(weights.levels)} weight levels")
        tape = next((v.tape for terms in level_terms for v in terms.values() if isinstance(v, Tensor)), None)
        tape = Tape() if tape is None else tape
        for terms in level_terms:
            unknown = set(terms) - set(CRITERIA)
            if unknown:
                raise ValueError(f"unknown criteria {sorted(unknown)}")
        lifted = [{k: tape.lift(v) for k, v in terms.items()} for terms in level_terms]
        total = CriteriaService.total_tensor(lifted, weights, tape)
        return CriteriaService.report(lifted, total)
