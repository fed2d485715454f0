"""
Evaluation service for the patchmatch toolkit.
Geodesic error metrics for predicted correspondences: mean geodesic error,
cycle geodesic error, point-to-point accuracy and cumulative error curves.
"""
import csv
import json
import logging
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from models.geodesic import Normalization
from models.mesh import TriMesh
from schemas.report import MetricReport
from services.errors import EmptyEvaluationError, InputError, SizeMismatchError
from services.geodesic_service import DIJKSTRA_CHUNK, GeodesicService

logger = logging.getLogger(__name__)

DISCARDED = -1
DISCARD_FACTORS = {"remeshed": 0.2, "raw_scan": 2.0}
CYCLE_FULL_LIMIT = 2000
CYCLE_BUDGET = 1_000_000
CURVE_POINTS = 51


def _pair_distances(mesh: TriMesh, sources: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """d(sources[k], targets[k]) for every k, one Dijkstra row per distinct source"""
    out = np.empty(len(sources))
    unique, inverse = np.unique(sources, return_inverse=True)
    for start in range(0, len(unique), DIJKSTRA_CHUNK):
        chunk = unique[start:start + DIJKSTRA_CHUNK]
        rows = GeodesicService.multi_source(mesh, chunk)
        hit = (inverse >= start) & (inverse < start + len(chunk))
        out[hit] = rows[inverse[hit] - start, targets[hit]]
    return out


class EvaluationService:
    """
    Service for correspondence metrics.
    """

    @staticmethod
    def evaluable(pred, gt, n_target: int) -> np.ndarray:
        """
        Validate a prediction against ground truth.

        Returns:
            Boolean mask of the non-discarded source vertices
        """
        pred = np.asarray(pred, dtype=np.int64)
        gt = np.asarray(gt, dtype=np.int64)
        if pred.shape != gt.shape:
            raise SizeMismatchError(f"prediction has {len(pred)} entries, ground truth {len(gt)}")
        keep = gt != DISCARDED
        if not keep.any():
            raise EmptyEvaluationError("every ground-truth entry is discarded")
        for name, values in (("prediction", pred[keep]), ("ground truth", gt[keep])):
            bad = values[(values < 0) | (values >= n_target)]
            if bad.size:
                raise InputError(f"{name} index {int(bad[0])} outside [0, {n_target})")
        return keep

    @staticmethod
    def geodesic_errors(
        pred,
        gt,
        mesh_y: TriMesh,
        normalization: Union[Normalization, str] = Normalization.SQRT_AREA,
    ) -> np.ndarray:
        """Normalized d_Y(pred(v), gt(v)) for the non-discarded v"""
        pred = np.asarray(pred, dtype=np.int64)
        gt = np.asarray(gt, dtype=np.int64)
        keep = EvaluationService.evaluable(pred, gt, mesh_y.n_vertices)
        factor = GeodesicService.normalization_factor(mesh_y, normalization)
        return _pair_distances(mesh_y, gt[keep], pred[keep]) / factor

    @staticmethod
    def mge(pred, gt, mesh_y: TriMesh, normalization: Union[Normalization, str] = Normalization.SQRT_AREA) -> float:
        """Mean geodesic error over the non-discarded source vertices"""
        return float(np.mean(EvaluationService.geodesic_errors(pred, gt, mesh_y, normalization)))

    @staticmethod
    def p2p_accuracy(pred, gt) -> float:
        """Fraction of non-discarded vertices mapped exactly onto their ground truth"""
        pred = np.asarray(pred, dtype=np.int64)
        gt = np.asarray(gt, dtype=np.int64)
        if pred.shape != gt.shape:
            raise SizeMismatchError(f"prediction has {len(pred)} entries, ground truth {len(gt)}")
        keep = gt != DISCARDED
        if not keep.any():
            raise EmptyEvaluationError("every ground-truth entry is discarded")
        return float(np.mean(pred[keep] == gt[keep]))

    @staticmethod
    def default_tolerances(errors: np.ndarray, points: int = CURVE_POINTS) -> np.ndarray:
        top = float(np.max(errors)) if len(errors) else 0.0
        if top <= 0:
            return np.zeros(1)
        return np.linspace(0.0, top, points)

    @staticmethod
    def cumulative_curve_from_errors(errors: np.ndarray, tolerances: Sequence[float]) -> List[Tuple[float, float]]:
        tolerances = np.asarray(tolerances, dtype=np.float64)
        if np.any(np.diff(tolerances) < 0):
            raise InputError("tolerances must be ascending")
        ordered = np.sort(errors)
        counts = np.searchsorted(ordered, tolerances, side="right")
        return [(float(t), float(c) / len(ordered)) for t, c in zip(tolerances, counts)]

    @staticmethod
    def cumulative_curve(
        pred,
        gt,
        mesh_y: TriMesh,
        tolerances: Optional[Sequence[float]] = None,
        normalization: Union[Normalization, str] = Normalization.SQRT_AREA,
    ) -> List[Tuple[float, float]]:
        """Fraction of non-discarded vertices with normalized error <= t, per t"""
        errors = EvaluationService.geodesic_errors(pred, gt, mesh_y, normalization)
        if tolerances is None:
            tolerances = EvaluationService.default_tolerances(errors)
        return EvaluationService.cumulative_curve_from_errors(errors, tolerances)

    @staticmethod
    def cycle_ge(
        map_xy,
        map_yx,
        mesh_x: TriMesh,
        budget: int = CYCLE_BUDGET,
        seed: int = 0,
        cap: float = 1.0,
        n_target: Optional[int] = None,
    ) -> float:
        """
        Mean of |1 - d(x1, x2) / d(x1~, x2~)| over ordered vertex pairs, where
        x~ is the image of x after the round trip X -> Y -> X.

        Args:
            map_xy: Prediction X -> Y
            map_yx: Prediction Y -> X
            mesh_x: Source mesh
            budget: Number of sampled pairs when the full sum is not taken
            seed: Pair sampling seed
            cap: Contribution of a pair whose images coincide while the pair does not
            n_target: Vertex count of Y, for range checks
        """
        map_xy = np.asarray(map_xy, dtype=np.int64)
        map_yx = np.asarray(map_yx, dtype=np.int64)
        n = mesh_x.n_vertices
        if len(map_xy) != n:
            raise SizeMismatchError(f"map X->Y has {len(map_xy)} entries for {n} vertices")
        n_y = len(map_yx) if n_target is None else n_target
        if len(map_yx) != n_y:
            raise SizeMismatchError(f"map Y->X has {len(map_yx)} entries for {n_y} vertices")
        if map_xy.size and (map_xy.min() < 0 or map_xy.max() >= n_y):
            raise InputError("map X->Y index out of range")
        if map_yx.size and (map_yx.min() < 0 or map_yx.max() >= n):
            raise InputError("map Y->X index out of range")
        round_trip = map_yx[map_xy]

        if n <= CYCLE_FULL_LIMIT or budget >= n * n:
            dist = GeodesicService.multi_source(mesh_x, np.arange(n))
            d = dist.ravel()
            d_round = dist[np.ix_(round_trip, round_trip)].ravel()
        else:
            rng = np.random.default_rng(seed)
            first = rng.integers(n, size=budget)
            second = rng.integers(n, size=budget)
            d = _pair_distances(mesh_x, first, second)
            d_round = _pair_distances(mesh_x, round_trip[first], round_trip[second])
            logger.debug(f"cycle error over {budget} sampled pairs")

        contribution = np.zeros_like(d)
        live = d_round > 0
        contribution[live] = np.abs(1.0 - d[live] / d_round[live])
        contribution[~live & (d > 0)] = cap
        return float(np.mean(contribution))

    @staticmethod
    def build_gt_discards(
        distances,
        mean_edge_length: float,
        factor: Union[float, str] = "remeshed",
    ) -> np.ndarray:
        """
        Mark vertices whose distance to the ground-truth surface exceeds
        factor * mean edge length.

        Returns:
            Boolean mask, True where discarded
        """
        if isinstance(factor, str):
            if factor not in DISCARD_FACTORS:
                raise InputError(f"unknown discard protocol {factor}, use one of {sorted(DISCARD_FACTORS)}")
            factor = DISCARD_FACTORS[factor]
        distances = np.asarray(distances, dtype=np.float64)
        if (distances < 0).any():
            raise InputError("distances to the surface must be >= 0")
        return distances > factor * mean_edge_length

    @staticmethod
    def apply_discards(gt, discarded) -> np.ndarray:
        gt = np.array(gt, dtype=np.int64)
        discarded = np.asarray(discarded, dtype=bool)
        if discarded.shape != gt.shape:
            raise SizeMismatchError(f"{len(discarded)} discard flags for {len(gt)} entries")
        gt[discarded] = DISCARDED
        return gt

    @staticmethod
    def evaluate(
        pred,
        gt,
        mesh_y: TriMesh,
        normalization: Union[Normalization, str] = Normalization.SQRT_AREA,
        tolerances: Optional[Sequence[float]] = None,
        reverse_map=None,
        mesh_x: Optional[TriMesh] = None,
    ) -> MetricReport:
        """All metrics of one prediction; CycleGE needs the reverse map and the source mesh"""
        normalization = Normalization(normalization)
        errors = EvaluationService.geodesic_errors(pred, gt, mesh_y, normalization)
        if tolerances is None:
            tolerances = EvaluationService.default_tolerances(errors)
        gt = np.asarray(gt, dtype=np.int64)
        cycle = None
        if reverse_map is not None and mesh_x is not None:
            cycle = EvaluationService.cycle_ge(pred, reverse_map, mesh_x, n_target=mesh_y.n_vertices)
        report = MetricReport(
            mge=float(np.mean(errors)),
            cycle_ge=cycle,
            p2p=EvaluationService.p2p_accuracy(pred, gt),
            curve=EvaluationService.cumulative_curve_from_errors(errors, tolerances),
            normalization=normalization.value,
            evaluated=int((gt != DISCARDED).sum()),
            discarded=int((gt == DISCARDED).sum()),
        )
        logger.info(f"MGE {report.mge:.6g}, p2p {report.p2p:.4f} over {report.evaluated} vertices")
        return report

    @staticmethod
    def write_report(report: MetricReport, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        data = report.model_dump(mode="json")
        data["curve"] = [list(p) for p in report.curve]
        path.write_text(json.dumps(data, indent=2), encoding="utf-8")
        return path

    @staticmethod
    def write_curve_csv(report: MetricReport, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["tolerance", "fraction"])
            for t, frac in report.curve:
                writer.writerow([repr(t), repr(frac)])
        return path
