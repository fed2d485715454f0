"""
Eval router: score a predicted point map against ground truth.
"""
import argparse
import logging
from pathlib import Path

from models.geodesic import Normalization
from services.evaluation_service import DISCARD_FACTORS, EvaluationService
from services.mesh_service import MeshService

logger = logging.getLogger(__name__)


def register(subparsers, common: argparse.ArgumentParser):
    parser = subparsers.add_parser(
        "eval",
        parents=[common],
        help="Geodesic error metrics of a predicted map",
    )
    parser.add_argument("pred", help="Predicted map, one target index per source vertex")
    parser.add_argument("gt", help="Ground-truth map (-1 = no ground truth)")
    parser.add_argument("target_mesh", help="Target mesh Y")
    parser.add_argument(
        "--normalization",
        choices=[n.value for n in Normalization],
        default=Normalization.SQRT_AREA.value,
    )
    parser.add_argument("--source-mesh", help="Source mesh X, needed for the cycle error")
    parser.add_argument("--reverse-map", help="Predicted map Y -> X, enables the cycle error")
    parser.add_argument("--gt-distances", help="Per-source-vertex distance to the ground-truth surface")
    parser.add_argument("--discard-protocol", choices=sorted(DISCARD_FACTORS), default="remeshed")
    parser.set_defaults(handler=cmd_eval)


def cmd_eval(args) -> int:
    pred = MeshService.read_index_map(args.pred)
    gt = MeshService.read_index_map(args.gt)
    mesh_y = MeshService.load_mesh(args.target_mesh)
    mesh_x = MeshService.load_mesh(args.source_mesh) if args.source_mesh else None

    if args.gt_distances:
        distances = MeshService.read_scalar_field(args.gt_distances)
        mel = (mesh_x or mesh_y).mean_edge_length
        discarded = EvaluationService.build_gt_discards(distances, mel, args.discard_protocol)
        gt = EvaluationService.apply_discards(gt, discarded)
        logger.info(f"{int(discarded.sum())} vertices discarded ({args.discard_protocol} protocol)")

    reverse = MeshService.read_index_map(args.reverse_map) if args.reverse_map else None
    if reverse is not None and mesh_x is None:
        logger.warning("--reverse-map without --source-mesh, skipping the cycle error")

    report = EvaluationService.evaluate(
        pred,
        gt,
        mesh_y,
        normalization=args.normalization,
        reverse_map=reverse,
        mesh_x=mesh_x,
    )
    out = Path(args.out)
    EvaluationService.write_report(report, out / "metrics.json")
    EvaluationService.write_curve_csv(report, out / "curve.csv")
    logger.info(f"Metrics written to {out}")
    return 0
