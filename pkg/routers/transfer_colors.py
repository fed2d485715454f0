"""
Transfer-colors router: paint the source mesh through a point map.
"""
import argparse
import logging
from pathlib import Path

import numpy as np

from models.mesh import TriMesh
from services.errors import InputError, SizeMismatchError
from services.mesh_service import MeshService

logger = logging.getLogger(__name__)


def register(subparsers, common: argparse.ArgumentParser):
    parser = subparsers.add_parser(
        "transfer-colors",
        parents=[common],
        help="Color a source mesh with the target colors it maps onto",
    )
    parser.add_argument("source_mesh")
    parser.add_argument("target_mesh")
    parser.add_argument("map_file", help="Map source -> target, one index per source vertex")
    parser.add_argument("out_ply", help="Colored source PLY; the target is written next to it")
    parser.set_defaults(handler=cmd_transfer_colors)


def transfer(source: TriMesh, target: TriMesh, point_map) -> np.ndarray:
    """Source vertex colors picked from the normal-coded target colors"""
    point_map = np.asarray(point_map, dtype=np.int64)
    if len(point_map) != source.n_vertices:
        raise SizeMismatchError(f"map has {len(point_map)} entries for {source.n_vertices} source vertices")
    bad = point_map[(point_map < 0) | (point_map >= target.n_vertices)]
    if bad.size:
        raise InputError(f"map index {int(bad[0])} outside [0, {target.n_vertices})")
    return MeshService.normal_coded_colors(target)[point_map]


def cmd_transfer_colors(args) -> int:
    source = MeshService.load_mesh(args.source_mesh)
    target = MeshService.load_mesh(args.target_mesh)
    colors = transfer(source, target, MeshService.read_index_map(args.map_file))

    out = Path(args.out_ply)
    MeshService.save_colored_mesh(source, colors, out)
    MeshService.save_colored_mesh(
        target, MeshService.normal_coded_colors(target), out.with_name(f"{out.stem}_target.ply")
    )
    return 0
