"""
Decompose router: build a patch hierarchy and export it.
"""
import argparse
import logging
from pathlib import Path

from schemas.config import RunConfig
from services.hierarchy_service import HierarchyService
from services.mesh_service import MeshService

logger = logging.getLogger(__name__)


def register(subparsers, common: argparse.ArgumentParser):
    parser = subparsers.add_parser(
        "decompose",
        parents=[common],
        help="Build the multi-resolution patch hierarchy of one mesh",
    )
    parser.add_argument("mesh", help="OBJ, OFF or PLY mesh")
    parser.add_argument("--patch-counts", type=int, nargs="+", help="Patches per level, finest first")
    parser.add_argument("--colored-ply", action="store_true", help="Also write one patch-colored PLY per level")
    parser.set_defaults(handler=cmd_decompose)


def cmd_decompose(args) -> int:
    """Write <stem>_hierarchy.json (and <stem>_patches_l<l>.ply) under --out"""
    config = RunConfig.from_sources(args.config, seed=args.seed, patch_counts=args.patch_counts)
    mesh = MeshService.load_mesh(args.mesh)
    hierarchy = HierarchyService.build_hierarchy(mesh, config.patch_counts, seed=config.seed)

    out = Path(args.out)
    stem = Path(args.mesh).stem
    HierarchyService.export_json(hierarchy, out / f"{stem}_hierarchy.json")
    if args.colored_ply:
        for level in range(1, hierarchy.n_levels):
            palette = MeshService.patch_colors(hierarchy.level_sizes[level], seed=config.seed)
            colors = HierarchyService.unpool_to_vertices(hierarchy, level, palette)
            MeshService.save_colored_mesh(mesh, colors, out / f"{stem}_patches_l{level}.ply")
        logger.info(f"Wrote {hierarchy.n_levels - 1} patch-colored meshes to {out}")
    return 0
