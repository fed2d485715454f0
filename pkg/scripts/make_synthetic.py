#!/usr/bin/env python3
"""
Write synthetic mesh pairs with identity ground truth:
a sphere, a cylinder and its bent copy, plus the identity map.
"""
import argparse
import sys
import os

# Add parent directory to path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import logging
from pathlib import Path

import numpy as np

from app.logs import setup_logging
from services import synthetic
from services.mesh_service import MeshService

logger = logging.getLogger(__name__)


def main(argv=None):
    parser = argparse.ArgumentParser(description="Generate synthetic correspondence pairs")
    parser.add_argument("--out", default="data/synthetic")
    parser.add_argument("--subdivisions", type=int, default=3, help="Icosphere subdivisions (3 = 642 vertices)")
    parser.add_argument("--n-around", type=int, default=32)
    parser.add_argument("--n-along", type=int, default=31)
    parser.add_argument("--angle", type=float, default=float(np.pi / 3), help="Bend angle in radians")
    args = parser.parse_args(argv)
    setup_logging()

    out = Path(args.out)
    sphere = synthetic.icosphere(args.subdivisions)
    tube = synthetic.cylinder(args.n_around, args.n_along)
    bent = synthetic.bend(tube, args.angle)

    MeshService.save_mesh(sphere, out / "sphere.obj")
    MeshService.save_mesh(tube, out / "cylinder.obj")
    MeshService.save_mesh(bent, out / "cylinder_bent.obj")
    MeshService.write_index_map(np.arange(sphere.n_vertices), out / "sphere_gt.txt")
    MeshService.write_index_map(np.arange(tube.n_vertices), out / "cylinder_gt.txt")
    logger.info(f"sphere: {sphere.n_vertices} vertices, cylinder: {tube.n_vertices} vertices")
    return 0


if __name__ == "__main__":
    sys.exit(main())
