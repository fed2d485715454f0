"""
Command-line entry point for the patchmatch toolkit.
Dense non-rigid correspondence between triangle meshes: decompose, match,
eval and transfer-colors.
"""
import argparse
import logging
from typing import List, Optional

from app.config import settings
from app.logs import setup_logging
from routers import decompose, eval as eval_router, match, transfer_colors
from services.errors import PatchMatchError

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    """Parser with one sub-command per router; common flags are shared"""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="Run seed (overrides the config file)")
    common.add_argument("--out", default="out", help="Output directory")

    parser = argparse.ArgumentParser(
        prog=settings.app_name,
        description="Dense correspondences between triangle meshes via hierarchical patch matching",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {settings.app_version}")
    subparsers = parser.add_subparsers(dest="command", required=True)

    decompose.register(subparsers, common)
    match.register(subparsers, common)
    eval_router.register(subparsers, common)
    transfer_colors.register(subparsers, common)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """
    Run one command.

    Returns:
        int: 0 ok, 2 input error, 3 numerical divergence, 1 anything else
    """
    args = build_parser().parse_args(argv)
    setup_logging()
    logger.info(f"{settings.app_name} {settings.app_version}: {args.command}")
    try:
        return args.handler(args)
    except PatchMatchError as e:
        logger.error(f"{args.command} failed: {e}")
        return e.exit_code
    except Exception as e:
        logger.exception(f"Unexpected error in {args.command}: {e}")
        return 1
