#!/usr/bin/env python3
"""
Run registry initialization script.
Creates the runs table and lists registered runs.
"""
import sys
import os

# Add parent directory to path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from app.database import get_db, init_database
from app.config import settings
from app.logs import setup_logging
from services.run_registry import RunRegistryService
import logging

logger = logging.getLogger(__name__)


def main():
    """Initialize the run registry"""
    setup_logging()
    try:
        logger.info(f"Registry URL: {settings.registry_url}")
        init_database()
        with get_db() as db:
            runs = RunRegistryService.list_runs(db)
        for run in runs:
            logger.info(f"{run.run_key} {run.status} final_loss={run.final_loss} {run.out_dir}")
        logger.info(f"Registry ready, {len(runs)} runs recorded")
        return 0
    except Exception as e:
        logger.error(f"Registry initialization failed: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
