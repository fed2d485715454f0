"""
Run registry service for the patchmatch toolkit.
Keeps one row per matching run so batch sweeps can be audited and resumed.
"""
import hashlib
import logging
from typing import List, Optional

from sqlalchemy.orm import Session

from models.run import Run

logger = logging.getLogger(__name__)

STATUSES = ("running", "finished", "diverged", "failed")


class RunRegistryService:
    """
    Service for registering matching runs and their outcomes.
    The registry is bookkeeping only; a failing registry never fails a run.
    """

    @staticmethod
    def run_dir_name(config_hash: str, seed: int) -> str:
        """Per-run output directory name"""
        return f"{config_hash[:16]}_s{seed}"

    @staticmethod
    def run_key(config_hash: str, seed: int, mesh_a: str, mesh_b: str) -> str:
        pair = hashlib.sha1(f"{mesh_a}\0{mesh_b}".encode("utf-8")).hexdigest()[:12]
        return f"{RunRegistryService.run_dir_name(config_hash, seed)}_{pair}"

    @staticmethod
    def register(
        db: Session,
        run_key: str,
        mesh_a: str,
        mesh_b: str,
        config_hash: str,
        seed: int,
        out_dir: str,
    ) -> Optional[Run]:
        """
        Create the run row, or mark an existing one as running again.

        Args:
            db: Database session
            run_key: Unique key of the run
            mesh_a: Source mesh path
            mesh_b: Target mesh path
            config_hash: SHA-256 of the effective config
            seed: Run seed
            out_dir: Output directory

        Returns:
            Run: The registered run or None if error
        """
        try:
            run = db.query(Run).filter(Run.run_key == run_key).first()
            if run:
                run.status = "running"
                run.final_loss = None
                logger.info(f"Resuming registered run {run_key}")
            else:
                run = Run(
                    run_key=run_key,
                    mesh_a=mesh_a,
                    mesh_b=mesh_b,
                    config_hash=config_hash,
                    seed=seed,
                    status="running",
                    out_dir=out_dir,
                )
                db.add(run)
                logger.info(f"Registered run {run_key}")
            db.commit()
            db.refresh(run)
            return run

        except Exception as e:
            logger.error(f"Error registering run {run_key}: {e}")
            db.rollback()
            return None

    @staticmethod
    def finish(db: Session, run_key: str, status: str, final_loss: Optional[float] = None) -> bool:
        """
        Record the outcome of a run.

        Returns:
            bool: Success status
        """
        if status not in STATUSES:
            raise ValueError(f"unknown run status {status}")
        try:
            run = db.query(Run).filter(Run.run_key == run_key).first()
            if not run:
                logger.error(f"Run {run_key} not found")
                return False
            run.status = status
            run.final_loss = final_loss
            db.commit()
            logger.info(f"Run {run_key} {status}")
            return True

        except Exception as e:
            logger.error(f"Error updating run {run_key}: {e}")
            db.rollback()
            return False

    @staticmethod
    def get_run(db: Session, run_key: str) -> Optional[Run]:
        return db.query(Run).filter(Run.run_key == run_key).first()

    @staticmethod
    def list_runs(db: Session, status: Optional[str] = None) -> List[Run]:
        query = db.query(Run)
        if status:
            query = query.filter(Run.status == status)
        return query.order_by(Run.id).all()
