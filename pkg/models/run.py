"""
Run model for the patchmatch run registry.
One row per (config hash, seed, mesh pair) matching run.
"""
from sqlalchemy import Column, DateTime, Float, Integer, String
from sqlalchemy.sql import func

from app.database import Base


class Run(Base):
    """
    Matching run record.
    Status: running, finished, diverged, failed
    """
    __tablename__ = "runs"

    id = Column(Integer, primary_key=True, index=True, autoincrement=True)
    run_key = Column(String(128), unique=True, nullable=False, index=True)
    mesh_a = Column(String(1024), nullable=False)
    mesh_b = Column(String(1024), nullable=False)
    config_hash = Column(String(64), nullable=False, index=True)
    seed = Column(Integer, nullable=False, default=0)
    status = Column(String(20), nullable=False, default="running")
    out_dir = Column(String(1024), nullable=False)
    final_loss = Column(Float, nullable=True)
    created_at = Column(DateTime(timezone=True), server_default=func.now())
    updated_at = Column(DateTime(timezone=True), onupdate=func.now())

    def __repr__(self):
        return f"<Run(id={self.id}, run_key={self.run_key}, status={self.status})>"

    @property
    def is_finished(self) -> bool:
        return self.status == "finished"
