"""
Run registry storage: a lazily bound SQLAlchemy engine, the session
factory and the declarative base of the runs table.
"""
import logging
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, Optional

from sqlalchemy import create_engine, text
from sqlalchemy.engine import Engine
from sqlalchemy.orm import Session, declarative_base, sessionmaker

from app.config import settings

logger = logging.getLogger(__name__)

# Bound lazily so tests and workers can point at their own file
engine: Optional[Engine] = None

SessionLocal = sessionmaker(autocommit=False, autoflush=False)

# Declarative base of the registry tables
Base = declarative_base()


def configure(url: Optional[str] = None) -> Engine:
    """
    Create the engine for `url` (default settings.registry_url) and bind
    the session factory to it.
    """
    global engine
    url = url or settings.registry_url
    if url.startswith("sqlite:///"):
        Path(url[len("sqlite:///"):]).parent.mkdir(parents=True, exist_ok=True)
    engine = create_engine(
        url,
        echo=settings.debug,
        connect_args={"check_same_thread": False} if url.startswith("sqlite") else {},
    )
    SessionLocal.configure(bind=engine)
    return engine


def get_engine() -> Engine:
    return engine if engine is not None else configure()


@contextmanager
def get_db() -> Iterator[Session]:
    """
    Session scope over the registry, bound on first use.

    Yields:
        Session: Registry session, closed on exit
    """
    get_engine()
    db = SessionLocal()
    try:
        yield db
    finally:
        db.close()


def create_tables():
    """Create the runs table if missing"""
    import models.run  # noqa: F401  # registers the table on Base

    try:
        Base.metadata.create_all(bind=get_engine())
        logger.debug(f"Registry tables ready at {get_engine().url}")
    except Exception as e:
        logger.error(f"Cannot create registry tables: {e}")
        raise


def init_database():
    """Check that the registry is reachable, then create its tables"""
    try:
        logger.info(f"Connecting to run registry {get_engine().url}")
        with get_engine().connect() as conn:
            conn.execute(text("SELECT 1"))
        logger.info("Run registry reachable")
        create_tables()
    except Exception as e:
        logger.error(f"Run registry initialization failed: {e}")
        raise
