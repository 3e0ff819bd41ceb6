from functools import lru_cache
from pathlib import Path
from typing import Optional

from sqlalchemy import create_engine
from sqlalchemy.orm import declarative_base, sessionmaker
from .config import settings
import logging

logger = logging.getLogger(__name__)

Base = declarative_base()


def ledger_url_for(out_dir: Path) -> str:
    """Ledger URL for a run directory, unless one is configured globally"""
    if settings.ledger_url:
        return settings.ledger_url
    return f"sqlite:///{Path(out_dir).resolve() / settings.ledger_filename}"


@lru_cache(maxsize=None)
def get_engine(url: str):
    engine = create_engine(
        url,
        pool_pre_ping=True,
        connect_args={"check_same_thread": False} if url.startswith("sqlite") else {}
    )
    logger.info(f"Stage ledger at {url}")
    return engine


@lru_cache(maxsize=None)
def get_sessionmaker(url: str):
    return sessionmaker(autocommit=False, autoflush=False, bind=get_engine(url))


def get_db(out_dir: Optional[Path] = None):
    SessionLocal = get_sessionmaker(ledger_url_for(out_dir or Path(settings.output_dir)))
    db = SessionLocal()
    try:
        yield db
    finally:
        db.close()
