"""
Stage ledger initialization
"""
from pathlib import Path

from ..models.stage_models import *
from .database import Base, get_engine, ledger_url_for


def create_tables(out_dir: Path):
    """Create all ledger tables for a run directory"""
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    Base.metadata.create_all(bind=get_engine(ledger_url_for(out_dir)))

