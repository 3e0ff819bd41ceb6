"""
Stage ledger operations: runs, stage executions and cache lookups
"""
from sqlalchemy.orm import Session
from sqlalchemy import desc, func
from typing import List, Optional
import json
import logging

from ..models.stage_models import *

logger = logging.getLogger(__name__)


class LedgerService:
    """Service class for stage ledger operations"""

    def __init__(self, db: Session):
        self.db = db

    # Run operations
    def start_run(self, out_dir: str, input_path: str, config_json: str) -> PipelineRun:
        """Open a new pipeline run"""
        run = PipelineRun(out_dir=out_dir, input_path=input_path, config_json=config_json,
                          status=RunStatus.RUNNING.value)
        self.db.add(run)
        self.db.commit()
        self.db.refresh(run)
        return run

    def finish_run(self, run: PipelineRun, status: RunStatus, error_message: Optional[str] = None) -> PipelineRun:
        """Close a run with its final status"""
        run.status = status.value
        run.error_message = error_message
        run.finished_at = func.now()
        self.db.commit()
        self.db.refresh(run)
        return run

    def get_runs(self, skip: int = 0, limit: int = 100) -> List[PipelineRun]:
        """Most recent runs first"""
        return self.db.query(PipelineRun).order_by(desc(PipelineRun.id)).offset(skip).limit(limit).all()

    # Stage operations
    def record_stage(self, run: Optional[PipelineRun], stage: str, input_hash: str, status: StageStatus,
                     duration: float = 0.0, artifacts: Optional[List[str]] = None,
                     artifact_hash: Optional[str] = None, error_message: Optional[str] = None) -> StageRun:
        """Store one stage execution"""
        record = StageRun(
            run_id=run.id if run is not None else None,
            stage=stage,
            input_hash=input_hash,
            artifact_hash=artifact_hash,
            artifact_paths=json.dumps(artifacts or []),
            status=status.value,
            duration_seconds=duration,
            error_message=error_message,
        )
        self.db.add(record)
        self.db.commit()
        self.db.refresh(record)
        return record

    def cached_stage(self, stage: str, input_hash: str) -> Optional[StageRun]:
        """Latest successful execution of a stage with the same inputs"""
        return self.db.query(StageRun).filter(
            StageRun.stage == stage,
            StageRun.input_hash == input_hash,
            StageRun.status.in_([StageStatus.SUCCEEDED.value, StageStatus.SKIPPED.value, StageStatus.CACHED.value]),
        ).order_by(desc(StageRun.id)).first()

    def stage_counts(self) -> dict:
        """Executions per stage and status"""
        rows = self.db.query(StageRun.stage, StageRun.status, func.count(StageRun.id)).group_by(
            StageRun.stage, StageRun.status
        ).all()
        counts: dict = {}
        for stage, status, count in rows:
            counts.setdefault(stage, {})[status] = count
        return counts

    @staticmethod
    def artifact_paths(record: StageRun) -> List[str]:
        return json.loads(record.artifact_paths or "[]")
