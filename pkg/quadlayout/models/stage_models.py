"""
SQLAlchemy models for the stage ledger
"""
from sqlalchemy import Column, Integer, String, Float, DateTime, Text, ForeignKey
from sqlalchemy.orm import relationship
from sqlalchemy.sql import func
from ..core.database import Base
import enum


class StageStatus(str, enum.Enum):
    SUCCEEDED = "succeeded"
    FAILED = "failed"
    SKIPPED = "skipped"
    CACHED = "cached"


class RunStatus(str, enum.Enum):
    RUNNING = "running"
    SUCCEEDED = "succeeded"
    FAILED = "failed"


# Pipeline run model
class PipelineRun(Base):
    __tablename__ = "pipeline_runs"

    id = Column(Integer, primary_key=True, index=True)
    out_dir = Column(String(1024), nullable=False)
    input_path = Column(String(1024), nullable=False)
    config_json = Column(Text, nullable=False)
    status = Column(String(16), default=RunStatus.RUNNING.value)
    error_message = Column(Text, nullable=True)
    created_at = Column(DateTime(timezone=True), server_default=func.now())
    finished_at = Column(DateTime(timezone=True), nullable=True)

    stages = relationship("StageRun", back_populates="run", cascade="all, delete-orphan")


# Stage execution model
class StageRun(Base):
    __tablename__ = "stage_runs"

    id = Column(Integer, primary_key=True, index=True)
    run_id = Column(Integer, ForeignKey("pipeline_runs.id"), nullable=True)
    stage = Column(String(32), index=True, nullable=False)
    input_hash = Column(String(64), index=True, nullable=False)
    artifact_hash = Column(String(64), nullable=True)
    artifact_paths = Column(Text, nullable=True)  # JSON list
    status = Column(String(16), nullable=False)
    duration_seconds = Column(Float, default=0.0)
    error_message = Column(Text, nullable=True)
    created_at = Column(DateTime(timezone=True), server_default=func.now())

    run = relationship("PipelineRun", back_populates="stages")
