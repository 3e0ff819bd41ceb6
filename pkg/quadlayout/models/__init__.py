from .stage_models import PipelineRun, StageRun, StageStatus

__all__ = ["PipelineRun", "StageRun", "StageStatus"]
