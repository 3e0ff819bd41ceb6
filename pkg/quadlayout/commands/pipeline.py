"""
Full pipeline run and report
"""
import argparse
import logging

from ..schemas import STAGE_ORDER
from ..services.artifact_service import ArtifactService
from ..services.pipeline import run_pipeline
from .options import add_run_options, resolve_config

logger = logging.getLogger(__name__)


def pipeline_command(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    report = run_pipeline(config)
    print(ArtifactService(config.out_dir).path("report.txt").read_text())
    failed = [s.stage for s in report.stages if s.status == "failed"]
    return 1 if failed else 0


def register(subparsers):
    parser = subparsers.add_parser("pipeline", help="run the selected stages in order and write the report")
    add_run_options(parser)
    parser.add_argument("--stages", help=f"comma separated subset of {','.join(STAGE_ORDER)}")
    parser.set_defaults(func=pipeline_command)
