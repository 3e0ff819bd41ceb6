"""
quadlayout command line entry point
"""
import argparse
import json
import logging
import sys
from datetime import datetime
from typing import List, Optional

from pydantic import ValidationError

from . import __version__
from .commands import pipeline, stages, verify
from .core.config import settings
from .core.errors import QuadLayoutError, StageFailed

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="quadlayout",
        description="Abel-Jacobi singularity placement, flat cone metrics and T-mesh layouts on closed surfaces",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=settings.log_level, help="logging level (default from settings)")
    subparsers = parser.add_subparsers(dest="command", required=True)
    stages.register(subparsers)
    pipeline.register(subparsers)
    verify.register(subparsers)
    return parser


def error_payload(exc: Exception, path: Optional[str]) -> dict:
    """JSON body printed to stderr for any failure the CLI handles"""
    if isinstance(exc, QuadLayoutError):
        message, code = exc.detail, exc.code
    else:
        message, code = str(exc), "invalid_config"
    return {
        "error": True,
        "message": message,
        "code": code,
        "stage": exc.stage if isinstance(exc, StageFailed) else None,
        "timestamp": datetime.now().isoformat(),
        "path": path,
    }


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    try:
        return args.func(args)
    except (QuadLayoutError, ValidationError) as exc:
        logger.debug("Command failed", exc_info=settings.debug)
        print(json.dumps(error_payload(exc, getattr(args, "out_dir", None) or settings.output_dir)), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
