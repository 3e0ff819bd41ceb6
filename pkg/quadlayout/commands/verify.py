"""
Re-check a finished run from its artifacts
"""
import argparse
import json
from pathlib import Path
from typing import List, Optional

from pydantic import TypeAdapter

from ..core.config import settings
from ..core.errors import MissingArtifact
from ..schemas import CurveSchema
from ..services.mesh_core import Curve
from ..services.pipeline import verify

LOOPS = TypeAdapter(List[CurveSchema])


def read_loops(paths: Optional[List[str]]) -> List[Curve]:
    """Loops from JSON files holding one curve, a list of curves or {"loops": [...]}"""
    curves: List[Curve] = []
    for path in paths or []:
        if not Path(path).exists():
            raise MissingArtifact(path)
        document = json.loads(Path(path).read_text())
        if isinstance(document, dict):
            document = document.get("loops", [document])
        for item in LOOPS.validate_python(document):
            curves.append(Curve(item.tag, tuple(item.halfedges), item.closed))
    return curves


def verify_command(args: argparse.Namespace) -> int:
    report = verify(args.out_dir or settings.output_dir, loops=read_loops(args.loops))
    print(report.model_dump_json(indent=2))
    return 0 if report.passed else 1


def register(subparsers):
    parser = subparsers.add_parser("verify", help="recompute residuals, holonomy and isometry checks of a run")
    parser.add_argument("--out", dest="out_dir", help=f"run directory (default {settings.output_dir})")
    parser.add_argument("--loop", dest="loops", action="append",
                        help="JSON file of extra closed loops (input mesh halfedges) whose holonomy is checked")
    parser.set_defaults(func=verify_command)
