"""
One subcommand per pipeline stage; each reads the earlier stages' artifacts from the output directory
"""
import argparse
import json
import logging

from ..services.pipeline import run_pipeline
from .options import add_run_options, resolve_config

logger = logging.getLogger(__name__)

STAGE_HELP = {
    "homology": "load the mesh and compute a canonical homology basis and cut graph",
    "oneforms": "holomorphic 1-form basis, normalization and zeros of the combined form",
    "periods": "period matrix, Riemann relations and the Jacobian lattice",
    "optimize": "move the singularity divisor until its Abel-Jacobi image vanishes",
    "ricci": "snap the divisor to vertices and flow to the flat cone metric",
    "immerse": "augment the cut graph and develop the cone metric into the plane",
    "tmesh": "trace separatrices, build the motor graph and extract T-mesh patches",
}


def stage_command(stage: str):
    def handler(args: argparse.Namespace) -> int:
        stages = ["load", stage] if stage == "homology" else [stage]
        report = run_pipeline(resolve_config(args, stages))
        print(json.dumps([s.model_dump(mode="json") for s in report.stages], indent=2))
        return 0
    return handler


def register(subparsers):
    for stage, help_text in STAGE_HELP.items():
        parser = subparsers.add_parser(stage, help=help_text)
        add_run_options(parser, mesh=stage == "homology")
        parser.set_defaults(func=stage_command(stage))
