"""
Shared CLI options and config resolution: flags override the config file, which overrides Settings
"""
import argparse
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional

from dotenv import dotenv_values

from ..core.config import settings
from ..core.errors import MissingArtifact, QuadLayoutError
from ..schemas import STAGE_ORDER, PipelineConfig

logger = logging.getLogger(__name__)

# Config-file keys accepted besides the PipelineConfig field names
ALIASES = {
    "mesh": "mesh_path",
    "input": "mesh_path",
    "out": "out_dir",
    "ricci_tolerance": "ricci_tol",
    "features": "features_path",
}

LIST_FIELDS = {"stages", "coefficients"}
FLAG_FIELDS = {"merge", "approximate"}


def add_run_options(parser: argparse.ArgumentParser, mesh: bool = True):
    if mesh:
        parser.add_argument("mesh", nargs="?", help="input mesh (.obj or .ply); defaults to the run's config.json")
    parser.add_argument("--out", dest="out_dir", help=f"output directory (default {settings.output_dir})")
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument("--epsilon", type=float, help="Abel-Jacobi energy threshold")
    parser.add_argument("--residual-tol", type=float, help="largest Abel-Jacobi residual component accepted")
    parser.add_argument("--ricci-tol", type=float, help="Ricci flow curvature tolerance (radians)")
    parser.add_argument("--max-iters", type=int, help="divisor optimizer iteration cap")
    parser.add_argument("--ricci-max-iters", type=int, help="Ricci flow Newton iteration cap")
    parser.add_argument("--seed", type=int, help="seed for the cohomology basis")
    parser.add_argument("--features", dest="features_path", help="divisor JSON with user feature points")
    parser.add_argument("--coefficients", help="comma separated coefficients of the combined 1-form")
    parser.add_argument("--checker-scale", type=float, help="texture coordinate scale of the checkerboard")
    parser.add_argument("--merge", action="store_true", default=None, help="merge coincident same-sign points")
    parser.add_argument("--approximate", action="store_true", default=None,
                        help="nearest-plane lattice reduction instead of exact search")


def _split(value: Any) -> Optional[List[str]]:
    if value is None or isinstance(value, list):
        return value
    return [item.strip() for item in str(value).split(",") if item.strip()]


def read_config_file(path: str) -> Dict[str, Any]:
    """`key = value` lines with `#` comments; keys are case and dash insensitive"""
    if not Path(path).exists():
        raise MissingArtifact(path)
    values: Dict[str, Any] = {}
    for key, value in dotenv_values(path).items():
        name = key.strip().lower().replace("-", "_")
        name = ALIASES.get(name, name)
        if value is None:
            continue
        if name in FLAG_FIELDS:
            values[name] = value.strip().lower() in ("1", "true", "yes", "on")
        elif name in LIST_FIELDS:
            values[name] = _split(value)
        else:
            values[name] = value
    return values


def _previous_config(out_dir: str) -> Dict[str, Any]:
    path = Path(out_dir) / "config.json"
    if not path.exists():
        return {}
    return PipelineConfig.model_validate_json(path.read_text()).model_dump(exclude={"stages", "out_dir"})


def resolve_config(args: argparse.Namespace, stages: Optional[List[str]] = None) -> PipelineConfig:
    values: Dict[str, Any] = {
        "out_dir": settings.output_dir,
        "epsilon": settings.epsilon,
        "residual_tol": settings.residual_tol,
        "ricci_tol": settings.ricci_tol,
        "max_iters": settings.optimizer_max_iters,
        "ricci_max_iters": settings.ricci_max_iters,
        "seed": settings.seed,
        "checker_scale": settings.checker_scale,
    }
    file_values = read_config_file(args.config) if getattr(args, "config", None) else {}
    out_dir = getattr(args, "out_dir", None) or file_values.get("out_dir") or values["out_dir"]
    values.update(_previous_config(out_dir))
    values.update(file_values)

    flags = {
        "mesh_path": getattr(args, "mesh", None),
        "out_dir": getattr(args, "out_dir", None),
        "epsilon": args.epsilon,
        "residual_tol": args.residual_tol,
        "ricci_tol": args.ricci_tol,
        "max_iters": args.max_iters,
        "ricci_max_iters": args.ricci_max_iters,
        "seed": args.seed,
        "features_path": args.features_path,
        "coefficients": _split(args.coefficients),
        "checker_scale": args.checker_scale,
        "merge": args.merge,
        "approximate": args.approximate,
        "stages": _split(getattr(args, "stages", None)),
    }
    values.update({key: value for key, value in flags.items() if value is not None})
    if stages is not None:
        values["stages"] = stages
    if not values.get("mesh_path"):
        raise QuadLayoutError("No input mesh: pass a mesh path or run the load stage first")

    unknown = set(values) - set(PipelineConfig.model_fields)
    if unknown:
        logger.warning(f"Ignoring unknown config keys {sorted(unknown)}")
    return PipelineConfig(**{key: values[key] for key in values if key in PipelineConfig.model_fields})
