from typing import Optional
import os

from dotenv import load_dotenv

load_dotenv()


class Settings:
    """Simple settings class without Pydantic"""
    # Stage ledger
    ledger_url: Optional[str] = os.getenv("QUADLAYOUT_LEDGER_URL")
    ledger_filename: str = os.getenv("QUADLAYOUT_LEDGER_FILENAME", "ledger.sqlite")

    # Logging
    log_level: str = os.getenv("QUADLAYOUT_LOG_LEVEL", "INFO").upper()

    # Abel-Jacobi optimization
    epsilon: float = float(os.getenv("QUADLAYOUT_EPSILON", "3.0e-4"))
    residual_tol: float = float(os.getenv("QUADLAYOUT_RESIDUAL_TOL", "1e-3"))
    optimizer_max_iters: int = int(os.getenv("QUADLAYOUT_OPTIMIZER_MAX_ITERS", "200000"))
    armijo_constant: float = 1e-4
    initial_step_factor: float = 0.1
    min_separation: float = 1e-3

    # Ricci flow
    ricci_tol: float = float(os.getenv("QUADLAYOUT_RICCI_TOL", "1e-8"))
    ricci_max_iters: int = int(os.getenv("QUADLAYOUT_RICCI_MAX_ITERS", "50"))
    holonomy_tol_degrees: float = float(os.getenv("QUADLAYOUT_HOLONOMY_TOL_DEGREES", "0.5"))
    refine_margin: float = float(os.getenv("QUADLAYOUT_REFINE_MARGIN", "1e-3"))

    # Linear algebra
    solver_tol: float = float(os.getenv("QUADLAYOUT_SOLVER_TOL", "1e-10"))
    condition_limit: float = 1e12
    exact_lattice_cap: int = int(os.getenv("QUADLAYOUT_EXACT_LATTICE_CAP", "16"))

    # Tracing
    length_cap_factor: float = 64.0
    snap_radius_factor: float = 1e-6
    graze_offset: float = 1e-9
    max_face_crossings: int = int(os.getenv("QUADLAYOUT_MAX_FACE_CROSSINGS", "200000"))

    # Randomness
    seed: int = int(os.getenv("QUADLAYOUT_SEED", "0"))

    # Output
    output_dir: str = os.getenv("QUADLAYOUT_OUTPUT_DIR", "runs/latest")
    checker_scale: float = float(os.getenv("QUADLAYOUT_CHECKER_SCALE", "1.0"))
    texture_size: int = 512

    # Environment
    debug: bool = os.getenv("QUADLAYOUT_DEBUG", "False").lower() == "true"
    environment: str = os.getenv("ENVIRONMENT", "development")


settings = Settings()
