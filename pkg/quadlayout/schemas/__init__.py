from pydantic import BaseModel, Field, field_validator
from typing import Optional, List, Dict, Any, Tuple, Literal
from datetime import datetime
from enum import Enum

# Enums matching the ledger models
class StageName(str, Enum):
    LOAD = "load"
    HOMOLOGY = "homology"
    ONEFORMS = "oneforms"
    PERIODS = "periods"
    OPTIMIZE = "optimize"
    RICCI = "ricci"
    IMMERSE = "immerse"
    TMESH = "tmesh"

STAGE_ORDER = [stage.value for stage in StageName]

class StageStatusName(str, Enum):
    SUCCEEDED = "succeeded"
    FAILED = "failed"
    SKIPPED = "skipped"
    CACHED = "cached"

class TerminationCause(str, Enum):
    SINGULARITY = "singularity"
    MOTOR = "motor"
    CLOSED = "closed"
    LENGTH_CAP = "length_cap"

class NodeKind(str, Enum):
    CONE = "cone"
    T_JUNCTION = "t_junction"
    CROSSING = "crossing"
    END = "end"

# Complex numbers travel as [re, im]
Complex = Tuple[float, float]

# Base schemas
class BaseSchema(BaseModel):
    model_config = {
        "from_attributes": True,
        "use_enum_values": True
    }

# Run configuration
class PipelineConfig(BaseSchema):
    mesh_path: str
    out_dir: str = "runs/latest"
    epsilon: float = Field(3.0e-4, gt=0)
    residual_tol: float = Field(1e-3, gt=0)
    ricci_tol: float = Field(1e-8, gt=0)
    max_iters: int = Field(200000, gt=0)
    ricci_max_iters: int = Field(50, gt=0)
    seed: int = Field(0, ge=0)
    stages: List[StageName] = Field(default_factory=lambda: list(StageName))
    coefficients: Optional[List[float]] = None
    features_path: Optional[str] = None
    merge: bool = False
    approximate: bool = False
    checker_scale: float = 1.0

    @field_validator('stages')
    @classmethod
    def stages_in_pipeline_order(cls, v):
        names = [s.value if isinstance(s, StageName) else s for s in v]
        if len(set(names)) != len(names):
            raise ValueError('stages must not repeat')
        if names != sorted(names, key=STAGE_ORDER.index):
            raise ValueError(f'stages must follow the pipeline order {STAGE_ORDER}')
        return v

    @field_validator('checker_scale')
    @classmethod
    def scale_nonzero(cls, v):
        if v == 0:
            raise ValueError('checker scale must be non-zero')
        return v

# Stage artifacts
class MeshStats(BaseSchema):
    vertices: int
    edges: int
    faces: int
    genus: int
    euler_characteristic: int
    surface_area: float
    diameter: float
    mean_edge_length: float

class CurveSchema(BaseSchema):
    tag: str
    halfedges: List[int]
    closed: bool = True

class HomologyArtifact(BaseSchema):
    genus: int
    base_vertex: int
    loops: List[CurveSchema]
    cut: List[CurveSchema]
    intersection_matrix: List[List[int]]

class DivisorTermSchema(BaseSchema):
    face: int
    bary: Tuple[float, float, float]
    order: int

class FormsArtifact(BaseSchema):
    genus: int
    tags: List[str]
    normalized: bool
    selected: List[int]
    closedness: float
    coefficients: List[float]
    zeros: List[DivisorTermSchema]

class PeriodsArtifact(BaseSchema):
    genus: int
    A: List[List[Complex]]
    B: List[List[Complex]]
    symmetry_error: float
    imag_min_eigenvalue: float
    shortest_vector: float

class AbelJacobiSchema(BaseSchema):
    phi: List[Complex]
    residual: List[Complex]
    s: List[int]
    t: List[int]
    residual_norm: float

class DivisorArtifact(BaseSchema):
    divisor: List[DivisorTermSchema]
    reference: List[DivisorTermSchema]
    image: AbelJacobiSchema
    energy: float
    iterations: int
    epsilon: float
    residual_tol: float = 1e-3

class InsertedVertexSchema(BaseSchema):
    vertex: int
    face: int
    bary: Tuple[float, float, float]

class HolonomyRow(BaseSchema):
    loop: str
    degrees: float
    expected: float
    deviation: float

class MetricArtifact(BaseSchema):
    cones: Dict[int, int]
    iterations: int
    max_error: float
    flips: int
    energy_history: List[float]
    snap_displacement: List[float]
    cone_residual: float
    residual_limit: float
    inserted: List[InsertedVertexSchema] = []
    holonomy: List[HolonomyRow]

class TransitionSchema(BaseSchema):
    halfedge: int
    twin: int
    rotation_degrees: float
    rotation_quarter_turns: int
    translation: Complex

class ImmersionArtifact(BaseSchema):
    seed_face: int
    isometry_error: float
    fold_overs: int
    cut: List[CurveSchema]
    transitions: List[TransitionSchema]

# T-mesh document ("tmesh-v1")
class TrajectorySchema(BaseSchema):
    id: int
    cone: int
    ray: int
    cause: TerminationCause
    length: float
    end_cone: Optional[int] = None

class NodeSchema(BaseSchema):
    id: int
    kind: NodeKind
    face: int
    bary: Tuple[float, float, float]
    vertex: Optional[int] = None
    sectors: int

class ArcSchema(BaseSchema):
    id: int
    trajectory: int
    start: int
    end: int
    start_quarter: int
    end_quarter: int
    s0: float
    s1: float

class PatchSchema(BaseSchema):
    id: int
    corners: List[int]
    sides: List[List[Tuple[int, bool]]]
    width: float
    height: float

class AdjacencySchema(BaseSchema):
    arc: int
    patch_a: int
    side_a: int
    patch_b: int
    side_b: int
    quarter_turns: int = Field(..., ge=0, le=3)

class TMeshDocument(BaseSchema):
    version: Literal["tmesh-v1"] = "tmesh-v1"
    trajectories: List[TrajectorySchema]
    nodes: List[NodeSchema]
    arcs: List[ArcSchema]
    patches: List[PatchSchema]
    adjacency: List[AdjacencySchema]

class TMeshArtifact(BaseSchema):
    skipped: bool = False
    trajectories: int = 0
    t_junctions: int = 0
    patches: int = 0
    capped: int = 0
    area_error: Optional[float] = None

# Reports
class StageReport(BaseSchema):
    stage: StageName
    status: StageStatusName
    seconds: float = 0.0
    artifacts: List[str] = []
    error: Optional[Dict[str, Any]] = None

class RunReport(BaseSchema):
    run_id: Optional[int] = None
    mesh: str
    config: PipelineConfig
    stages: List[StageReport] = []
    hardware: Dict[str, str] = {}
    started_at: datetime
    finished_at: Optional[datetime] = None

class VerificationCheck(BaseSchema):
    name: str
    passed: bool
    value: Optional[float] = None
    threshold: Optional[float] = None
    detail: Optional[str] = None

class VerificationReport(BaseSchema):
    out_dir: str
    checks: List[VerificationCheck]

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)
