"""
Pipeline orchestration: stages read and write artifacts in the run directory, the ledger caches
stages whose inputs are unchanged, and reports mirror the running-time and residual tables.
"""
import hashlib
import json
import logging
import os
import platform
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import TypeAdapter
from sqlalchemy.orm import Session

from ..core.config import settings
from ..core.database import get_sessionmaker, ledger_url_for
from ..core.errors import (
    HolonomyNotQuantized,
    MissingArtifact,
    NonRectangularPatch,
    OptimizationDidNotConverge,
    QuadLayoutError,
    SnapResidualTooLarge,
    StageFailed,
)
from ..core.init_db import create_tables
from ..models.stage_models import RunStatus, StageStatus
from ..schemas import (
    STAGE_ORDER,
    AbelJacobiSchema,
    CurveSchema,
    DivisorArtifact,
    DivisorTermSchema,
    FormsArtifact,
    HolonomyRow,
    HomologyArtifact,
    ImmersionArtifact,
    InsertedVertexSchema,
    MeshStats,
    MetricArtifact,
    PeriodsArtifact,
    PipelineConfig,
    RunReport,
    StageReport,
    TMeshArtifact,
    TransitionSchema,
    VerificationCheck,
    VerificationReport,
)
from .artifact_service import ArtifactService, complex_pairs, from_pairs
from .divisor_opt import initialize_divisor, optimize_divisor
from .homology import HomologyBasis, compute_cut_graph, homology_basis, intersection_matrix, standard_symplectic
from .immersion import (
    Immersion,
    augment_cut_graph,
    check_transitions,
    checkerboard_export,
    corner_coords_from_obj,
    flatten,
    isometry_error,
    planar_length_error,
    transition_deviation,
)
from .jacobi import (
    AbelJacobiImage,
    AbelJacobiMap,
    JacobianLattice,
    PeriodMatrix,
    abel_jacobi_divisor,
    build_lattice,
    period_matrix,
    reduce_mod_lattice,
)
from .ledger_service import LedgerService
from .mesh_core import (
    Curve,
    CurveGraph,
    Divisor,
    SurfaceMesh,
    SurfacePoint,
    angle_defect_curvature,
    load_mesh,
    save_mesh,
)
from .one_forms import HolomorphicBasis, HolomorphicOneForm, combined_form, holomorphic_basis, locate_zeros, normalize_basis
from .ricci_flow import (
    ConeMetric,
    ConePlacement,
    IntrinsicTriangulation,
    flow_to_metric,
    holonomy_table,
    refine_at_divisor,
    target_curvature,
    write_holonomy_csv,
)
from .tmesh import emit_separatrices, export_tmesh, extract_patches, load_tmesh, motor_graph, trace_all

logger = logging.getLogger(__name__)

STAGE_OUTPUTS: Dict[str, List[str]] = {
    "load": ["mesh.obj", "mesh.json"],
    "homology": ["homology.json"],
    "oneforms": ["forms.json", "forms_generators.npy", "forms_basis.npy"],
    "periods": ["periods.json"],
    "optimize": ["divisor.json", "optimizer_trace.csv"],
    "ricci": ["metric.json", "metric_mesh.obj", "metric_halfedge_map.npy", "metric_flips.npy", "metric_faces.npy",
              "metric_twin.npy", "metric_lengths.npy", "metric_u.npy", "holonomy.csv"],
    "immerse": ["immersion.json", "immersion.obj", "immersion.mtl", "checker.png"],
    "tmesh": ["tmesh_summary.json", "tmesh.json", "tmesh_preview.obj", "tmesh.mtl", "motor_graph.obj"],
}

STAGE_CONFIG_KEYS: Dict[str, Tuple[str, ...]] = {
    "load": ("mesh_path",),
    "homology": (),
    "oneforms": ("seed", "coefficients"),
    "periods": (),
    "optimize": ("epsilon", "residual_tol", "max_iters", "features_path", "merge", "approximate"),
    "ricci": ("ricci_tol", "ricci_max_iters"),
    "immerse": ("checker_scale",),
    "tmesh": (),
}

TERMS = TypeAdapter(List[DivisorTermSchema])


def _terms(divisor: Divisor) -> List[DivisorTermSchema]:
    return [DivisorTermSchema(**item) for item in divisor.to_list()]


def _divisor(terms: List[DivisorTermSchema]) -> Divisor:
    return Divisor.from_list([term.model_dump() for term in terms])


def _curves(graph: CurveGraph) -> List[CurveSchema]:
    return [CurveSchema(**item) for item in graph.to_dict()["loops"]]


def _curve_graph(curves: List[CurveSchema]) -> CurveGraph:
    return CurveGraph.from_dict({"loops": [c.model_dump() for c in curves]})


def _image_schema(image: AbelJacobiImage) -> AbelJacobiSchema:
    return AbelJacobiSchema(phi=complex_pairs(image.phi), residual=complex_pairs(image.residual),
                            s=image.s.tolist(), t=image.t.tolist(), residual_norm=image.residual_norm)


def expected_holonomy(order: int) -> float:
    """Cone angle (4 + n) quarter turns, reduced mod 360"""
    return float((4 + order) * 90 % 360)


def _circular_gap(a: float, b: float) -> float:
    return abs(((a - b + 180.0) % 360.0) - 180.0)


def holonomy_rows(metric: ConeMetric, orders: Dict[int, int], rows: List[Tuple[str, float]]) -> List[HolonomyRow]:
    """Compare cone loops with their cone angle and other loops with the nearest quarter turn"""
    cone_order = {f"t{i + 1}": orders[int(v)] for i, v in enumerate(metric.cone_vertices)}
    table = []
    for tag, degrees in rows:
        expected = expected_holonomy(cone_order[tag]) if tag in cone_order else float(90 * round(degrees / 90) % 360)
        table.append(HolonomyRow(loop=tag, degrees=degrees, expected=expected,
                                 deviation=_circular_gap(degrees, expected)))
    return table


def hardware_info() -> Dict[str, str]:
    return {
        "machine": platform.machine(),
        "processor": platform.processor() or "unknown",
        "cpus": str(os.cpu_count()),
        "system": f"{platform.system()} {platform.release()}",
        "python": platform.python_version(),
        "numpy": np.__version__,
    }


class Pipeline:
    """Runs stages against one output directory"""

    def __init__(self, config: PipelineConfig, db: Optional[Session] = None):
        self.config = config
        self.artifacts = ArtifactService(config.out_dir)
        self.ledger = LedgerService(db) if db is not None else None
        self._memo: Dict[str, object] = {}
        self.stage_reports: List[StageReport] = []
        self.handlers: Dict[str, Callable[[], StageStatus]] = {
            "load": self.stage_load,
            "homology": self.stage_homology,
            "oneforms": self.stage_oneforms,
            "periods": self.stage_periods,
            "optimize": self.stage_optimize,
            "ricci": self.stage_ricci,
            "immerse": self.stage_immerse,
            "tmesh": self.stage_tmesh,
        }

    # Artifact readers
    def _cached(self, key: str, build: Callable[[], object]):
        if key not in self._memo:
            self._memo[key] = build()
        return self._memo[key]

    def mesh(self) -> SurfaceMesh:
        return self._cached("mesh", lambda: load_mesh(self.artifacts.require("mesh.obj")))

    def homology(self) -> Tuple[HomologyBasis, CurveGraph]:
        def build():
            art = self.artifacts.read_model("homology.json", HomologyArtifact)
            return HomologyBasis(_curve_graph(art.loops), art.base_vertex), _curve_graph(art.cut)
        return self._cached("homology", build)

    def basis(self) -> HolomorphicBasis:
        def build():
            art = self.artifacts.read_model("forms.json", FormsArtifact)
            generators = self.artifacts.read_array("forms_generators.npy")
            forms = self.artifacts.read_array("forms_basis.npy")
            return HolomorphicBasis(
                tuple(HolomorphicOneForm.from_complex(row, f"phi{i + 1}") for i, row in enumerate(forms)),
                tuple(HolomorphicOneForm.from_complex(row, tag) for row, tag in zip(generators, art.tags)),
                normalized=art.normalized, selected=tuple(art.selected))
        return self._cached("basis", build)

    def zeros(self) -> Divisor:
        return _divisor(self.artifacts.read_model("forms.json", FormsArtifact).zeros)

    def lattice(self) -> JacobianLattice:
        def build():
            art = self.artifacts.read_model("periods.json", PeriodsArtifact)
            return build_lattice(PeriodMatrix(from_pairs(art.A).reshape(art.genus, art.genus),
                                              from_pairs(art.B).reshape(art.genus, art.genus)))
        return self._cached("lattice", build)

    def ajmap(self) -> AbelJacobiMap:
        return self._cached("ajmap", lambda: AbelJacobiMap(self.mesh(), self.basis(), self.homology()[1]))

    def divisor(self) -> DivisorArtifact:
        return self.artifacts.read_model("divisor.json", DivisorArtifact)

    def metric(self) -> MetricArtifact:
        return self.artifacts.read_model("metric.json", MetricArtifact)

    def cones(self) -> Dict[int, int]:
        return {int(v): int(n) for v, n in self.metric().cones.items()}

    def placement_mesh(self) -> SurfaceMesh:
        return self._cached("placement", lambda: load_mesh(self.artifacts.require("metric_mesh.obj")))

    def intrinsic_mesh(self) -> SurfaceMesh:
        def build():
            return SurfaceMesh.from_halfedges(self.placement_mesh().positions,
                                              self.artifacts.read_array("metric_faces.npy"),
                                              self.artifacts.read_array("metric_twin.npy"),
                                              self.artifacts.read_array("metric_lengths.npy"))
        return self._cached("intrinsic", build)

    def immersion(self) -> Immersion:
        def build():
            art = self.artifacts.read_model("immersion.json", ImmersionArtifact)
            return flatten(self.intrinsic_mesh(), _curve_graph(art.cut), seed_face=art.seed_face)
        return self._cached("immersion", build)

    # Stages
    def stage_load(self) -> StageStatus:
        mesh = load_mesh(self.config.mesh_path)
        save_mesh(mesh, self.artifacts.path("mesh.obj"))
        self._memo["mesh"] = mesh
        self.artifacts.write_model("mesh.json", MeshStats(
            vertices=mesh.n_vertices, edges=mesh.n_edges, faces=mesh.n_faces, genus=mesh.genus,
            euler_characteristic=mesh.euler_characteristic, surface_area=mesh.surface_area(),
            diameter=mesh.diameter(), mean_edge_length=mesh.mean_edge_length()))
        return StageStatus.SUCCEEDED

    def stage_homology(self) -> StageStatus:
        mesh = self.mesh()
        basis = homology_basis(mesh)
        cut = compute_cut_graph(mesh)
        M = intersection_matrix(mesh, basis.ordered())
        if not np.array_equal(M, standard_symplectic(basis.genus)):
            raise QuadLayoutError("Homology basis is not symplectic", matrix=M.tolist())
        self._memo["homology"] = (basis, cut)
        self.artifacts.write_model("homology.json", HomologyArtifact(
            genus=basis.genus, base_vertex=basis.base_vertex, loops=_curves(basis.loops), cut=_curves(cut),
            intersection_matrix=M.tolist()))
        return StageStatus.SUCCEEDED

    def stage_oneforms(self) -> StageStatus:
        mesh = self.mesh()
        loops, _ = self.homology()
        basis = normalize_basis(holomorphic_basis(mesh, loops, seed=self.config.seed), loops)
        phi = combined_form(basis, self.config.coefficients)
        zeros = locate_zeros(mesh, phi)
        closedness = max(float(np.max(np.abs(form.values.reshape(-1, 3).sum(axis=1)))) for form in basis.generators)

        self.artifacts.write_array("forms_generators.npy", np.array([f.values for f in basis.generators]))
        self.artifacts.write_array("forms_basis.npy", basis.matrix())
        self.artifacts.write_model("forms.json", FormsArtifact(
            genus=basis.genus, tags=[f.tag for f in basis.generators], normalized=basis.normalized,
            selected=list(basis.selected), closedness=closedness,
            coefficients=list(self.config.coefficients or [1.0] * (2 * basis.genus)), zeros=_terms(zeros)))
        self._memo["basis"] = basis
        return StageStatus.SUCCEEDED

    def stage_periods(self) -> StageStatus:
        loops, _ = self.homology()
        pm = period_matrix(self.basis(), loops)
        lattice = build_lattice(pm)
        self._memo["lattice"] = lattice
        self.artifacts.write_model("periods.json", PeriodsArtifact(
            genus=pm.genus, A=complex_pairs(pm.A), B=complex_pairs(pm.B), symmetry_error=pm.symmetry_error,
            imag_min_eigenvalue=pm.imag_min_eigenvalue, shortest_vector=lattice.shortest_vector_length()))
        return StageStatus.SUCCEEDED

    def stage_optimize(self) -> StageStatus:
        mesh = self.mesh()
        features = None
        if self.config.features_path:
            features = _divisor(TERMS.validate_json(Path(self.config.features_path).read_text()))
        initial = initialize_divisor(mesh, features)
        reference = self.zeros().scaled(4)
        try:
            divisor, image, state = optimize_divisor(
                mesh, self.ajmap(), self.lattice(), initial, reference, epsilon=self.config.epsilon,
                residual_tol=self.config.residual_tol,
                max_iters=self.config.max_iters, merge=self.config.merge,
                trace_path=self.artifacts.path("optimizer_trace.csv"))
        except OptimizationDidNotConverge as exc:
            if exc.best_state is not None:
                self.artifacts.path("divisor_best.json").write_text(
                    TERMS.dump_json(_terms(exc.best_state.divisor), indent=2).decode() + "\n")
            raise
        if self.config.approximate:
            image = reduce_mod_lattice(image.phi, self.lattice(), approximate=True)
        self.artifacts.write_model("divisor.json", DivisorArtifact(
            divisor=_terms(divisor), reference=_terms(reference), image=_image_schema(image),
            energy=state.energy, iterations=state.iteration, epsilon=self.config.epsilon,
            residual_tol=self.config.residual_tol))
        return StageStatus.SUCCEEDED

    def cone_residual(self, placement: ConePlacement, reference: Divisor) -> float:
        """Largest Abel-Jacobi residual component of the placed cones against the reference divisor"""
        image = abel_jacobi_divisor(self.ajmap(), placement.source_divisor(self.mesh()) + reference.negated(),
                                    self.lattice(), approximate=self.config.approximate)
        return float(np.max(np.abs(image.residual), initial=0.0))

    def stage_ricci(self) -> StageStatus:
        mesh = self.mesh()
        loops, _ = self.homology()
        art = self.divisor()
        divisor, reference = _divisor(art.divisor), _divisor(art.reference)
        limit = max(self.config.residual_tol, float(np.max(np.abs(from_pairs(art.image.residual)), initial=0.0)))

        placement = ConePlacement.snapped(mesh, divisor)
        residual = self.cone_residual(placement, reference)
        if residual > limit:
            logger.info(f"Snapped cones leave residual {residual:.3e} above {limit:.3e}; refining at the divisor")
            placement = refine_at_divisor(mesh, divisor)
            residual = self.cone_residual(placement, reference)
            if residual > limit:
                raise SnapResidualTooLarge(residual, limit)
        logger.info(f"Cone placement residual {residual:.3e} (limit {limit:.3e})")

        target = target_curvature(placement.mesh, placement.orders)
        metric = flow_to_metric(placement.mesh, target, tol=self.config.ricci_tol,
                                max_iters=self.config.ricci_max_iters)
        rows = holonomy_table(metric, placement.mesh, [placement.remap(curve) for curve in loops.ordered()])
        write_holonomy_csv(rows, self.artifacts.path("holonomy.csv"))
        table = holonomy_rows(metric, placement.orders, rows)

        final = metric.mesh()
        save_mesh(placement.mesh, self.artifacts.path("metric_mesh.obj"))
        self.artifacts.write_array("metric_halfedge_map.npy", placement.halfedge_map)
        self.artifacts.write_array("metric_flips.npy", metric.triangulation.flip_table())
        self.artifacts.write_array("metric_faces.npy", final.faces)
        self.artifacts.write_array("metric_twin.npy", final.twin)
        self.artifacts.write_array("metric_lengths.npy", final.halfedge_lengths)
        self.artifacts.write_array("metric_u.npy", metric.u)
        self.artifacts.write_model("metric.json", MetricArtifact(
            cones=placement.orders, iterations=metric.iterations, max_error=metric.max_error,
            flips=len(metric.flips), energy_history=metric.energy_history,
            snap_displacement=placement.displacement, cone_residual=residual, residual_limit=limit,
            inserted=[InsertedVertexSchema(vertex=v, face=point.face, bary=point.bary)
                      for v, point in sorted(placement.inserted.items())],
            holonomy=table))

        worst = max(table, key=lambda row: row.deviation, default=None)
        if worst is not None and worst.deviation > settings.holonomy_tol_degrees:
            raise HolonomyNotQuantized(worst.loop, worst.degrees, worst.deviation)
        return StageStatus.SUCCEEDED

    def stage_immerse(self) -> StageStatus:
        mesh = self.intrinsic_mesh()
        cones = self.cones()
        cut = augment_cut_graph(mesh, compute_cut_graph(mesh), sorted(cones))
        imm = flatten(mesh, cut)
        self._memo["immersion"] = imm
        checkerboard_export(imm, self.artifacts.out_dir, scale=self.config.checker_scale)
        transitions = [TransitionSchema(**imm.transitions[h].to_dict()) for h in sorted(imm.transitions)]
        self.artifacts.write_model("immersion.json", ImmersionArtifact(
            seed_face=imm.seed_face, isometry_error=isometry_error(imm), fold_overs=imm.fold_overs,
            cut=_curves(cut), transitions=transitions))
        check_transitions(imm)
        return StageStatus.SUCCEEDED

    def stage_tmesh(self) -> StageStatus:
        cones = self.cones()
        if not cones:
            logger.info("No cones; T-mesh stage skipped")
            self.artifacts.write_model("tmesh_summary.json", TMeshArtifact(skipped=True))
            return StageStatus.SKIPPED

        imm = self.immersion()
        trajectories = trace_all(imm, emit_separatrices(imm, cones), cones.keys())
        summary = TMeshArtifact(trajectories=len(trajectories),
                                capped=sum(t.cause in ("length_cap", "closed") for t in trajectories))
        if summary.capped:
            logger.warning(f"{summary.capped} trajectories did not reach a singularity")
        graph = motor_graph(trajectories, snap=settings.snap_radius_factor * imm.mesh.mean_edge_length())
        summary.t_junctions = len(graph.t_junctions)
        try:
            tm = extract_patches(graph, imm)
        except NonRectangularPatch:
            self.artifacts.write_model("tmesh_summary.json", summary)
            raise
        export_tmesh(tm, self.artifacts.out_dir)
        area = imm.mesh.surface_area()
        summary.patches = len(tm.patches)
        summary.area_error = abs(tm.area - area) / area
        self.artifacts.write_model("tmesh_summary.json", summary)
        return StageStatus.SUCCEEDED

    # Caching
    def input_hash(self, stage: str) -> str:
        digest = hashlib.sha256(stage.encode())
        config = self.config.model_dump(mode="json")
        digest.update(json.dumps({key: config[key] for key in STAGE_CONFIG_KEYS[stage]}, sort_keys=True).encode())
        if stage == "load":
            source = Path(self.config.mesh_path)
            if not source.exists():
                raise MissingArtifact(str(source))
            digest.update(source.read_bytes())
        for upstream in STAGE_ORDER[:STAGE_ORDER.index(stage)]:
            digest.update(self.artifacts.file_hash(STAGE_OUTPUTS[upstream]).encode())
        return digest.hexdigest()

    def _cache_hit(self, stage: str, input_hash: str) -> bool:
        if self.ledger is None:
            return False
        record = self.ledger.cached_stage(stage, input_hash)
        if record is None:
            return False
        names = self.ledger.artifact_paths(record)
        return self.artifacts.exists(*names) and self.artifacts.file_hash(names) == record.artifact_hash

    def run_stage(self, stage: str, run=None) -> StageReport:
        outputs = STAGE_OUTPUTS[stage] + (["divisor_best.json"] if stage == "optimize" else [])
        started = time.perf_counter()
        input_hash = ""
        try:
            input_hash = self.input_hash(stage)
            if self._cache_hit(stage, input_hash):
                logger.info(f"Stage {stage}: inputs unchanged, reusing artifacts")
                names = self.artifacts.present(outputs)
                self.ledger.record_stage(run, stage, input_hash, StageStatus.CACHED, artifacts=names,
                                         artifact_hash=self.artifacts.file_hash(names))
                return StageReport(stage=stage, status=StageStatus.CACHED.value,
                                   artifacts=[str(self.artifacts.path(n)) for n in names])

            logger.info(f"Stage {stage}: starting")
            self.artifacts.discard(outputs)
            status = self.handlers[stage]()
        except QuadLayoutError as exc:
            seconds = time.perf_counter() - started
            written = [str(self.artifacts.path(n)) for n in self.artifacts.present(outputs)]
            if self.ledger is not None:
                self.ledger.record_stage(run, stage, input_hash, StageStatus.FAILED, seconds, written,
                                         error_message=exc.detail)
            self.stage_reports.append(StageReport(stage=stage, status=StageStatus.FAILED.value, seconds=seconds,
                                                  artifacts=written, error=exc.to_dict()))
            raise StageFailed(stage, exc, written) from exc
        seconds = time.perf_counter() - started

        names = self.artifacts.present(outputs)
        if self.ledger is not None:
            self.ledger.record_stage(run, stage, input_hash, status, seconds, names, self.artifacts.file_hash(names))
        logger.info(f"Stage {stage}: {status.value} in {seconds:.3f}s")
        return StageReport(stage=stage, status=status.value, seconds=seconds,
                           artifacts=[str(self.artifacts.path(n)) for n in names])

    def run(self, run=None) -> List[StageReport]:
        for stage in self.config.stages:
            self.stage_reports.append(self.run_stage(stage, run))
        return self.stage_reports


def run_pipeline(config: PipelineConfig, db: Optional[Session] = None) -> RunReport:
    """Execute the selected stages in order and write config.json, report.json and report.txt"""
    out_dir = Path(config.out_dir)
    create_tables(out_dir)
    owns_session = db is None
    if owns_session:
        db = get_sessionmaker(ledger_url_for(out_dir))()

    try:
        pipeline = Pipeline(config, db)
        pipeline.artifacts.write_model("config.json", config)
        ledger = pipeline.ledger
        run = ledger.start_run(str(out_dir), config.mesh_path, config.model_dump_json())
        report = RunReport(run_id=run.id, mesh=config.mesh_path, config=config, hardware=hardware_info(),
                           started_at=datetime.now(timezone.utc))
        try:
            pipeline.run(run)
        except StageFailed as exc:
            ledger.finish_run(run, RunStatus.FAILED, exc.detail)
            _write_report(pipeline, report)
            raise
        ledger.finish_run(run, RunStatus.SUCCEEDED)
        _write_report(pipeline, report)
    finally:
        if owns_session:
            db.close()

    logger.info(f"Run {report.run_id} finished: {[s.status for s in report.stages]}")
    return report


def _write_report(pipeline: Pipeline, report: RunReport):
    report.stages = pipeline.stage_reports
    report.finished_at = datetime.now(timezone.utc)
    pipeline.artifacts.write_model("report.json", report)
    pipeline.artifacts.path("report.txt").write_text(report_tables(pipeline.artifacts, report))


# Report tables
def timing_table(report: RunReport) -> pd.DataFrame:
    rows = [{"stage": s.stage, "status": s.status, "seconds": round(s.seconds, 3)} for s in report.stages]
    frame = pd.DataFrame(rows, columns=["stage", "status", "seconds"])
    if not frame.empty:
        frame.loc[len(frame)] = ["total", "", round(float(frame["seconds"].sum()), 3)]
    return frame


def residual_table(artifacts: ArtifactService) -> pd.DataFrame:
    """Per-component Abel-Jacobi residual of the optimized divisor"""
    if not artifacts.exists("divisor.json"):
        return pd.DataFrame(columns=["component", "phi_re", "phi_im", "residual_abs", "s", "t"])
    image = artifacts.read_model("divisor.json", DivisorArtifact).image
    phi, residual = from_pairs(image.phi), from_pairs(image.residual)
    return pd.DataFrame({
        "component": [f"z{i + 1}" for i in range(len(phi))],
        "phi_re": phi.real,
        "phi_im": phi.imag,
        "residual_abs": np.abs(residual),
        "s": image.s,
        "t": image.t,
    })


def holonomy_frame(artifacts: ArtifactService) -> pd.DataFrame:
    if not artifacts.exists("metric.json"):
        return pd.DataFrame(columns=["loop", "degrees", "expected", "deviation"])
    rows = artifacts.read_model("metric.json", MetricArtifact).holonomy
    return pd.DataFrame([row.model_dump() for row in rows], columns=["loop", "degrees", "expected", "deviation"])


def report_tables(artifacts: ArtifactService, report: RunReport) -> str:
    hardware = ", ".join(f"{k}={v}" for k, v in report.hardware.items())
    sections = [
        f"Run {report.run_id} on {report.mesh}",
        f"Hardware: {hardware}",
        "",
        "Running time (s)",
        timing_table(report).to_string(index=False),
        "",
        "Abel-Jacobi residual",
        residual_table(artifacts).to_string(index=False),
        "",
        "Holonomy (degrees)",
        holonomy_frame(artifacts).to_string(index=False),
    ]
    return "\n".join(sections) + "\n"


# Verification
def _check(name: str, passed: bool, value: Optional[float] = None, threshold: Optional[float] = None,
           detail: Optional[str] = None) -> VerificationCheck:
    return VerificationCheck(name=name, passed=bool(passed), value=value, threshold=threshold, detail=detail)


def rebuild_metric(pipeline: Pipeline) -> Tuple[ConeMetric, ConePlacement]:
    """Replay the stored flips on the stored flow mesh and reattach the stored conformal factors"""
    artifacts = pipeline.artifacts
    stored = pipeline.metric()
    mesh = pipeline.placement_mesh()
    cones = pipeline.cones()
    tri = IntrinsicTriangulation.replay(mesh, artifacts.read_array("metric_flips.npy"))
    metric = ConeMetric(tri, artifacts.read_array("metric_u.npy"), target_curvature(mesh, cones))
    inserted = {item.vertex: SurfacePoint(item.face, tuple(item.bary)) for item in stored.inserted}
    placement = ConePlacement(mesh, cones, stored.snap_displacement,
                              artifacts.read_array("metric_halfedge_map.npy"), inserted)
    return metric, placement


def verify(out_dir, loops: Sequence[Curve] = ()) -> VerificationReport:
    """
    Recompute the checks of a finished run from its stored inputs: the Abel-Jacobi energy from the divisor,
    curvature and holonomy from the replayed metric, isometry from the exported texture coordinates and the
    cut transitions from a fresh layout. Extra loops are closed halfedge loops of the input mesh.
    """
    config = ArtifactService(out_dir).read_model("config.json", PipelineConfig)
    config = config.model_copy(update={"out_dir": str(out_dir)})
    pipeline = Pipeline(config)
    artifacts = pipeline.artifacts
    tol = settings.holonomy_tol_degrees
    checks: List[VerificationCheck] = []

    mesh = pipeline.mesh()
    homology = artifacts.read_model("homology.json", HomologyArtifact)
    checks.append(_check("genus", homology.genus == mesh.genus, homology.genus, mesh.genus))
    basis, _ = pipeline.homology()
    M = intersection_matrix(mesh, basis.ordered())
    checks.append(_check("intersection_matrix", np.array_equal(M, standard_symplectic(homology.genus)),
                         detail="standard symplectic form"))

    periods = artifacts.read_model("periods.json", PeriodsArtifact)
    checks.append(_check("period_symmetry", periods.symmetry_error <= 1e-6, periods.symmetry_error, 1e-6))
    checks.append(_check("period_positive_imaginary", periods.imag_min_eigenvalue > 0,
                         periods.imag_min_eigenvalue, 0.0))

    art = pipeline.divisor()
    divisor, reference = _divisor(art.divisor), _divisor(art.reference)
    degree = 8 * mesh.genus - 8
    checks.append(_check("divisor_degree", divisor.degree == degree, divisor.degree, degree))
    image = abel_jacobi_divisor(pipeline.ajmap(), divisor + reference.negated(), pipeline.lattice(),
                                approximate=config.approximate)
    energy = image.residual_norm ** 2
    checks.append(_check("abel_jacobi_energy", energy <= art.epsilon * (1 + 1e-9), energy, art.epsilon))

    metric, placement = rebuild_metric(pipeline)
    residual = pipeline.cone_residual(placement, reference)
    limit = pipeline.metric().residual_limit
    checks.append(_check("cone_residual", residual <= limit * (1 + 1e-9), residual, limit))
    error = float(np.max(np.abs(metric.target - metric.curvature())))
    checks.append(_check("ricci_max_error", error <= config.ricci_tol, error, config.ricci_tol))
    final = metric.mesh()
    total = float(angle_defect_curvature(final).sum())
    expected = 2.0 * np.pi * mesh.euler_characteristic
    checks.append(_check("gauss_bonnet", abs(total - expected) <= 1e-8, total, expected))

    for curve in loops:
        if not (curve.closed and curve.is_consistent(mesh)):
            raise QuadLayoutError(f"Loop {curve.tag} is not a closed halfedge loop of the input mesh", loop=curve.tag)
    curves = [placement.remap(curve) for curve in list(basis.ordered()) + list(loops)]
    rows = holonomy_table(metric, placement.mesh, curves)
    table = holonomy_rows(metric, placement.orders, rows)
    missing = sorted({curve.tag for curve in curves} - {row.loop for row in table})
    worst = max((row.deviation for row in table), default=0.0)
    checks.append(_check("holonomy", worst <= tol and not missing, worst, tol,
                         detail=f"skipped loops {missing}" if missing else None))

    immersion = artifacts.read_model("immersion.json", ImmersionArtifact)
    coords = corner_coords_from_obj(artifacts.require("immersion.obj"), config.checker_scale)
    isometry = planar_length_error(coords, final.halfedge_lengths)
    checks.append(_check("isometry", isometry <= 1e-8, isometry, 1e-8))
    layout = flatten(final, _curve_graph(immersion.cut), seed_face=immersion.seed_face)
    gap, _ = transition_deviation(layout)
    checks.append(_check("transition_rotations", gap <= tol, gap, tol))

    summary = artifacts.read_model("tmesh_summary.json", TMeshArtifact)
    if summary.skipped:
        checks.append(_check("tmesh", True, detail="skipped: no cones"))
    else:
        document = load_tmesh(artifacts.require("tmesh.json"))
        area_error = summary.area_error if summary.area_error is not None else float("inf")
        checks.append(_check("tmesh_area", area_error <= 1e-6, area_error, 1e-6))
        checks.append(_check("tmesh_document", len(document.patches) == summary.patches, len(document.patches),
                             summary.patches))

    report = VerificationReport(out_dir=str(out_dir), checks=checks)
    failed = [c.name for c in checks if not c.passed]
    if failed:
        logger.warning(f"Verification of {out_dir} failed: {failed}")
    else:
        logger.info(f"Verification of {out_dir} passed {len(checks)} checks")
    return report
