"""
Error types raised by the quadlayout services
"""
from typing import Any, Dict, List, Optional


class QuadLayoutError(Exception):
    """Base error; `detail` is the human message, `code` a stable identifier"""

    code: str = "quadlayout_error"

    def __init__(self, detail: str, **context: Any):
        super().__init__(detail)
        self.detail = detail
        self.context: Dict[str, Any] = context

    def to_dict(self) -> Dict[str, Any]:
        payload = {"code": self.code, "message": self.detail}
        for key, value in self.context.items():
            if isinstance(value, (str, int, float, bool, list, dict)) or value is None:
                payload[key] = value
        return payload


# Mesh errors
class NonManifoldEdge(QuadLayoutError):
    code = "non_manifold_edge"

    def __init__(self, edge: tuple):
        super().__init__(f"Non-manifold edge {edge}", edge=list(edge))


class NonManifoldVertex(QuadLayoutError):
    code = "non_manifold_vertex"

    def __init__(self, vertex: int):
        super().__init__(f"Vertex {vertex} has a disconnected fan", vertex=vertex)


class NonTriangleFace(QuadLayoutError):
    code = "non_triangle_face"

    def __init__(self, face: int, size: int):
        super().__init__(f"Face {face} has {size} vertices, expected 3", face=face)
        self.face = face


class BoundaryPresent(QuadLayoutError):
    code = "boundary_present"

    def __init__(self, edge: tuple):
        super().__init__(f"Boundary edge {edge}: only closed meshes are supported", edge=list(edge))


class MultipleComponents(QuadLayoutError):
    code = "multiple_components"

    def __init__(self, count: int):
        super().__init__(f"Mesh has {count} connected components, expected 1", components=count)
        self.count = count


class DegenerateFace(QuadLayoutError):
    code = "degenerate_face"

    def __init__(self, face: int):
        super().__init__(f"Face {face} is degenerate (zero area)", face=face)
        self.face = face


class TriangleInequality(QuadLayoutError):
    code = "triangle_inequality"

    def __init__(self, face: int):
        super().__init__(f"Face {face} violates the triangle inequality", face=face)
        self.face = face


class CutDisconnects(QuadLayoutError):
    code = "cut_disconnects"

    def __init__(self, components: int):
        super().__init__(f"Cut splits the surface into {components} components", components=components)
        self.components = components


# Homology errors
class GenusZeroUnsupported(QuadLayoutError):
    code = "genus_zero_unsupported"

    def __init__(self):
        super().__init__("Genus-0 surfaces carry no holomorphic 1-forms")


class AmbiguousCrossing(QuadLayoutError):
    code = "ambiguous_crossing"


class DeficientBasis(QuadLayoutError):
    code = "deficient_basis"

    def __init__(self, rank: int, expected: int):
        super().__init__(f"Loops span rank {rank}, expected {expected}", rank=rank, expected=expected)
        self.rank = rank


# One-form errors
class SolverFailure(QuadLayoutError):
    code = "solver_failure"

    def __init__(self, residual: float, tolerance: float):
        super().__init__(f"Linear solve residual {residual:.3e} exceeds {tolerance:.1e}",
                         residual=residual, tolerance=tolerance)
        self.residual = residual


class RankDeficiency(QuadLayoutError):
    code = "rank_deficiency"

    def __init__(self, rank: int, expected: int):
        super().__init__(f"Numerical rank {rank} of the a-period matrix, expected {expected}",
                         rank=rank, expected=expected)
        self.rank = rank


class IllConditioned(QuadLayoutError):
    code = "ill_conditioned"

    def __init__(self, condition: float):
        super().__init__(f"a-period matrix condition number {condition:.3e} is too large",
                         condition=condition)


class DegreeMismatch(QuadLayoutError):
    code = "degree_mismatch"

    def __init__(self, found: int, expected: int):
        super().__init__(f"Zero divisor has degree {found}, expected {expected}",
                         found=found, expected=expected)
        self.found = found
        self.expected = expected


# Jacobian errors
class NormalizationBroken(QuadLayoutError):
    code = "normalization_broken"


class LatticeDegenerate(QuadLayoutError):
    code = "lattice_degenerate"


class PointOnCut(QuadLayoutError):
    code = "point_on_cut"

    def __init__(self, face: int):
        super().__init__(f"Point in face {face} lies on the cut graph", face=face)
        self.face = face


class LatticeDimensionTooLarge(QuadLayoutError):
    code = "lattice_dimension_too_large"

    def __init__(self, dimension: int, cap: int):
        super().__init__(f"Lattice dimension {dimension} exceeds the exact-search cap {cap}; "
                         f"rerun with approximate reduction enabled", dimension=dimension, cap=cap)


# Divisor errors
class InsufficientCriticalPoints(QuadLayoutError):
    code = "insufficient_critical_points"

    def __init__(self, found: int, needed: int):
        super().__init__(f"Found {found} curvature extrema, needed {needed}", found=found, needed=needed)


class OptimizationDidNotConverge(QuadLayoutError):
    code = "optimization_did_not_converge"

    def __init__(self, iterations: int, energy: float, best_state: Any = None):
        super().__init__(f"Divisor optimization stopped after {iterations} iterations at energy {energy:.3e}",
                         iterations=iterations, energy=energy)
        self.best_state = best_state


# Metric errors
class GaussBonnetViolation(QuadLayoutError):
    code = "gauss_bonnet_violation"

    def __init__(self, total: float, expected: float):
        super().__init__(f"Target curvature sums to {total:.12f}, expected {expected:.12f}",
                         total=total, expected=expected)


class RicciStalled(QuadLayoutError):
    code = "ricci_stalled"

    def __init__(self, max_error: float, iterations: int, last_state: Any = None):
        super().__init__(f"Ricci flow stalled after {iterations} iterations, max curvature error {max_error:.3e}",
                         max_error=max_error, iterations=iterations)
        self.last_state = last_state


class ConeOnLoop(QuadLayoutError):
    code = "cone_on_loop"

    def __init__(self, vertex: int):
        super().__init__(f"Loop passes through cone vertex {vertex}", vertex=vertex)


class SnapResidualTooLarge(QuadLayoutError):
    code = "snap_residual_too_large"

    def __init__(self, residual: float, limit: float):
        super().__init__(f"Abel-Jacobi residual component {residual:.3e} after placing cones exceeds {limit:.3e}",
                         residual=residual, limit=limit)


class HolonomyNotQuantized(QuadLayoutError):
    code = "holonomy_not_quantized"

    def __init__(self, name: str, degrees: float, deviation: float):
        super().__init__(f"Rotation of {name} is {degrees:.5f} deg, {deviation:.4f} deg off a quarter turn",
                         name=name, degrees=degrees, deviation=deviation)


# Immersion errors
class AugmentationFailed(QuadLayoutError):
    code = "augmentation_failed"

    def __init__(self, vertex: int):
        super().__init__(f"No disjoint path from cone {vertex} to the cut graph; refine the mesh", vertex=vertex)


class ZeroScale(QuadLayoutError):
    code = "zero_scale"

    def __init__(self):
        super().__init__("Texture scale must be nonzero")


# T-mesh errors
class ConeAngleMismatch(QuadLayoutError):
    code = "cone_angle_mismatch"

    def __init__(self, vertex: int, degrees: float):
        super().__init__(f"Cone angle {degrees:.4f} deg at vertex {vertex} is not a quarter-turn multiple",
                         vertex=vertex, degrees=degrees)


class TraceFailure(QuadLayoutError):
    code = "trace_failure"

    def __init__(self, face: int):
        super().__init__(f"Trajectory could not exit face {face}", face=face)


class NonRectangularPatch(QuadLayoutError):
    code = "non_rectangular_patch"

    def __init__(self, cycle: List[Any], corners: int):
        super().__init__(f"Arrangement face with {corners} right-angle corners is not a rectangle",
                         corners=corners, cycle=[str(step) for step in cycle])
        self.cycle = cycle


class InvalidMotorGraph(QuadLayoutError):
    code = "invalid_motor_graph"

    def __init__(self, node: int, ends: int, expected: int, vertex: Optional[int] = None):
        where = f"cone vertex {vertex}" if vertex is not None else f"node {node}"
        super().__init__(f"Motor graph {where} has {ends} arc-ends, expected {expected}",
                         node=node, ends=ends, expected=expected, vertex=vertex)


class OpenTrajectories(QuadLayoutError):
    code = "open_trajectories"

    def __init__(self, trajectories: List[int]):
        super().__init__(f"{len(trajectories)} trajectories end without reaching a cone or another trajectory",
                         trajectories=trajectories)


class EmptyTMesh(QuadLayoutError):
    code = "empty_tmesh"

    def __init__(self):
        super().__init__("T-mesh has no patches")


# Pipeline errors
class MissingArtifact(QuadLayoutError):
    code = "missing_artifact"

    def __init__(self, path: str):
        super().__init__(f"Missing stage artifact {path}", path=path)


class StageFailed(QuadLayoutError):
    code = "stage_failed"

    def __init__(self, stage: str, cause: QuadLayoutError, artifacts: Optional[List[str]] = None):
        super().__init__(f"Stage '{stage}' failed: {cause.detail}", stage=stage,
                         cause=cause.code, artifacts=artifacts or [])
        self.stage = stage
        self.cause = cause
