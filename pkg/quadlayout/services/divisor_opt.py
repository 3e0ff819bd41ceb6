"""
Singularity divisor: Gauss-Bonnet initialization and gradient descent on the Abel-Jacobi energy
"""
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from ..core.config import settings
from ..core.errors import InsufficientCriticalPoints, OptimizationDidNotConverge, QuadLayoutError
from .jacobi import AbelJacobiImage, AbelJacobiMap, JacobianLattice, reduce_mod_lattice
from .mesh_core import Divisor, DivisorTerm, SurfaceMesh, SurfacePoint, angle_defect_curvature

logger = logging.getLogger(__name__)

SINGULARITY_COLORS: Dict[int, Tuple[int, int, int]] = {
    1: (220, 40, 40),     # red, valence 5
    -1: (40, 80, 220),    # blue, valence 3
    -2: (40, 170, 60),    # green, valence 2
}
DEFAULT_COLOR = (128, 128, 128)


def singularity_color(order: int) -> Tuple[int, int, int]:
    return SINGULARITY_COLORS.get(int(order), DEFAULT_COLOR)


def target_degree(mesh: SurfaceMesh) -> int:
    return 8 * mesh.genus - 8


def _local_extrema(mesh: SurfaceMesh, K: np.ndarray, maxima: bool) -> List[int]:
    sign = -1.0 if maxima else 1.0
    out = []
    for v in range(mesh.n_vertices):
        key = (sign * K[v], v)
        if all(key < (sign * K[w], w) for w in mesh.neighbors(v) if w != v):
            out.append(v)
    return sorted(out, key=lambda v: (sign * K[v], v))


def initialize_divisor(mesh: SurfaceMesh, features: Optional[Divisor] = None) -> Divisor:
    """Fill the degree deficit to 8g - 8 with +1 points at curvature minima or -1 points at maxima"""
    features = features or Divisor()
    deficit = target_degree(mesh) - features.degree
    if deficit == 0:
        return features

    K = angle_defect_curvature(mesh)
    order = 1 if deficit > 0 else -1
    candidates = _local_extrema(mesh, K, maxima=order < 0)
    occupied = {int(v) for term in features for v in mesh.faces[term.point.face]}
    candidates = [v for v in candidates if v not in occupied]
    needed = abs(deficit)
    if len(candidates) < needed:
        raise InsufficientCriticalPoints(len(candidates), needed)

    used_faces = {term.point.face for term in features}
    terms = list(features.terms)
    for v in candidates[:needed]:
        faces = sorted(h // 3 for h in mesh.outgoing(v))
        face = next((f for f in faces if f not in used_faces), faces[0])
        used_faces.add(face)
        terms.append(DivisorTerm(SurfacePoint.barycenter(face), order))
    divisor = Divisor(tuple(terms))
    logger.info(f"Initial divisor: {len(divisor)} points, degree {divisor.degree} "
                f"({needed} added with order {order:+d})")
    return divisor


@dataclass
class OptimizationState:
    divisor: Divisor
    reference: Divisor
    s: np.ndarray
    t: np.ndarray
    energy: float = float("inf")
    residual: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=complex))
    gradient: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=complex))
    iteration: int = 0
    step: float = 0.0

    @property
    def integers(self) -> np.ndarray:
        return np.concatenate([self.s, self.t])


class DivisorOptimizer:
    """Moves divisor points within their face charts, crossing edges and the cut as needed"""

    def __init__(self, mesh: SurfaceMesh, ajmap: AbelJacobiMap, lattice: JacobianLattice,
                 reference: Divisor, merge: bool = False):
        self.mesh = mesh
        self.ajmap = ajmap
        self.lattice = lattice
        self.reference = reference
        self.merge = merge
        self.reference_image = ajmap.divisor_image(reference)
        self.face_scale = mesh.face_lengths.mean(axis=1)
        self.shortest = lattice.shortest_vector_length()
        # barycentric coordinates from chart positions
        charts = ajmap.charts
        self._frames = np.stack([charts[:, 1] - charts[:, 0], charts[:, 2] - charts[:, 0]], axis=1)

    # State
    def residual(self, divisor: Divisor, integers: np.ndarray) -> np.ndarray:
        return (self.ajmap.divisor_image(divisor) - self.reference_image
                - self.lattice.generators @ integers.astype(float))

    def evaluate(self, state: OptimizationState) -> OptimizationState:
        r = self.residual(state.divisor, state.integers)
        state.residual = r
        state.energy = float(np.sum(np.abs(r) ** 2))
        return state

    def solve_integers(self, state: OptimizationState) -> OptimizationState:
        image = reduce_mod_lattice(self.ajmap.divisor_image(state.divisor) - self.reference_image, self.lattice)
        state.s, state.t = image.s, image.t
        return self.evaluate(state)

    def gradient(self, state: OptimizationState) -> np.ndarray:
        """dE/dx + i dE/dy per point in its face chart"""
        r = state.residual
        out = np.zeros(len(state.divisor), dtype=complex)
        for i, term in enumerate(state.divisor):
            a, b = self.ajmap.face_coefficients(term.point.face)
            gx = 2.0 * term.order * np.sum((np.conj(r) * a).real)
            gy = 2.0 * term.order * np.sum((np.conj(r) * b).real)
            out[i] = gx + 1j * gy
        state.gradient = out
        return out

    # Motion
    def _bary_of(self, face: int, z: complex) -> np.ndarray:
        e1, e2 = self._frames[face]
        w = z - self.ajmap.charts[face, 0]
        det = e1.real * e2.imag - e1.imag * e2.real
        l1 = (w.real * e2.imag - w.imag * e2.real) / det
        l2 = (e1.real * w.imag - e1.imag * w.real) / det
        return np.array([1.0 - l1 - l2, l1, l2])

    def move_point(self, point: SurfacePoint, displacement: complex, order: int
                   ) -> Tuple[SurfacePoint, float, np.ndarray]:
        """Move within the face, stopping on the first edge crossed and stepping into the neighbour.

        Returns the new point, the fraction of the displacement realized, and the shift of the
        held lattice integers when the crossed edge lies on the cut.
        """
        mesh = self.mesh
        shift = np.zeros(self.lattice.dimension, dtype=np.int64)
        start = np.asarray(point.bary)
        end = self._bary_of(point.face, self.ajmap.chart_position(point) + displacement)
        if np.all(end >= 0.0):
            return SurfacePoint.normalized(point.face, end), 1.0, shift

        # first coordinate reaching zero
        fractions = np.where(end < 0.0, start / np.maximum(start - end, 1e-300), np.inf)
        j = int(np.argmin(fractions))
        tau = float(np.clip(fractions[j], 0.0, 1.0))
        on_edge = start + tau * (end - start)
        h = 3 * point.face + (j + 1) % 3
        u = on_edge[(j + 2) % 3] / max(on_edge[(j + 1) % 3] + on_edge[(j + 2) % 3], 1e-300)
        u = float(np.clip(u, 1e-9, 1.0 - 1e-9))

        twin = int(mesh.twin[h])
        kt = twin % 3
        bary = np.zeros(3)
        bary[kt] = u
        bary[(kt + 1) % 3] = 1.0 - u
        bary[(kt + 2) % 3] = settings.graze_offset
        if self.ajmap.cut_edge[mesh.edge_of[h]]:
            shift = order * self.lattice.integer_coordinates(self.ajmap.jump(h))
        return SurfacePoint.normalized(twin // 3, bary), tau, shift

    def _separated(self, divisor: Divisor) -> bool:
        by_face: Dict[int, List[SurfacePoint]] = {}
        for term in divisor:
            by_face.setdefault(term.point.face, []).append(term.point)
        for face, points in by_face.items():
            if len(points) < 2:
                continue
            limit = settings.min_separation * self.face_scale[face]
            z = [self.ajmap.chart_position(p) for p in points]
            for i in range(len(z)):
                for k in range(i + 1, len(z)):
                    if abs(z[i] - z[k]) < limit:
                        return False
        return True

    def merge_coincident(self, divisor: Divisor) -> Divisor:
        """Fuse same-sign points closer than the minimum separation"""
        terms = list(divisor.terms)
        merged = True
        while merged:
            merged = False
            for i in range(len(terms)):
                for k in range(i + 1, len(terms)):
                    a, b = terms[i], terms[k]
                    if a.point.face != b.point.face or np.sign(a.order) != np.sign(b.order):
                        continue
                    limit = settings.min_separation * self.face_scale[a.point.face]
                    if abs(self.ajmap.chart_position(a.point) - self.ajmap.chart_position(b.point)) < limit:
                        terms[i] = DivisorTerm(a.point, a.order + b.order)
                        del terms[k]
                        merged = True
                        break
                if merged:
                    break
        if len(terms) < len(divisor):
            logger.info(f"Merged {len(divisor) - len(terms)} coincident points")
        return Divisor(tuple(terms))

    def trial(self, state: OptimizationState, alpha: float) -> Tuple[Optional[OptimizationState], float]:
        """Displace every point by -alpha * local scale * g / max|g|; returns the state and its slope"""
        g = state.gradient
        gmax = float(np.max(np.abs(g)))
        points = []
        integers = state.integers.copy()
        slope = 0.0
        for term, gi in zip(state.divisor, g):
            d = -alpha * self.face_scale[term.point.face] * gi / gmax
            point, tau, shift = self.move_point(term.point, d, term.order)
            slope += tau * float((np.conj(gi) * d).real)
            integers += shift
            points.append(point)
        divisor = state.divisor.with_points(points)
        if self.merge:
            divisor = self.merge_coincident(divisor)
        elif not self._separated(divisor):
            return None, slope
        g_count = self.lattice.genus
        candidate = OptimizationState(divisor, state.reference, integers[:g_count], integers[g_count:],
                                      iteration=state.iteration + 1, step=alpha)
        return self.evaluate(candidate), slope


def divisor_energy(optimizer: DivisorOptimizer, state: OptimizationState) -> float:
    return optimizer.evaluate(state).energy


def divisor_gradient(optimizer: DivisorOptimizer, state: OptimizationState) -> np.ndarray:
    optimizer.evaluate(state)
    return optimizer.gradient(state)


def converged(state: OptimizationState, epsilon: float, residual_tol: float) -> bool:
    """Energy at most epsilon and every residual component at most residual_tol in modulus"""
    if state.energy > epsilon:
        return False
    return not len(state.residual) or float(np.max(np.abs(state.residual))) <= residual_tol


def optimize_divisor(mesh: SurfaceMesh, ajmap: AbelJacobiMap, lattice: JacobianLattice, initial: Divisor,
                     reference: Divisor, epsilon: Optional[float] = None, max_iters: Optional[int] = None,
                     merge: bool = False, trace_path: Optional[Union[str, Path]] = None,
                     residual_tol: Optional[float] = None) -> Tuple[Divisor, AbelJacobiImage, OptimizationState]:
    """Gradient descent until |mu(D - 4(phi))|^2 <= epsilon and each residual component is within residual_tol"""
    epsilon = settings.epsilon if epsilon is None else epsilon
    residual_tol = settings.residual_tol if residual_tol is None else residual_tol
    max_iters = settings.optimizer_max_iters if max_iters is None else max_iters
    if initial.degree != reference.degree:
        raise QuadLayoutError(f"Divisor degree {initial.degree} differs from reference degree {reference.degree}")

    optimizer = DivisorOptimizer(mesh, ajmap, lattice, reference, merge=merge)
    zeros = np.zeros(lattice.genus, dtype=np.int64)
    state = optimizer.solve_integers(OptimizationState(initial, reference, zeros, zeros.copy()))
    best = replace(state)
    rows = [_trace_row(state)]
    alpha = settings.initial_step_factor

    try:
        while not converged(state, epsilon, residual_tol):
            if state.iteration >= max_iters:
                raise OptimizationDidNotConverge(state.iteration, best.energy, best)
            g = optimizer.gradient(state)
            if not np.any(g):
                raise OptimizationDidNotConverge(state.iteration, best.energy, best)

            accepted = None
            alpha = min(2.0 * alpha, settings.initial_step_factor)
            while alpha > 1e-14:
                candidate, slope = optimizer.trial(state, alpha)
                if candidate is not None and candidate.energy < state.energy + settings.armijo_constant * slope:
                    accepted = candidate
                    break
                alpha *= 0.5
            if accepted is None:
                previous = state.integers.copy()
                state = optimizer.solve_integers(state)
                if np.array_equal(previous, state.integers):
                    raise OptimizationDidNotConverge(state.iteration, best.energy, best)
                continue

            state = accepted
            if np.linalg.norm(state.residual) > 0.5 * optimizer.shortest:
                state = optimizer.solve_integers(state)
            if state.energy < best.energy:
                best = replace(state)
            rows.append(_trace_row(state))
            if state.iteration % 1000 == 0:
                logger.info(f"iteration {state.iteration}: E={state.energy:.3e} step={state.step:.2e}")
    finally:
        if trace_path is not None:
            write_trace(rows, trace_path)

    image = reduce_mod_lattice(ajmap.divisor_image(state.divisor) - optimizer.reference_image, lattice)
    logger.info(f"Divisor optimization converged in {state.iteration} iterations, E={state.energy:.3e}")
    return state.divisor, image, state


def _trace_row(state: OptimizationState) -> Dict[str, float]:
    return {
        "iteration": state.iteration,
        "energy": state.energy,
        "residual_norm": float(np.linalg.norm(state.residual)),
        "step": state.step,
    }


def write_trace(rows: List[Dict[str, float]], path: Union[str, Path]) -> Path:
    path = Path(path)
    pd.DataFrame(rows, columns=["iteration", "energy", "residual_norm", "step"]).to_csv(path, index=False)
    return path
