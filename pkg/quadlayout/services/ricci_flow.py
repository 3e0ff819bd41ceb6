"""
Discrete Ricci flow to a flat cone metric on an intrinsic Delaunay triangulation, and loop holonomy
"""
import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Set, Tuple, Union

import numpy as np
import pandas as pd
from scipy.sparse import coo_matrix, csr_matrix
from scipy.sparse.linalg import spsolve

from ..core.config import settings
from ..core.errors import ConeOnLoop, GaussBonnetViolation, QuadLayoutError, RicciStalled, TriangleInequality
from .homology import HomologyBasis, link_loop
from .mesh_core import (
    Curve,
    Divisor,
    DivisorTerm,
    SurfaceMesh,
    SurfacePoint,
    barycentric,
    cotan_opposite,
    face_charts,
    next_halfedge,
    prev_halfedge,
    triangle_angles,
)

logger = logging.getLogger(__name__)


class FlipRecord(NamedTuple):
    """Edge e = (i, j) replaced by (k, l) with base length beta; the four outer edge ids survive the flip"""
    edge: int
    i: int
    j: int
    k: int
    l: int
    e_jk: int
    e_ki: int
    e_il: int
    e_lj: int
    beta: float


class IntrinsicTriangulation:
    """Connectivity that evolves by edge flips, with per-edge base lengths beta"""

    def __init__(self, mesh: SurfaceMesh):
        self.positions = mesh.positions
        self.faces = np.array(mesh.faces, dtype=np.int64)
        self.twin = np.array(mesh.twin, dtype=np.int64)
        self.edge_of = np.array(mesh.edge_of, dtype=np.int64)
        self.edge_halfedge = np.array(mesh.edge_halfedge, dtype=np.int64)
        self.beta = np.array(mesh.edge_lengths, dtype=float)
        self.flips: List[FlipRecord] = []

    def copy(self) -> "IntrinsicTriangulation":
        other = object.__new__(IntrinsicTriangulation)
        other.positions = self.positions
        other.faces = self.faces.copy()
        other.twin = self.twin.copy()
        other.edge_of = self.edge_of.copy()
        other.edge_halfedge = self.edge_halfedge.copy()
        other.beta = self.beta.copy()
        other.flips = list(self.flips)
        return other

    @property
    def n_vertices(self) -> int:
        return len(self.positions)

    @property
    def n_edges(self) -> int:
        return len(self.beta)

    @property
    def tail(self) -> np.ndarray:
        return self.faces.ravel()

    @property
    def tip(self) -> np.ndarray:
        return self.faces[:, [1, 2, 0]].ravel()

    def halfedge_lengths(self, u: np.ndarray) -> np.ndarray:
        return self.beta[self.edge_of] * np.exp(0.5 * (u[self.tail] + u[self.tip]))

    def edge_lengths(self, u: np.ndarray) -> np.ndarray:
        return self.halfedge_lengths(u)[self.edge_halfedge]

    def is_valid(self, u: np.ndarray) -> bool:
        _, invalid = triangle_angles(self.halfedge_lengths(u).reshape(-1, 3))
        return not np.any(invalid)

    def angles(self, u: np.ndarray) -> np.ndarray:
        angles, invalid = triangle_angles(self.halfedge_lengths(u).reshape(-1, 3))
        if np.any(invalid):
            raise TriangleInequality(int(np.flatnonzero(invalid)[0]))
        return angles

    def curvature(self, u: np.ndarray) -> np.ndarray:
        total = np.bincount(self.tail, weights=self.angles(u).ravel(), minlength=self.n_vertices)
        return 2.0 * np.pi - total

    def delaunay_sum(self, e: int, u: np.ndarray) -> float:
        """cot alpha + cot beta of the angles opposite edge e"""
        h = int(self.edge_halfedge[e])
        t = int(self.twin[h])
        lengths = self.halfedge_lengths(u).reshape(-1, 3)
        cot = cotan_opposite(lengths[[h // 3, t // 3]])
        return float(cot[0, h % 3] + cot[1, t % 3])

    def flip(self, e: int, u: np.ndarray) -> Optional[FlipRecord]:
        h = int(self.edge_halfedge[e])
        t = int(self.twin[h])
        if h // 3 == t // 3:
            return None
        k, l = int(self.faces.ravel()[prev_halfedge(h)]), int(self.faces.ravel()[prev_halfedge(t)])

        # new diagonal length from the unfolded quad
        lengths = self.halfedge_lengths(u)
        l_ij, l_jk, l_ki = lengths[h], lengths[next_halfedge(h)], lengths[prev_halfedge(h)]
        l_il, l_lj = lengths[next_halfedge(t)], lengths[prev_halfedge(t)]
        pk = _apex(l_ij, l_ki, l_jk)
        pl = np.conj(_apex(l_ij, l_il, l_lj))
        diagonal = abs(pk - pl)
        return self.reconnect(e, diagonal / np.exp(0.5 * (u[k] + u[l])))

    def reconnect(self, e: int, beta: float) -> Optional[FlipRecord]:
        """Flip edge e and give the new diagonal base length beta"""
        h = int(self.edge_halfedge[e])
        t = int(self.twin[h])
        f0, f1 = h // 3, t // 3
        if f0 == f1:
            return None
        h_next, h_prev = next_halfedge(h), prev_halfedge(h)
        t_next, t_prev = next_halfedge(t), prev_halfedge(t)
        i, j = int(self.faces.ravel()[h]), int(self.faces.ravel()[t])
        k, l = int(self.faces.ravel()[h_prev]), int(self.faces.ravel()[t_prev])

        e_jk, e_ki = int(self.edge_of[h_next]), int(self.edge_of[h_prev])
        e_il, e_lj = int(self.edge_of[t_next]), int(self.edge_of[t_prev])
        slots = {h_prev: 3 * f0, t_next: 3 * f0 + 1, t_prev: 3 * f1, h_next: 3 * f1 + 1}
        old_twin = {old: int(self.twin[old]) for old in slots}

        self.faces[f0] = (k, i, l)
        self.faces[f1] = (l, j, k)
        for old, slot in slots.items():
            partner = slots.get(old_twin[old], old_twin[old])
            self.twin[slot] = partner
            self.twin[partner] = slot
        self.twin[3 * f0 + 2] = 3 * f1 + 2
        self.twin[3 * f1 + 2] = 3 * f0 + 2

        for slot, edge in ((3 * f0, e_ki), (3 * f0 + 1, e_il), (3 * f1, e_lj), (3 * f1 + 1, e_jk),
                           (3 * f0 + 2, e), (3 * f1 + 2, e)):
            self.edge_of[slot] = edge
            self.edge_halfedge[edge] = slot
        self.beta[e] = beta

        record = FlipRecord(e, i, j, k, l, e_jk, e_ki, e_il, e_lj, float(beta))
        self.flips.append(record)
        return record

    @classmethod
    def replay(cls, mesh: SurfaceMesh, flips: np.ndarray) -> "IntrinsicTriangulation":
        """Rebuild a flipped triangulation from rows (edge, beta) in flip order"""
        tri = cls(mesh)
        for edge, beta in np.asarray(flips, dtype=float).reshape(-1, 2):
            if not 0 <= int(edge) < tri.n_edges or tri.reconnect(int(edge), float(beta)) is None:
                raise QuadLayoutError(f"Recorded flip of edge {int(edge)} is not flippable")
        return tri

    def flip_table(self) -> np.ndarray:
        return np.array([(record.edge, record.beta) for record in self.flips], dtype=float).reshape(-1, 2)

    def make_delaunay(self, u: np.ndarray, threshold: float = -1e-12) -> int:
        queue = deque(range(self.n_edges))
        queued = set(queue)
        count = 0
        limit = 100 * self.n_edges
        while queue and count < limit:
            e = queue.popleft()
            queued.discard(e)
            if self.delaunay_sum(e, u) >= threshold:
                continue
            record = self.flip(e, u)
            if record is None:
                continue
            count += 1
            for neighbor in (record.e_jk, record.e_ki, record.e_il, record.e_lj):
                if neighbor not in queued:
                    queue.append(neighbor)
                    queued.add(neighbor)
        if count:
            logger.info(f"Intrinsic Delaunay: {count} flips")
        return count

    def to_mesh(self, u: np.ndarray) -> SurfaceMesh:
        return SurfaceMesh.from_halfedges(self.positions, self.faces, self.twin, self.halfedge_lengths(u))

    def halfedge_for(self, edge: int, origin: int) -> int:
        h = int(self.edge_halfedge[edge])
        if self.faces.ravel()[h] == origin:
            return h
        return int(self.twin[h])


def _apex(base: float, left: float, right: float) -> complex:
    """Third vertex of a triangle on [0, base] with |apex| = left and |apex - base| = right, above the axis"""
    x = (base ** 2 + left ** 2 - right ** 2) / (2.0 * base)
    y = np.sqrt(max(left ** 2 - x ** 2, 0.0))
    return complex(x, y)


@dataclass
class ConeMetric:
    triangulation: IntrinsicTriangulation
    u: np.ndarray
    target: np.ndarray
    iterations: int = 0
    max_error: float = 0.0
    energy_history: List[float] = field(default_factory=list)

    @property
    def flips(self) -> List[FlipRecord]:
        return self.triangulation.flips

    @property
    def edge_lengths(self) -> np.ndarray:
        return self.triangulation.edge_lengths(self.u)

    @property
    def cone_vertices(self) -> np.ndarray:
        return np.flatnonzero(np.abs(self.target) > 1e-12)

    def mesh(self) -> SurfaceMesh:
        return self.triangulation.to_mesh(self.u)

    def curvature(self) -> np.ndarray:
        return self.triangulation.curvature(self.u)


def snap_divisor(mesh: SurfaceMesh, divisor: Divisor) -> Tuple[Dict[int, int], List[float]]:
    """Move each point to the nearest corner of its face; orders landing on one vertex add up"""
    orders: Dict[int, int] = {}
    displacement = []
    charts = face_charts(mesh.face_lengths)
    for term in divisor:
        f = term.point.face
        z = np.asarray(term.point.bary) @ charts[f]
        distances = np.abs(charts[f] - z)
        k = int(np.argmin(distances))
        v = int(mesh.faces[f, k])
        orders[v] = orders.get(v, 0) + term.order
        displacement.append(float(distances[k]))
    orders = {v: n for v, n in sorted(orders.items()) if n != 0}
    if displacement:
        logger.info(f"Snapped {len(divisor)} points to {len(orders)} vertices, "
                    f"max displacement {max(displacement):.3e}")
    return orders, displacement


@dataclass(frozen=True)
class ConePlacement:
    """Cone orders on the mesh the flow runs on, which may refine the input mesh at divisor points"""
    mesh: SurfaceMesh
    orders: Dict[int, int]
    displacement: List[float]
    halfedge_map: np.ndarray
    inserted: Dict[int, SurfacePoint] = field(default_factory=dict)

    @classmethod
    def snapped(cls, mesh: SurfaceMesh, divisor: Divisor) -> "ConePlacement":
        orders, displacement = snap_divisor(mesh, divisor)
        return cls(mesh, orders, displacement, np.arange(mesh.n_halfedges))

    @property
    def refined(self) -> bool:
        return bool(self.inserted)

    def remap(self, curve: Curve) -> Curve:
        """A curve of the input mesh on the placement mesh; refinement keeps every input edge"""
        return Curve(curve.tag, tuple(int(self.halfedge_map[h]) for h in curve.halfedges), curve.closed)

    def source_point(self, source: SurfaceMesh, v: int) -> SurfacePoint:
        if v in self.inserted:
            return self.inserted[v]
        h = int(source.vertex_halfedge[v])
        return SurfacePoint.at_corner(h // 3, h % 3)

    def source_divisor(self, source: SurfaceMesh) -> Divisor:
        return Divisor(tuple(DivisorTerm(self.source_point(source, v), n) for v, n in self.orders.items()))


def refine_at_divisor(mesh: SurfaceMesh, divisor: Divisor, margin: Optional[float] = None) -> ConePlacement:
    """
    Insert every divisor point as a vertex by splitting the face holding it. Points within the margin
    (in barycentric terms) of a vertex merge onto it; points that close to an edge move inside the face.
    """
    margin = settings.refine_margin if margin is None else margin
    charts = face_charts(mesh.face_lengths)
    positions = [np.asarray(p, dtype=float) for p in mesh.positions]
    faces = mesh.faces.tolist()
    halfedge_map = np.arange(mesh.n_halfedges)
    original_of = {h: h for h in range(mesh.n_halfedges)}
    children: Dict[int, List[int]] = {}
    chart_at: Dict[int, Dict[int, complex]] = {}
    orders: Dict[int, int] = {}
    displacement: List[float] = []
    inserted: Dict[int, SurfacePoint] = {}

    for term in divisor:
        f = term.point.face
        z = complex(np.asarray(term.point.bary) @ charts[f])
        kids = children.setdefault(f, [f])
        where = chart_at.setdefault(f, {int(v): complex(c) for v, c in zip(mesh.faces[f], charts[f])})
        g, b = kids[0], np.zeros(3)
        for g in kids:
            b = np.asarray(barycentric([where[v] for v in faces[g]], z))
            if b.min() >= -1e-12:
                break

        k = int(np.argmax(b))
        if b[k] >= 1.0 - margin:
            v = faces[g][k]
            orders[v] = orders.get(v, 0) + term.order
            displacement.append(abs(where[v] - z))
            continue

        b = np.clip(b, margin, None)
        b /= b.sum()
        moved = complex(b @ np.array([where[v] for v in faces[g]]))
        displacement.append(abs(moved - z))
        p = len(positions)
        located = SurfacePoint.normalized(f, barycentric(charts[f], moved))
        positions.append(mesh.point_position(f, located.bary))
        where[p] = moved
        inserted[p] = located
        orders[p] = term.order

        a, c, d = faces[g]
        first = len(faces)
        faces[g] = [a, c, p]
        faces += [[c, d, p], [d, a, p]]
        for old, new in ((3 * g + 1, 3 * first), (3 * g + 2, 3 * first + 3)):
            source = original_of.pop(old, None)
            if source is not None:
                halfedge_map[source] = new
                original_of[new] = source
        kids += [first, first + 1]

    refined = SurfaceMesh.from_faces(np.array(positions), faces)
    orders = {v: n for v, n in sorted(orders.items()) if n != 0}
    logger.info(f"Refined the mesh at {len(inserted)} divisor points: {mesh.n_faces} -> {refined.n_faces} faces, "
                f"max displacement {max(displacement, default=0.0):.3e}")
    return ConePlacement(refined, orders, displacement, halfedge_map, inserted)


def target_curvature(mesh: SurfaceMesh, vertex_orders: Dict[int, int]) -> np.ndarray:
    """K = -n * pi / 2 at each vertex of order n"""
    target = np.zeros(mesh.n_vertices)
    for v, n in vertex_orders.items():
        target[v] = -n * np.pi / 2.0
    expected = 2.0 * np.pi * mesh.euler_characteristic
    total = float(target.sum())
    if abs(total - expected) > 1e-9:
        raise GaussBonnetViolation(total, expected)
    return target


def corner_angles(metric: ConeMetric) -> np.ndarray:
    return metric.triangulation.angles(metric.u)


def ricci_energy_terms(metric: ConeMetric, target: Optional[np.ndarray] = None) -> Tuple[np.ndarray, csr_matrix]:
    """Gradient K_target - K and Hessian with cotan off-diagonals and diagonal minus the row sum"""
    tri = metric.triangulation
    target = metric.target if target is None else target
    gradient = target - tri.curvature(metric.u)
    return gradient, _hessian(tri, metric.u)


def _hessian(tri: IntrinsicTriangulation, u: np.ndarray) -> csr_matrix:
    lengths = tri.halfedge_lengths(u).reshape(-1, 3)
    half_cot = 0.5 * cotan_opposite(lengths).ravel()
    n = tri.n_vertices
    rows = np.concatenate([tri.tail, tri.tip])
    cols = np.concatenate([tri.tip, tri.tail])
    W = coo_matrix((np.concatenate([half_cot, half_cot]), (rows, cols)), shape=(n, n)).tocsr()
    row_sum = np.asarray(W.sum(axis=1)).ravel()
    return (W - coo_matrix((row_sum, (np.arange(n), np.arange(n))), shape=(n, n))).tocsr()


def _newton_direction(hessian: csr_matrix, gradient: np.ndarray) -> np.ndarray:
    """Solve (-H) delta = gradient with vertex 0 pinned, then remove the mean"""
    system = (-hessian)[1:, 1:].tocsc()
    delta = np.zeros(len(gradient))
    delta[1:] = spsolve(system, gradient[1:])
    return delta - delta.mean()


def flow_to_metric(mesh: SurfaceMesh, target: np.ndarray, tol: Optional[float] = None,
                   max_iters: Optional[int] = None) -> ConeMetric:
    """Damped Newton on the conformal factors, keeping the triangulation intrinsically Delaunay"""
    tol = settings.ricci_tol if tol is None else tol
    max_iters = settings.ricci_max_iters if max_iters is None else max_iters
    expected = 2.0 * np.pi * mesh.euler_characteristic
    if abs(float(np.sum(target)) - expected) > 1e-9:
        raise GaussBonnetViolation(float(np.sum(target)), expected)

    tri = IntrinsicTriangulation(mesh)
    u = np.zeros(mesh.n_vertices)
    tri.make_delaunay(u)
    metric = ConeMetric(tri, u, np.asarray(target, dtype=float))

    for iteration in range(max_iters + 1):
        gradient = target - tri.curvature(u)
        error = float(np.max(np.abs(gradient)))
        merit = 0.5 * float(gradient @ gradient)
        metric.energy_history.append(merit)
        metric.iterations, metric.max_error, metric.u, metric.triangulation = iteration, error, u, tri
        if error <= tol:
            logger.info(f"Ricci flow converged in {iteration} iterations, max error {error:.3e}, "
                        f"{len(tri.flips)} flips")
            return metric
        if iteration == max_iters:
            break

        delta = _newton_direction(_hessian(tri, u), gradient)
        alpha = 1.0
        while True:
            trial_u = u + alpha * delta
            if tri.is_valid(trial_u):
                trial = tri.copy()
                trial.make_delaunay(trial_u)
                trial_gradient = target - trial.curvature(trial_u)
                if 0.5 * float(trial_gradient @ trial_gradient) < merit:
                    tri, u = trial, trial_u
                    break
            alpha *= 0.5
            if alpha < 1e-10:
                raise RicciStalled(error, iteration, metric)
        logger.debug(f"Ricci iteration {iteration}: error {error:.3e}, step {alpha:.3g}")

    raise RicciStalled(metric.max_error, metric.iterations, metric)


def transport_loop(metric: ConeMetric, curve: Curve, source: SurfaceMesh) -> Curve:
    """Carry a loop of the input mesh through the recorded flips into the intrinsic triangulation"""
    tri = metric.triangulation
    cones = set(int(v) for v in metric.cone_vertices)
    steps: List[Tuple[int, int]] = [(int(source.edge_of[h]), int(source.tail[h])) for h in curve.halfedges]
    for record in tri.flips:
        if not any(edge == record.edge for edge, _ in steps):
            continue
        detour_vertex = record.k if record.k not in cones else record.l
        if detour_vertex in cones:
            raise ConeOnLoop(detour_vertex)
        via_k = detour_vertex == record.k
        replaced: List[Tuple[int, int]] = []
        for edge, origin in steps:
            if edge != record.edge:
                replaced.append((edge, origin))
                continue
            if origin == record.i:
                replaced += [(record.e_ki, record.i), (record.e_jk, record.k)] if via_k else \
                    [(record.e_il, record.i), (record.e_lj, record.l)]
            else:
                replaced += [(record.e_jk, record.j), (record.e_ki, record.k)] if via_k else \
                    [(record.e_lj, record.j), (record.e_il, record.l)]
        steps = replaced

    final = metric.mesh()
    halfedges: List[int] = []
    for edge, origin in steps:
        h = tri.halfedge_for(edge, origin)
        if halfedges and final.twin[h] == halfedges[-1]:
            halfedges.pop()
        else:
            halfedges.append(h)
    while len(halfedges) > 1 and final.twin[halfedges[0]] == halfedges[-1]:
        halfedges = halfedges[1:-1]
    return Curve(curve.tag, tuple(halfedges), curve.closed)


def holonomy(metric: ConeMetric, loop: Curve, mesh: Optional[SurfaceMesh] = None) -> float:
    """Rotation (degrees in [0, 360)) of parallel transport around a loop of the intrinsic triangulation"""
    mesh = mesh or metric.mesh()
    angles = mesh.corner_angles().ravel()
    cones = set(int(v) for v in metric.cone_vertices)
    hs = loop.halfedges
    total = 0.0
    for index, h_out in enumerate(hs):
        v = int(mesh.tail[h_out])
        if v in cones:
            raise ConeOnLoop(v)
        stop = int(mesh.twin[hs[index - 1]])
        wedge = 0.0
        h = int(h_out)
        while h != stop:
            wedge += angles[h]
            h = int(mesh.twin[prev_halfedge(h)])
        total += np.pi - wedge
    return float(np.degrees(total) % 360.0)


def _link_path(mesh: SurfaceMesh, h_in: int, h_out: int) -> List[int]:
    """Halfedges around the far ends of the fan from twin(h_in) counter-clockwise to h_out"""
    path = []
    g = int(mesh.twin[h_in])
    while g != h_out:
        path.append(int(next_halfedge(g)))
        g = int(mesh.twin[prev_halfedge(g)])
    return path


def _cancel_backtracks(mesh: SurfaceMesh, halfedges: Sequence[int]) -> List[int]:
    out: List[int] = []
    for h in halfedges:
        if out and mesh.twin[h] == out[-1]:
            out.pop()
        else:
            out.append(int(h))
    while len(out) > 1 and mesh.twin[out[0]] == out[-1]:
        out = out[1:-1]
    return out


def detour_cones(mesh: SurfaceMesh, loop: Curve, cones: Set[int]) -> Curve:
    """Reroute a closed loop around every cone it passes through along the cone's 1-ring"""
    hs = [int(h) for h in loop.halfedges]
    for _ in range(len(hs) + len(cones) + 1):
        index = next((i for i, h in enumerate(hs) if int(mesh.tail[h]) in cones), None)
        if index is None:
            return Curve(loop.tag, tuple(hs), loop.closed)
        hs = hs[index:] + hs[:index]
        h_out, h_in = hs[0], hs[-1]
        v = int(mesh.tail[h_out])
        right = _link_path(mesh, h_in, h_out)
        if any(int(mesh.tail[h]) in cones for h in right[1:]):
            left = _link_path(mesh, mesh.twin[h_out], mesh.twin[h_in])
            if any(int(mesh.tail[h]) in cones for h in left[1:]):
                raise ConeOnLoop(v)
            right = [int(mesh.twin[h]) for h in reversed(left)]
        hs = _cancel_backtracks(mesh, right + hs[1:-1])
    raise ConeOnLoop(int(mesh.tail[hs[0]]))


def holonomy_table(metric: ConeMetric, source: SurfaceMesh,
                   loops: Union[HomologyBasis, Iterable[Curve], None] = None) -> List[Tuple[str, float]]:
    """Holonomy of each given loop of the source mesh and of the 1-ring loop around each cone

    Loops through a cone are rerouted around it first; a loop that cannot be rerouted is skipped.
    """
    mesh = metric.mesh()
    cones = set(int(v) for v in metric.cone_vertices)
    curves = loops.ordered() if isinstance(loops, HomologyBasis) else list(loops or [])
    rows: List[Tuple[str, float]] = []
    for curve in curves:
        try:
            moved = transport_loop(metric, detour_cones(source, curve, cones), source)
            rows.append((curve.tag, holonomy(metric, moved, mesh)))
        except ConeOnLoop as exc:
            logger.warning(f"Skipping holonomy of {curve.tag}: {exc.detail}")
    for index, v in enumerate(metric.cone_vertices):
        rows.append((f"t{index + 1}", holonomy(metric, link_loop(mesh, int(v), f"t{index + 1}"), mesh)))
    for tag, degrees in rows:
        deviation = quarter_turn_deviation(degrees)
        if deviation > settings.holonomy_tol_degrees:
            logger.warning(f"Holonomy of {tag} is {degrees:.5f} deg, {deviation:.3f} deg off a quarter turn")
    return rows


def quarter_turn_deviation(degrees: float) -> float:
    return abs(((degrees + 45.0) % 90.0) - 45.0)


def write_holonomy_csv(rows: Sequence[Tuple[str, float]], path: Union[str, Path]) -> Path:
    path = Path(path)
    pd.DataFrame(list(rows), columns=["loop", "degrees"]).to_csv(path, index=False)
    return path
