"""
Critical trajectories of the quartic differential, the motor graph and the rectangular T-mesh

Trajectories run as straight lines in the developed face coordinates of an Immersion.
Quarter indices measure directions in units of pi/2: at a cone they count the cone's
sectors from ray 0, at every other node they are taken relative to the continuing direction.
"""
import heapq
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple, Union

import numpy as np
from PIL import ImageColor

from ..core.config import settings
from ..core.errors import (
    ConeAngleMismatch,
    EmptyTMesh,
    HolonomyNotQuantized,
    InvalidMotorGraph,
    NonRectangularPatch,
    OpenTrajectories,
    QuadLayoutError,
    TraceFailure,
)
from ..schemas import (
    AdjacencySchema,
    ArcSchema,
    NodeKind,
    NodeSchema,
    PatchSchema,
    TMeshDocument,
    TerminationCause,
    TrajectorySchema,
)
from .immersion import QUARTER_TURNS, Immersion
from .mesh_core import SurfacePoint, barycentric, next_halfedge

logger = logging.getLogger(__name__)

QUARTER = np.pi / 2.0
TIE_TOLERANCE = 1e-9
SIDE_TOLERANCE = 1e-6


def _cross(u: complex, v: complex) -> float:
    return (u.conjugate() * v).imag


def _quarter_index(z: complex, modulus: int = 4) -> int:
    return int(np.rint(np.angle(z) / QUARTER)) % modulus


def surface_point(imm: Immersion, face: int, p: complex) -> SurfacePoint:
    return SurfacePoint.normalized(face, barycentric(imm.face_coords(face), p))


# Separatrices
@dataclass(frozen=True)
class ConeFan:
    """Outgoing halfedges of a cone in CCW order with the intrinsic angle where each sector starts"""
    vertex: int
    sectors: int
    halfedges: Tuple[int, ...]
    start_angles: Tuple[float, ...]
    offset: float

    def ray_angle(self, index: int) -> float:
        return self.offset + index * QUARTER

    def sector_of(self, angle: float) -> int:
        return int(np.searchsorted(self.start_angles, angle + 1e-12, side="right")) - 1


@dataclass(frozen=True)
class Ray:
    cone: int
    index: int
    sectors: int
    face: int
    origin: complex
    direction: complex
    angle: Optional[float] = None


def cone_fan(imm: Immersion, vertex: int, order: Optional[int] = None) -> ConeFan:
    mesh = imm.mesh
    fan = mesh.outgoing(vertex)
    corner = mesh.corner_angles().ravel()[fan]
    degrees = float(np.degrees(corner.sum()))
    sectors = int(np.rint(degrees / 90.0))
    if sectors < 1 or abs(degrees - 90.0 * sectors) > 0.5:
        raise ConeAngleMismatch(vertex, degrees)
    if order is not None and sectors != order + 4:
        raise ConeAngleMismatch(vertex, degrees)

    h0 = fan[0]
    theta = float(np.angle(imm.coords[next_halfedge(h0)] - imm.coords[h0]))
    offset = float((-theta) % QUARTER)
    if offset > QUARTER - 1e-9:
        offset = 0.0
    starts = np.concatenate([[0.0], np.cumsum(corner)[:-1]])
    return ConeFan(int(vertex), sectors, tuple(int(h) for h in fan), tuple(float(a) for a in starts), offset)


def emit_separatrices(imm: Immersion, cones: Mapping[int, int]) -> List[Ray]:
    """k = order + 4 axis-aligned rays at each cone, consecutive rays a quarter turn apart"""
    offset = settings.graze_offset * imm.mesh.mean_edge_length()
    rays: List[Ray] = []
    for vertex, order in sorted(cones.items()):
        fan = cone_fan(imm, vertex, order)
        for index in range(fan.sectors):
            angle = fan.ray_angle(index)
            sector = fan.sector_of(angle)
            h = fan.halfedges[sector]
            edge = imm.coords[next_halfedge(h)] - imm.coords[h]
            raw = edge / abs(edge) * np.exp(1j * (angle - fan.start_angles[sector]))
            quarter = _quarter_index(raw)
            direction = QUARTER_TURNS[quarter]
            deviation = abs(np.degrees(np.angle(raw / direction)))
            if deviation > settings.holonomy_tol_degrees:
                raise HolonomyNotQuantized(f"ray {index} at cone {vertex}", float(np.degrees(np.angle(raw))), deviation)
            measured = fan.start_angles[sector] + float(np.angle(direction * abs(edge) / edge)) - fan.offset
            origin = complex(imm.coords[h] + 1j * direction * offset)
            rays.append(Ray(int(vertex), index, fan.sectors, h // 3, origin, direction, measured))
    logger.info(f"Emitted {len(rays)} separatrices from {len(cones)} cones")
    return rays


# Tracing
@dataclass(frozen=True)
class Segment:
    face: int
    start: complex
    end: complex
    s0: float
    s1: float

    @property
    def direction(self) -> complex:
        delta = self.end - self.start
        return delta / abs(delta) if abs(delta) > 0 else 0j

    def at(self, s: float) -> complex:
        if self.s1 <= self.s0:
            return self.start
        return self.start + (s - self.s0) / (self.s1 - self.s0) * (self.end - self.start)


@dataclass
class Trajectory:
    id: int
    cone: int
    ray: int
    sectors: int
    segments: List[Segment]
    cause: str
    end_cone: Optional[int] = None
    end_quarter: Optional[int] = None
    end_sectors: Optional[int] = None
    start_angle: Optional[float] = None
    end_angle: Optional[float] = None

    @property
    def length(self) -> float:
        return self.segments[-1].s1 if self.segments else 0.0

    def clip(self, s0: float, s1: float) -> List[Segment]:
        clipped = []
        for seg in self.segments:
            if seg.s1 < s0 or seg.s0 > s1:
                continue
            lo, hi = max(seg.s0, s0), min(seg.s1, s1)
            clipped.append(Segment(seg.face, seg.at(lo), seg.at(hi), lo, hi))
        return clipped

    def truncated(self, s: float) -> "Trajectory":
        return Trajectory(self.id, self.cone, self.ray, self.sectors, self.clip(0.0, s),
                          TerminationCause.MOTOR.value, start_angle=self.start_angle)

    def cut(self) -> "Trajectory":
        """A cone-to-cone separatrix stopped somewhere between its ends; it keeps its full polyline"""
        return replace(self, cause=TerminationCause.MOTOR.value)

    def points(self, imm: Immersion) -> List[Tuple[SurfacePoint, float]]:
        """Polyline as surface points with their arc length"""
        if not self.segments:
            return []
        first = self.segments[0]
        polyline = [(surface_point(imm, first.face, first.start), first.s0)]
        polyline += [(surface_point(imm, seg.face, seg.end), seg.s1) for seg in self.segments]
        return polyline


def _exit(tri: np.ndarray, p: complex, d: complex) -> Tuple[Optional[int], float, float]:
    """First edge the ray leaves the triangle through, with ray and edge parameters"""
    best: Tuple[Optional[int], float, float] = (None, np.inf, 0.0)
    nearest = np.inf
    for k in range(3):
        a, b = complex(tri[k]), complex(tri[(k + 1) % 3])
        e = b - a
        denom = _cross(d, e)
        if denom <= 1e-15 * abs(e):
            continue
        w = a - p
        tau = _cross(w, e) / denom
        if tau < nearest:
            nearest = tau
            best = (k, max(tau, 0.0), float(np.clip(_cross(w, d) / denom, 0.0, 1.0)))
    return best


def _cone_hit(faces: np.ndarray, face: int, tri: np.ndarray, p: complex, d: complex, tau: float,
              stop: Set[int], snap: float, first: bool) -> Optional[Tuple[int, int, float]]:
    hit = None
    for k in range(3):
        v = int(faces[face, k])
        if v not in stop:
            continue
        rel = (d.conjugate() * (complex(tri[k]) - p))
        if abs(rel.imag) > snap or rel.real > tau + snap:
            continue
        if rel.real <= (snap if first else -snap):
            continue
        if hit is None or rel.real < hit[2]:
            hit = (v, k, max(rel.real, 0.0))
    return hit


def _arrival_angle(imm: Immersion, fan: ConeFan, h: int, d: complex) -> Tuple[int, float]:
    """Quarter index of an arriving direction at a cone and its angle from ray 0"""
    edge = imm.coords[next_halfedge(h)] - imm.coords[h]
    phi = float(np.angle(-d / edge))
    if phi < -1e-9:
        phi += 2.0 * np.pi
    angle = fan.start_angles[fan.halfedges.index(h)] + max(phi, 0.0)
    angle -= fan.offset
    return int(np.rint(angle / QUARTER)) % fan.sectors, angle


def trace(imm: Immersion, ray: Ray, stop: Iterable[int], trajectory_id: int = 0,
          length_cap: Optional[float] = None, max_crossings: Optional[int] = None) -> Trajectory:
    """Follow a ray face by face until it reaches a stop vertex, closes up or exceeds the length cap"""
    mesh = imm.mesh
    coords = imm.coords
    stop = {int(v) for v in stop}
    mean = mesh.mean_edge_length()
    snap = settings.snap_radius_factor * mean
    length_cap = settings.length_cap_factor * mesh.diameter() if length_cap is None else length_cap
    max_crossings = settings.max_face_crossings if max_crossings is None else max_crossings

    face, p, d = ray.face, complex(ray.origin), complex(ray.direction)
    s = 0.0
    segments: List[Segment] = []
    crossings: Dict[int, List[Tuple[float, complex]]] = {}

    def finish(cause: TerminationCause, **end) -> Trajectory:
        return Trajectory(trajectory_id, ray.cone, ray.index, ray.sectors, segments, cause.value,
                          start_angle=ray.angle, **end)

    for _ in range(max_crossings + 1):
        tri = coords[3 * face:3 * face + 3]
        k, tau, sigma = _exit(tri, p, d)
        if k is None:
            raise TraceFailure(face)

        hit = _cone_hit(mesh.faces, face, tri, p, d, tau, stop, snap, first=not segments)
        if hit is not None:
            vertex, local, along = hit
            segments.append(Segment(face, p, complex(tri[local]), s, s + along))
            fan = cone_fan(imm, vertex)
            quarter, angle = _arrival_angle(imm, fan, 3 * face + local, d)
            return finish(TerminationCause.SINGULARITY, end_cone=vertex, end_quarter=quarter,
                          end_sectors=fan.sectors, end_angle=angle)

        segments.append(Segment(face, p, p + tau * d, s, s + tau))
        s += tau
        if s > length_cap:
            logger.debug(f"Trajectory {trajectory_id} hit the length cap {length_cap:.4g}")
            return finish(TerminationCause.LENGTH_CAP)

        h = 3 * face + k
        edge_length = abs(complex(tri[(k + 1) % 3] - tri[k]))
        push = settings.graze_offset * mean / edge_length
        if sigma * edge_length < 1e-12 * mean or (1.0 - sigma) * edge_length < 1e-12 * mean:
            logger.debug(f"Trajectory {trajectory_id} grazes a vertex of face {face}; pushed off by {push:.1e}")
            sigma = min(max(sigma, push), 1.0 - push)

        earlier = crossings.setdefault(h, [])
        if any(abs(sigma - q) * edge_length <= settings.graze_offset * mean and abs(d - e) <= 1e-9
               for q, e in earlier):
            return finish(TerminationCause.CLOSED)
        earlier.append((sigma, d))

        transition = imm.transition(h)
        if transition is not None:
            d = transition.rotation * d
        t = int(mesh.twin[h])
        p = complex(coords[next_halfedge(t)] + sigma * (coords[t] - coords[next_halfedge(t)]))
        face = t // 3

    logger.debug(f"Trajectory {trajectory_id} exceeded {max_crossings} face crossings")
    return finish(TerminationCause.LENGTH_CAP)


def trace_all(imm: Immersion, rays: Sequence[Ray], stop: Iterable[int]) -> List[Trajectory]:
    stop = set(stop)
    trajectories = [trace(imm, ray, stop, trajectory_id=i) for i, ray in enumerate(rays)]
    causes: Dict[str, int] = {}
    for trajectory in trajectories:
        causes[trajectory.cause] = causes.get(trajectory.cause, 0) + 1
    logger.info(f"Traced {len(trajectories)} trajectories: {causes}")
    return trajectories


# Motor graph
@dataclass(frozen=True)
class Junction:
    """A stopped trajectory meeting a continuing one; fronts lists the sides that stopped (+1 ahead, -1 behind)"""
    continuing: int
    s_continuing: float
    stopped: int
    s_stopped: float
    face: int
    position: complex
    quarter: int
    angle: float
    tie: bool = False
    fronts: Tuple[int, ...] = (1,)


@dataclass(frozen=True)
class ArcEnd:
    node: int
    quarter: int
    arc: int
    at_end: bool
    angle: float

    @property
    def half(self) -> Tuple[int, bool]:
        return self.arc, self.at_end


@dataclass
class Node:
    id: int
    kind: str
    sectors: int
    face: int
    position: complex
    vertex: Optional[int] = None
    ends: List[ArcEnd] = field(default_factory=list)


@dataclass
class Arc:
    id: int
    trajectory: int
    start: int
    end: int
    start_quarter: int
    end_quarter: int
    s0: float
    s1: float
    segments: List[Segment]
    start_angle: float = 0.0
    end_angle: float = np.pi

    @property
    def length(self) -> float:
        return self.s1 - self.s0


@dataclass
class MotorGraph:
    trajectories: List[Trajectory]
    junctions: List[Junction]
    nodes: List[Node]
    arcs: List[Arc]
    dropped: List[int] = field(default_factory=list)

    @property
    def t_junctions(self) -> List[Node]:
        return [node for node in self.nodes if node.kind == NodeKind.T_JUNCTION.value]

    @property
    def crossings(self) -> List[Node]:
        return [node for node in self.nodes if node.kind == NodeKind.CROSSING.value]

    def incidence(self) -> Dict[int, List[ArcEnd]]:
        return {node.id: list(node.ends) for node in self.nodes}

    def signature(self) -> tuple:
        """Order-free summary used to compare graphs"""
        junctions = tuple(sorted((j.continuing, round(j.s_continuing, 9), j.stopped, round(j.s_stopped, 9), j.fronts)
                                 for j in self.junctions))
        arcs = tuple(sorted((a.trajectory, round(a.s0, 9), round(a.s1, 9)) for a in self.arcs))
        return junctions, arcs


def _segment_crossing(a: Segment, b: Segment, slack: float = 0.0) -> Optional[Tuple[complex, float, float]]:
    """Crossing of two segments, endpoints included up to an absolute slack"""
    r, q = a.end - a.start, b.end - b.start
    if abs(r) == 0.0 or abs(q) == 0.0:
        return None
    denom = _cross(r, q)
    if abs(denom) <= 1e-12 * abs(r) * abs(q):
        return None
    w = b.start - a.start
    ta, tb = _cross(w, q) / denom, _cross(w, r) / denom
    ea, eb = slack / abs(r), slack / abs(q)
    if not (-ea <= ta <= 1.0 + ea and -eb <= tb <= 1.0 + eb):
        return None
    return a.start + ta * r, a.s0 + ta * (a.s1 - a.s0), b.s0 + tb * (b.s1 - b.s0)


def _reverse_duplicates(trajectories: Sequence[Trajectory]) -> Dict[int, int]:
    """Separatrices joining two cones are traced from both ends; map the higher id onto the lower"""
    arriving = {(t.cone, t.ray, t.end_cone, t.end_quarter): t
                for t in trajectories if t.cause == TerminationCause.SINGULARITY.value}
    dropped: Dict[int, int] = {}
    for t in trajectories:
        if t.id in dropped or t.cause != TerminationCause.SINGULARITY.value:
            continue
        other = arriving.get((t.end_cone, t.end_quarter, t.cone, t.ray))
        if other is None or other.id == t.id or other.id in dropped:
            continue
        if abs(other.length - t.length) <= 1e-6 * max(t.length, 1.0):
            dropped[max(t.id, other.id)] = min(t.id, other.id)
    return dropped


def _crossing_events(trajectories: Sequence[Trajectory], snap: float) -> List[tuple]:
    by_face: Dict[int, List[Tuple[int, int, Segment]]] = {}
    excluded: Dict[int, List[complex]] = {}
    for t in trajectories:
        for index, seg in enumerate(t.segments):
            by_face.setdefault(seg.face, []).append((t.id, index, seg))
        if t.segments:
            excluded.setdefault(t.segments[0].face, []).append(t.segments[0].start)
            if t.cause == TerminationCause.SINGULARITY.value:
                excluded.setdefault(t.segments[-1].face, []).append(t.segments[-1].end)

    events = []
    found: Dict[Tuple[int, int], List[Tuple[float, float]]] = {}
    for face, items in by_face.items():
        near = excluded.get(face, [])
        for i in range(len(items)):
            for j in range(i + 1, len(items)):
                (ta, ia, sa), (tb, ib, sb) = items[i], items[j]
                if ta == tb and abs(ia - ib) <= 1:
                    continue
                crossing = _segment_crossing(sa, sb, snap)
                if crossing is None:
                    continue
                point, s_a, s_b = crossing
                if any(abs(point - z) <= snap for z in near):
                    continue
                # a crossing on a face boundary shows up once per face
                if ta > tb:
                    ta, s_a, sa, tb, s_b, sb = tb, s_b, sb, ta, s_a, sa
                earlier = found.setdefault((ta, tb), [])
                if any(abs(s_a - x) <= snap and abs(s_b - y) <= snap for x, y in earlier):
                    continue
                earlier.append((s_a, s_b))
                events.append((ta, s_a, sa.direction, tb, s_b, sb.direction, face, point))
    return events


class _Fronts:
    """Reach of every trajectory: the + front covers [0, ahead], a two-way separatrix's - front covers [behind, length]"""

    def __init__(self, trajectories: Sequence[Trajectory], two_way: Set[int]):
        self.length = {t.id: t.length for t in trajectories}
        self.ahead = dict(self.length)
        self.behind = {t.id: (0.0 if t.id in two_way else np.inf) for t in trajectories}

    def times(self, t: int, s: float) -> Dict[int, float]:
        """Arrival time at s of each front still covering it"""
        times = {}
        if s <= self.ahead[t] + 1e-12:
            times[1] = s
        if s >= self.behind[t] - 1e-12:
            times[-1] = self.length[t] - s
        return times

    def stop(self, t: int, s: float, front: int) -> None:
        if front > 0:
            self.ahead[t] = s
        else:
            self.behind[t] = s


def motor_graph(trajectories: Sequence[Trajectory], snap: Optional[float] = None) -> MotorGraph:
    """Resolve crossings by first arrival: every front reaching a crossing later stops there"""
    trajectories = sorted(trajectories, key=lambda t: t.id)
    if snap is None:
        lengths = [seg.s1 - seg.s0 for t in trajectories for seg in t.segments]
        snap = settings.snap_radius_factor * (float(np.mean(lengths)) if lengths else 1.0)

    dropped = _reverse_duplicates(trajectories)
    kept = [t for t in trajectories if t.id not in dropped]
    fronts = _Fronts(kept, set(dropped.values()))
    events = _crossing_events(kept, snap)
    # fronts of side 0 (a) or 1 (b) already stopped at an event
    done: Dict[Tuple[int, int], Set[int]] = {}

    def pending(index: int, side: int) -> Dict[int, float]:
        t, s = (events[index][0], events[index][1]) if side == 0 else (events[index][3], events[index][4])
        return {front: time for front, time in fronts.times(t, s).items() if front not in done.get((index, side), ())}

    def key(index: int) -> Optional[tuple]:
        times_a, times_b = pending(index, 0), pending(index, 1)
        if not times_a or not times_b:
            return None
        time_a, time_b = min(times_a.values()), min(times_b.values())
        ta, tb = events[index][0], events[index][3]
        return max(time_a, time_b), min(time_a, time_b), min(ta, tb), max(ta, tb), index

    heap = [k for k in (key(i) for i in range(len(events))) if k is not None]
    heapq.heapify(heap)
    junctions: List[Junction] = []
    junction_at: Dict[int, int] = {}
    while heap:
        pushed = heapq.heappop(heap)
        index = pushed[-1]
        current = key(index)
        if current is None:
            continue
        if current[:2] > pushed[:2]:
            heapq.heappush(heap, current)
            continue

        ta, s_a, d_a, tb, s_b, d_b, face, point = events[index]
        times_a, times_b = pending(index, 0), pending(index, 1)
        time_a, time_b = min(times_a.values()), min(times_b.values())
        tie = abs(time_a - time_b) <= TIE_TOLERANCE
        if (tie and ta <= tb) or (not tie and time_a < time_b):
            keep, s_keep, d_keep, stop, s_stop, d_stop = ta, s_a, d_a, tb, s_b, d_b
            side, times, time = 1, times_b, time_b
        else:
            keep, s_keep, d_keep, stop, s_stop, d_stop = tb, s_b, d_b, ta, s_a, d_a
            side, times, time = 0, times_a, time_a
        if tie:
            logger.info(f"Tie at t={time:.12g} between trajectories {keep} and {stop}; {keep} continues")

        stopped = tuple(front for front, arrival in sorted(times.items(), reverse=True)
                        if arrival <= time + TIE_TOLERANCE)
        for front in stopped:
            fronts.stop(stop, s_stop, front)
        done.setdefault((index, side), set()).update(stopped)

        if index in junction_at:
            previous = junctions[junction_at[index]]
            merged = tuple(sorted(set(previous.fronts) | set(stopped), reverse=True))
            junctions[junction_at[index]] = replace(previous, fronts=merged)
        else:
            turn = -d_stop / d_keep
            junction_at[index] = len(junctions)
            junctions.append(Junction(keep, s_keep, stop, s_stop, face, point, _quarter_index(turn),
                                      float(np.angle(turn) % (2.0 * np.pi)), tie, stopped))
        following = key(index)
        if following is not None:
            heapq.heappush(heap, following)

    final = []
    for t in kept:
        if not any(j.stopped == t.id for j in junctions):
            final.append(t)
        elif np.isinf(fronts.behind[t.id]):
            final.append(t.truncated(fronts.ahead[t.id]))
        else:
            final.append(t.cut())
    graph = _assemble(final, junctions)
    graph.dropped = sorted(dropped)
    logger.info(f"Motor graph: {len(final)} trajectories, {len(junctions)} junctions, "
                f"{len(graph.crossings)} crossings, {len(graph.arcs)} arcs, "
                f"{len(dropped)} duplicate separatrices dropped")
    return graph


Station = Tuple[float, int, Optional[Tuple[int, float]], Optional[Tuple[int, float]]]


def _assemble(trajectories: List[Trajectory], junctions: List[Junction]) -> MotorGraph:
    nodes: List[Node] = []
    cone_nodes: Dict[int, int] = {}

    def cone_node(vertex: int, sectors: int, face: int, position: complex) -> int:
        if vertex not in cone_nodes:
            cone_nodes[vertex] = len(nodes)
            nodes.append(Node(len(nodes), NodeKind.CONE.value, sectors, face, position, vertex))
        return cone_nodes[vertex]

    for t in trajectories:
        if t.segments:
            cone_node(t.cone, t.sectors, t.segments[0].face, t.segments[0].start)

    # (s, node, arrival, departure) along each trajectory; arrival and departure are (quarter, angle)
    stations: Dict[int, List[Station]] = {t.id: [] for t in trajectories}
    for junction in junctions:
        node = len(nodes)
        kind = NodeKind.CROSSING if len(junction.fronts) == 2 else NodeKind.T_JUNCTION
        nodes.append(Node(node, kind.value, 4, junction.face, junction.position))
        stations[junction.continuing].append((junction.s_continuing, node, (2, np.pi), (0, 0.0)))
        arrive = (junction.quarter, junction.angle) if 1 in junction.fronts else None
        depart = ((junction.quarter + 2) % 4, (junction.angle + np.pi) % (2.0 * np.pi)) if -1 in junction.fronts else None
        stations[junction.stopped].append((junction.s_stopped, node, arrive, depart))

    arcs: List[Arc] = []
    for t in trajectories:
        if not t.segments:
            continue
        start_angle = t.ray * QUARTER if t.start_angle is None else t.start_angle
        stops: List[Station] = [(0.0, cone_nodes[t.cone], None, (t.ray, start_angle))]
        stops += sorted(stations[t.id], key=lambda station: station[0])
        last = t.segments[-1]
        if t.end_cone is not None:
            end_angle = t.end_quarter * QUARTER if t.end_angle is None else t.end_angle
            stops.append((t.length, cone_node(t.end_cone, t.end_sectors, last.face, last.end),
                          (t.end_quarter, end_angle), None))
        elif t.cause != TerminationCause.MOTOR.value:
            node = len(nodes)
            nodes.append(Node(node, NodeKind.END.value, 4, last.face, last.end))
            stops.append((t.length, node, (2, np.pi), None))

        for (s0, n0, _, depart), (s1, n1, arrive, _) in zip(stops, stops[1:]):
            if depart is None and arrive is None:
                continue
            if depart is None or arrive is None:
                raise QuadLayoutError(f"Trajectory {t.id} breaks between s={s0:.6g} and s={s1:.6g}",
                                      trajectory=t.id)
            arc = Arc(len(arcs), t.id, n0, n1, depart[0], arrive[0], s0, s1, t.clip(s0, s1), depart[1], arrive[1])
            arcs.append(arc)
            nodes[n0].ends.append(ArcEnd(n0, depart[0], arc.id, False, depart[1]))
            nodes[n1].ends.append(ArcEnd(n1, arrive[0], arc.id, True, arrive[1]))

    expected = {NodeKind.T_JUNCTION.value: 3, NodeKind.CROSSING.value: 4}
    for node in nodes:
        if node.kind == NodeKind.CONE.value and len(node.ends) != node.sectors:
            raise InvalidMotorGraph(node.id, len(node.ends), node.sectors, node.vertex)
        if node.kind in expected and len(node.ends) != expected[node.kind]:
            raise InvalidMotorGraph(node.id, len(node.ends), expected[node.kind])
    return MotorGraph(trajectories, junctions, nodes, arcs)


# Patches
@dataclass(frozen=True)
class Patch:
    id: int
    corners: Tuple[int, int, int, int]
    sides: Tuple[Tuple[Tuple[int, bool], ...], ...]
    width: float
    height: float
    corner_angles: Tuple[float, float, float, float]

    @property
    def area(self) -> float:
        return self.width * self.height

    def uv(self) -> List[Tuple[float, float]]:
        return [(0.0, 0.0), (self.width, 0.0), (self.width, self.height), (0.0, self.height)]


@dataclass(frozen=True)
class Adjacency:
    arc: int
    patch_a: int
    side_a: int
    patch_b: int
    side_b: int
    quarter_turns: int


@dataclass
class TMesh:
    graph: MotorGraph
    patches: List[Patch]
    adjacency: List[Adjacency]
    immersion: Immersion

    @property
    def area(self) -> float:
        return float(sum(patch.area for patch in self.patches))

    @property
    def t_junction_count(self) -> int:
        return len(self.graph.t_junctions)

    def corner_angles(self) -> np.ndarray:
        """Interior angle at each patch corner, measured from the developed arc directions"""
        return np.array([patch.corner_angles for patch in self.patches], dtype=float).reshape(-1, 4)

    def to_document(self) -> TMeshDocument:
        imm = self.immersion
        mesh = imm.mesh
        nodes = []
        for node in self.graph.nodes:
            if node.vertex is not None:
                h = int(mesh.vertex_halfedge[node.vertex])
                point = SurfacePoint.at_corner(h // 3, h % 3)
            else:
                point = surface_point(imm, node.face, node.position)
            nodes.append(NodeSchema(id=node.id, kind=node.kind, face=point.face, bary=point.bary,
                                    vertex=node.vertex, sectors=node.sectors))
        return TMeshDocument(
            trajectories=[TrajectorySchema(id=t.id, cone=t.cone, ray=t.ray, cause=t.cause, length=t.length,
                                           end_cone=t.end_cone) for t in self.graph.trajectories],
            nodes=nodes,
            arcs=[ArcSchema(id=a.id, trajectory=a.trajectory, start=a.start, end=a.end,
                            start_quarter=a.start_quarter, end_quarter=a.end_quarter, s0=a.s0, s1=a.s1)
                  for a in self.graph.arcs],
            patches=[PatchSchema(id=p.id, corners=list(p.corners), sides=[list(side) for side in p.sides],
                                 width=p.width, height=p.height) for p in self.patches],
            adjacency=[AdjacencySchema(**vars(a)) for a in self.adjacency],
        )


def _turn(graph: MotorGraph, arrival: ArcEnd) -> Tuple[ArcEnd, int, float]:
    """First arc-end clockwise from the arrival, the interior angle in quarters and as measured"""
    node = graph.nodes[arrival.node]
    best, best_key = arrival, (node.sectors,)
    for end in node.ends:
        if end.half == arrival.half:
            continue
        gap = (arrival.quarter - end.quarter) % node.sectors or node.sectors
        key = (gap, end.arc, end.at_end)
        if best is arrival or key < best_key:
            best, best_key = end, key
    gap = best_key[0]
    total = node.sectors * QUARTER
    measured = (arrival.angle - best.angle - gap * QUARTER + 0.5 * total) % total - 0.5 * total + gap * QUARTER
    return best, gap, float(measured)


def _arrival(graph: MotorGraph, half: Tuple[int, bool]) -> ArcEnd:
    arc = graph.arcs[half[0]]
    if half[1]:
        return ArcEnd(arc.end, arc.end_quarter, arc.id, True, arc.end_angle)
    return ArcEnd(arc.start, arc.start_quarter, arc.id, False, arc.start_angle)



def extract_patches(graph: MotorGraph, imm: Immersion) -> TMesh:
    """Faces of the motor graph by the left-hand rule, each checked to be a rectangle"""
    open_ends = [node.id for node in graph.nodes if node.kind == NodeKind.END.value]
    if open_ends:
        raise OpenTrajectories(sorted({graph.arcs[end.arc].trajectory for node in open_ends
                                       for end in graph.nodes[node].ends}))
    halves = [(arc.id, forward) for arc in graph.arcs for forward in (True, False)]
    visited: Set[Tuple[int, bool]] = set()
    cycles = []
    for start in halves:
        if start in visited:
            continue
        cycle = []
        half = start
        while half not in visited:
            visited.add(half)
            out, angle, measured = _turn(graph, _arrival(graph, half))
            cycle.append((half, angle, measured))
            half = (out.arc, not out.at_end)
        cycles.append(cycle)

    angle_tol = np.radians(settings.holonomy_tol_degrees)
    patches: List[Patch] = []
    side_of: Dict[Tuple[int, bool], Tuple[int, int]] = {}
    for cycle in cycles:
        angles = [angle for _, angle, _ in cycle]
        corners = angles.count(1)
        skew = max(abs(measured - angle * QUARTER) for _, angle, measured in cycle)
        if corners != 4 or any(angle not in (1, 2) for angle in angles) or skew > angle_tol:
            raise NonRectangularPatch(cycle, corners)
        first = next(i for i in range(len(cycle)) if angles[i - 1] == 1)
        ordered = cycle[first:] + cycle[:first]

        sides: List[List[Tuple[int, bool]]] = [[]]
        corner_nodes, corner_angles = [], []
        for half, angle, measured in ordered:
            sides[-1].append(half)
            if angle == 1:
                corner_nodes.append(_arrival(graph, half).node)
                corner_angles.append(measured)
                sides.append([])
        sides = sides[:4]
        lengths = [sum(graph.arcs[arc].length for arc, _ in side) for side in sides]
        tolerance = SIDE_TOLERANCE * max(lengths)
        if abs(lengths[0] - lengths[2]) > tolerance or abs(lengths[1] - lengths[3]) > tolerance:
            raise NonRectangularPatch(ordered, corners)

        patch = Patch(len(patches), tuple(corner_nodes[-1:] + corner_nodes[:-1]), tuple(tuple(s) for s in sides),
                      0.5 * (lengths[0] + lengths[2]), 0.5 * (lengths[1] + lengths[3]),
                      tuple(corner_angles[-1:] + corner_angles[:-1]))
        for index, side in enumerate(sides):
            for half in side:
                side_of[half] = (patch.id, index)
        patches.append(patch)

    adjacency = []
    for arc in graph.arcs:
        (pa, sa), (pb, sb) = side_of[(arc.id, True)], side_of[(arc.id, False)]
        adjacency.append(Adjacency(arc.id, pa, sa, pb, sb, (sb + 2 - sa) % 4))

    tmesh = TMesh(graph, patches, adjacency, imm)
    surface = imm.mesh.surface_area()
    logger.info(f"T-mesh: {len(patches)} patches, {tmesh.t_junction_count} T-junctions, "
                f"area {tmesh.area:.6g} of {surface:.6g}")
    return tmesh


def build_tmesh(imm: Immersion, cones: Mapping[int, int]) -> TMesh:
    rays = emit_separatrices(imm, cones)
    trajectories = trace_all(imm, rays, cones.keys())
    graph = motor_graph(trajectories, snap=settings.snap_radius_factor * imm.mesh.mean_edge_length())
    return extract_patches(graph, imm)


# Export
def patch_palette(count: int) -> List[Tuple[float, float, float]]:
    colors = []
    for i in range(count):
        r, g, b = ImageColor.getrgb(f"hsl({int(i * 137.508) % 360}, 65%, 55%)")
        colors.append((r / 255.0, g / 255.0, b / 255.0))
    return colors


def _position(imm: Immersion, face: int, z: complex) -> np.ndarray:
    return imm.mesh.point_position(face, barycentric(imm.face_coords(face), z))


def _vertex_line(p: np.ndarray) -> str:
    coords = list(p[:3]) + [0.0] * (3 - min(len(p), 3))
    return "v " + " ".join(f"{x:.17g}" for x in coords)


def export_tmesh(tm: TMesh, out_dir: Union[str, Path], name: str = "tmesh") -> Dict[str, Path]:
    """tmesh-v1 JSON, a per-patch coloured OBJ preview and the motor-graph polylines"""
    if not tm.patches:
        raise EmptyTMesh()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / f"{name}.json"
    preview_path, mtl_path = out_dir / f"{name}_preview.obj", out_dir / f"{name}.mtl"
    graph_path = out_dir / "motor_graph.obj"

    json_path.write_text(tm.to_document().model_dump_json(indent=2))

    imm = tm.immersion
    palette = patch_palette(len(tm.patches))
    materials = [f"newmtl patch{i}\nKd {r:.4f} {g:.4f} {b:.4f}\n" for i, (r, g, b) in enumerate(palette)]
    materials.append("newmtl motor\nKd 0.8500 0.1000 0.1000\n")
    mtl_path.write_text("".join(materials))

    node_positions = []
    for node in tm.graph.nodes:
        if node.vertex is not None:
            node_positions.append(imm.mesh.positions[node.vertex])
        else:
            node_positions.append(_position(imm, node.face, node.position))
    scale = 1.0 / max(max(max(p.width, p.height) for p in tm.patches), 1e-300)
    lines = [f"mtllib {mtl_path.name}"]
    lines += [_vertex_line(p) for p in node_positions]
    for patch in tm.patches:
        lines += [f"vt {u * scale:.17g} {v * scale:.17g}" for u, v in patch.uv()]
    for patch in tm.patches:
        lines.append(f"usemtl patch{patch.id}")
        refs = [f"{node + 1}/{4 * patch.id + k + 1}" for k, node in enumerate(patch.corners)]
        lines.append("f " + " ".join(refs))
    preview_path.write_text("\n".join(lines) + "\n")

    polyline = [f"mtllib {mtl_path.name}", "usemtl motor"]
    count = 0
    for arc in tm.graph.arcs:
        if not arc.segments:
            continue
        points = [_position(imm, arc.segments[0].face, arc.segments[0].start)]
        points += [_position(imm, seg.face, seg.end) for seg in arc.segments]
        polyline += [_vertex_line(p) for p in points]
        polyline.append("l " + " ".join(str(count + i + 1) for i in range(len(points))))
        count += len(points)
    graph_path.write_text("\n".join(polyline) + "\n")

    logger.info(f"Wrote T-mesh {json_path}: {len(tm.patches)} patches, {tm.t_junction_count} T-junctions")
    return {"json": json_path, "preview": preview_path, "mtl": mtl_path, "motor_graph": graph_path}


def load_tmesh(path: Union[str, Path]) -> TMeshDocument:
    return TMeshDocument.model_validate_json(Path(path).read_text())
