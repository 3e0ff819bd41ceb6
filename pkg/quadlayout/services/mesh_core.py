"""
Halfedge surface mesh: construction, file I/O, intrinsic geometry and slicing

Halfedge h = 3*f + k belongs to face f and runs from corner k to corner k+1.
The corner at the origin of h is addressed by the same index h.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from plyfile import PlyData
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from ..core.errors import (
    BoundaryPresent,
    CutDisconnects,
    DegenerateFace,
    MultipleComponents,
    NonManifoldEdge,
    NonManifoldVertex,
    NonTriangleFace,
    QuadLayoutError,
)

logger = logging.getLogger(__name__)


def next_halfedge(h):
    return h - h % 3 + (h + 1) % 3


def prev_halfedge(h):
    return h - h % 3 + (h + 2) % 3


def triangle_angles(hl: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Corner angles from per-halfedge lengths (F x 3) with the half-angle formula.

    Returns the angles and a mask of faces violating the strict triangle inequality.
    """
    a = hl[:, [1, 2, 0]]  # side opposite corner k
    b = hl
    c = hl[:, [2, 0, 1]]
    s = 0.5 * (a + b + c)
    num = (s - b) * (s - c)
    den = s * (s - a)
    invalid = np.any(num <= 0.0, axis=1) | np.any(den <= 0.0, axis=1)
    angles = 2.0 * np.arctan2(np.sqrt(np.clip(num, 0.0, None)), np.sqrt(np.clip(den, 0.0, None)))
    return angles, invalid


def triangle_areas(hl: np.ndarray) -> np.ndarray:
    """Heron areas in the numerically stable ordering"""
    srt = np.sort(hl, axis=1)[:, ::-1]
    a, b, c = srt[:, 0], srt[:, 1], srt[:, 2]
    prod = (a + (b + c)) * (c - (a - b)) * (c + (a - b)) * (a + (b - c))
    return 0.25 * np.sqrt(np.clip(prod, 0.0, None))


def cotan_opposite(hl: np.ndarray) -> np.ndarray:
    """Cotangent of the angle opposite each halfedge (F x 3)"""
    area = triangle_areas(hl)
    a2 = hl ** 2
    b2 = a2[:, [1, 2, 0]]
    c2 = a2[:, [2, 0, 1]]
    return (b2 + c2 - a2) / (4.0 * area[:, None])


def face_charts(hl: np.ndarray) -> np.ndarray:
    """Isometric planar chart per face: corner 0 at the origin, corner 1 on the positive real axis"""
    angles, _ = triangle_angles(hl)
    charts = np.zeros(hl.shape, dtype=complex)
    charts[:, 1] = hl[:, 0]
    charts[:, 2] = hl[:, 2] * np.exp(1j * angles[:, 0])
    return charts


def barycentric(tri: Sequence[complex], p: complex) -> Tuple[float, float, float]:
    """Barycentric coordinates of a planar point with respect to a planar triangle"""
    a, b, c = (complex(z) for z in tri)

    def cross(u: complex, v: complex) -> float:
        return (u.conjugate() * v).imag

    area = cross(b - a, c - a)
    w0 = cross(b - p, c - p) / area
    w1 = cross(c - p, a - p) / area
    return w0, w1, 1.0 - w0 - w1


class SurfaceMesh:
    """Closed, connected, oriented triangle mesh with an implicit halfedge layout"""

    def __init__(self, positions: np.ndarray, faces: np.ndarray, twin: np.ndarray,
                 lengths: Optional[np.ndarray] = None):
        self.positions = np.ascontiguousarray(positions, dtype=float)
        self.faces = np.ascontiguousarray(faces, dtype=np.int64)
        self.twin = np.ascontiguousarray(twin, dtype=np.int64)
        self.tail = self.faces.ravel()
        self.tip = self.faces[:, [1, 2, 0]].ravel()

        h = np.arange(self.twin.size)
        canonical = np.minimum(h, self.twin)
        self.edge_halfedge, self.edge_of = np.unique(canonical, return_inverse=True)
        self.edge_of = self.edge_of.astype(np.int64)

        self.vertex_halfedge = np.full(len(self.positions), -1, dtype=np.int64)
        self.vertex_halfedge[self.tail[::-1]] = h[::-1]

        if lengths is None:
            lengths = np.linalg.norm(self.positions[self.tip] - self.positions[self.tail], axis=1)
        self.halfedge_lengths = np.ascontiguousarray(lengths, dtype=float)

        for array in (self.positions, self.faces, self.twin, self.edge_of, self.edge_halfedge,
                      self.vertex_halfedge, self.halfedge_lengths):
            array.setflags(write=False)

    # Construction
    @classmethod
    def from_faces(cls, positions: Sequence, faces: Sequence) -> "SurfaceMesh":
        """Build and validate a closed mesh from a vertex array and triangle list"""
        positions = np.asarray(positions, dtype=float)
        faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)

        directed: Dict[Tuple[int, int], int] = {}
        for f, (i, j, k) in enumerate(faces.tolist()):
            if i == j or j == k or k == i:
                raise DegenerateFace(f)
            for local, (u, v) in enumerate(((i, j), (j, k), (k, i))):
                if (u, v) in directed:
                    raise NonManifoldEdge((u, v))
                directed[(u, v)] = 3 * f + local

        twin = np.empty(3 * len(faces), dtype=np.int64)
        for (u, v), h in directed.items():
            t = directed.get((v, u))
            if t is None:
                raise BoundaryPresent((u, v))
            twin[h] = t

        mesh = cls(positions, faces, twin)
        mesh._validate_topology()
        return mesh

    @classmethod
    def from_halfedges(cls, positions: np.ndarray, faces: np.ndarray, twin: np.ndarray,
                       lengths: Optional[np.ndarray] = None) -> "SurfaceMesh":
        """Build a mesh from an explicit twin table; multi-edges are allowed"""
        mesh = cls(positions, faces, twin, lengths)
        mesh._validate_topology()
        return mesh

    def _validate_topology(self):
        h = np.arange(self.n_halfedges)
        if np.any(self.twin[self.twin] != h) or np.any(self.twin == h):
            raise NonManifoldEdge((-1, -1))
        if np.any(self.tail[self.twin] != self.tip):
            bad = int(np.flatnonzero(self.tail[self.twin] != self.tip)[0])
            raise NonManifoldEdge((int(self.tail[bad]), int(self.tip[bad])))

        adjacency = coo_matrix(
            (np.ones(self.n_halfedges), (self.tail, self.tip)),
            shape=(self.n_vertices, self.n_vertices),
        )
        count, _ = connected_components(adjacency, directed=False)
        if count != 1:
            raise MultipleComponents(int(count))

        degree = np.bincount(self.tail, minlength=self.n_vertices)
        for v in range(self.n_vertices):
            if len(self.outgoing(v)) != degree[v]:
                raise NonManifoldVertex(v)

    # Topology
    @property
    def n_vertices(self) -> int:
        return len(self.positions)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def n_edges(self) -> int:
        return len(self.edge_halfedge)

    @property
    def n_halfedges(self) -> int:
        return len(self.twin)

    @property
    def euler_characteristic(self) -> int:
        return self.n_vertices - self.n_edges + self.n_faces

    @property
    def genus(self) -> int:
        return genus(self)

    def outgoing(self, v: int) -> List[int]:
        """Outgoing halfedges of v in counter-clockwise order"""
        start = int(self.vertex_halfedge[v])
        if start < 0:
            return []
        fan = [start]
        h = int(self.twin[prev_halfedge(start)])
        while h != start:
            fan.append(h)
            if len(fan) > self.n_halfedges:
                raise NonManifoldVertex(v)
            h = int(self.twin[prev_halfedge(h)])
        return fan

    def neighbors(self, v: int) -> List[int]:
        return [int(self.tip[h]) for h in self.outgoing(v)]

    def edge_endpoints(self, e: int) -> Tuple[int, int]:
        h = self.edge_halfedge[e]
        return int(self.tail[h]), int(self.tip[h])

    def halfedge_from(self, e: int, origin: int) -> int:
        """Halfedge of edge e leaving `origin`"""
        h = int(self.edge_halfedge[e])
        if self.tail[h] == origin:
            return h
        return int(self.twin[h])

    # Geometry (intrinsic: everything derives from halfedge lengths)
    @property
    def face_lengths(self) -> np.ndarray:
        return self.halfedge_lengths.reshape(-1, 3)

    @property
    def edge_lengths(self) -> np.ndarray:
        return self.halfedge_lengths[self.edge_halfedge]

    def corner_angles(self) -> np.ndarray:
        angles, invalid = triangle_angles(self.face_lengths)
        if np.any(invalid):
            raise DegenerateFace(int(np.flatnonzero(invalid)[0]))
        return angles

    def face_areas(self) -> np.ndarray:
        return triangle_areas(self.face_lengths)

    def surface_area(self) -> float:
        return float(self.face_areas().sum())

    def mean_edge_length(self) -> float:
        return float(self.edge_lengths.mean())

    def diameter(self) -> float:
        """Bounding-box diagonal of the embedding"""
        return float(np.linalg.norm(self.positions.max(axis=0) - self.positions.min(axis=0)))

    def point_position(self, face: int, bary: Sequence[float]) -> np.ndarray:
        return np.asarray(bary) @ self.positions[self.faces[face]]


@dataclass(frozen=True)
class SurfacePoint:
    face: int
    bary: Tuple[float, float, float]

    def __post_init__(self):
        b = np.asarray(self.bary, dtype=float)
        if b.shape != (3,) or np.any(b < -1e-12) or np.any(b > 1 + 1e-12) or abs(b.sum() - 1.0) > 1e-12:
            raise QuadLayoutError(f"Invalid barycentric coordinates {self.bary} in face {self.face}")

    @classmethod
    def barycenter(cls, face: int) -> "SurfacePoint":
        return cls(int(face), (1.0 / 3.0, 1.0 / 3.0, 1.0 - 2.0 / 3.0))

    @classmethod
    def at_corner(cls, face: int, local: int) -> "SurfacePoint":
        bary = [0.0, 0.0, 0.0]
        bary[local] = 1.0
        return cls(int(face), tuple(bary))

    @classmethod
    def normalized(cls, face: int, bary: Sequence[float]) -> "SurfacePoint":
        b = np.clip(np.asarray(bary, dtype=float), 0.0, None)
        b = b / b.sum()
        b[2] = 1.0 - b[0] - b[1]
        return cls(int(face), (float(b[0]), float(b[1]), float(b[2])))


@dataclass(frozen=True)
class Curve:
    tag: str
    halfedges: Tuple[int, ...]
    closed: bool = True

    def vertices(self, mesh: SurfaceMesh) -> List[int]:
        return [int(mesh.tail[h]) for h in self.halfedges]

    def is_consistent(self, mesh: SurfaceMesh) -> bool:
        hs = self.halfedges
        for a, b in zip(hs, hs[1:]):
            if mesh.tip[a] != mesh.tail[b]:
                return False
        if self.closed and hs and mesh.tip[hs[-1]] != mesh.tail[hs[0]]:
            return False
        return True

    def reversed(self, mesh: SurfaceMesh, tag: Optional[str] = None) -> "Curve":
        return Curve(tag or self.tag, tuple(int(mesh.twin[h]) for h in reversed(self.halfedges)), self.closed)


@dataclass(frozen=True)
class CurveGraph:
    curves: Tuple[Curve, ...] = ()

    def __len__(self):
        return len(self.curves)

    def __iter__(self):
        return iter(self.curves)

    def __getitem__(self, tag: str) -> Curve:
        for curve in self.curves:
            if curve.tag == tag:
                return curve
        raise KeyError(tag)

    def edge_set(self, mesh: SurfaceMesh) -> FrozenSet[int]:
        return frozenset(int(mesh.edge_of[h]) for curve in self.curves for h in curve.halfedges)

    def vertex_set(self, mesh: SurfaceMesh) -> FrozenSet[int]:
        out = set()
        for curve in self.curves:
            for h in curve.halfedges:
                out.add(int(mesh.tail[h]))
                out.add(int(mesh.tip[h]))
        return frozenset(out)

    def extended(self, curves: Iterable[Curve]) -> "CurveGraph":
        return CurveGraph(self.curves + tuple(curves))

    def to_dict(self) -> dict:
        return {"loops": [{"tag": c.tag, "halfedges": list(c.halfedges), "closed": c.closed}
                          for c in self.curves]}

    @classmethod
    def from_dict(cls, data: dict) -> "CurveGraph":
        return cls(tuple(Curve(item["tag"], tuple(int(h) for h in item["halfedges"]),
                               bool(item.get("closed", True)))
                         for item in data.get("loops", [])))


@dataclass(frozen=True)
class SlicedMesh:
    """Surface cut open along an edge set; halfedge ids are shared with the source mesh"""
    source: SurfaceMesh
    faces: np.ndarray
    vertex_source: np.ndarray
    cut_edges: FrozenSet[int]
    twin: np.ndarray

    @property
    def n_vertices(self) -> int:
        return len(self.vertex_source)

    @property
    def n_edges(self) -> int:
        return self.source.n_edges + len(self.cut_edges)

    @property
    def euler_characteristic(self) -> int:
        return self.n_vertices - self.n_edges + len(self.faces)

    @property
    def corner_vertex(self) -> np.ndarray:
        return self.faces.ravel()

    def boundary_halfedges(self) -> np.ndarray:
        return np.flatnonzero(self.twin < 0)

    def copies_of(self, v: int) -> np.ndarray:
        return np.flatnonzero(self.vertex_source == v)


# Operations
def load_mesh(path: Union[str, Path]) -> SurfaceMesh:
    """Load a closed triangle mesh from OBJ or PLY, keeping file order"""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".obj":
        positions, faces = _read_obj(path)
    elif suffix == ".ply":
        positions, faces = _read_ply(path)
    else:
        raise QuadLayoutError(f"Unsupported mesh format '{suffix}'", path=str(path))
    for index, face in enumerate(faces):
        if len(face) != 3:
            raise NonTriangleFace(index, len(face))
    mesh = SurfaceMesh.from_faces(positions, faces)
    logger.info(f"Loaded {path.name}: V={mesh.n_vertices} E={mesh.n_edges} F={mesh.n_faces} g={mesh.genus}")
    return mesh


def _read_obj(path: Path) -> Tuple[np.ndarray, List[List[int]]]:
    positions: List[List[float]] = []
    faces: List[List[int]] = []
    dim = 3
    with open(path, "r") as handle:
        for line in handle:
            parts = line.split()
            if not parts:
                continue
            if parts[:2] == ["#", "dim"]:
                dim = int(parts[2])
            elif parts[0] == "v":
                positions.append([float(x) for x in parts[1:1 + dim]])
            elif parts[0] == "f":
                face = []
                for token in parts[1:]:
                    index = int(token.split("/")[0])
                    face.append(index - 1 if index > 0 else len(positions) + index)
                faces.append(face)
    return np.asarray(positions, dtype=float), faces


def _read_ply(path: Path) -> Tuple[np.ndarray, List[List[int]]]:
    ply = PlyData.read(str(path))
    vertex = ply["vertex"]
    positions = np.column_stack([vertex["x"], vertex["y"], vertex["z"]]).astype(float)
    face_element = ply["face"]
    key = "vertex_indices" if "vertex_indices" in face_element.data.dtype.names else "vertex_index"
    faces = [list(map(int, f)) for f in face_element[key]]
    return positions, faces


def save_mesh(mesh: SurfaceMesh, path: Union[str, Path]) -> Path:
    """Write OBJ with 17 significant digits so positions round-trip exactly"""
    path = Path(path)
    dim = mesh.positions.shape[1]
    lines = [f"# dim {dim}"] if dim != 3 else []
    lines += ["v " + " ".join(f"{x:.17g}" for x in p) for p in mesh.positions]
    lines += [f"f {i + 1} {j + 1} {k + 1}" for i, j, k in mesh.faces.tolist()]
    path.write_text("\n".join(lines) + "\n")
    return path


def genus(mesh: SurfaceMesh) -> int:
    return (2 - mesh.n_vertices + mesh.n_edges - mesh.n_faces) // 2


def angle_defect_curvature(mesh: SurfaceMesh) -> np.ndarray:
    """K(v) = 2*pi minus the sum of corner angles at v"""
    angles = mesh.corner_angles()
    total = np.bincount(mesh.tail, weights=angles.ravel(), minlength=mesh.n_vertices)
    return 2.0 * np.pi - total


def cotan_edge_weights(mesh: SurfaceMesh) -> np.ndarray:
    """(cot alpha + cot beta) / 2 per edge"""
    cot = cotan_opposite(mesh.face_lengths).ravel()
    h = mesh.edge_halfedge
    return 0.5 * (cot[h] + cot[mesh.twin[h]])


def slice_along(mesh: SurfaceMesh, cut: Union[CurveGraph, Iterable[int]]) -> SlicedMesh:
    """Cut the surface open along an edge set, duplicating vertices per wedge"""
    cut_edges = cut.edge_set(mesh) if isinstance(cut, CurveGraph) else frozenset(int(e) for e in cut)
    is_cut = np.zeros(mesh.n_edges, dtype=bool)
    is_cut[list(cut_edges)] = True

    corner_vertex = np.full(mesh.n_halfedges, -1, dtype=np.int64)
    vertex_source: List[int] = []
    for v in range(mesh.n_vertices):
        fan = mesh.outgoing(v)
        starts = [i for i, h in enumerate(fan) if is_cut[mesh.edge_of[h]]]
        if starts:
            fan = fan[starts[0]:] + fan[:starts[0]]
        for i, h in enumerate(fan):
            # each cut halfedge opens a new wedge
            if i == 0 or is_cut[mesh.edge_of[h]]:
                vertex_source.append(v)
            corner_vertex[h] = len(vertex_source) - 1

    twin = mesh.twin.copy()
    twin[is_cut[mesh.edge_of]] = -1

    # Face connectivity through uncut edges
    h = np.flatnonzero(twin >= 0)
    adjacency = coo_matrix((np.ones(len(h)), (h // 3, twin[h] // 3)), shape=(mesh.n_faces, mesh.n_faces))
    count, _ = connected_components(adjacency, directed=False)
    if count != 1:
        raise CutDisconnects(int(count))

    sliced = SlicedMesh(
        source=mesh,
        faces=corner_vertex.reshape(-1, 3),
        vertex_source=np.asarray(vertex_source, dtype=np.int64),
        cut_edges=cut_edges,
        twin=twin,
    )
    logger.info(f"Sliced along {len(cut_edges)} edges: V'={sliced.n_vertices} chi={sliced.euler_characteristic}")
    return sliced


@dataclass(frozen=True)
class DivisorTerm:
    point: SurfacePoint
    order: int


@dataclass(frozen=True)
class Divisor:
    """Finite formal sum of surface points with nonzero integer orders"""
    terms: Tuple[DivisorTerm, ...] = ()

    def __post_init__(self):
        for term in self.terms:
            if term.order == 0:
                raise QuadLayoutError(f"Divisor term in face {term.point.face} has order 0")

    def __len__(self) -> int:
        return len(self.terms)

    def __iter__(self):
        return iter(self.terms)

    def __add__(self, other: "Divisor") -> "Divisor":
        return Divisor(self.terms + other.terms)

    @property
    def degree(self) -> int:
        return sum(term.order for term in self.terms)

    @property
    def points(self) -> List[SurfacePoint]:
        return [term.point for term in self.terms]

    @property
    def orders(self) -> np.ndarray:
        return np.asarray([term.order for term in self.terms], dtype=np.int64)

    def scaled(self, factor: int) -> "Divisor":
        return Divisor(tuple(DivisorTerm(t.point, t.order * factor) for t in self.terms))

    def negated(self) -> "Divisor":
        return self.scaled(-1)

    def with_points(self, points: Sequence[SurfacePoint]) -> "Divisor":
        return Divisor(tuple(DivisorTerm(p, t.order) for p, t in zip(points, self.terms)))

    def to_list(self) -> List[dict]:
        return [{"face": t.point.face, "bary": list(t.point.bary), "order": t.order} for t in self.terms]

    @classmethod
    def from_list(cls, items: Iterable[dict]) -> "Divisor":
        return cls(tuple(DivisorTerm(SurfacePoint.normalized(item["face"], item["bary"]), int(item["order"]))
                         for item in items))
