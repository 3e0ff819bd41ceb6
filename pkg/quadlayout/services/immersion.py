"""
Isometric development of the flat cone metric into the plane, and checkerboard texture export
"""
import logging
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np
from PIL import Image

from ..core.config import settings
from ..core.errors import AugmentationFailed, HolonomyNotQuantized, MissingArtifact, QuadLayoutError, ZeroScale
from .mesh_core import Curve, CurveGraph, SlicedMesh, SurfaceMesh, face_charts, next_halfedge, slice_along
from .ricci_flow import quarter_turn_deviation

logger = logging.getLogger(__name__)

QUARTER_TURNS = (1 + 0j, 1j, -1 + 0j, -1j)


@dataclass(frozen=True)
class Transition:
    """Rigid motion z -> rotation * z + translation taking face(h)'s copy of a cut edge to face(twin)'s copy"""
    halfedge: int
    twin: int
    rotation_degrees: float
    quarter_turns: int
    translation: complex

    @property
    def rotation(self) -> complex:
        return QUARTER_TURNS[self.quarter_turns % 4]

    def apply(self, z: complex) -> complex:
        return self.rotation * z + self.translation

    def to_dict(self) -> dict:
        return {
            "halfedge": self.halfedge,
            "twin": self.twin,
            "rotation_degrees": self.rotation_degrees,
            "rotation_quarter_turns": self.quarter_turns,
            "translation": [self.translation.real, self.translation.imag],
        }


@dataclass
class Immersion:
    mesh: SurfaceMesh
    sliced: SlicedMesh
    cut: CurveGraph
    coords: np.ndarray
    seed_face: int
    transitions: Dict[int, Transition]
    fold_overs: int = 0

    def face_coords(self, face: int) -> np.ndarray:
        return self.coords[3 * face:3 * face + 3]

    def transition(self, h: int) -> Optional[Transition]:
        return self.transitions.get(int(h))


def _edge_graph(mesh: SurfaceMesh, blocked: set) -> nx.Graph:
    graph = nx.Graph()
    lengths = mesh.edge_lengths
    for e in range(mesh.n_edges):
        u, v = mesh.edge_endpoints(e)
        if u == v or u in blocked or v in blocked:
            continue
        if graph.has_edge(u, v) and graph[u][v]["weight"] <= lengths[e]:
            continue
        graph.add_edge(u, v, weight=float(lengths[e]), edge=e)
    return graph


def augment_cut_graph(mesh: SurfaceMesh, cut: CurveGraph, cones: Sequence[int]) -> CurveGraph:
    """Add pairwise disjoint shortest paths from each cone off the cut to the cut graph"""
    cut_vertices = set(cut.vertex_set(mesh))
    pending = [int(v) for v in cones if int(v) not in cut_vertices]
    if not pending:
        return cut

    full = _edge_graph(mesh, set())
    distance = nx.multi_source_dijkstra_path_length(full, cut_vertices)
    pending.sort(key=lambda v: (distance.get(v, np.inf), v))

    blocked: set = set()
    paths: List[Curve] = []
    for index, cone in enumerate(pending):
        graph = _edge_graph(mesh, blocked | (set(pending) - {cone}))
        sources = [v for v in cut_vertices if v in graph]
        if cone not in graph or not sources:
            raise AugmentationFailed(cone)
        try:
            _, path = nx.multi_source_dijkstra(graph, sources, target=cone)
        except nx.NetworkXNoPath:
            raise AugmentationFailed(cone)
        halfedges = tuple(mesh.halfedge_from(graph[a][b]["edge"], a) for a, b in zip(path, path[1:]))
        paths.append(Curve(f"gamma{index + 1}", halfedges, closed=False))
        blocked.update(v for v in path if v not in cut_vertices)

    logger.info(f"Augmented cut with {len(paths)} cone paths, total {sum(len(p.halfedges) for p in paths)} edges")
    return cut.extended(paths)


def flatten(mesh: SurfaceMesh, cut: CurveGraph, seed_face: int = 0) -> Immersion:
    """Breadth-first rigid layout of the sliced surface from a seed face"""
    sliced = slice_along(mesh, cut)
    charts = face_charts(mesh.face_lengths)
    coords = np.zeros(mesh.n_halfedges, dtype=complex)
    placed = np.zeros(mesh.n_faces, dtype=bool)

    coords[3 * seed_face:3 * seed_face + 3] = charts[seed_face]
    placed[seed_face] = True
    queue = deque([seed_face])
    while queue:
        f = queue.popleft()
        for h in range(3 * f, 3 * f + 3):
            t = int(sliced.twin[h])
            if t < 0 or placed[t // 3]:
                continue
            g = t // 3
            a, b = coords[h], coords[next_halfedge(h)]
            ca, cb = charts[g, (t % 3 + 1) % 3], charts[g, t % 3]
            rotation = (a - b) / abs(a - b) / ((ca - cb) / abs(ca - cb))
            coords[3 * g:3 * g + 3] = b + rotation * (charts[g] - cb)
            placed[g] = True
            queue.append(g)
    if not placed.all():
        raise QuadLayoutError(f"Layout reached {int(placed.sum())} of {mesh.n_faces} faces")

    transitions: Dict[int, Transition] = {}
    for h in np.flatnonzero(sliced.twin < 0):
        h = int(h)
        t = int(mesh.twin[h])
        a0, a1 = coords[h], coords[next_halfedge(h)]
        b0, b1 = coords[next_halfedge(t)], coords[t]
        rotation = (b1 - b0) / (a1 - a0)
        rotation /= abs(rotation)
        degrees = float(np.degrees(np.angle(rotation)) % 360.0)
        quarter = int(np.rint(degrees / 90.0)) % 4
        translation = complex(b0 - QUARTER_TURNS[quarter] * a0)
        transitions[h] = Transition(h, t, degrees, quarter, translation)

    immersion = Immersion(mesh, sliced, cut, coords, seed_face, transitions)
    immersion.fold_overs = fold_over_count(immersion)
    logger.info(f"Flattened {mesh.n_faces} faces from seed {seed_face}: {len(transitions) // 2} cut edges, "
                f"{immersion.fold_overs} fold-overs, isometry error {isometry_error(immersion):.2e}")
    return immersion


def planar_length_error(coords: np.ndarray, lengths: np.ndarray) -> float:
    """Max relative difference between the edges of per-corner planar coordinates and the given lengths"""
    z = np.asarray(coords).reshape(-1, 3)
    planar = np.abs(z[:, [1, 2, 0]] - z).ravel()
    return float(np.max(np.abs(planar - lengths) / lengths))


def isometry_error(imm: Immersion) -> float:
    return planar_length_error(imm.coords, imm.mesh.halfedge_lengths)


def transition_deviation(imm: Immersion) -> Tuple[float, Optional[Transition]]:
    """Worst distance (degrees) of a cut transition rotation from a quarter turn, and that transition"""
    worst, which = 0.0, None
    for h in sorted(imm.transitions):
        deviation = quarter_turn_deviation(imm.transitions[h].rotation_degrees)
        if deviation > worst:
            worst, which = deviation, imm.transitions[h]
    return worst, which


def check_transitions(imm: Immersion, tol_degrees: Optional[float] = None) -> float:
    tol_degrees = settings.holonomy_tol_degrees if tol_degrees is None else tol_degrees
    worst, which = transition_deviation(imm)
    if worst > tol_degrees:
        raise HolonomyNotQuantized(f"cut transition at halfedge {which.halfedge}", which.rotation_degrees, worst)
    return worst


def corner_coords_from_obj(path: Union[str, Path], scale: Optional[float] = None) -> np.ndarray:
    """Per-corner planar coordinates read back from a checkerboard OBJ (vt / scale, in face order)"""
    scale = settings.checker_scale if scale is None else scale
    if scale == 0:
        raise ZeroScale()
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(str(path))
    uv: List[complex] = []
    corners: List[int] = []
    for line in path.read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "vt":
            uv.append(complex(float(parts[1]), float(parts[2])))
        elif parts[0] == "f":
            corners += [int(token.split("/")[1]) - 1 for token in parts[1:4]]
    return np.asarray(uv, dtype=complex)[corners] / scale


def fold_over_count(imm: Immersion) -> int:
    """Faces whose centroid lies strictly inside another, non-adjacent face of the layout"""
    z = imm.coords.reshape(-1, 3)
    centroids = z.mean(axis=1)
    lo = z.real.min(axis=1) + 1j * z.imag.min(axis=1)
    hi = z.real.max(axis=1) + 1j * z.imag.max(axis=1)
    cell = max(float(np.mean(np.abs(z[:, 1] - z[:, 0]))), 1e-12)
    buckets: Dict[Tuple[int, int], List[int]] = {}
    for f in range(len(z)):
        for ix in range(int(np.floor(lo[f].real / cell)), int(np.floor(hi[f].real / cell)) + 1):
            for iy in range(int(np.floor(lo[f].imag / cell)), int(np.floor(hi[f].imag / cell)) + 1):
                buckets.setdefault((ix, iy), []).append(f)

    vertex_faces = imm.mesh.faces
    count = 0
    for f, c in enumerate(centroids):
        key = (int(np.floor(c.real / cell)), int(np.floor(c.imag / cell)))
        for other in buckets.get(key, []):
            if other == f or set(vertex_faces[f]) & set(vertex_faces[other]):
                continue
            if _inside(c, z[other]):
                count += 1
                break
    return count


def _inside(p: complex, tri: np.ndarray) -> bool:
    for k in range(3):
        a, b = tri[k], tri[(k + 1) % 3]
        if ((b - a).conjugate() * (p - a)).imag <= 1e-12:
            return False
    return True


def rigid_alignment(source: np.ndarray, target: np.ndarray) -> Tuple[np.ndarray, float]:
    """Best rotation + translation of complex points onto target; returns aligned points and max deviation"""
    sc, tc = source.mean(), target.mean()
    cross = np.sum(np.conj(source - sc) * (target - tc))
    rotation = cross / abs(cross) if abs(cross) > 0 else 1.0
    aligned = rotation * (source - sc) + tc
    return aligned, float(np.max(np.abs(aligned - target)))


def boundary_wedge_angle(imm: Immersion, vertex: int) -> float:
    """Total corner angle at all copies of a vertex (2*pi minus its curvature)"""
    angles = imm.mesh.corner_angles().ravel()
    return float(angles[imm.mesh.tail == vertex].sum())


def checkerboard_texture(size: Optional[int] = None, squares: int = 2) -> Image.Image:
    size = size or settings.texture_size
    cell = max(size // squares, 1)
    index = np.arange(size) // cell
    pattern = (index[:, None] + index[None, :]) % 2
    pixels = np.where(pattern[..., None] == 0, 240, 30).astype(np.uint8).repeat(3, axis=2)
    return Image.fromarray(pixels, mode="RGB")


def checkerboard_export(imm: Immersion, out_dir: Union[str, Path], scale: Optional[float] = None,
                        name: str = "immersion") -> Dict[str, Path]:
    """Textured OBJ (vt = coordinates * scale), its MTL and a checkerboard PNG"""
    scale = settings.checker_scale if scale is None else scale
    if scale == 0:
        raise ZeroScale()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    obj_path, mtl_path, png_path = out_dir / f"{name}.obj", out_dir / f"{name}.mtl", out_dir / "checker.png"

    checkerboard_texture().save(png_path)
    mtl_path.write_text(f"newmtl checker\nKa 1 1 1\nKd 1 1 1\nmap_Kd {png_path.name}\n")

    uv = imm.coords * scale
    lines = [f"mtllib {mtl_path.name}"]
    for p in imm.mesh.positions:
        lines.append("v " + " ".join(f"{x:.17g}" for x in list(p[:3]) + [0.0] * (3 - min(len(p), 3))))
    lines += [f"vt {z.real:.17g} {z.imag:.17g}" for z in uv]
    lines.append("usemtl checker")
    for f, (i, j, k) in enumerate(imm.mesh.faces.tolist()):
        c = 3 * f
        lines.append(f"f {i + 1}/{c + 1} {j + 1}/{c + 2} {k + 1}/{c + 3}")
    obj_path.write_text("\n".join(lines) + "\n")
    logger.info(f"Wrote checkerboard export {obj_path}")
    return {"obj": obj_path, "mtl": mtl_path, "png": png_path}
