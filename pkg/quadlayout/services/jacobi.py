"""
Period matrix, Jacobian lattice, Abel-Jacobi map and closest-lattice-vector reduction
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

from ..core.config import settings
from ..core.errors import LatticeDegenerate, LatticeDimensionTooLarge, NormalizationBroken, PointOnCut
from .homology import HomologyBasis, compute_cut_graph
from .mesh_core import Curve, CurveGraph, Divisor, SlicedMesh, SurfaceMesh, SurfacePoint, face_charts, slice_along, next_halfedge
from .one_forms import HolomorphicBasis

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PeriodMatrix:
    A: np.ndarray
    B: np.ndarray

    @property
    def genus(self) -> int:
        return self.A.shape[0]

    @property
    def symmetry_error(self) -> float:
        return float(np.max(np.abs(self.B - self.B.T)))

    @property
    def imag_min_eigenvalue(self) -> float:
        imag = 0.5 * (self.B.imag + self.B.imag.T)
        return float(np.linalg.eigvalsh(imag).min())


@dataclass(frozen=True)
class AbelJacobiImage:
    """phi = generators @ (s, t) + residual"""
    phi: np.ndarray
    residual: np.ndarray
    s: np.ndarray
    t: np.ndarray

    @property
    def residual_norm(self) -> float:
        return float(np.linalg.norm(self.residual))

    @property
    def integers(self) -> np.ndarray:
        return np.concatenate([self.s, self.t])


class JacobianLattice:
    """Lattice spanned by the 2g period vectors; column k < g is lambda_{a_k}, column g + k is lambda_{b_k}"""

    def __init__(self, generators: np.ndarray):
        self.generators = np.asarray(generators, dtype=complex)
        self.genus = self.generators.shape[0]
        self.real_basis = np.vstack([self.generators.real, self.generators.imag])
        gram = self.real_basis.T @ self.real_basis
        singular = np.linalg.svd(gram, compute_uv=False)
        if singular[-1] <= 1e-12 * singular[0]:
            raise LatticeDegenerate(f"Real Gram matrix is singular (smallest singular value {singular[-1]:.3e})",
                                    gram=gram.tolist())
        self.gram = gram
        self.reduced_basis, self.unimodular = lll_reduce(self.real_basis)

    @property
    def dimension(self) -> int:
        return 2 * self.genus

    def vector(self, s: Sequence[int], t: Sequence[int]) -> np.ndarray:
        return self.generators @ np.concatenate([np.asarray(s), np.asarray(t)]).astype(float)

    def coordinates(self, z: np.ndarray) -> np.ndarray:
        """Real lattice coordinates of a complex g-vector"""
        return np.linalg.solve(self.real_basis, _realify(z))

    def integer_coordinates(self, z: np.ndarray, tol: float = 1e-6) -> np.ndarray:
        x = self.coordinates(z)
        m = np.rint(x).astype(np.int64)
        if np.max(np.abs(x - m), initial=0.0) > tol:
            logger.warning(f"Vector is {np.max(np.abs(x - m)):.3e} away from the lattice")
        return m

    def shortest_vector_length(self) -> float:
        B = self.reduced_basis
        Q, Rr = np.linalg.qr(B)
        bound = float(np.min(np.sum(B ** 2, axis=0))) * (1 + 1e-9)
        candidates = [d for d, c in _enumerate(Rr, np.zeros(len(Rr)), bound) if np.any(c)]
        return float(np.sqrt(min(candidates)))


def _realify(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=complex)
    return np.concatenate([z.real, z.imag])


def lll_reduce(basis: np.ndarray, delta: float = 0.75) -> Tuple[np.ndarray, np.ndarray]:
    """LLL reduction of the columns; returns (reduced, U) with reduced = basis @ U and U unimodular"""
    B = np.array(basis, dtype=float)
    n = B.shape[1]
    U = np.eye(n, dtype=np.int64)

    def gram_schmidt():
        Q = np.zeros_like(B)
        mu = np.zeros((n, n))
        norms = np.zeros(n)
        for i in range(n):
            v = B[:, i].copy()
            for j in range(i):
                mu[i, j] = B[:, i] @ Q[:, j] / norms[j]
                v -= mu[i, j] * Q[:, j]
            Q[:, i] = v
            norms[i] = v @ v
        return Q, mu, norms

    Q, mu, norms = gram_schmidt()
    k = 1
    while k < n:
        for j in range(k - 1, -1, -1):
            q = int(np.rint(mu[k, j]))
            if q:
                B[:, k] -= q * B[:, j]
                U[:, k] -= q * U[:, j]
                mu[k, :j] -= q * mu[j, :j]
                mu[k, j] -= q
        if norms[k] >= (delta - mu[k, k - 1] ** 2) * norms[k - 1]:
            k += 1
        else:
            B[:, [k - 1, k]] = B[:, [k, k - 1]]
            U[:, [k - 1, k]] = U[:, [k, k - 1]]
            Q, mu, norms = gram_schmidt()
            k = max(k - 1, 1)
    return B, U


def _babai(B: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Nearest-plane coefficients of y in basis B"""
    n = B.shape[1]
    Q = np.zeros_like(B)
    for i in range(n):
        v = B[:, i].copy()
        for j in range(i):
            v -= (B[:, i] @ Q[:, j]) / (Q[:, j] @ Q[:, j]) * Q[:, j]
        Q[:, i] = v
    c = np.zeros(n, dtype=np.int64)
    r = np.array(y, dtype=float)
    for i in reversed(range(n)):
        c[i] = int(np.rint((r @ Q[:, i]) / (Q[:, i] @ Q[:, i])))
        r -= c[i] * B[:, i]
    return c


def _enumerate(Rr: np.ndarray, y: np.ndarray, bound: float) -> List[Tuple[float, np.ndarray]]:
    """All integer c with |y - Rr c|^2 <= bound, Rr upper triangular (depth-first, Fincke-Pohst)"""
    n = len(y)
    found: List[Tuple[float, np.ndarray]] = []
    c = np.zeros(n, dtype=np.int64)

    def search(i: int, partial: float):
        center = (y[i] - Rr[i, i + 1:] @ c[i + 1:]) / Rr[i, i]
        radius = np.sqrt(max(bound - partial, 0.0)) / abs(Rr[i, i])
        for value in range(int(np.ceil(center - radius - 1e-12)), int(np.floor(center + radius + 1e-12)) + 1):
            c[i] = value
            distance = partial + (Rr[i, i] * (value - center)) ** 2
            if distance > bound:
                continue
            if i == 0:
                found.append((float(distance), c.copy()))
            else:
                search(i - 1, distance)
        c[i] = 0

    search(n - 1, 0.0)
    return found


def reduce_mod_lattice(v: np.ndarray, lattice: JacobianLattice, approximate: bool = False,
                       cap: Optional[int] = None) -> AbelJacobiImage:
    """Closest lattice vector to v; ties go to the lexicographically smallest (s, t)"""
    cap = settings.exact_lattice_cap if cap is None else cap
    v = np.asarray(v, dtype=complex)
    y = _realify(v)
    B, U = lattice.reduced_basis, lattice.unimodular
    incumbent = _babai(B, y)

    if lattice.dimension > cap and not approximate:
        raise LatticeDimensionTooLarge(lattice.dimension, cap)
    if approximate:
        m = U @ incumbent
    else:
        Q, Rr = np.linalg.qr(B)
        target = Q.T @ y
        best = float(np.sum((y - B @ incumbent) ** 2))
        scale = float(np.max(np.sum(B ** 2, axis=0)))
        bound = best * (1 + 1e-9) + 1e-24 * scale
        found = _enumerate(Rr, target, bound)
        if not found:
            found = [(best, incumbent)]
        minimum = min(d for d, _ in found)
        ties = [U @ c for d, c in found if d <= minimum * (1 + 1e-9) + 1e-24 * scale]
        m = min(ties, key=lambda x: tuple(int(a) for a in x))
        if len(ties) > 1:
            logger.info(f"Lattice reduction tie among {len(ties)} points; chose {m.tolist()}")

    m = np.asarray(m, dtype=np.int64)
    g = lattice.genus
    residual = v - lattice.generators @ m.astype(float)
    return AbelJacobiImage(phi=v, residual=residual, s=m[:g], t=m[g:])


def period_matrix(basis: HolomorphicBasis, loops: HomologyBasis, tol: float = 1e-6) -> PeriodMatrix:
    """A[i, j] = integral of phi_j over a_i, B[i, j] over b_i"""
    A = np.array([[phi.integrate(a) for phi in basis.forms] for a in loops.a_loops()], dtype=complex)
    B = np.array([[phi.integrate(b) for phi in basis.forms] for b in loops.b_loops()], dtype=complex)
    deviation = float(np.max(np.abs(A - np.eye(len(A)))))
    if deviation > tol:
        raise NormalizationBroken(f"a-periods deviate from identity by {deviation:.3e}", deviation=deviation)
    pm = PeriodMatrix(A, B)
    riemann_health(pm)
    return pm


def riemann_health(pm: PeriodMatrix, tol: float = 1e-6) -> Dict[str, object]:
    """Riemann bilinear relations: B symmetric with positive-definite imaginary part"""
    report = {
        "symmetry_error": pm.symmetry_error,
        "imag_min_eigenvalue": pm.imag_min_eigenvalue,
    }
    report["ok"] = report["symmetry_error"] <= tol and report["imag_min_eigenvalue"] > 0
    if not report["ok"]:
        logger.warning(f"Period matrix fails the Riemann relations: {report}")
    return report


def build_lattice(pm: PeriodMatrix) -> JacobianLattice:
    return JacobianLattice(np.hstack([pm.A.T, pm.B.T]))


class AbelJacobiMap:
    """Integrals of the basis forms from a base vertex inside the disk obtained by slicing along the cut"""

    def __init__(self, mesh: SurfaceMesh, basis: HolomorphicBasis, cut: Optional[CurveGraph] = None,
                 base_vertex: Optional[int] = None):
        self.mesh = mesh
        self.cut = cut if cut is not None else compute_cut_graph(mesh)
        self.sliced: SlicedMesh = slice_along(mesh, self.cut)
        self.forms = basis.matrix()
        self.charts = face_charts(mesh.face_lengths)

        self.cut_edge = np.zeros(mesh.n_edges, dtype=bool)
        self.cut_edge[list(self.cut.edge_set(mesh))] = True
        self.cut_vertex = np.zeros(mesh.n_vertices, dtype=bool)
        self.cut_vertex[list(self.cut.vertex_set(mesh))] = True

        self.base_vertex = self._farthest_from_cut() if base_vertex is None else int(base_vertex)
        if self.cut_vertex[self.base_vertex]:
            raise PointOnCut(int(mesh.vertex_halfedge[self.base_vertex] // 3))
        self.potentials = self._integrate()

    def _farthest_from_cut(self) -> int:
        mesh = self.mesh
        sources = [int(v) for v in np.flatnonzero(self.cut_vertex)]
        if not sources:
            return 0
        graph = nx.Graph()
        graph.add_nodes_from(range(mesh.n_vertices))
        graph.add_edges_from(mesh.edge_endpoints(e) for e in range(mesh.n_edges))
        distance = nx.multi_source_dijkstra_path_length(graph, sources)
        return max(range(mesh.n_vertices), key=lambda v: (distance.get(v, 0), -v))

    def _integrate(self) -> np.ndarray:
        """Potentials F (V' x g) on the sliced vertices with F(base) = 0"""
        mesh, sliced = self.mesh, self.sliced
        tail = sliced.corner_vertex
        tip = sliced.faces[:, [1, 2, 0]].ravel()
        graph = nx.Graph()
        graph.add_nodes_from(range(sliced.n_vertices))
        for h in range(mesh.n_halfedges):
            graph.add_edge(int(tail[h]), int(tip[h]), h=h)

        root = int(sliced.copies_of(self.base_vertex)[0])
        F = np.zeros((sliced.n_vertices, self.forms.shape[0]), dtype=complex)
        for u, w in nx.bfs_edges(graph, root):
            h = graph[u][w]["h"]
            step = self.forms[:, h] if tail[h] == u else -self.forms[:, h]
            F[w] = F[u] + step
        return F

    @property
    def genus(self) -> int:
        return self.forms.shape[0]

    def on_cut(self, point: SurfacePoint, eps: float = 1e-12) -> bool:
        f = point.face
        for k in range(3):
            if point.bary[k] <= eps and self.cut_edge[self.mesh.edge_of[3 * f + (k + 1) % 3]]:
                return True
            if point.bary[k] >= 1.0 - eps and self.cut_vertex[self.mesh.faces[f, k]]:
                return True
        return False

    def corner_potentials(self, face: int) -> np.ndarray:
        return self.potentials[self.sliced.faces[face]]

    def face_coefficients(self, face: int) -> Tuple[np.ndarray, np.ndarray]:
        """(a, b) with F(x, y) = F(corner 0) + a x + b y in the face chart"""
        F = self.corner_potentials(face)
        z1 = self.charts[face, 1].real
        z2 = self.charts[face, 2]
        a = (F[1] - F[0]) / z1
        b = (F[2] - F[0] - a * z2.real) / z2.imag
        return a, b

    def chart_position(self, point: SurfacePoint) -> complex:
        return complex(np.asarray(point.bary) @ self.charts[point.face])

    def vertex_image(self, v: int) -> np.ndarray:
        """Potential at a vertex; the copies of a cut vertex differ by periods"""
        return self.potentials[int(self.sliced.copies_of(v)[0])]

    def __call__(self, point: SurfacePoint) -> np.ndarray:
        corner = int(np.argmax(point.bary))
        if point.bary[corner] >= 1.0 - 1e-12:
            return self.vertex_image(int(self.mesh.faces[point.face, corner]))
        if self.on_cut(point):
            raise PointOnCut(point.face)
        return np.asarray(point.bary) @ self.corner_potentials(point.face)

    def divisor_image(self, divisor: Divisor) -> np.ndarray:
        total = np.zeros(self.genus, dtype=complex)
        for term in divisor:
            total += term.order * self(term.point)
        return total

    def integrate_path(self, curve: Curve) -> np.ndarray:
        """Integral along a halfedge path of the closed mesh (may cross the cut)"""
        return self.forms[:, list(curve.halfedges)].sum(axis=1)

    def jump(self, h: int) -> np.ndarray:
        """Potential change when crossing the edge of h from face(h) into face(twin h)"""
        mesh = self.mesh
        t = int(mesh.twin[h])
        own = self.potentials[self.sliced.corner_vertex[h]]
        other = self.potentials[self.sliced.corner_vertex[next_halfedge(t)]]
        return other - own


def abel_jacobi_point(ajmap: AbelJacobiMap, p: SurfacePoint, base: Optional[SurfacePoint] = None) -> np.ndarray:
    value = ajmap(p)
    if base is not None:
        value = value - ajmap(base)
    return value


def abel_jacobi_divisor(ajmap: AbelJacobiMap, divisor: Divisor, lattice: JacobianLattice,
                        approximate: bool = False) -> AbelJacobiImage:
    return reduce_mod_lattice(ajmap.divisor_image(divisor), lattice, approximate=approximate)
