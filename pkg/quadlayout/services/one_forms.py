"""
Discrete 1-forms on the primal mesh: cohomology basis, harmonic projection,
Hodge star, holomorphic basis, normalization and zero detection.

Forms are stored per halfedge with values[twin[h]] == -values[h].
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
from scipy import linalg as sla
from scipy.sparse import coo_matrix
from scipy.sparse.linalg import factorized

from ..core.config import settings
from ..core.errors import DegreeMismatch, IllConditioned, NormalizationBroken, QuadLayoutError, RankDeficiency, SolverFailure
from .homology import HomologyBasis, dual_cocycle
from .mesh_core import (
    Curve,
    Divisor,
    DivisorTerm,
    SurfaceMesh,
    SurfacePoint,
    angle_defect_curvature,
    cotan_edge_weights,
    face_charts,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DiscreteOneForm:
    values: np.ndarray
    tag: str = ""

    def integrate(self, curve: Curve) -> float:
        return float(self.values[list(curve.halfedges)].sum())

    def face_sums(self) -> np.ndarray:
        """Discrete exterior derivative: zero on every face for closed forms"""
        return self.values.reshape(-1, 3).sum(axis=1)

    def __add__(self, other: "DiscreteOneForm") -> "DiscreteOneForm":
        return DiscreteOneForm(self.values + other.values, self.tag)

    def __mul__(self, scalar: float) -> "DiscreteOneForm":
        return DiscreteOneForm(self.values * scalar, self.tag)

    __rmul__ = __mul__


@dataclass(frozen=True)
class HolomorphicOneForm:
    """phi = omega + i * (*omega) with omega harmonic"""
    real: np.ndarray
    imag: np.ndarray
    tag: str = ""

    @property
    def values(self) -> np.ndarray:
        return self.real + 1j * self.imag

    @classmethod
    def from_complex(cls, values: np.ndarray, tag: str = "") -> "HolomorphicOneForm":
        return cls(np.ascontiguousarray(values.real), np.ascontiguousarray(values.imag), tag)

    def integrate(self, curve: Curve) -> complex:
        return complex(self.values[list(curve.halfedges)].sum())

    def is_zero(self) -> bool:
        return not (np.any(self.real) or np.any(self.imag))


@dataclass(frozen=True)
class HolomorphicBasis:
    """g spanning forms plus the 2g generator forms they were selected from (tags a1, b1, ...)"""
    forms: Tuple[HolomorphicOneForm, ...]
    generators: Tuple[HolomorphicOneForm, ...]
    normalized: bool = False
    selected: Tuple[int, ...] = ()

    @property
    def genus(self) -> int:
        return len(self.forms)

    def matrix(self) -> np.ndarray:
        """g x H complex values"""
        return np.vstack([phi.values for phi in self.forms])


def _exact(mesh: SurfaceMesh, potential: np.ndarray) -> np.ndarray:
    return potential[mesh.tip] - potential[mesh.tail]


def cohomology_basis(mesh: SurfaceMesh, homology: HomologyBasis, seed: Optional[int] = None) -> List[DiscreteOneForm]:
    """Closed forms whose periods along the basis loops are their intersection numbers.

    Each form is the dual cocycle of its loop plus a seeded random exact form.
    """
    rng = np.random.default_rng(settings.seed if seed is None else seed)
    forms = []
    for curve in homology.ordered():
        values = dual_cocycle(mesh, curve).astype(float) + _exact(mesh, rng.standard_normal(mesh.n_vertices))
        forms.append(DiscreteOneForm(values, curve.tag))
    return forms


class HarmonicSolver:
    """Cotan Laplacian with vertex 0 pinned, factorized once and shared by every solve"""

    def __init__(self, mesh: SurfaceMesh, tol: Optional[float] = None):
        self.mesh = mesh
        self.tol = settings.solver_tol if tol is None else tol
        self.weights = cotan_edge_weights(mesh)
        h = mesh.edge_halfedge
        i, j = mesh.tail[h], mesh.tip[h]
        n = mesh.n_vertices
        w = self.weights
        off = coo_matrix((np.concatenate([w, w]), (np.concatenate([i, j]), np.concatenate([j, i]))), shape=(n, n))
        diag = np.asarray(off.sum(axis=1)).ravel()
        # positive semidefinite: diag - off
        self.laplacian = (coo_matrix((diag, (np.arange(n), np.arange(n))), shape=(n, n)) - off).tocsc()
        self._solve = factorized(self.laplacian[1:, 1:].tocsc())

    def codifferential(self, values: np.ndarray) -> np.ndarray:
        """Weighted divergence sum_j w_ij * lambda(i->j) at each vertex"""
        mesh = self.mesh
        h = mesh.edge_halfedge
        flux = self.weights * values[h]
        n = mesh.n_vertices
        return (np.bincount(mesh.tail[h], weights=flux, minlength=n)
                - np.bincount(mesh.tip[h], weights=flux, minlength=n))

    def harmonize(self, form: DiscreteOneForm) -> DiscreteOneForm:
        mesh = self.mesh
        div = self.codifferential(form.values)
        potential = np.zeros(mesh.n_vertices)
        # L f = div makes lambda + df co-closed
        potential[1:] = self._solve(div[1:])
        values = form.values + _exact(mesh, potential)

        h = mesh.edge_halfedge
        scale = np.linalg.norm(np.bincount(mesh.tail[h], weights=np.abs(self.weights * form.values[h]),
                                           minlength=mesh.n_vertices))
        residual = np.linalg.norm(self.codifferential(values)) / max(scale, np.finfo(float).tiny)
        if residual > self.tol:
            raise SolverFailure(float(residual), self.tol)
        return DiscreteOneForm(values, form.tag)


def harmonize(mesh: SurfaceMesh, form: DiscreteOneForm, tol: Optional[float] = None) -> DiscreteOneForm:
    """Add the exact form df that makes `form` co-closed; periods are unchanged"""
    return HarmonicSolver(mesh, tol).harmonize(form)


def face_fields(mesh: SurfaceMesh, values: np.ndarray) -> np.ndarray:
    """Constant vector per face, in that face's chart, whose edge integrals match the form"""
    charts = face_charts(mesh.face_lengths)
    v = values.reshape(-1, 3)
    a = v[:, 0]
    b = -v[:, 2]
    e1 = charts[:, 1].real
    e2 = charts[:, 2]
    x = a / e1
    y = (b - x * e2.real) / e2.imag
    return x + 1j * y


def inner_product(mesh: SurfaceMesh, alpha: np.ndarray, beta: np.ndarray) -> float:
    """L2 pairing of two forms through their face fields"""
    area = mesh.face_areas()
    fa = face_fields(mesh, alpha)
    fb = face_fields(mesh, beta)
    return float(np.sum(area * (np.conj(fa) * fb).real))


def hodge_star(mesh: SurfaceMesh, form: DiscreteOneForm,
               harmonic_basis: Sequence[DiscreteOneForm]) -> DiscreteOneForm:
    """Rotate the face fields a quarter turn and project onto the harmonic span"""
    area = mesh.face_areas()
    fields = [face_fields(mesh, h.values) for h in harmonic_basis]
    rotated = 1j * face_fields(mesh, form.values)
    gram = np.array([[np.sum(area * (np.conj(fi) * fj).real) for fj in fields] for fi in fields])
    rhs = np.array([np.sum(area * (np.conj(fi) * rotated).real) for fi in fields])
    coefficients = sla.solve(gram, rhs, assume_a="pos")
    values = sum(c * h.values for c, h in zip(coefficients, harmonic_basis))
    return DiscreteOneForm(np.asarray(values, dtype=float), form.tag)


def a_period_matrix(homology: HomologyBasis, forms: Sequence[HolomorphicOneForm]) -> np.ndarray:
    return np.array([[phi.integrate(a) for phi in forms] for a in homology.a_loops()], dtype=complex)


def holomorphic_basis(mesh: SurfaceMesh, homology: HomologyBasis, seed: Optional[int] = None,
                      tol: Optional[float] = None) -> HolomorphicBasis:
    """2g generator forms omega + i*omega from the harmonic basis, then g with independent a-periods"""
    g = homology.genus
    solver = HarmonicSolver(mesh, tol)
    harmonic = [solver.harmonize(form) for form in cohomology_basis(mesh, homology, seed)]
    generators = tuple(
        HolomorphicOneForm(h.values, hodge_star(mesh, h, harmonic).values, h.tag) for h in harmonic
    )

    A = a_period_matrix(homology, generators)
    singular = np.linalg.svd(A, compute_uv=False)
    rank = int(np.sum(singular > 1e-8 * max(singular[0], 1.0)))
    if rank < g:
        raise RankDeficiency(rank, g)
    _, _, pivots = sla.qr(A, pivoting=True)
    selected = tuple(sorted(int(k) for k in pivots[:g]))
    forms = tuple(HolomorphicOneForm(generators[k].real, generators[k].imag, f"phi{i + 1}")
                  for i, k in enumerate(selected))
    logger.info(f"Holomorphic basis from generators {[generators[k].tag for k in selected]}")
    return HolomorphicBasis(forms, generators, normalized=False, selected=selected)


def normalize_basis(basis: HolomorphicBasis, homology: HomologyBasis,
                    condition_limit: Optional[float] = None) -> HolomorphicBasis:
    """Change of basis by A^-1 so that the a-periods become the identity"""
    limit = settings.condition_limit if condition_limit is None else condition_limit
    A = a_period_matrix(homology, basis.forms)
    condition = float(np.linalg.cond(A))
    if not np.isfinite(condition) or condition > limit:
        raise IllConditioned(condition)
    C = np.linalg.inv(A)
    values = C.T @ basis.matrix()
    forms = tuple(HolomorphicOneForm.from_complex(row, f"phi{i + 1}") for i, row in enumerate(values))

    check = a_period_matrix(homology, forms)
    deviation = float(np.max(np.abs(check - np.eye(len(forms)))))
    if deviation > 1e-8:
        raise NormalizationBroken(f"Normalized a-periods deviate from identity by {deviation:.3e}",
                                  deviation=deviation)
    logger.info(f"Normalized basis: cond(A)={condition:.3e}")
    return HolomorphicBasis(forms, basis.generators, normalized=True, selected=basis.selected)


def combined_form(basis: HolomorphicBasis, coefficients: Optional[Sequence[float]] = None) -> HolomorphicOneForm:
    """sum alpha_k phi_{a_k} + beta_k phi_{b_k}; coefficients are (alpha_1..alpha_g, beta_1..beta_g)"""
    g = len(basis.generators) // 2
    c = np.ones(2 * g) if coefficients is None else np.asarray(coefficients, dtype=float)
    if c.shape != (2 * g,):
        raise QuadLayoutError(f"Expected {2 * g} coefficients, got {c.size}")
    values = np.zeros_like(basis.generators[0].values)
    for k in range(g):
        values = values + c[k] * basis.generators[2 * k].values + c[g + k] * basis.generators[2 * k + 1].values
    return HolomorphicOneForm.from_complex(values, "combined")


def vertex_indices(mesh: SurfaceMesh, form: HolomorphicOneForm) -> np.ndarray:
    """Poincare-Hopf index of the real part's face field at each vertex"""
    fields = face_fields(mesh, form.real)
    charts = face_charts(mesh.face_lengths)
    edges = (charts[:, [1, 2, 0]] - charts).ravel()
    incoming_back = -edges.reshape(-1, 3)[:, [2, 0, 1]].ravel()
    face = np.arange(mesh.n_halfedges) // 3
    # angle of X relative to the outgoing edge h, and to the CCW-next edge at the same corner
    theta_out = np.angle(fields[face] / edges)
    theta_next = np.angle(fields[face] / incoming_back)

    curvature = angle_defect_curvature(mesh)
    index = np.zeros(mesh.n_vertices, dtype=np.int64)
    for v in range(mesh.n_vertices):
        fan = mesh.outgoing(v)
        total = 0.0
        for position, h in enumerate(fan):
            h_next = fan[(position + 1) % len(fan)]
            total += np.angle(np.exp(1j * (theta_out[h_next] - theta_next[h])))
        value = (total + curvature[v]) / (2.0 * np.pi)
        index[v] = int(np.rint(value))
    return index


def _vertex_magnitudes(mesh: SurfaceMesh, magnitude: np.ndarray) -> np.ndarray:
    sums = np.bincount(mesh.tail, weights=np.repeat(magnitude, 3), minlength=mesh.n_vertices)
    counts = np.bincount(mesh.tail, minlength=mesh.n_vertices)
    return sums / np.maximum(counts, 1)


def locate_zeros(mesh: SurfaceMesh, form: HolomorphicOneForm) -> Divisor:
    """Zero divisor of a holomorphic form; clusters of adjacent singular vertices merge into one point"""
    if form.is_zero():
        raise QuadLayoutError("Cannot locate zeros of the zero form")
    expected = 2 * mesh.genus - 2
    order = -vertex_indices(mesh, form)
    singular = [int(v) for v in np.flatnonzero(order)]

    graph = nx.Graph()
    graph.add_nodes_from(singular)
    marked = set(singular)
    for v in singular:
        graph.add_edges_from((v, w) for w in mesh.neighbors(v) if w in marked)
    clusters = sorted((sorted(c) for c in nx.connected_components(graph)), key=lambda c: c[0])

    magnitude = np.abs(face_fields(mesh, form.real))
    vertex_magnitude = _vertex_magnitudes(mesh, magnitude)
    terms: List[DivisorTerm] = []
    for cluster in clusters:
        total = int(order[cluster].sum())
        if total < 0:
            raise DegreeMismatch(total, expected)
        if total == 0:
            continue
        candidates = sorted({h // 3 for v in cluster for h in mesh.outgoing(v)})
        face = min(candidates, key=lambda f: (magnitude[f], f))
        weights = 1.0 / (vertex_magnitude[mesh.faces[face]] + 1e-300)
        terms.append(DivisorTerm(SurfacePoint.normalized(face, weights), total))

    divisor = Divisor(tuple(terms))
    if divisor.degree != expected:
        raise DegreeMismatch(divisor.degree, expected)
    logger.info(f"Located {len(divisor)} zeros, orders {divisor.orders.tolist()}")
    return divisor
