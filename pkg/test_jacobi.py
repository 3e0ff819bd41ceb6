"""
Test period matrices, lattice reduction and the Abel-Jacobi map
"""
import networkx as nx
import numpy as np
import pytest

from quadlayout.core.errors import LatticeDegenerate, LatticeDimensionTooLarge, PointOnCut
from quadlayout.services.homology import homology_basis
from quadlayout.services.jacobi import (
    AbelJacobiMap,
    JacobianLattice,
    PeriodMatrix,
    abel_jacobi_divisor,
    abel_jacobi_point,
    build_lattice,
    period_matrix,
    reduce_mod_lattice,
    riemann_health,
)
from quadlayout.services.mesh_core import Divisor, DivisorTerm, SurfacePoint
from quadlayout.services.one_forms import holomorphic_basis, normalize_basis


@pytest.fixture(scope="module")
def torus_setup(torus):
    loops = homology_basis(torus)
    basis = normalize_basis(holomorphic_basis(torus, loops, seed=0), loops)
    pm = period_matrix(basis, loops)
    return loops, basis, pm, AbelJacobiMap(torus, basis)


def _synthetic_lattice(genus: int, seed: int) -> JacobianLattice:
    rng = np.random.default_rng(seed)
    X = rng.uniform(-0.5, 0.5, (genus, genus))
    Y = rng.uniform(-0.3, 0.3, (genus, genus))
    B = 0.5 * (X + X.T) + 1j * (0.5 * (Y + Y.T) + np.eye(genus))
    return build_lattice(PeriodMatrix(np.eye(genus, dtype=complex), B))


def test_torus_periods_satisfy_riemann_relations(torus_setup):
    _, _, pm, _ = torus_setup
    assert np.max(np.abs(pm.A - np.eye(1))) < 1e-8
    health = riemann_health(pm)
    assert health["ok"]
    assert pm.imag_min_eigenvalue > 0


def _brute_force_distance(lattice: JacobianLattice, v: np.ndarray) -> float:
    """Nearest lattice distance by scanning every integer vector inside the ball's coordinate box"""
    G = np.concatenate([lattice.generators.real, lattice.generators.imag])
    y = np.concatenate([v.real, v.imag])
    x = np.linalg.solve(G, y)
    radius = np.linalg.norm(G @ np.rint(x) - y)
    reach = radius * np.linalg.norm(np.linalg.inv(G), axis=1)
    axes = [np.arange(np.ceil(c - r - 1e-9), np.floor(c + r + 1e-9) + 1) for c, r in zip(x, reach)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes))
    return float(np.min(np.linalg.norm(grid @ G.T - y, axis=1)))


@pytest.mark.parametrize("genus", [1, 2, 3, 4])
def test_exact_reduction_matches_enumeration(genus):
    lattice = _synthetic_lattice(genus, seed=genus)
    rng = np.random.default_rng(10 + genus)
    for _ in range(200):
        v = lattice.generators @ rng.uniform(-1.5, 1.5, 2 * genus)
        image = reduce_mod_lattice(v, lattice)
        assert abs(image.residual_norm - _brute_force_distance(lattice, v)) < 1e-9
        assert np.allclose(lattice.vector(image.s, image.t) + image.residual, v)


def test_approximate_reduction_is_never_better_than_exact():
    lattice = _synthetic_lattice(2, seed=7)
    rng = np.random.default_rng(3)
    for _ in range(50):
        v = lattice.generators @ rng.uniform(-2, 2, 4)
        exact = reduce_mod_lattice(v, lattice)
        approximate = reduce_mod_lattice(v, lattice, approximate=True)
        assert approximate.residual_norm >= exact.residual_norm - 1e-12


def test_reduction_ties_pick_smallest_integers():
    lattice = build_lattice(PeriodMatrix(np.eye(1, dtype=complex), np.array([[1j]])))
    image = reduce_mod_lattice(np.array([0.5 + 0j]), lattice)
    assert image.s.tolist() == [0]
    assert image.t.tolist() == [0]
    assert abs(image.residual_norm - 0.5) < 1e-15


def test_large_lattice_needs_approximate_flag():
    lattice = _synthetic_lattice(2, seed=1)
    with pytest.raises(LatticeDimensionTooLarge):
        reduce_mod_lattice(np.zeros(2, dtype=complex), lattice, cap=2)
    assert reduce_mod_lattice(np.zeros(2, dtype=complex), lattice, approximate=True, cap=2).residual_norm == 0


def test_degenerate_lattice_is_rejected():
    with pytest.raises(LatticeDegenerate):
        JacobianLattice(np.array([[1.0, 2.0]], dtype=complex))


def test_shortest_vector_of_square_lattice():
    lattice = build_lattice(PeriodMatrix(np.eye(1, dtype=complex), np.array([[2j]])))
    assert abs(lattice.shortest_vector_length() - 1.0) < 1e-12


def test_abel_jacobi_is_path_independent_in_the_disk(torus, torus_setup):
    _, _, _, ajmap = torus_setup
    interior = [v for v in range(torus.n_vertices) if not ajmap.cut_vertex[v]]
    graph = nx.Graph()
    for e in range(torus.n_edges):
        u, w = torus.edge_endpoints(e)
        if not ajmap.cut_vertex[u] and not ajmap.cut_vertex[w]:
            graph.add_edge(u, w, edge=e)
    reachable = nx.single_source_shortest_path(graph, ajmap.base_vertex)
    target = max(reachable, key=lambda v: (len(reachable[v]), v))
    assert target in interior

    def integrate(path):
        total = np.zeros(ajmap.genus, dtype=complex)
        for u, w in zip(path, path[1:]):
            total += ajmap.forms[:, torus.halfedge_from(graph[u][w]["edge"], u)]
        return total

    direct = integrate(reachable[target])
    detour_via = next(v for v in graph.neighbors(ajmap.base_vertex) if v != reachable[target][1])
    detour = [ajmap.base_vertex] + nx.shortest_path(graph, detour_via, target)
    h = int(torus.vertex_halfedge[target])
    value = ajmap(SurfacePoint.at_corner(h // 3, h % 3))
    assert np.max(np.abs(direct - value)) < 1e-10
    assert np.max(np.abs(integrate(detour) - value)) < 1e-10


def test_crossing_the_cut_jumps_by_a_period(torus, torus_setup):
    _, basis, pm, ajmap = torus_setup
    lattice = build_lattice(pm)
    for e in sorted(ajmap.cut.edge_set(torus)):
        jump = ajmap.jump(int(torus.edge_halfedge[e]))
        x = lattice.coordinates(jump)
        assert np.max(np.abs(x - np.rint(x))) < 1e-8
        assert np.any(np.rint(x) != 0)


def test_points_inside_cut_edges_are_rejected(torus, torus_setup):
    _, _, _, ajmap = torus_setup
    h = int(torus.edge_halfedge[min(ajmap.cut.edge_set(torus))])
    bary = [0.5, 0.5, 0.5]
    bary[(h % 3 + 2) % 3] = 0.0
    with pytest.raises(PointOnCut):
        ajmap(SurfacePoint(h // 3, tuple(bary)))


def test_cut_vertex_images_agree_up_to_periods(torus, torus_setup):
    _, _, pm, ajmap = torus_setup
    lattice = build_lattice(pm)
    v = int(next(iter(ajmap.cut.vertex_set(torus))))
    h = int(torus.vertex_halfedge[v])
    assert np.allclose(ajmap(SurfacePoint.at_corner(h // 3, h % 3)), ajmap.vertex_image(v))
    copies = ajmap.sliced.copies_of(v)
    assert len(copies) > 1
    for copy in copies[1:]:
        x = lattice.coordinates(ajmap.potentials[copy] - ajmap.vertex_image(v))
        assert np.max(np.abs(x - np.rint(x))) < 1e-8


def test_loop_integral_is_a_lattice_vector(torus_setup):
    loops, _, pm, ajmap = torus_setup
    assert np.allclose(ajmap.integrate_path(loops.a(0)), pm.A[0], atol=1e-9)
    assert np.allclose(ajmap.integrate_path(loops.b(0)), pm.B[0], atol=1e-9)


def _interior_points(torus, ajmap, count):
    points = []
    for f in range(torus.n_faces):
        if not any(ajmap.cut_vertex[int(v)] for v in torus.faces[f]):
            points.append(SurfacePoint(f, (1 / 3, 1 / 3, 1 / 3)))
        if len(points) == count:
            return points
    return points


def test_point_image_is_relative_to_base(torus, torus_setup):
    _, _, _, ajmap = torus_setup
    p, q = _interior_points(torus, ajmap, 2)
    assert np.allclose(abel_jacobi_point(ajmap, p), ajmap(p))
    assert np.allclose(abel_jacobi_point(ajmap, p, base=q), ajmap(p) - ajmap(q))
    assert np.allclose(abel_jacobi_point(ajmap, p, base=p), 0.0)


def test_divisor_image_is_linear_mod_lattice(torus, torus_setup):
    _, _, pm, ajmap = torus_setup
    lattice = build_lattice(pm)
    p, q, r = _interior_points(torus, ajmap, 3)
    cancelled = Divisor((DivisorTerm(p, 1), DivisorTerm(p, -1)))
    assert abel_jacobi_divisor(ajmap, cancelled, lattice).residual_norm < 1e-10

    pair = Divisor((DivisorTerm(p, 2), DivisorTerm(q, -1)))
    image = abel_jacobi_divisor(ajmap, pair, lattice)
    direct = reduce_mod_lattice(2 * ajmap(p) - ajmap(q), lattice)
    assert image.residual_norm == pytest.approx(direct.residual_norm, abs=1e-10)

    combined = abel_jacobi_divisor(ajmap, pair + Divisor((DivisorTerm(r, 1),)), lattice)
    expected = reduce_mod_lattice(image.phi + ajmap(r), lattice)
    assert combined.residual_norm == pytest.approx(expected.residual_norm, abs=1e-10)
