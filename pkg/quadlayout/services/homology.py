"""
Homology basis: tree-cotree generators, intersection numbers and integer symplectic canonicalization
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

from ..core.errors import AmbiguousCrossing, DeficientBasis, GenusZeroUnsupported, QuadLayoutError
from .mesh_core import Curve, CurveGraph, SurfaceMesh, next_halfedge, prev_halfedge

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class HomologyBasis:
    """Canonical pairs (a_i, b_i) sharing one base vertex"""
    loops: CurveGraph
    base_vertex: int

    @property
    def genus(self) -> int:
        return len(self.loops) // 2

    def a(self, i: int) -> Curve:
        return self.loops[f"a{i + 1}"]

    def b(self, i: int) -> Curve:
        return self.loops[f"b{i + 1}"]

    def a_loops(self) -> List[Curve]:
        return [self.a(i) for i in range(self.genus)]

    def b_loops(self) -> List[Curve]:
        return [self.b(i) for i in range(self.genus)]

    def ordered(self) -> List[Curve]:
        """a1, b1, a2, b2, ..."""
        out = []
        for i in range(self.genus):
            out.extend([self.a(i), self.b(i)])
        return out


def standard_symplectic(genus: int) -> np.ndarray:
    J = np.zeros((2 * genus, 2 * genus), dtype=np.int64)
    for i in range(genus):
        J[2 * i, 2 * i + 1] = 1
        J[2 * i + 1, 2 * i] = -1
    return J


class _SpanningTree:
    """BFS tree over a graph whose edges carry mesh edge ids"""

    def __init__(self, graph: nx.Graph, root: int):
        self.root = root
        self.parent: Dict[int, int] = {}
        self.parent_edge: Dict[int, int] = {}
        for u, v in nx.bfs_edges(graph, root):
            self.parent[v] = u
            self.parent_edge[v] = graph[u][v]["edge"]

    def edges(self) -> set:
        return set(self.parent_edge.values())


def _edge_graph(nodes: int, pairs: Sequence[Tuple[int, int, int]]) -> nx.Graph:
    # Parallel edges collapse onto the smallest edge id; the rest stay out of the tree
    graph = nx.Graph()
    graph.add_nodes_from(range(nodes))
    for u, v, e in pairs:
        if u == v:
            continue
        if graph.has_edge(u, v) and graph[u][v]["edge"] <= e:
            continue
        graph.add_edge(u, v, edge=e)
    return graph


def tree_cotree(mesh: SurfaceMesh, root: int = 0) -> Tuple[_SpanningTree, set, List[int]]:
    """Primal spanning tree, dual spanning cotree on the remaining edges, and the leftover edges"""
    primal = _edge_graph(mesh.n_vertices, [
        (*mesh.edge_endpoints(e), e) for e in range(mesh.n_edges)
    ])
    tree = _SpanningTree(primal, root)
    tree_edges = tree.edges()

    dual_pairs = []
    for e in range(mesh.n_edges):
        if e in tree_edges:
            continue
        h = mesh.edge_halfedge[e]
        dual_pairs.append((int(h // 3), int(mesh.twin[h] // 3), e))
    cotree = _SpanningTree(_edge_graph(mesh.n_faces, dual_pairs), 0)
    cotree_edges = cotree.edges()

    leftover = [e for e in range(mesh.n_edges) if e not in tree_edges and e not in cotree_edges]
    if len(leftover) != 2 * mesh.genus:
        raise QuadLayoutError(f"Tree-cotree left {len(leftover)} edges, expected {2 * mesh.genus}")
    return tree, cotree_edges, leftover


def _path_to_root(mesh: SurfaceMesh, tree: _SpanningTree, v: int) -> List[int]:
    path = []
    while v != tree.root:
        path.append(mesh.halfedge_from(tree.parent_edge[v], v))
        v = tree.parent[v]
    return path


def _reduce(mesh: SurfaceMesh, halfedges: Sequence[int]) -> List[int]:
    """Cancel immediate backtracking h, twin(h)"""
    stack: List[int] = []
    for h in halfedges:
        if stack and stack[-1] == mesh.twin[h]:
            stack.pop()
        else:
            stack.append(int(h))
    return stack


def generator_loops(mesh: SurfaceMesh, root: int = 0, prefix: str = "g") -> CurveGraph:
    """One loop through the root per leftover tree-cotree edge"""
    tree, _, leftover = tree_cotree(mesh, root)
    curves = []
    for index, e in enumerate(leftover):
        h = int(mesh.edge_halfedge[e])
        head = [mesh.twin[x] for x in reversed(_path_to_root(mesh, tree, int(mesh.tail[h])))]
        tail = _path_to_root(mesh, tree, int(mesh.tip[h]))
        curves.append(Curve(f"{prefix}{index + 1}", tuple(_reduce(mesh, head + [h] + tail))))
    return CurveGraph(tuple(curves))


def compute_cut_graph(mesh: SurfaceMesh, root: int = 0) -> CurveGraph:
    """Cut graph whose complement is a disk: the union of the generator loops"""
    cut = generator_loops(mesh, root, prefix="cut")
    logger.info(f"Cut graph: {len(cut)} loops, {len(cut.edge_set(mesh))} edges")
    return cut


def dual_cocycle(mesh: SurfaceMesh, curve: Curve) -> np.ndarray:
    """Integer 1-cochain counting signed crossings with the left push-off of a loop.

    Summing it over another loop gives the algebraic intersection number.
    """
    if not curve.halfedges or not curve.closed or not curve.is_consistent(mesh):
        raise AmbiguousCrossing(f"Loop '{curve.tag}' is not a closed edge loop", tag=curve.tag)
    omega = np.zeros(mesh.n_halfedges, dtype=np.int64)
    hs = curve.halfedges
    for i, h_out in enumerate(hs):
        stop = mesh.twin[hs[i - 1]]
        h = int(mesh.twin[prev_halfedge(h_out)])
        steps = 0
        while h != stop:
            omega[h] += 1
            omega[mesh.twin[h]] -= 1
            h = int(mesh.twin[prev_halfedge(h)])
            steps += 1
            if steps > mesh.n_halfedges:
                raise AmbiguousCrossing(f"Loop '{curve.tag}' wedge does not close", tag=curve.tag)
    return omega


def intersection_number(mesh: SurfaceMesh, x: Curve, y: Curve) -> int:
    if not y.halfedges or not y.closed or not y.is_consistent(mesh):
        raise AmbiguousCrossing(f"Loop '{y.tag}' is not a closed edge loop", tag=y.tag)
    return int(dual_cocycle(mesh, x)[list(y.halfedges)].sum())


def intersection_matrix(mesh: SurfaceMesh, curves: Sequence[Curve]) -> np.ndarray:
    cocycles = [dual_cocycle(mesh, c) for c in curves]
    M = np.zeros((len(curves), len(curves)), dtype=np.int64)
    for i, omega in enumerate(cocycles):
        for j, curve in enumerate(curves):
            M[i, j] = omega[list(curve.halfedges)].sum()
    return M


def _rebase(mesh: SurfaceMesh, curve: Curve, base: int, graph: nx.Graph) -> List[int]:
    """Conjugate a loop by a shortest vertex path so it starts and ends at `base`"""
    start = int(mesh.tail[curve.halfedges[0]])
    if start == base:
        return list(curve.halfedges)
    path = nx.shortest_path(graph, base, start)
    lead = [mesh.halfedge_from(graph[u][v]["edge"], u) for u, v in zip(path, path[1:])]
    back = [int(mesh.twin[h]) for h in reversed(lead)]
    return lead + list(curve.halfedges) + back


def _symplectic_reduce(M: np.ndarray) -> np.ndarray:
    """Unimodular P with P M P^T the standard symplectic form, by integer Gram-Schmidt"""
    n = len(M)
    G = [[int(x) for x in row] for row in M]
    P = [[int(i == j) for j in range(n)] for i in range(n)]

    def swap(i, j):
        P[i], P[j] = P[j], P[i]
        G[i], G[j] = G[j], G[i]
        for row in G:
            row[i], row[j] = row[j], row[i]

    def add(target, source, q):
        # e_target <- e_target + q * e_source
        P[target] = [a + q * b for a, b in zip(P[target], P[source])]
        G[target] = [a + q * b for a, b in zip(G[target], G[source])]
        for row in G:
            row[target] += q * row[source]

    for k in range(0, n, 2):
        while True:
            nonzero = [j for j in range(k + 1, n) if G[k][j] != 0]
            if not nonzero:
                raise DeficientBasis(k, n)
            pivot = min(nonzero, key=lambda j: (abs(G[k][j]), j))
            if pivot != k + 1:
                swap(pivot, k + 1)
            d = G[k][k + 1]
            pending = [j for j in range(k + 2, n) if G[k][j] != 0]
            if not pending:
                break
            for j in pending:
                add(j, k + 1, -(G[k][j] // d))
        d = G[k][k + 1]
        if abs(d) != 1:
            raise DeficientBasis(k, n)
        for j in range(k + 2, n):
            alpha = G[k + 1][j] * d
            beta = -G[k][j] * d
            if alpha:
                add(j, k, alpha)
            if beta:
                add(j, k + 1, beta)
        if d == -1:
            swap(k, k + 1)
    return np.asarray(P, dtype=object)


def canonicalize_basis(mesh: SurfaceMesh, raw: Sequence[Curve], base_vertex: Optional[int] = None) -> HomologyBasis:
    """Turn 2g independent loops into a basis with a_i.b_j = delta_ij and a_i.a_j = b_i.b_j = 0"""
    n = len(raw)
    M = intersection_matrix(mesh, raw)
    rank = int(np.linalg.matrix_rank(M.astype(float))) if n else 0
    if n == 0 or n % 2 or rank < n:
        raise DeficientBasis(rank, 2 * mesh.genus if n == 0 else n)

    P = _symplectic_reduce(M)
    base = int(mesh.tail[raw[0].halfedges[0]]) if base_vertex is None else base_vertex
    graph = _edge_graph(mesh.n_vertices, [(*mesh.edge_endpoints(e), e) for e in range(mesh.n_edges)])
    based = [_rebase(mesh, c, base, graph) for c in raw]

    curves = []
    for k in range(n):
        sequence: List[int] = []
        for coefficient, loop in zip(P[k], based):
            coefficient = int(coefficient)
            if coefficient == 0:
                continue
            piece = loop if coefficient > 0 else [int(mesh.twin[h]) for h in reversed(loop)]
            sequence.extend(piece * abs(coefficient))
        tag = f"a{k // 2 + 1}" if k % 2 == 0 else f"b{k // 2 + 1}"
        curves.append(Curve(tag, tuple(_reduce(mesh, sequence))))

    basis = HomologyBasis(CurveGraph(tuple(curves)), base)
    check = intersection_matrix(mesh, basis.ordered())
    if not np.array_equal(check, standard_symplectic(n // 2)):
        raise QuadLayoutError("Canonicalized loops fail the intersection condition", matrix=check.tolist())
    logger.info(f"Canonical homology basis: g={n // 2}, lengths={[len(c.halfedges) for c in curves]}")
    return basis


def homology_basis(mesh: SurfaceMesh, root: int = 0) -> HomologyBasis:
    if mesh.genus == 0:
        raise GenusZeroUnsupported()
    return canonicalize_basis(mesh, list(generator_loops(mesh, root)), base_vertex=root)


def link_loop(mesh: SurfaceMesh, v: int, tag: Optional[str] = None) -> Curve:
    """Counter-clockwise 1-ring loop around v, with v on its left"""
    return Curve(tag or f"link{v}", tuple(int(next_halfedge(h)) for h in mesh.outgoing(v)))


def enclosing_loop(mesh: SurfaceMesh, vertices: Sequence[int], tag: str = "t") -> Curve:
    """Boundary of the union of closed stars of `vertices`, region on the left"""
    region = np.zeros(mesh.n_faces, dtype=bool)
    for v in vertices:
        region[[h // 3 for h in mesh.outgoing(v)]] = True
    inside = region[np.arange(mesh.n_halfedges) // 3]
    boundary = np.flatnonzero(inside & ~inside[mesh.twin])
    if len(boundary) == 0:
        raise QuadLayoutError("Region covers the whole surface; no enclosing loop")

    start = int(boundary[0])
    loop = [start]
    h = start
    while True:
        k = int(mesh.twin[h])
        while True:
            k = int(mesh.twin[prev_halfedge(k)])
            if inside[k]:
                break
        if k == start:
            break
        loop.append(k)
        h = k
        if len(loop) > len(boundary):
            raise QuadLayoutError("Enclosing region boundary is not a simple loop")
    if len(loop) < len(boundary):
        logger.warning(f"Region around {list(vertices)} has several boundary loops; using the first")
    return Curve(tag, tuple(loop))
