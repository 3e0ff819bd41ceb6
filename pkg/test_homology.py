"""
Test the homology basis, intersection numbers and singularity link loops
"""
import numpy as np
import pytest

from quadlayout.core.errors import AmbiguousCrossing, GenusZeroUnsupported
from quadlayout.services.homology import (
    compute_cut_graph,
    enclosing_loop,
    generator_loops,
    homology_basis,
    intersection_matrix,
    intersection_number,
    link_loop,
    standard_symplectic,
)
from quadlayout.services.mesh_core import Curve, slice_along


def test_standard_symplectic_layout():
    J = standard_symplectic(2)
    assert J.tolist() == [[0, 1, 0, 0], [-1, 0, 0, 0], [0, 0, 0, 1], [0, 0, -1, 0]]


@pytest.mark.parametrize("name", ["torus", "flat_torus", "genus2"])
def test_basis_satisfies_intersection_condition(name, request):
    mesh = request.getfixturevalue(name)
    basis = homology_basis(mesh)
    assert basis.genus == mesh.genus
    M = intersection_matrix(mesh, basis.ordered())
    assert np.array_equal(M, standard_symplectic(mesh.genus))
    for curve in basis.ordered():
        assert curve.is_consistent(mesh)
        assert mesh.tail[curve.halfedges[0]] == basis.base_vertex


def test_intersection_is_antisymmetric(genus2):
    loops = list(generator_loops(genus2))
    M = intersection_matrix(genus2, loops)
    assert np.array_equal(M, -M.T)
    assert int(np.linalg.matrix_rank(M.astype(float))) == 4


def test_reversing_a_loop_flips_the_sign(torus):
    basis = homology_basis(torus)
    a, b = basis.a(0), basis.b(0)
    assert intersection_number(torus, a, b) == 1
    assert intersection_number(torus, a.reversed(torus), b) == -1


def test_genus_zero_is_rejected(ico):
    with pytest.raises(GenusZeroUnsupported):
        homology_basis(ico)


def test_open_path_is_ambiguous(torus):
    h = torus.outgoing(0)[0]
    with pytest.raises(AmbiguousCrossing):
        intersection_number(torus, homology_basis(torus).a(0), Curve("open", (h,), closed=False))


def test_cut_graph_opens_surface_to_disk(torus, genus2):
    for mesh in (torus, genus2):
        cut = compute_cut_graph(mesh)
        assert len(cut) == 2 * mesh.genus
        assert slice_along(mesh, cut).euler_characteristic == 1


def test_link_loop_encircles_vertex(genus2):
    loop = link_loop(genus2, 7)
    assert loop.is_consistent(genus2)
    assert 7 not in loop.vertices(genus2)
    assert sorted(loop.vertices(genus2)) == sorted(genus2.neighbors(7))
    # null-homologous: no intersection with the basis
    basis = homology_basis(genus2)
    assert all(intersection_number(genus2, c, loop) == 0 for c in basis.ordered())


def test_enclosing_loop_of_one_vertex_is_its_link(torus):
    loop = enclosing_loop(torus, [5])
    assert loop.is_consistent(torus)
    assert sorted(loop.vertices(torus)) == sorted(torus.neighbors(5))
