"""
Test mesh loading, topology queries and slicing
"""
import numpy as np
import pytest

from quadlayout.core.errors import BoundaryPresent, DegenerateFace, MultipleComponents, NonManifoldEdge, NonTriangleFace
from quadlayout.core.sample_meshes import clifford_step
from quadlayout.services.homology import compute_cut_graph
from quadlayout.services.mesh_core import (
    Curve,
    CurveGraph,
    Divisor,
    DivisorTerm,
    SurfaceMesh,
    SurfacePoint,
    angle_defect_curvature,
    load_mesh,
    save_mesh,
    slice_along,
)


def test_sample_mesh_genus(ico, torus, flat_torus, genus2):
    assert ico.genus == 0
    assert torus.genus == 1
    assert flat_torus.genus == 1
    assert genus2.genus == 2
    assert genus2.euler_characteristic == -2


def test_outgoing_fan_is_complete(torus):
    for v in range(torus.n_vertices):
        fan = torus.outgoing(v)
        assert len(fan) == 6
        assert all(torus.tail[h] == v for h in fan)
        assert len(set(torus.neighbors(v))) == 6


def test_gauss_bonnet_on_angle_defects(torus, genus2):
    for mesh in (torus, genus2):
        total = angle_defect_curvature(mesh).sum()
        assert abs(total - 2 * np.pi * mesh.euler_characteristic) < 1e-9


def test_clifford_torus_is_intrinsically_flat(flat_torus):
    assert np.max(np.abs(angle_defect_curvature(flat_torus))) < 1e-12
    h, v = clifford_step()
    assert abs(flat_torus.surface_area() - 1.0) < 1e-12
    assert abs(flat_torus.halfedge_lengths[0] - h) < 1e-12
    assert abs(flat_torus.halfedge_lengths[1] - v) < 1e-12


def test_obj_round_trip_is_exact(tmp_path, genus2, flat_torus):
    for mesh in (genus2, flat_torus):
        path = save_mesh(mesh, tmp_path / "mesh.obj")
        loaded = load_mesh(path)
        assert np.array_equal(loaded.positions, mesh.positions)
        assert np.array_equal(loaded.faces, mesh.faces)
        assert np.array_equal(loaded.halfedge_lengths, mesh.halfedge_lengths)


def test_open_mesh_is_rejected():
    with pytest.raises(BoundaryPresent):
        SurfaceMesh.from_faces([(0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1)], [(0, 1, 2), (0, 2, 3)])


def test_repeated_directed_edge_is_rejected():
    with pytest.raises(NonManifoldEdge):
        SurfaceMesh.from_faces([(0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1)], [(0, 1, 2), (0, 1, 3)])


def test_degenerate_face_is_rejected():
    with pytest.raises(DegenerateFace):
        SurfaceMesh.from_faces([(0, 0, 0), (1, 0, 0), (0, 1, 0)], [(0, 0, 1)])


def test_two_components_are_rejected(ico):
    faces = np.vstack([ico.faces, ico.faces + ico.n_vertices])
    positions = np.vstack([ico.positions, ico.positions + 10.0])
    with pytest.raises(MultipleComponents):
        SurfaceMesh.from_faces(positions, faces)


def test_quad_faces_are_rejected(tmp_path):
    path = tmp_path / "quad.obj"
    path.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
    with pytest.raises(NonTriangleFace):
        load_mesh(path)


def test_slicing_along_cut_graph_gives_a_disk(genus2):
    cut = compute_cut_graph(genus2)
    sliced = slice_along(genus2, cut)
    assert sliced.euler_characteristic == 1
    assert len(sliced.boundary_halfedges()) == 2 * len(cut.edge_set(genus2))


def test_curve_graph_dict_round_trip(torus):
    h = torus.outgoing(0)[0]
    graph = CurveGraph((Curve("a1", (h, int(torus.twin[h])), closed=True),))
    assert CurveGraph.from_dict(graph.to_dict()) == graph


def test_divisor_list_round_trip_and_degree():
    divisor = Divisor((DivisorTerm(SurfacePoint.barycenter(3), -1), DivisorTerm(SurfacePoint.at_corner(5, 2), 2)))
    assert divisor.degree == 1
    assert divisor.scaled(4).degree == 4
    restored = Divisor.from_list(divisor.to_list())
    assert restored.orders.tolist() == [-1, 2]
    assert restored.points[1].bary == (0.0, 0.0, 1.0)
