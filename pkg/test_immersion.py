"""
Test cut augmentation, the planar layout and the checkerboard export
"""
from dataclasses import replace

import numpy as np
import pytest
from PIL import Image

from quadlayout.core.config import settings
from quadlayout.core.errors import HolonomyNotQuantized, MissingArtifact, ZeroScale
from quadlayout.services.homology import compute_cut_graph
from quadlayout.services.immersion import (
    Transition,
    augment_cut_graph,
    boundary_wedge_angle,
    check_transitions,
    checkerboard_export,
    checkerboard_texture,
    corner_coords_from_obj,
    flatten,
    isometry_error,
    planar_length_error,
    rigid_alignment,
    transition_deviation,
)
from quadlayout.services.mesh_core import angle_defect_curvature, next_halfedge, slice_along
from quadlayout.services.ricci_flow import flow_to_metric


@pytest.fixture(scope="module")
def flat_layout(flat_torus):
    return flatten(flat_torus, compute_cut_graph(flat_torus))


def spread_vertices(mesh, count):
    chosen = [0]
    distance = np.linalg.norm(mesh.positions - mesh.positions[0], axis=1)
    while len(chosen) < count:
        v = int(np.argmax(distance))
        chosen.append(v)
        distance = np.minimum(distance, np.linalg.norm(mesh.positions - mesh.positions[v], axis=1))
    return chosen


def test_flat_layout_is_isometric(flat_layout):
    assert isometry_error(flat_layout) <= 1e-9
    assert flat_layout.fold_overs == 0
    assert np.allclose(flat_layout.face_coords(0), [0, 0.125, 0.125 + 0.125j])


def test_flat_torus_transitions_are_lattice_translations(flat_layout, flat_torus):
    transitions = flat_layout.transitions
    cut_edges = flat_layout.sliced.cut_edges
    assert len(transitions) == 2 * len(cut_edges)
    for h, transition in transitions.items():
        assert transition.twin == flat_torus.twin[h]
        assert transition.twin in transitions
        assert transition.quarter_turns == 0
        gap = abs((transition.rotation_degrees + 180.0) % 360.0 - 180.0)
        assert gap < 1e-9
        shift = transition.translation
        assert abs(shift.real - round(shift.real)) < 1e-9
        assert abs(shift.imag - round(shift.imag)) < 1e-9
        assert abs(shift) > 0.5


def test_transition_maps_edge_copies_onto_each_other(flat_layout):
    coords = flat_layout.coords
    for h, transition in flat_layout.transitions.items():
        t = transition.twin
        assert abs(transition.apply(coords[h]) - coords[next_halfedge(t)]) < 1e-9
        assert abs(transition.apply(coords[next_halfedge(h)]) - coords[t]) < 1e-9


def test_seed_face_changes_layout_by_rigid_motion(flat_torus, flat_layout):
    other = flatten(flat_torus, flat_layout.cut, seed_face=37)
    assert other.seed_face == 37
    _, deviation = rigid_alignment(other.coords, flat_layout.coords)
    assert deviation <= 1e-9


def test_flattened_metric_has_translation_transitions(torus):
    metric = flow_to_metric(torus, np.zeros(torus.n_vertices))
    intrinsic = metric.mesh()
    layout = flatten(intrinsic, compute_cut_graph(intrinsic))
    assert isometry_error(layout) <= 1e-9
    for transition in layout.transitions.values():
        gap = abs((transition.rotation_degrees + 180.0) % 360.0 - 180.0)
        assert gap < 1e-6


def test_augmented_cut_reaches_every_cone(genus2):
    cut = compute_cut_graph(genus2)
    on_cut = set(cut.vertex_set(genus2))
    cones = spread_vertices(genus2, 8)
    off_cut = [v for v in cones if v not in on_cut]
    augmented = augment_cut_graph(genus2, cut, cones)
    paths = list(augmented)[len(cut):]
    assert len(paths) == len(off_cut)

    reached = set()
    interiors = []
    for path in paths:
        assert not path.closed
        assert path.is_consistent(genus2)
        vertices = path.vertices(genus2) + [int(genus2.tip[path.halfedges[-1]])]
        assert vertices[0] in on_cut
        reached.add(vertices[-1])
        interiors += vertices[1:]
    assert reached == set(off_cut)
    assert len(interiors) == len(set(interiors))
    assert not set(interiors) & on_cut

    sliced = slice_along(genus2, augmented)
    assert sliced.euler_characteristic == 1
    layout = flatten(genus2, augmented)
    assert isometry_error(layout) <= 1e-9
    for v in off_cut:
        assert boundary_wedge_angle(layout, v) == pytest.approx(2 * np.pi - angle_defect_curvature(genus2)[v])


def test_augment_without_pending_cones_returns_cut(flat_torus):
    cut = compute_cut_graph(flat_torus)
    on_cut = sorted(cut.vertex_set(flat_torus))
    assert augment_cut_graph(flat_torus, cut, on_cut[:2]) is cut
    assert augment_cut_graph(flat_torus, cut, []) is cut


def test_checkerboard_texture_alternates():
    pixels = np.asarray(checkerboard_texture(size=8, squares=2))
    assert pixels.shape == (8, 8, 3)
    assert pixels[0, 0, 0] == 240
    assert pixels[0, 4, 0] == 30
    assert pixels[4, 4, 0] == 240


def test_checkerboard_export_writes_textured_obj(flat_layout, flat_torus, tmp_path):
    files = checkerboard_export(flat_layout, tmp_path, scale=2.0)
    assert set(files) == {"obj", "mtl", "png"}
    lines = files["obj"].read_text().splitlines()
    assert lines[0] == "mtllib immersion.mtl"
    vt = [line for line in lines if line.startswith("vt ")]
    faces = [line for line in lines if line.startswith("f ")]
    assert len(vt) == 3 * flat_torus.n_faces
    assert len(faces) == flat_torus.n_faces
    u, v = (float(x) for x in vt[1].split()[1:])
    assert u == pytest.approx(2.0 * flat_layout.coords[1].real)
    assert v == pytest.approx(2.0 * flat_layout.coords[1].imag)
    assert "map_Kd checker.png" in files["mtl"].read_text()
    with Image.open(files["png"]) as image:
        assert image.size == (settings.texture_size, settings.texture_size)


def test_zero_scale_is_rejected(flat_layout, tmp_path):
    with pytest.raises(ZeroScale):
        checkerboard_export(flat_layout, tmp_path, scale=0)


def test_off_quarter_transitions_are_rejected(flat_layout):
    assert check_transitions(flat_layout) < 1e-9
    h = min(flat_layout.transitions)
    original = flat_layout.transitions[h]

    for degrees, passes in ((90.3, True), (93.0, False)):
        bent = dict(flat_layout.transitions)
        bent[h] = Transition(h, original.twin, degrees, 1, original.translation)
        layout = replace(flat_layout, transitions=bent)
        worst, which = transition_deviation(layout)
        assert worst == pytest.approx(degrees - 90.0)
        assert which.halfedge == h
        if passes:
            assert check_transitions(layout) == pytest.approx(0.3)
        else:
            with pytest.raises(HolonomyNotQuantized) as info:
                check_transitions(layout)
            assert info.value.context["deviation"] == pytest.approx(3.0)


def test_exported_texture_coordinates_read_back(flat_layout, flat_torus, tmp_path):
    files = checkerboard_export(flat_layout, tmp_path, scale=4.0)
    coords = corner_coords_from_obj(files["obj"], scale=4.0)
    assert np.allclose(coords, flat_layout.coords, atol=1e-12)
    assert planar_length_error(coords, flat_torus.halfedge_lengths) <= 1e-9
    assert planar_length_error(coords * 1.01, flat_torus.halfedge_lengths) == pytest.approx(0.01)
    with pytest.raises(MissingArtifact):
        corner_coords_from_obj(tmp_path / "absent.obj")
