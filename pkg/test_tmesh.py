"""
Test separatrix tracing, the motor graph and the rectangular T-mesh
"""
import random

import numpy as np
import pytest

from quadlayout.core.errors import ConeAngleMismatch, EmptyTMesh, InvalidMotorGraph, OpenTrajectories
from quadlayout.core.sample_meshes import clifford_step, double_torus
from quadlayout.services.homology import compute_cut_graph, homology_basis
from quadlayout.services.immersion import augment_cut_graph, check_transitions, flatten
from quadlayout.services.mesh_core import angle_defect_curvature
from quadlayout.services.ricci_flow import flow_to_metric, holonomy_table, quarter_turn_deviation, target_curvature
from quadlayout.services.tmesh import (
    Ray,
    Segment,
    TMesh,
    Trajectory,
    barycentric,
    build_tmesh,
    cone_fan,
    emit_separatrices,
    export_tmesh,
    extract_patches,
    load_tmesh,
    motor_graph,
    patch_palette,
    trace,
)

CONE = 2 * 8 + 2


def grid_vertex(i, j, n=8, m=8):
    return (i % n) * m + (j % m)


def straight(tid, start, end, cone=None):
    length = abs(end - start)
    return Trajectory(tid, 100 + tid if cone is None else cone, 0, 1,
                      [Segment(0, start, end, 0.0, length)], "length_cap")


def separatrix(tid, cone, end_cone, start, end):
    length = abs(end - start)
    return Trajectory(tid, cone, 0, 1, [Segment(0, start, end, 0.0, length)], "singularity", end_cone, 0, 1)


@pytest.fixture(scope="module")
def layout(flat_torus):
    return flatten(flat_torus, compute_cut_graph(flat_torus))


@pytest.fixture(scope="module")
def single_patch(layout):
    return build_tmesh(layout, {CONE: 0})


@pytest.fixture(scope="module")
def plate():
    """Unjittered genus-2 plate: its cube corners are exactly the quarter-turn cones"""
    mesh = double_torus(jitter=0.0)
    K = angle_defect_curvature(mesh)
    cones = {int(v): int(np.rint(-K[v] / (np.pi / 2))) for v in np.flatnonzero(np.abs(K) > 1e-9)}
    metric = flow_to_metric(mesh, target_curvature(mesh, cones))
    intrinsic = metric.mesh()
    imm = flatten(intrinsic, augment_cut_graph(intrinsic, compute_cut_graph(intrinsic), sorted(cones)))
    return mesh, cones, metric, imm


def test_barycentric_recovers_corners_and_centroid(layout):
    tri = layout.face_coords(0)
    assert np.allclose(barycentric(tri, tri[1]), (0, 1, 0))
    assert np.allclose(barycentric(tri, tri.mean()), (1 / 3, 1 / 3, 1 / 3))


def test_regular_vertex_has_four_axis_rays(layout):
    fan = cone_fan(layout, CONE, 0)
    assert fan.sectors == 4
    rays = emit_separatrices(layout, {CONE: 0})
    assert [ray.index for ray in rays] == [0, 1, 2, 3]
    directions = {complex(round(ray.direction.real), round(ray.direction.imag)) for ray in rays}
    assert directions == {1, 1j, -1, -1j}
    assert [ray.angle for ray in rays] == pytest.approx([0.0, np.pi / 2, np.pi, 1.5 * np.pi], abs=1e-9)


def test_cone_order_must_match_angle(layout):
    with pytest.raises(ConeAngleMismatch):
        cone_fan(layout, CONE, 1)


def test_rays_stop_three_steps_away(layout):
    step, _ = clifford_step()
    targets = {grid_vertex(5, 2), grid_vertex(-1, 2), grid_vertex(2, 5), grid_vertex(2, -1)}
    reached = set()
    for ray in emit_separatrices(layout, {CONE: 0}):
        trajectory = trace(layout, ray, targets | {CONE})
        assert trajectory.cause == "singularity"
        assert trajectory.length == pytest.approx(3 * step, abs=1e-8)
        reached.add(trajectory.end_cone)
    assert reached == targets


def test_trajectory_without_stops_closes_up(layout):
    tri = layout.face_coords(0)
    ray = Ray(CONE, 0, 4, 0, complex(tri.mean()), 1 + 0j)
    trajectory = trace(layout, ray, set())
    assert trajectory.cause == "closed"
    assert 1.0 - 1e-9 <= trajectory.length <= 1.0 + clifford_step()[0] + 1e-9


def test_nearly_closed_trajectory_keeps_going(layout):
    tri = layout.face_coords(0)
    ray = Ray(CONE, 0, 4, 0, complex(tri.mean()), np.exp(5e-10j))
    trajectory = trace(layout, ray, set(), length_cap=3.5)
    assert trajectory.cause == "length_cap"
    assert trajectory.length > 3.5


def test_length_cap_stops_trace(layout):
    tri = layout.face_coords(0)
    ray = Ray(CONE, 0, 4, 0, complex(tri.mean()), 1 + 0j)
    trajectory = trace(layout, ray, set(), length_cap=0.3)
    assert trajectory.cause == "length_cap"
    assert 0.3 < trajectory.length < 0.3 + clifford_step()[0] + 1e-9


def test_first_arrival_decides_each_crossing():
    trajectories = [
        straight(0, 0.5j, 2 + 0.5j),
        straight(1, 1 + 0j, 1 + 2j),
        straight(2, 3 + 1.5j, -1 + 1.5j),
        straight(3, 0.5 + 2j, 0.5 - 1j),
    ]
    graph = motor_graph(trajectories, snap=1e-9)
    pairs = {(j.continuing, j.stopped) for j in graph.junctions}
    assert pairs == {(1, 0), (0, 3), (1, 2)}
    lengths = {t.id: t.length for t in graph.trajectories}
    assert lengths == pytest.approx({0: 1.0, 1: 2.0, 2: 2.0, 3: 1.5})
    assert len(graph.t_junctions) == 3
    for t in graph.trajectories:
        assert t.cause == ("length_cap" if t.id == 1 else "motor")


def test_motor_graph_ignores_input_order():
    trajectories = [
        straight(0, 0.5j, 2 + 0.5j),
        straight(1, 1 + 0j, 1 + 2j),
        straight(2, 3 + 1.5j, -1 + 1.5j),
        straight(3, 0.5 + 2j, 0.5 - 1j),
    ]
    expected = motor_graph(trajectories, snap=1e-9).signature()
    rng = random.Random(7)
    for _ in range(5):
        shuffled = trajectories[:]
        rng.shuffle(shuffled)
        assert motor_graph(shuffled, snap=1e-9).signature() == expected


def test_simultaneous_arrival_keeps_lower_id():
    graph = motor_graph([straight(4, 1j, 2 + 1j), straight(2, 1 + 0j, 1 + 2j)], snap=1e-9)
    assert len(graph.junctions) == 1
    junction = graph.junctions[0]
    assert junction.tie
    assert (junction.continuing, junction.stopped) == (2, 4)


def test_regular_cone_yields_one_rectangle(single_patch, flat_torus):
    graph = single_patch.graph
    assert len(graph.dropped) == 2
    assert len(graph.trajectories) == 2
    assert single_patch.t_junction_count == 0
    cone_nodes = [node for node in graph.nodes if node.kind == "cone"]
    assert len(cone_nodes) == 1 and len(cone_nodes[0].ends) == 4
    assert graph.incidence() == {node.id: list(node.ends) for node in graph.nodes}
    assert len(graph.incidence()[cone_nodes[0].id]) == 4

    assert len(single_patch.patches) == 1
    patch = single_patch.patches[0]
    assert patch.width == pytest.approx(1.0, abs=1e-8)
    assert patch.height == pytest.approx(1.0, abs=1e-8)
    assert abs(single_patch.area - flat_torus.surface_area()) <= 1e-6
    assert np.allclose(single_patch.corner_angles(), np.pi / 2)
    for adjacency in single_patch.adjacency:
        assert 0 <= adjacency.quarter_turns <= 3


def test_export_round_trips_through_document(single_patch, tmp_path):
    files = export_tmesh(single_patch, tmp_path)
    assert set(files) == {"json", "preview", "mtl", "motor_graph"}
    document = load_tmesh(files["json"])
    assert document.version == "tmesh-v1"
    assert len(document.patches) == 1
    assert len(document.trajectories) == 2
    assert [node.kind for node in document.nodes] == ["cone"]
    assert document.nodes[0].vertex == CONE

    preview = files["preview"].read_text().splitlines()
    faces = [line for line in preview if line.startswith("f ")]
    assert len(faces) == 1 and len(faces[0].split()) == 5
    polylines = [line for line in files["motor_graph"].read_text().splitlines() if line.startswith("l ")]
    assert len(polylines) == len(single_patch.graph.arcs)


def test_empty_tmesh_is_not_exported(single_patch, tmp_path):
    empty = TMesh(single_patch.graph, [], [], single_patch.immersion)
    with pytest.raises(EmptyTMesh):
        export_tmesh(empty, tmp_path)


def test_patch_palette_in_unit_range():
    colors = patch_palette(5)
    assert len(colors) == 5
    assert len(set(colors)) == 5
    assert all(0.0 <= c <= 1.0 for color in colors for c in color)


def test_cone_missing_an_arc_end_is_rejected():
    lonely = Trajectory(0, 100, 0, 4, [Segment(0, 0j, 1 + 0j, 0.0, 1.0)], "length_cap")
    with pytest.raises(InvalidMotorGraph) as excinfo:
        motor_graph([lonely], snap=1e-9)
    assert excinfo.value.context["vertex"] == 100
    assert excinfo.value.context["ends"] == 1


def test_separatrix_crossed_once_stops_from_both_sides():
    trajectories = [
        separatrix(0, 10, 11, 0j, 4 + 0j),
        separatrix(1, 11, 10, 4 + 0j, 0j),
        straight(2, 1 - 0.5j, 1 + 2j),
    ]
    graph = motor_graph(trajectories, snap=1e-9)
    assert graph.dropped == [1]
    assert len(graph.junctions) == 1
    junction = graph.junctions[0]
    assert (junction.continuing, junction.stopped) == (2, 0)
    assert junction.fronts == (1, -1)
    assert len(graph.crossings) == 1 and not graph.t_junctions
    assert len(graph.crossings[0].ends) == 4

    cut = next(t for t in graph.trajectories if t.id == 0)
    assert cut.cause == "motor"
    assert cut.length == pytest.approx(4.0)
    spans = sorted(s for arc in graph.arcs if arc.trajectory == 0 for s in (arc.s0, arc.s1))
    assert spans == pytest.approx([0.0, 1.0, 1.0, 4.0])


def test_separatrix_stopped_from_each_end_leaves_a_gap():
    trajectories = [
        separatrix(0, 10, 11, 0j, 4 + 0j),
        separatrix(1, 11, 10, 4 + 0j, 0j),
        straight(2, 1 - 0.5j, 1 + 2j),
        straight(3, 3 - 0.5j, 3 + 2j),
    ]
    graph = motor_graph(trajectories, snap=1e-9)
    fronts = {junction.continuing: junction.fronts for junction in graph.junctions}
    assert fronts == {2: (1,), 3: (-1,)}
    assert len(graph.t_junctions) == 2 and not graph.crossings
    first, second = sorted((arc for arc in graph.arcs if arc.trajectory == 0), key=lambda arc: arc.s0)
    assert [first.s0, first.s1, second.s0, second.s1] == pytest.approx([0.0, 1.0, 3.0, 4.0])
    assert first.end_angle == pytest.approx(np.pi / 2)
    assert second.start_angle == pytest.approx(1.5 * np.pi)


def test_open_trajectories_block_patch_extraction(layout):
    graph = motor_graph([straight(0, 0j, 1 + 0j)], snap=1e-9)
    assert [node.kind for node in graph.nodes] == ["cone", "end"]
    with pytest.raises(OpenTrajectories) as excinfo:
        extract_patches(graph, layout)
    assert excinfo.value.context["trajectories"] == [0]


def test_genus_two_cone_metric_has_quarter_turn_holonomy(plate):
    mesh, cones, metric, imm = plate
    assert sorted(cones.values()) == [-1] * 8 + [1] * 16
    assert metric.max_error <= 1e-8
    rows = holonomy_table(metric, mesh, homology_basis(mesh))
    assert [tag for tag, _ in rows[:4]] == ["a1", "b1", "a2", "b2"]
    assert len(rows) == 4 + len(cones)
    assert max(quarter_turn_deviation(degrees) for _, degrees in rows) < 1e-6
    assert check_transitions(imm) < 1e-6


def test_genus_two_layout_is_a_rectangular_tmesh(plate):
    mesh, cones, _, imm = plate
    tm = build_tmesh(imm, cones)
    graph = tm.graph
    assert not [node for node in graph.nodes if node.kind == "end"]
    for node in graph.nodes:
        if node.kind == "cone":
            assert len(node.ends) == 4 + cones[node.vertex]

    assert len(tm.patches) > 1
    assert np.allclose(tm.corner_angles(), np.pi / 2, atol=1e-6)
    assert abs(tm.area - mesh.surface_area()) <= 1e-6
    for patch in tm.patches:
        assert patch.width > 0 and patch.height > 0
