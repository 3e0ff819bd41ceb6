"""
Test divisor initialization and the Abel-Jacobi descent
"""
import numpy as np
import pandas as pd
import pytest

from quadlayout.core.errors import OptimizationDidNotConverge, QuadLayoutError
from quadlayout.services.divisor_opt import (
    DivisorOptimizer,
    OptimizationState,
    converged,
    divisor_energy,
    divisor_gradient,
    initialize_divisor,
    optimize_divisor,
    singularity_color,
    target_degree,
)
from quadlayout.services.homology import homology_basis
from quadlayout.services.jacobi import AbelJacobiMap, build_lattice, period_matrix
from quadlayout.services.mesh_core import Divisor, DivisorTerm, SurfacePoint
from quadlayout.services.one_forms import combined_form, holomorphic_basis, locate_zeros, normalize_basis


@pytest.fixture(scope="module")
def setup(genus2):
    loops = homology_basis(genus2)
    basis = normalize_basis(holomorphic_basis(genus2, loops, seed=0), loops)
    lattice = build_lattice(period_matrix(basis, loops))
    ajmap = AbelJacobiMap(genus2, basis)
    reference = locate_zeros(genus2, combined_form(basis)).scaled(4)
    return ajmap, lattice, reference


def test_target_degree(torus, genus2):
    assert target_degree(torus) == 0
    assert target_degree(genus2) == 8


def test_initial_divisor_fills_gauss_bonnet_degree(genus2):
    divisor = initialize_divisor(genus2)
    assert divisor.degree == 8
    assert len(divisor) == 8
    assert all(order == 1 for order in divisor.orders)
    assert len({p.face for p in divisor.points}) == 8


def test_torus_needs_no_singularities(torus):
    assert len(initialize_divisor(torus)) == 0


def test_features_are_kept_and_completed(genus2):
    features = Divisor((DivisorTerm(SurfacePoint.barycenter(0), 3),))
    divisor = initialize_divisor(genus2, features)
    assert divisor.terms[0] == features.terms[0]
    assert divisor.degree == 8
    assert divisor.orders.tolist().count(1) == 5

    surplus = Divisor((DivisorTerm(SurfacePoint.barycenter(0), 9),))
    completed = initialize_divisor(genus2, surplus)
    assert completed.degree == 8
    assert completed.orders.tolist() == [9, -1]


def test_singularity_colors():
    assert singularity_color(1) == (220, 40, 40)
    assert singularity_color(-1) == (40, 80, 220)
    assert singularity_color(-2) == (40, 170, 60)
    assert singularity_color(3) == (128, 128, 128)


def test_gradient_matches_central_differences(genus2, setup):
    ajmap, lattice, reference = setup
    optimizer = DivisorOptimizer(genus2, ajmap, lattice, reference)
    rng = np.random.default_rng(5)
    faces = rng.choice(genus2.n_faces, size=8, replace=False)
    checked = 0
    for trial in range(20):
        bary = rng.uniform(0.2, 1.0, (8, 3))
        points = [SurfacePoint.normalized(int(f), b) for f, b in zip(faces, bary)]
        divisor = Divisor(tuple(DivisorTerm(p, 1) for p in points))
        zeros = np.zeros(lattice.genus, dtype=np.int64)
        state = optimizer.solve_integers(OptimizationState(divisor, reference, zeros, zeros.copy()))
        g = divisor_gradient(optimizer, state)

        i = trial % 8
        step = 1e-6 * optimizer.face_scale[points[i].face]
        for direction in (1.0, 1j):
            shifted = []
            for sign in (1.0, -1.0):
                moved, fraction, _ = optimizer.move_point(points[i], sign * step * direction, 1)
                assert fraction == 1.0
                candidate = list(points)
                candidate[i] = moved
                trial_state = OptimizationState(divisor.with_points(candidate), reference, state.s, state.t)
                shifted.append(divisor_energy(optimizer, trial_state))
            numeric = (shifted[0] - shifted[1]) / (2 * step)
            analytic = g[i].real if direction == 1.0 else g[i].imag
            assert abs(numeric - analytic) <= 1e-5 * max(abs(analytic), 1e-8)
            checked += 1
    assert checked == 40


def test_converged_start_returns_immediately(genus2, setup):
    ajmap, lattice, reference = setup
    initial = initialize_divisor(genus2)
    divisor, image, state = optimize_divisor(genus2, ajmap, lattice, initial, reference, epsilon=1e9,
                                             residual_tol=1e9)
    assert state.iteration == 0
    assert divisor == initial
    assert abs(image.residual_norm ** 2 - state.energy) <= 1e-12 * max(state.energy, 1.0)


def test_descent_never_increases_energy(genus2, setup, tmp_path):
    ajmap, lattice, reference = setup
    trace = tmp_path / "trace.csv"
    initial = initialize_divisor(genus2)
    try:
        optimize_divisor(genus2, ajmap, lattice, initial, reference, epsilon=1e-30, max_iters=25, trace_path=trace)
    except OptimizationDidNotConverge as exc:
        assert exc.best_state is not None
        assert exc.best_state.divisor.degree == 8
    frame = pd.read_csv(trace)
    assert list(frame.columns) == ["iteration", "energy", "residual_norm", "step"]
    energies = frame["energy"].to_numpy()
    assert np.all(np.diff(energies) < 0)


def test_degree_mismatch_is_rejected(genus2, setup):
    ajmap, lattice, reference = setup
    with pytest.raises(QuadLayoutError):
        optimize_divisor(genus2, ajmap, lattice, Divisor(), reference)


def test_small_energy_with_large_component_keeps_iterating():
    divisor = Divisor()
    state = OptimizationState(divisor, divisor, np.zeros(2, dtype=np.int64), np.zeros(2, dtype=np.int64))
    state.residual = np.array([0.0066 + 0j, 0.011j])
    state.energy = float(np.sum(np.abs(state.residual) ** 2))
    assert state.energy <= 3e-4
    assert not converged(state, 3e-4, 1e-3)
    assert converged(state, 3e-4, 0.02)

    state.residual = np.array([4e-4 + 3e-4j, 1e-4 + 0j])
    state.energy = float(np.sum(np.abs(state.residual) ** 2))
    assert converged(state, 3e-4, 1e-3)
    assert not converged(state, 1e-9, 1e-3)


def test_residual_target_is_met_on_exit(genus2, setup):
    ajmap, lattice, reference = setup
    initial = initialize_divisor(genus2)
    try:
        _, _, state = optimize_divisor(genus2, ajmap, lattice, initial, reference, epsilon=1e9,
                                       residual_tol=1e-3, max_iters=400)
    except OptimizationDidNotConverge as exc:
        assert np.max(np.abs(exc.best_state.residual)) > 1e-3
    else:
        assert np.max(np.abs(state.residual)) <= 1e-3
