"""
Test harmonic and holomorphic 1-forms, normalization and zero location
"""
import numpy as np
import pytest

from quadlayout.core.errors import QuadLayoutError
from quadlayout.services.homology import homology_basis, intersection_matrix
from quadlayout.services.jacobi import period_matrix
from quadlayout.services.one_forms import (
    HarmonicSolver,
    cohomology_basis,
    combined_form,
    holomorphic_basis,
    inner_product,
    locate_zeros,
    normalize_basis,
    vertex_indices,
)


@pytest.fixture(scope="module")
def genus2_forms(genus2):
    loops = homology_basis(genus2)
    return loops, normalize_basis(holomorphic_basis(genus2, loops, seed=0), loops)


def _fundamental_domain(tau: complex) -> complex:
    for _ in range(100):
        tau = tau - round(tau.real)
        if abs(tau) < 1 - 1e-12:
            tau = -1 / tau
        else:
            break
    return tau


def test_cohomology_periods_are_intersection_numbers(torus):
    loops = homology_basis(torus)
    forms = cohomology_basis(torus, loops, seed=3)
    M = intersection_matrix(torus, loops.ordered())
    for k, form in enumerate(forms):
        for j, curve in enumerate(loops.ordered()):
            assert abs(form.integrate(curve) - M[k, j]) < 1e-9


def test_harmonize_keeps_periods_and_closedness(torus):
    loops = homology_basis(torus)
    solver = HarmonicSolver(torus)
    for form in cohomology_basis(torus, loops, seed=1):
        harmonic = solver.harmonize(form)
        assert np.max(np.abs(harmonic.face_sums())) < 1e-10
        assert np.linalg.norm(solver.codifferential(harmonic.values)) < 1e-8
        for curve in loops.ordered():
            assert abs(harmonic.integrate(curve) - form.integrate(curve)) < 1e-9


def test_harmonic_form_does_not_depend_on_seed(torus):
    loops = homology_basis(torus)
    solver = HarmonicSolver(torus)
    a = solver.harmonize(cohomology_basis(torus, loops, seed=1)[0]).values
    b = solver.harmonize(cohomology_basis(torus, loops, seed=2)[0]).values
    assert np.max(np.abs(a - b)) < 1e-8


def test_holomorphic_generators_are_closed(genus2_forms):
    _, basis = genus2_forms
    assert len(basis.generators) == 4
    for form in basis.generators:
        assert np.max(np.abs(form.values.reshape(-1, 3).sum(axis=1))) < 1e-10


def test_normalized_a_periods_are_identity(genus2_forms):
    loops, basis = genus2_forms
    assert basis.normalized
    A = np.array([[phi.integrate(a) for phi in basis.forms] for a in loops.a_loops()])
    assert np.max(np.abs(A - np.eye(2))) < 1e-8


def test_square_flat_torus_has_modulus_i(flat_torus):
    loops = homology_basis(flat_torus)
    basis = normalize_basis(holomorphic_basis(flat_torus, loops, seed=0), loops)
    pm = period_matrix(basis, loops)
    tau = complex(pm.B[0, 0])
    assert tau.imag > 0
    assert abs(_fundamental_domain(tau) - 1j) < 1e-6


def test_hodge_star_is_a_quarter_turn_on_flat_torus(flat_torus):
    loops = homology_basis(flat_torus)
    basis = holomorphic_basis(flat_torus, loops, seed=0)
    omega = basis.generators[0]
    # real and imaginary parts are L2 orthogonal with equal norms
    assert abs(inner_product(flat_torus, omega.real, omega.imag)) < 1e-9
    norm_re = inner_product(flat_torus, omega.real, omega.real)
    norm_im = inner_product(flat_torus, omega.imag, omega.imag)
    assert abs(norm_re - norm_im) < 1e-9 * norm_re


def test_zeros_of_genus2_form_have_degree_two(genus2, genus2_forms):
    _, basis = genus2_forms
    zeros = locate_zeros(genus2, combined_form(basis))
    assert zeros.degree == 2
    assert all(order > 0 for order in zeros.orders)
    assert int(-vertex_indices(genus2, combined_form(basis)).sum()) == 2


def test_torus_form_has_no_zeros(torus):
    loops = homology_basis(torus)
    basis = holomorphic_basis(torus, loops, seed=0)
    assert len(locate_zeros(torus, combined_form(basis))) == 0


def test_combined_form_checks_coefficient_count(genus2_forms):
    _, basis = genus2_forms
    with pytest.raises(QuadLayoutError):
        combined_form(basis, [1.0, 2.0])
