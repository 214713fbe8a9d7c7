import math

import numpy as np
import pytest

from utils import config
from utils.beam import (
    BeamSpec, beam_closed_form, beam_psi_problem, beam_regularity, beam_to_problem, compare_constants,
    crack_factor, emit_curves, expected_slope_jump, figure_cases, solve_beam, validate_beam_spec,
)
from utils.dist_algebra import make_dist
from utils.ode_solver import build_interface_system


def test_uniform_closed_form(uniform_beam):
    closed = beam_closed_form(uniform_beam)
    assert closed["S"] == pytest.approx(7.5, rel=1e-14)
    assert closed["beta_minus"] == pytest.approx(1.5625e-6, rel=1e-12)
    assert closed["beta_plus"] == pytest.approx(1.5625e-6, rel=1e-12)
    assert closed["epsilon_minus"] == pytest.approx(-0.0244140625, rel=1e-12)
    # classical clamped-clamped midpoint deflection C (2L)^4 / (384 A)
    assert closed["epsilon_minus"] == pytest.approx(-0.015 * 250.0 ** 4 / (24 * 1e8), rel=1e-12)
    assert closed["alpha_minus"] == 0.0
    assert closed["gamma_minus"] == pytest.approx(0.0, abs=1e-18)
    assert closed["gamma_plus"] == pytest.approx(0.0, abs=1e-18)


def test_closed_form_satisfies_interface_conditions():
    spec = BeamSpec(1e8, 5e7, 250.0, -0.015, 0.3, 0.1)
    closed = beam_closed_form(spec)
    assert spec.A * closed["beta_minus"] == pytest.approx(spec.B * closed["beta_plus"], rel=1e-12)
    assert spec.A * closed["alpha_minus"] == pytest.approx(spec.B * closed["alpha_plus"], rel=1e-12)
    jump = closed["gamma_plus"] - closed["gamma_minus"]
    assert jump == pytest.approx(expected_slope_jump(spec, closed["beta_minus"], closed["beta_plus"]), rel=1e-10)


def test_crack_factor_depends_on_individual_intensities():
    uneven = BeamSpec(1e8, 5e7, 250.0, -0.015, 0.4, 0.0)
    swapped = BeamSpec(1e8, 5e7, 250.0, -0.015, 0.0, 0.4)
    assert crack_factor(uneven) != pytest.approx(crack_factor(swapped))
    # on a uniform beam only K0 + K1 matters
    assert crack_factor(BeamSpec(1e8, 1e8, 250.0, -0.015, 0.4, 0.0)) == pytest.approx(
        crack_factor(BeamSpec(1e8, 1e8, 250.0, -0.015, 0.1, 0.3)), rel=1e-12)


def test_solve_uniform_beam(uniform_beam):
    sol = solve_beam(uniform_beam)
    assert sol.constants["epsilon_minus"] == pytest.approx(-0.0244140625, rel=1e-8)
    assert sol.constants["beta_plus"] == pytest.approx(1.5625e-6, rel=1e-8)
    assert max(sol.errors.values()) <= config.BEAM_CONSTANT_TOL
    assert sol.solution.interfaces[0].classification == "interacting"
    assert abs(sol.slope_jump) < 1e-10
    assert all(abs(c) < 1e-10 for _, _, c in sol.psi_delta)


ORDERS = {"alpha": 3, "beta": 2, "gamma": 1, "epsilon": 0}


def natural_scale(spec, name):
    return abs(spec.C) * spec.L ** (4 - ORDERS[name.split("_")[0]]) / min(spec.A, spec.B)


@pytest.mark.parametrize('figure', [1, 2, 3])
def test_figure_cases_match_closed_form(figure):
    cases = figure_cases()[figure]
    for spec in (cases["case"], cases["reference"]):
        sol = solve_beam(spec)
        assert max(sol.errors.values()) <= config.BEAM_CONSTANT_TOL
        assert sol.solution.diagnostics["delta_norm"] <= 1e-7
        # plain relative error wherever the constant is not a vanishing one
        for name, ref in sol.closed_form.items():
            if name == "S" or abs(ref) < 1e-3 * natural_scale(spec, name):
                continue
            assert sol.constants[name] == pytest.approx(ref, rel=1e-8)


def test_beam_at_vanishing_crack_factor():
    B = 1e7
    spec = BeamSpec((17 + 12 * math.sqrt(2)) * B, B, 250.0, -0.015)
    closed = beam_closed_form(spec)
    assert abs(closed["beta_minus"]) < 1e-10 * natural_scale(spec, "beta_minus")
    assert abs(closed["beta_plus"]) < 1e-10 * natural_scale(spec, "beta_plus")
    sol = solve_beam(spec)
    assert max(sol.errors.values()) <= config.BEAM_CONSTANT_TOL
    assert abs(sol.constants["beta_plus"]) < 1e-8 * natural_scale(spec, "beta_plus")


def test_cracked_beam_slope_jump_and_psi_delta():
    spec = figure_cases()[3]["case"]
    sol = solve_beam(spec)
    c = sol.constants
    assert spec.A * c["beta_minus"] == pytest.approx(spec.B * c["beta_plus"], rel=1e-8)
    assert sol.slope_jump == pytest.approx(expected_slope_jump(spec, c["beta_minus"], c["beta_plus"]), rel=1e-7)
    assert sol.psi_delta.coefficient(0.0, 0) == pytest.approx(sol.slope_jump, rel=1e-7)
    assert abs(sol.psi_delta.coefficient(0.0, 1)) < 1e-10


def test_swap_symmetry_for_uniform_crack():
    a = solve_beam(BeamSpec(1e8, 1e8, 250.0, -0.015, 0.2, 0.2))
    assert a.constants["gamma_plus"] == pytest.approx(-a.constants["gamma_minus"], rel=1e-8)
    assert a.constants["epsilon_plus"] == pytest.approx(a.constants["epsilon_minus"], rel=1e-10)


@pytest.mark.parametrize('K0, K1', [(0.4, 0.1), (0.0, 0.3), (0.05, 0.9)])
def test_swapping_crack_sides_on_uniform_beam(K0, K1):
    spec = BeamSpec(1e8, 1e8, 250.0, -0.015, K0, K1)
    swapped = BeamSpec(1e8, 1e8, 250.0, -0.015, K1, K0)
    assert beam_closed_form(swapped) == beam_closed_form(spec)
    a, b = solve_beam(spec), solve_beam(swapped)
    assert max(compare_constants(spec, a.constants, b.constants).values()) <= config.BEAM_CONSTANT_TOL


def test_crack_asymmetry_changes_S_as_predicted():
    A, B, dk = 1e8, 5e7, 0.1
    base = BeamSpec(A, B, 250.0, -0.015, 0.2, 0.2)
    shifted = BeamSpec(A, B, 250.0, -0.015, 0.2 + dk, 0.2 - dk)
    # moving dk of crack intensity from right to left adds 8 (A^2 - B^2) dk to the denominator
    denominator = A * A + 14 * A * B + B * B + 8 * (A * A + B * B) * 0.2
    predicted = crack_factor(base) * denominator / (denominator + 8 * (A * A - B * B) * dk)
    assert crack_factor(shifted) == pytest.approx(predicted, rel=1e-12)

    def solved_S(spec):
        return solve_beam(spec).constants["beta_minus"] * 12 * spec.A / spec.L

    assert solved_S(base) == pytest.approx(crack_factor(base), rel=1e-8)
    assert solved_S(shifted) == pytest.approx(predicted, rel=1e-8)


def test_psi_form_interface():
    spec = figure_cases()[3]["case"]
    sys = build_interface_system(beam_psi_problem(spec), 0.0)
    assert sys.classification == "interacting"
    # A psi_-(0) = B psi_+(0) and A psi_-'(0) = B psi_+'(0)
    np.testing.assert_allclose(sys.A, [[0.0, spec.A], [spec.A, 0.0]], rtol=1e-12, atol=1e-4)
    np.testing.assert_allclose(sys.B, [[0.0, spec.B], [spec.B, 0.0]], rtol=1e-12, atol=1e-4)
    scale = 2 * spec.L / (spec.A + spec.B)
    np.testing.assert_allclose(sys.delta_plus[0], [scale * spec.A * spec.K0, 0.0], rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(sys.delta_minus[0], [scale * spec.B * spec.K1, 0.0], rtol=1e-12, atol=1e-12)


def test_w_form_orders():
    problem = beam_to_problem(figure_cases()[2]["case"])
    assert problem.n == 4
    assert len(problem.divergence_terms) == 2


@pytest.mark.parametrize('spec, expected', [
    (BeamSpec(1e8, 1e8, 250.0, -0.015), {'differentiable': True, 'continuous': True, 'M_psi': 2}),
    (BeamSpec(1e8, 1e8, 250.0, -0.015, 0.2, 0.2), {'differentiable': False, 'continuous': True, 'M_psi': 3}),
])
def test_beam_regularity(spec, expected):
    regularity = beam_regularity(spec)
    for key, value in expected.items():
        assert regularity[key] == value
    assert regularity['piecewise_smooth']


def test_emit_curves(uniform_beam):
    sol = solve_beam(uniform_beam)
    curves = emit_curves(sol, 101)
    assert list(curves.columns) == ["x", "w", "w1"]
    assert len(curves) == 101
    np.testing.assert_allclose(curves["w"].iloc[[0, -1]], 0.0, atol=1e-10)
    np.testing.assert_allclose(curves["w1"].iloc[[0, -1]], 0.0, atol=1e-12)
    np.testing.assert_allclose(curves["w"].to_numpy(), curves["w"].to_numpy()[::-1], atol=1e-10)
    assert curves["w"].iloc[50] == pytest.approx(-0.0244140625, rel=1e-8)
    assert len(emit_curves(sol, 2)) == 2
    with pytest.raises(ValueError):
        emit_curves(sol, 1)


@pytest.mark.parametrize('doc, message', [
    ({"A": 1e8, "B": 1e8, "L": 250, "C": -0.015, "K0": -0.1}, "K0"),
    ({"A": 0, "B": 1e8, "L": 250, "C": -0.015}, "A must be positive"),
    ({"A": 1e8, "B": 1e8, "C": -0.015}, "Missing required fields: L"),
    ({"A": "stiff", "B": 1e8, "L": 250, "C": -0.015}, "Field A"),
])
def test_validate_beam_spec_errors(doc, message):
    result = validate_beam_spec(doc)
    assert not result['valid']
    assert any(message in error for error in result['errors'])
    with pytest.raises(ValueError):
        BeamSpec.from_dict(doc)


def test_validate_beam_spec_warnings():
    result = validate_beam_spec({"A": 1e8, "B": 1e8, "L": 250, "C": 0.0, "colour": "red"})
    assert result['valid']
    assert len(result['warnings']) == 2


def test_axial_force_has_no_closed_form():
    spec = BeamSpec(1e8, 1e8, 250.0, -0.015, P0=make_dist([], [10.0]))
    assert spec.has_axial_force
    with pytest.raises(ValueError):
        beam_closed_form(spec)
    assert not BeamSpec(1e8, 1e8, 250.0, -0.015, P0=make_dist([], [0.0])).has_axial_force


def test_compare_constants_scale():
    spec = BeamSpec(1e8, 1e8, 250.0, -0.015)
    closed = beam_closed_form(spec)
    shifted = dict(closed, gamma_minus=1e-12)
    errors = compare_constants(spec, shifted, closed)
    assert errors["gamma_minus"] < 1e-8
    assert errors["epsilon_minus"] == 0.0


@pytest.mark.slow
def test_random_beams_within_scaled_relative_error():
    rng = np.random.default_rng(5)
    for _ in range(100):
        A, B = 10 ** rng.uniform(7, 9, size=2)
        K0, K1 = rng.uniform(0, 1, size=2)
        spec = BeamSpec(A, B, rng.uniform(50, 500), -rng.uniform(0, 0.1), K0, K1)
        sol = solve_beam(spec)
        assert max(sol.errors.values()) <= config.BEAM_CONSTANT_TOL
