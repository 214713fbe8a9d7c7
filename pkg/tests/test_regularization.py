import numpy as np
import pytest
from scipy.integrate import trapezoid

from utils import config
from utils.dist_algebra import add, dirac, heaviside, make_dist, pair_with_test
from utils.regularization import (
    RegularizationError, bump_mollifier, bump_normalizer, bump_profile, check_schedule, convergence_report,
    distributional_residual, fitted_slope, limit_ode_residual, regularize, smooth_step, weak_residual,
)
from utils.smooth_fn import parse_expr
from tests.conftest import point_mass_problem

SUPPORT = (-6.0, 6.0)
SCHEDULE = [2.0 ** -k for k in range(3, 11)]
TEST_FUNCTIONS = [
    "exp(-x^2)",
    "x*exp(-x^2)",
    "exp(-2*(x - 0.2)^2)",
    "cos(x)*exp(-x^2)",
    "(1 + x)*exp(-3*x^2)",
]
PAIRS = [
    ("H*delta", heaviside(0.0), dirac(0.0)),
    ("delta*H", dirac(0.0), heaviside(0.0)),
    ("delta'*H", dirac(0.0, 1), heaviside(0.0)),
    ("Hsin*H", make_dist([0.0], ["0", "sin(x)"]), heaviside(0.0)),
]


def test_kernel_has_unit_mass_and_compact_support():
    kernel = bump_mollifier(0.3, 0.1)
    xs = np.linspace(0.2, 0.4, 20001)
    np.testing.assert_almost_equal(trapezoid(kernel(xs), xs), 1.0, 6)
    assert kernel(0.41) == 0.0
    assert kernel(0.3) > 0.0
    assert kernel.support == pytest.approx((0.2, 0.4))


def test_bump_derivative_matches_finite_difference():
    u, h = 0.37, 1e-6
    for k in range(3):
        fd = (bump_profile(u + h, k) - bump_profile(u - h, k)) / (2 * h)
        np.testing.assert_allclose(bump_profile(u, k + 1), fd, rtol=1e-5)


def test_smooth_step():
    assert smooth_step(-1.5) == 0.0
    assert smooth_step(1.0) == 1.0
    np.testing.assert_almost_equal(smooth_step(0.0), 0.5, 12)
    np.testing.assert_almost_equal(smooth_step(0.4) + smooth_step(-0.4), 1.0, 12)
    assert bump_normalizer() > 0


def test_regularized_heaviside_is_shifted_step():
    R = regularize(heaviside(0.0), 0.1, "plus")
    assert R(-0.01) == 0.0
    assert R(0.25) == 1.0
    np.testing.assert_almost_equal(R(0.1), 0.5, 12)
    L = regularize(heaviside(0.0), 0.1, "minus")
    np.testing.assert_almost_equal(L(-0.1), 0.5, 12)
    assert L(0.01) == 1.0


def test_regularized_delta_is_shifted_kernel():
    R = regularize(dirac(0.0, 0, 2.0), 0.25, "plus")
    kernel = bump_mollifier(0.25, 0.25)
    for x in (0.1, 0.25, 0.4):
        np.testing.assert_allclose(R(x), 2.0 * kernel(x), rtol=1e-12)
    assert R(-0.01) == 0.0


@pytest.mark.parametrize('eps, side', [(0.0, "plus"), (-0.1, "plus"), (0.1, "up")])
def test_regularize_rejects_bad_arguments(eps, side):
    with pytest.raises(RegularizationError):
        regularize(heaviside(0.0), eps, side)


def test_eps_too_large_for_breakpoint_gap():
    F = add(heaviside(0.0), dirac(1.0))
    regularize(F, 0.4, "plus")
    with pytest.raises(RegularizationError, match="eps too large"):
        regularize(F, 0.6, "plus")


@pytest.mark.parametrize('schedule', [[], [0.1, 0.2], [0.1, 0.1], [0.1, -0.05]])
def test_check_schedule(schedule):
    with pytest.raises(RegularizationError):
        check_schedule(schedule)


def test_fitted_slope():
    eps = np.array([0.1, 0.05, 0.025])
    np.testing.assert_almost_equal(fitted_slope(eps, 3 * eps ** 2), 2.0, 10)
    assert np.isnan(fitted_slope(eps, np.zeros(3)))


@pytest.mark.parametrize('label, F, psi', PAIRS)
@pytest.mark.parametrize('t_source', TEST_FUNCTIONS)
def test_weak_residuals_decrease(label, F, psi, t_source):
    t = parse_expr(t_source)
    report = convergence_report(F, psi, t, SCHEDULE, "plus", SUPPORT, max_workers=2)
    residuals = report['residual'].to_numpy()
    assert list(report.columns) == ["eps", "residual", "slope"]
    assert np.all(np.diff(residuals) <= 1e-12), label
    assert residuals[-1] < config.REG_FINAL_RESIDUAL_TOL, label
    assert residuals[-1] <= residuals[0] / config.REG_MIN_DECAY + 1e-12, label


def test_right_regularization_against_psi_star_f():
    t = parse_expr("exp(-x^2)")
    residuals = [weak_residual(dirac(0.0), heaviside(0.0, "left"), t, eps, "minus", SUPPORT) for eps in SCHEDULE]
    assert np.all(np.diff(residuals) <= 1e-12)
    assert residuals[-1] < 1e-3


def test_distributional_limit():
    t = parse_expr("exp(-(x - 0.1)^2)")
    F = add(heaviside(0.0), dirac(0.0, 1))
    residuals = [distributional_residual(F, t, eps, "plus", SUPPORT) for eps in SCHEDULE]
    assert residuals[-1] < config.REG_FINAL_RESIDUAL_TOL
    assert residuals[-1] < residuals[0] / config.REG_MIN_DECAY
    assert pair_with_test(F, t, SUPPORT) != 0.0


def test_limit_ode_residual_for_point_mass_jump():
    c = 0.5
    spec = point_mass_problem(c)
    # psi' + (c delta) * psi = 0 forces psi_+ = psi_- / (1 + c)
    psi = make_dist([0.0], ["1", str(1.0 / (1.0 + c))])
    t = parse_expr("exp(-x^2)")
    residuals = [limit_ode_residual(spec, psi, t, eps, SUPPORT) for eps in SCHEDULE]
    assert np.all(np.diff(residuals) <= 1e-12)
    assert residuals[-1] < 1e-5
    wrong = make_dist([0.0], ["1", "1"])
    assert limit_ode_residual(spec, wrong, t, SCHEDULE[-1], SUPPORT) > 0.1
