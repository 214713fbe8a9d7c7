import json
from pathlib import Path

import pytest

from utils.beam import BeamSpec
from utils.dist_algebra import dirac, make_dist, smooth
from utils.ode_solver import ProblemSpec, problem_from_json
from utils.smooth_fn import parse_expr

FIXTURE_DIR = Path(__file__).parent / "fixtures"


def load_fixture(name):
    return json.loads((FIXTURE_DIR / name).read_text(encoding="utf-8"))


def delta_cubed_problem(k=1.0, alpha=0.125, domain=(-3.0, 3.0)):
    """psi'' + (k^2 + alpha delta''') * psi = 0"""
    a0 = make_dist([], [k * k], {(0.0, 3): alpha})
    return ProblemSpec(2, (a0, smooth(0.0), smooth(0.0)), (smooth(0.0), smooth(0.0), smooth(1.0)),
                       parse_expr("0"), domain)


def point_mass_problem(c, domain=(-1.0, 1.0)):
    """psi' + (c delta) * psi = 0"""
    return ProblemSpec(1, (dirac(0.0, 0, c), smooth(1.0)), (smooth(0.0), smooth(0.0)), parse_expr("0"), domain)


@pytest.fixture
def fixture_dir():
    return FIXTURE_DIR


@pytest.fixture
def interacting_problem():
    return delta_cubed_problem(1.0, 0.125)


@pytest.fixture
def partial_problem():
    return delta_cubed_problem(1.0, 0.25)


@pytest.fixture
def uniform_beam():
    return BeamSpec(1e8, 1e8, 250.0, -0.015)


@pytest.fixture
def problem_document():
    def _load(name):
        return problem_from_json(load_fixture(name))
    return _load
