import numpy as np
import pytest

from switchgrid import ConstraintDomain, GridSpec, build_grid, builtin_counterexample, solve
from switchgrid.grid import steps_for_cfl
from switchgrid.model import tabulated_model

TAB_TABLE = {
    "drift": [[0.5], [-0.5]],
    "volatility": [[[0.3]], [[0.2]]],
    "running": [{"const": 1.0, "linear": [0.5]}, 0.8],
    "terminal": [0.0, {"linear": [1.0]}],
    "cost": [[0.0, 0.1], [0.15, 0.0]],
}


def make_tab1d(T=0.3):
    """1D two-regime model with a box constraint [0.2, 0.8] inside the grid [0, 1]."""
    return tabulated_model(1, 2, T, TAB_TABLE, ConstraintDomain.box([0.2], [0.8]), 1.0, 0.1,
                           ((0.0,), (1.0,)))


def cfl_grid(spec, lo, hi, points, n_min=None):
    gs = GridSpec(lo, hi, points, 1)
    return build_grid(spec, gs.with_steps(steps_for_cfl(spec, gs)), n_min=n_min)


@pytest.fixture(scope="session")
def cx_spec():
    return builtin_counterexample(T=1.0, c=0.5)


@pytest.fixture(scope="session")
def cx_grid(cx_spec):
    # dx2 = 0.1 and dt = 0.1: regime 1 shifts exactly one node per step
    return cfl_grid(cx_spec, (-1.0, -1.0), (1.0, 2.0), (11, 31), n_min=1)


@pytest.fixture(scope="session")
def cx_field(cx_spec, cx_grid):
    return solve(cx_spec, 64, cx_grid)


@pytest.fixture(scope="session")
def tab_spec():
    return make_tab1d()


@pytest.fixture(scope="session")
def tab_grid(tab_spec):
    return build_grid(tab_spec, GridSpec((0.0,), (1.0,), (11,), 10), n_min=8)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
