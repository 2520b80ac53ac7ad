import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from switchgrid import (ConfigError, ConstraintDomain, builtin_counterexample, dist_to_domain,
                        penalized_running, penalized_terminal, theta)
from switchgrid.model import CoefficientFields, ModelSpec, RegimeSet
from switchgrid.penalty import penalty_ladder_levels

STRIP = ConstraintDomain.box([-np.inf, 0.0], [np.inf, 1.0])
coord = st.floats(-5, 5, allow_nan=False)


def _const_model(f=1.0, g=2.0):
    return ModelSpec(
        name="const", dim=1, regimes=RegimeSet(2), horizon=1.0,
        coeffs=CoefficientFields(lambda x, i: 0.0, lambda x, i: 0.0, lambda x, i: f,
                                 lambda x, i: g, lambda x, i, j: 1.0),
        domain=ConstraintDomain.box([0.0], [np.inf]), L=1.0, c_bar=1.0, region=((-2,), (2,)))


class TestDistance:
    def test_examples(self):
        assert dist_to_domain(STRIP, np.array([5.0, 0.5])) == 0.0
        assert dist_to_domain(STRIP, np.array([5.0, -0.5])) == 0.5
        ball = ConstraintDomain.ball([0.0, 0.0], 1.0)
        assert dist_to_domain(ball, np.array([2.0, 0.0])) == pytest.approx(1.0)

    def test_halfspace_and_polyhedron(self):
        hs = ConstraintDomain.halfspace([1.0, 1.0], 0.0)
        assert dist_to_domain(hs, np.array([1.0, 1.0])) == pytest.approx(np.sqrt(2))
        tri = ConstraintDomain.polyhedron([[-1, 0], [0, -1], [1, 1]], [0, 0, 1])
        # outside the hypotenuse: projection onto the face
        assert dist_to_domain(tri, np.array([1.0, 1.0])) == pytest.approx(1 / np.sqrt(2))
        # beyond a vertex: distance to the corner
        assert dist_to_domain(tri, np.array([2.0, -1.0])) == pytest.approx(np.sqrt(2))

    def test_vectorised_shape(self):
        d = dist_to_domain(STRIP, np.zeros((3, 4, 2)))
        assert d.shape == (3, 4)

    def test_unsupported_object(self):
        with pytest.raises(ConfigError):
            dist_to_domain("strip", np.zeros(2))

    def test_empty_polyhedron(self):
        with pytest.raises(ConfigError):
            ConstraintDomain.polyhedron([[1.0], [-1.0]], [0.0, -1.0])

    @given(st.lists(coord, min_size=2, max_size=2))
    def test_membership_matches_distance(self, x):
        x = np.array(x)
        for dom in (STRIP, ConstraintDomain.ball([0.5, -0.5], 1.5),
                    ConstraintDomain.polyhedron([[-1, 0], [0, -1], [1, 1]], [0, 0, 1])):
            assert (dom.distance(x) == 0) == bool(dom.contains(x))

    @given(st.lists(coord, min_size=2, max_size=2), st.lists(coord, min_size=2, max_size=2))
    def test_distance_is_1_lipschitz(self, x, y):
        x, y = np.array(x), np.array(y)
        tri = ConstraintDomain.polyhedron([[-1, 0], [0, -1], [1, 1]], [0, 0, 1])
        for dom in (STRIP, tri, ConstraintDomain.ball([0, 0], 1.0)):
            assert abs(dom.distance(x) - dom.distance(y)) <= np.linalg.norm(x - y) + 1e-9


class TestTheta:
    def test_examples(self):
        line = ConstraintDomain.box([0.0], [np.inf])
        assert theta(2, line, np.array([-0.3])) == pytest.approx(0.6)
        assert theta(10, line, np.array([-0.5])) == 1.0
        assert theta(7, line, np.array([3.0])) == 0.0

    @pytest.mark.parametrize("n", [0, -1, 1.5])
    def test_bad_level(self, n):
        with pytest.raises(ConfigError):
            theta(n, STRIP, np.zeros(2))

    @given(st.integers(1, 200), st.lists(coord, min_size=2, max_size=2))
    def test_range_and_monotone_in_n(self, n, x):
        x = np.array(x)
        a, b = theta(n, STRIP, x), theta(n + 1, STRIP, x)
        assert 0.0 <= a <= b <= 1.0

    @given(st.integers(1, 64), st.lists(coord, min_size=2, max_size=2),
           st.lists(coord, min_size=2, max_size=2))
    def test_n_lipschitz(self, n, x, y):
        x, y = np.array(x), np.array(y)
        assert abs(theta(n, STRIP, x) - theta(n, STRIP, y)) <= n * np.linalg.norm(x - y) + 1e-9


class TestPenalisedRewards:
    def test_counterexample_inside(self):
        spec = builtin_counterexample()
        for n in (1, 5, 64):
            assert penalized_running(spec, n, np.array([0.3, 0.7]), 1) == 1.0
            assert penalized_terminal(spec, n, np.array([0.3, 0.7]), 2) == 0.0

    def test_formula(self):
        spec = _const_model(f=1.0, g=2.0)
        assert penalized_running(spec, 4, np.array([-1.0]), 1) == pytest.approx(-3.0)
        assert penalized_running(spec, 4, np.array([-0.1]), 1) == pytest.approx(-0.6)
        assert penalized_terminal(spec, 3, np.array([-1.0]), 2) == pytest.approx(-1.0)
        assert penalized_terminal(spec, 3, np.array([0.5]), 2) == 2.0

    @settings(max_examples=50)
    @given(st.integers(1, 100), st.floats(-3, 3))
    def test_nonincreasing_in_n(self, n, x):
        spec = _const_model()
        pt = np.array([x])
        assert penalized_running(spec, n + 1, pt, 1) <= penalized_running(spec, n, pt, 1)
        assert penalized_terminal(spec, 2 * n, pt, 1) <= penalized_terminal(spec, n, pt, 1)

    def test_ladder_levels(self):
        assert penalty_ladder_levels(6) == [1, 2, 4, 8, 16, 32, 64]
        with pytest.raises(ConfigError):
            penalty_ladder_levels(-1)
