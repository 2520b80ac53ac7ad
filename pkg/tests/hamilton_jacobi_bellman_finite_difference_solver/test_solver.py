import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from switchgrid import (ConfigError, ConstraintDomain, DivergenceError, GridSpec, ObstacleError,
                        SchemeError, SchemeParams, build_grid, extract_policy, solve)
from switchgrid.model import tabulated_model
from switchgrid.oracle import counterexample_table
from switchgrid.solver import (KEEP, backward_step, build_stencil, generator_apply,
                               switching_envelope, terminal_condition)


def _model(m, g=None, cost=1.0, f=0.0, drift=None, vol=None, dim=1, domain=None):
    g = g or [0.0] * m
    table = {
        "drift": drift if drift is not None else [[0.0] * dim] * m,
        "volatility": vol if vol is not None else [[[0.0] * dim] * dim] * m,
        "running": [f] * m,
        "terminal": g,
        "cost": (np.full((m, m), cost) - cost * np.eye(m)).tolist(),
    }
    lo, hi = [-1.0] * dim, [1.0] * dim
    domain = domain or ConstraintDomain.box([-0.5] * dim, [0.5] * dim)
    return tabulated_model(dim, m, 1.0, table, domain, 1.0, cost, (tuple(lo), tuple(hi)))


def _grid(spec, pts=5, steps=4):
    d = spec.dim
    return build_grid(spec, GridSpec([-1.0] * d, [1.0] * d, [pts] * d, steps))


class TestEnvelope:
    def test_examples(self):
        assert switching_envelope([3, 5], [0, 1], 1) == (4.0, 2)
        assert switching_envelope([5, 5, 5], [0, 2, 2], 1) == (3.0, 2)

    def test_counterexample_switching_region(self):
        T, c, t = 1.0, 0.5, 0.2
        H, j = switching_envelope([T - t - c, T - t], [0.0, c], 1)
        assert (H, j) == (pytest.approx(T - t - c), 2)

    def test_single_regime(self):
        with pytest.raises(ConfigError):
            switching_envelope([1.0], [0.0], 1)


class TestTerminal:
    def test_counterexample_no_switch(self, cx_spec, cx_grid):
        v = terminal_condition(cx_spec, 64, cx_grid)
        assert np.all(v[:, cx_grid.inside] == 0.0)

    def test_one_sweep(self):
        spec = _model(2, g=[0.0, 10.0], cost=1.0)
        g = _grid(spec)
        v = terminal_condition(spec, 1, g)[:, g.inside]
        assert np.allclose(v[0], 9.0) and np.allclose(v[1], 10.0)

    def test_three_regimes(self):
        spec = _model(3, g=[0.0, 0.0, 5.0], cost=1.0)
        v = terminal_condition(spec, 1, _grid(spec))[:, 2:3]
        # brute force over switch chains of length < m
        g, c = np.array([0.0, 0.0, 5.0]), 1.0
        ref = [max(g[i], max(g[j] - c for j in range(3) if j != i),
                   max(g[k] - 2 * c for j in range(3) for k in range(3) if len({i, j, k}) == 3))
               for i in range(3)]
        assert np.allclose(v[:, 0], ref) and np.allclose(ref, [4, 4, 5])

    def test_penalised_outside(self):
        spec = _model(2, g=[1.0, 1.0], cost=1.0)
        g = _grid(spec, pts=5)
        v = terminal_condition(spec, 4, g)
        # node x=-1 is 0.5 away from D, theta saturates: 1 - 4
        assert v[0, 0] == pytest.approx(-3.0)


class TestGenerator:
    def test_affine_upwind_exact(self):
        spec = _model(2, drift=[[0.7, -0.4], [0.0, 0.0]], dim=2)
        g = _grid(spec, pts=7)
        a = np.array([2.0, -3.0])
        lv = np.stack([g.nodes @ a, g.nodes @ a])
        node = g.node_index((3, 3))
        assert generator_apply(spec, g, lv, node, 1) == pytest.approx(0.7 * 2 - 0.4 * -3)

    def test_quadratic_central_exact(self):
        spec = _model(2, vol=[[[1.0]], [[1.0]]])
        g = _grid(spec, pts=9)
        lv = np.stack([g.nodes[:, 0] ** 2] * 2)
        assert generator_apply(spec, g, lv, 4, 2) == pytest.approx(1.0)

    def test_counterexample_regime1(self, cx_spec, cx_grid):
        lv = np.stack([cx_grid.nodes[:, 1]] * 2)
        node = cx_grid.node_index((5, 15))
        assert generator_apply(cx_spec, cx_grid, lv, node, 1) == pytest.approx(-1.0)
        assert generator_apply(cx_spec, cx_grid, lv, node, 2) == 0.0

    def test_cross_term_on_linear_is_zero(self):
        s = 0.5
        vol = [[[s, 0.0], [s, 0.1]]] * 2   # correlated noise
        spec = _model(2, vol=vol, dim=2)
        g = _grid(spec, pts=9)
        lv = np.stack([g.nodes @ np.array([1.0, 2.0])] * 2)
        assert generator_apply(spec, g, lv, g.node_index((4, 4)), 1) == pytest.approx(0.0, abs=1e-12)

    def test_cross_term_on_bilinear(self):
        vol = [[[0.4, 0.0], [0.4, 0.2]]] * 2
        spec = _model(2, vol=vol, dim=2)
        g = build_grid(spec, GridSpec((-1, -1), (1, 1), (9, 9), 1))
        lv = np.stack([g.nodes[:, 0] * g.nodes[:, 1]] * 2)
        a12 = 0.4 * 0.4
        assert generator_apply(spec, g, lv, g.node_index((4, 4)), 1) == pytest.approx(a12)

    def test_non_dominant_diffusion_rejected(self):
        vol = [[[1.0, 0.0], [1.0, 0.01]]] * 2    # a12 close to a11 = a22
        spec = _model(2, vol=vol, dim=2)
        g = build_grid(spec, GridSpec((-1, -1), (1, 1), (5, 9), 1))
        with pytest.raises(SchemeError, match="diagonally dominant"):
            build_stencil(spec, g)


class TestBackwardStep:
    def test_reward_accrual(self):
        spec = _model(2, f=1.0)
        g = _grid(spec, steps=4)
        v = backward_step(spec, 1, g, np.zeros((2, g.size)))
        assert np.allclose(v[:, g.inside], g.dt)

    def test_nonfinite_detected(self):
        spec = _model(2)
        g = _grid(spec)
        v_next = np.zeros((2, g.size))
        v_next[1, 3] = np.nan
        with pytest.raises(DivergenceError) as exc:
            backward_step(spec, 1, g, v_next, level=2)
        assert exc.value.level == 2 and exc.value.regime == 2

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(-5, 5), min_size=5, max_size=5), st.floats(0, 3))
    def test_monotone(self, base, bump):
        spec = _model(2, drift=[[0.8], [-0.3]], vol=[[[0.5]], [[0.2]]], f=0.3)
        g = build_grid(spec, GridSpec((-1,), (1,), (5,), 20))
        lo = np.array([base, base[::-1]])
        hi = lo + bump
        a = backward_step(spec, 2, g, lo)
        b = backward_step(spec, 2, g, hi)
        assert np.all(b >= a - 1e-12)


class TestSolve:
    def test_trivial_model_is_zero(self):
        spec = _model(2, domain=ConstraintDomain.box([-np.inf], [np.inf]))
        F = solve(spec, 8, _grid(spec, pts=5, steps=6))
        assert np.all(F.values == 0.0)

    def test_counterexample_exact_off_front(self, cx_spec, cx_grid, cx_field):
        ref, feas = counterexample_table(cx_grid.times, cx_grid.nodes, 1.0, 0.5)
        x2 = cx_grid.nodes[:, 1][None, :]
        off = np.abs(x2 - (1.0 - cx_grid.times)[:, None]) >= 3 * cx_grid.spacing[1]
        mask = (feas[:, 0] & cx_grid.inside[None, :] & off)
        err = np.abs(cx_field.flat - ref)
        assert err[:, 0][mask].max() < 1e-12
        assert err[:, 1][feas[:, 1] & cx_grid.inside[None, :]].max() < 1e-12

    def test_wrong_grid(self, cx_spec):
        spec = _model(2)
        with pytest.raises(ConfigError):
            solve(cx_spec, 1, _grid(spec))

    def test_dt_mismatch(self, cx_spec, cx_grid):
        with pytest.raises(ConfigError):
            solve(cx_spec, 1, cx_grid, SchemeParams(dt=0.05))

    def test_cycle_detection(self):
        table = {"cost": [[0, 1], [-2, 0]], "terminal": [0.0, 0.0]}
        spec = tabulated_model(1, 2, 1.0, table, ConstraintDomain.box([-0.5], [0.5]), 1, 1,
                               ((-1,), (1,)))
        with pytest.raises(ObstacleError):
            solve(spec, 1, _grid(spec))

    def test_meta(self, cx_field):
        assert cx_field.meta["max_sweeps"] == 2
        assert cx_field.n == 64


class TestPolicy:
    def test_counterexample_actions(self, cx_spec, cx_grid, cx_field):
        pol = extract_policy(cx_field, cx_spec)
        k = 2
        t = cx_grid.times[k]
        x2 = cx_grid.nodes[:, 1]
        low = cx_grid.inside & (x2 < 1.0 - t - 1e-9)
        high = cx_grid.inside & (x2 > 1.0 - t + 1e-9)
        assert np.all(pol.flat[k, 0][low] == 2)
        assert np.all(pol.flat[k, 0][high] == KEEP)
        assert np.all(pol.flat[:, 1][:, cx_grid.inside] == KEEP)

    def test_threshold_semantics(self):
        spec = _model(2, g=[0.0, 1.0], cost=1.0)
        g = _grid(spec, steps=1)
        vals = np.zeros((2, 2, 5))
        vals[:, 1] = 1.0
        vals[:, 0] = 10 * 1e-12        # v1 - Hv1 = 10 eps
        from switchgrid import ValueField
        F = ValueField(vals, g, 1, spec.model_hash)
        assert np.all(extract_policy(F, spec, eps_obs=1e-12).flat[:, 0] == KEEP)
        assert np.all(extract_policy(F, spec, eps_obs=1e-10).flat[:, 0] == 2)

    def test_lookup_floor_level(self, cx_spec, cx_grid, cx_field):
        pol = extract_policy(cx_field, cx_spec)
        dt = cx_grid.dt
        assert np.all(pol.level_at(np.array([0.0, dt * 0.999, dt, 1.0])) == [0, 0, 1, cx_grid.steps])
