import numpy as np
import pytest

from switchgrid import (ConfigError, ConstraintDomain, DivergenceError, ValueField,
                        builtin_pumped_storage, solve)
from switchgrid.harness import (dpp_residual, growth_check, obstacle_check, off_front_mask,
                                penalty_ladder, radial_regions, sample_nodes, verify_field)
from switchgrid.model import tabulated_model

from conftest import cfl_grid


class TestLadder:
    def test_repeated_level_is_flat(self, cx_spec, cx_grid):
        rep = penalty_ladder(cx_spec, cx_grid, [8, 8])
        assert rep.rungs[1].max_increase == 0.0 and rep.monotone

    def test_counterexample_monotone(self, cx_spec, cx_grid):
        rep = penalty_ladder(cx_spec, cx_grid, [1, 2, 4, 8, 16, 32, 64])
        assert rep.monotone and rep.max_increase <= 1e-10
        assert rep.rungs[-1].off_front_gap < 1e-12
        assert rep.to_dict()["levels"] == [1, 2, 4, 8, 16, 32, 64]

    def test_storage_monotone(self):
        spec = builtin_pumped_storage(2.0, {"theta": 0.0, "xi": 1.0}, 1.0, 0.0, T=0.5)
        lo, hi = spec.region
        g = cfl_grid(spec, lo, hi, (41, 23), n_min=1)
        rep = penalty_ladder(spec, g, [1, 4, 16, 64])
        assert rep.monotone
        # without a closed form the oracle columns stay empty
        assert rep.rungs[0].oracle_gap is None

    def test_single_level(self, cx_spec, cx_grid):
        rep = penalty_ladder(cx_spec, cx_grid, [8])
        assert rep.max_increase is None or rep.max_increase <= 0 and rep.monotone

    @pytest.mark.parametrize("levels", [[4, 2], []])
    def test_rejects(self, cx_spec, cx_grid, levels):
        with pytest.raises(ConfigError):
            penalty_ladder(cx_spec, cx_grid, levels)

    def test_partial_report_on_failure(self, cx_grid):
        table = {"running": [1e308, 1e308], "terminal": [1.7e308, 1.7e308], "cost": [[0, 1], [1, 0]]}
        spec = tabulated_model(2, 2, 1.0, table, ConstraintDomain.box([-np.inf, 0], [np.inf, np.inf]),
                               1.0, 1.0, ((-1, -1), (1, 2)))
        from switchgrid.grid import build_grid
        g = build_grid(spec, cx_grid.gspec, n_min=1)
        with pytest.raises(DivergenceError) as exc:
            penalty_ladder(spec, g, [1, 2])
        assert exc.value.partial_report.rungs == []


class TestDPP:
    def test_one_step_zero(self, cx_spec, cx_grid, cx_field):
        s = sample_nodes(cx_grid, 100, seed=1)
        assert dpp_residual(cx_field, cx_spec, s, 1) <= 1e-12

    def test_replay_zero_any_lookahead(self, cx_spec, cx_grid, cx_field):
        L = 5
        s = sample_nodes(cx_grid, 80, seed=2, lookahead=L)
        assert dpp_residual(cx_field, cx_spec, s, L, switch_between=True) <= 1e-12

    def test_lookahead_off_front(self, cx_spec, cx_grid, cx_field):
        mask = off_front_mask(cx_grid, 1.0, 3)
        s = sample_nodes(cx_grid, 100, seed=3, mask=mask, lookahead=4)
        assert dpp_residual(cx_field, cx_spec, s, 4) <= 2 * cx_grid.dt

    def test_sample_ranges(self, cx_grid):
        s = sample_nodes(cx_grid, 500, seed=0, lookahead=3)
        assert s[:, 0].max() <= cx_grid.steps - 3
        assert set(np.unique(s[:, 2])) <= {1, 2}
        assert np.all(cx_grid.inside[s[:, 1]])
        with pytest.raises(ConfigError):
            sample_nodes(cx_grid, 5, lookahead=0)

    def test_perturbed_field_detected(self, cx_spec, cx_grid, cx_field):
        bad = ValueField(cx_field.values.copy(), cx_grid, cx_field.n, cx_field.model_hash,
                         dict(cx_field.meta))
        s = sample_nodes(cx_grid, 1, seed=0)
        k, p, i = s[0]
        bad.flat[k, i - 1, p] += 0.3
        assert dpp_residual(bad, cx_spec, s, 1) == pytest.approx(0.3)

    def test_horizon_overflow(self, cx_spec, cx_grid, cx_field):
        with pytest.raises(ConfigError):
            dpp_residual(cx_field, cx_spec, [[cx_grid.steps, 0, 1]], 1)


class TestGrowth:
    def test_zero_field(self, cx_grid):
        F = ValueField(np.zeros((cx_grid.steps + 1, 2) + cx_grid.shape), cx_grid, 1, "")
        fit, test = radial_regions(cx_grid)
        rep = growth_check(F, fit, test)
        assert rep.ok and rep.C_fit == 0.0

    def test_linear_growth_passes(self, cx_grid):
        r = np.linalg.norm(cx_grid.nodes, axis=1).reshape(cx_grid.shape)
        vals = np.broadcast_to(0.5 * (1 + r), (cx_grid.steps + 1, 2) + cx_grid.shape).copy()
        F = ValueField(vals, cx_grid, 1, "")
        assert growth_check(F, *radial_regions(cx_grid)).violation <= 1e-12

    def test_quadratic_growth_fails(self, cx_grid):
        r = np.linalg.norm(cx_grid.nodes, axis=1).reshape(cx_grid.shape)
        vals = np.broadcast_to(r ** 2, (cx_grid.steps + 1, 2) + cx_grid.shape).copy()
        rep = growth_check(ValueField(vals, cx_grid, 1, ""), *radial_regions(cx_grid))
        assert rep.violation > 0 and not rep.ok

    def test_overlap_rejected(self, cx_grid):
        m = np.ones(cx_grid.size, bool)
        with pytest.raises(ConfigError):
            growth_check(ValueField(np.zeros((cx_grid.steps + 1, 2) + cx_grid.shape), cx_grid, 1, ""),
                         m, m)


class TestObstacle:
    def test_solved_field_satisfies(self, cx_spec, cx_field):
        rep = obstacle_check(cx_field, cx_spec)
        assert rep.min_slack >= -1e-12

    def test_binding_below_front(self, cx_spec, cx_grid, cx_field):
        # in the switching region regime 1 sits exactly on the obstacle
        mask = cx_grid.inside & (cx_grid.nodes[:, 1] < 0.5)
        assert obstacle_check(cx_field, cx_spec, mask).min_slack == pytest.approx(0.0, abs=1e-12)

    def test_lowered_entry_located(self, cx_spec, cx_grid, cx_field):
        vals = cx_field.values.copy()
        vals[3, 0, 5, 20] -= 1.0
        rep = obstacle_check(ValueField(vals, cx_grid, 64, cx_field.model_hash), cx_spec)
        assert rep.min_slack < -0.4
        assert (rep.level, rep.node, rep.regime) == (3, (5, 20), 1)


class TestVerify:
    def test_counterexample_all_pass(self, cx_spec, cx_grid, cx_field):
        ladder = penalty_ladder(cx_spec, cx_grid, [16, 32, 64])
        rep = verify_field(cx_spec, cx_field, ladder=ladder, dpp_samples=100)
        assert rep.ok, rep.table()
        names = [c.name for c in rep.checks]
        assert "oracle_off_front_gap" in names and "ladder_max_increase" in names

    def test_corrupted_fails(self, cx_spec, cx_grid, cx_field):
        vals = cx_field.values.copy()
        vals[2, 1, 5, 20] += 0.5
        rep = verify_field(cx_spec, ValueField(vals, cx_grid, 64, cx_field.model_hash,
                                               dict(cx_field.meta)))
        assert not rep.ok
        assert rep.to_dict()["ok"] is False
