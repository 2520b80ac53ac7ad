"""Invariant checks on solved fields: penalty ladder, DPP residual, growth, obstacle."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericalError
from .oracle import counterexample_table
from .solver import SchemeParams, build_stencil, prepare, solve

log = logging.getLogger(__name__)

EPS_MONO = 1e-10
EPS_OBSTACLE = 1e-9


# ---------------------------------------------------------------------------
# Closed-form reference for the two-regime example
# ---------------------------------------------------------------------------

def off_front_mask(grid, T, band_cells=3):
    """``(M+1, Nn)`` mask of nodes in D at least ``band_cells * dx2`` from ``x2 = T - t``."""
    x2 = grid.nodes[:, 1][None, :]
    rem = (T - grid.times)[:, None]
    return grid.inside[None, :] & (np.abs(x2 - rem) >= band_cells * grid.spacing[1])


def counterexample_gap(field, T, c, band_cells=3):
    """Sup-norm gaps to the closed form on D: ``(all nodes, off-front nodes)``."""
    grid = field.grid
    ref, feas = counterexample_table(grid.times, grid.nodes, T, c)
    err = np.abs(field.flat - ref)
    inside = feas & grid.inside[None, None, :]
    off = inside & off_front_mask(grid, T, band_cells)[:, None, :]
    return float(err[inside].max()), float(err[off].max())


def _counterexample_params(spec):
    if spec.name != "counterexample":
        return None
    return spec.horizon, float(spec.config["params"]["c"])


# ---------------------------------------------------------------------------
# Penalty ladder
# ---------------------------------------------------------------------------

@dataclass
class Rung:
    n: int
    vmin: float
    vmax: float
    vmean: float
    max_increase: float | None
    sup_diff: float | None
    oracle_gap: float | None
    off_front_gap: float | None

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class ConvergenceReport:
    rungs: list = field(default_factory=list)
    eps_mono: float = EPS_MONO

    @property
    def levels(self):
        return [r.n for r in self.rungs]

    @property
    def max_increase(self):
        inc = [r.max_increase for r in self.rungs if r.max_increase is not None]
        return max(inc) if inc else 0.0

    @property
    def monotone(self):
        return self.max_increase <= self.eps_mono

    def to_dict(self):
        return {"levels": self.levels, "eps_mono": self.eps_mono, "max_increase": self.max_increase,
                "monotone": self.monotone, "rungs": [r.to_dict() for r in self.rungs]}


def penalty_ladder(spec, grid, levels, params: SchemeParams | None = None, band_cells=3,
                   keep_fields=False):
    """Solve each penalty level and track ``max(v_{n'} - v_n)`` on grid nodes in D.

    Levels must be nondecreasing.  For the built-in counterexample the gap
    to the closed form is reported as well.  A failing solve re-raises with
    the partial report attached as ``exc.partial_report``.
    """
    levels = [int(n) for n in levels]
    if not levels:
        raise ConfigError("penalty ladder needs at least one level")
    if any(b < a for a, b in zip(levels, levels[1:])):
        raise ConfigError(f"penalty levels must be sorted ascending, got {levels}")
    ref = _counterexample_params(spec)
    report = ConvergenceReport()
    fields = []
    stencil = build_stencil(spec, grid)
    inside = grid.inside
    prev = None
    for n in levels:
        try:
            fld = solve(spec, n, grid, params, stencil=stencil)
        except NumericalError as exc:
            exc.partial_report = report
            raise
        V = fld.flat[:, :, inside]
        inc = sup = gap = off = None
        if prev is not None:
            diff = V - prev
            inc = float(diff.max())
            sup = float(np.abs(diff).max())
        if ref is not None:
            gap, off = counterexample_gap(fld, *ref, band_cells)
        report.rungs.append(Rung(n, float(V.min()), float(V.max()), float(V.mean()), inc, sup, gap, off))
        log.info("ladder n=%d: max increase %s, off-front gap %s", n, inc, off)
        prev = V
        if keep_fields:
            fields.append(fld)
    return (report, fields) if keep_fields else report


# ---------------------------------------------------------------------------
# Dynamic programming residual
# ---------------------------------------------------------------------------

def sample_nodes(grid, count, seed=0, mask=None, lookahead=1):
    """Random ``(level, node, regime)`` triples with ``level + lookahead <= M``.

    ``mask`` is an optional ``(M+1, Nn)`` or ``(Nn,)`` admissibility mask; by
    default nodes inside D are used.
    """
    M = grid.steps
    if lookahead < 1 or lookahead > M:
        raise ConfigError(f"lookahead must be in 1..{M}")
    if mask is None:
        mask = grid.inside
    mask = np.broadcast_to(mask, (M + 1, grid.size))[: M - lookahead + 1]
    ks, ps = np.nonzero(mask)
    if ks.size == 0:
        raise ConfigError("no admissible sample nodes")
    rng = np.random.default_rng(seed)
    pick = rng.choice(ks.size, size=min(count, ks.size), replace=False)
    regimes = rng.integers(1, grid.m + 1, size=pick.size)
    return np.stack([ks[pick], ps[pick], regimes], axis=1)


def dpp_residual(field, spec, samples, lookahead=1, params: SchemeParams | None = None,
                 return_all=False, switch_between=False):
    """Max ``|v(t_k) - RHS|`` with the right-hand side built from level ``k + lookahead``.

    By default the regime is kept for ``lookahead`` explicit steps, then the
    best immediate switch (including switch chains) is taken at ``t_k``.
    ``switch_between=True`` also projects after every intermediate step,
    i.e. replays the scheme itself, so the residual vanishes up to rounding
    for any lookahead.  With ``lookahead = 1`` both variants coincide.
    """
    grid = field.grid
    params = params or SchemeParams(eps_obs=field.meta.get("eps_obs", 1e-12))
    disc = prepare(spec, field.n, grid, params)
    kern = disc.kernels
    samples = np.asarray(samples, dtype=np.int64).reshape(-1, 3)
    if np.any(samples[:, 0] + lookahead > grid.steps):
        raise ConfigError("sample level plus lookahead exceeds the horizon")
    V = field.flat
    res = np.empty(len(samples))
    for k in np.unique(samples[:, 0]):
        w = np.ascontiguousarray(V[k + lookahead])
        for step in range(lookahead):
            out = np.empty_like(w)
            kern.explicit_step(w, disc.weights, disc.stencil.nbr, disc.fdt, out)
            w = out
            if switch_between or step == lookahead - 1:
                kern.project_obstacle(w, disc.cost, disc.max_sweeps, disc.eps_obs)
        sel = samples[:, 0] == k
        res[sel] = np.abs(V[k, samples[sel, 2] - 1, samples[sel, 1]] - w[samples[sel, 2] - 1, samples[sel, 1]])
    worst = float(res.max()) if res.size else 0.0
    return (worst, res) if return_all else worst


# ---------------------------------------------------------------------------
# Growth bounds
# ---------------------------------------------------------------------------

@dataclass
class GrowthReport:
    C_fit: float
    violation: float
    C_low: float
    low_violation: float
    eta: int

    @property
    def ok(self):
        return self.violation <= 0 and self.low_violation <= 0

    def to_dict(self):
        return dict(self.__dict__, ok=self.ok)


def growth_check(fields, fit_region, test_region, eta=1):
    """Fit ``v <= C (1 + |x|)`` and ``v >= -C' (1 + |x|^eta)`` on one node set, test on another.

    Regions are boolean node masks over the (shared) grid.  Violations are
    the worst positive excess on the test region (0 when the bounds hold).
    """
    if isinstance(fields, (list, tuple)) is False:
        fields = [fields]
    fit_region = np.asarray(fit_region, bool)
    test_region = np.asarray(test_region, bool)
    if np.any(fit_region & test_region):
        raise ConfigError("fit and test regions must be disjoint")
    grid = fields[0].grid
    r = np.linalg.norm(grid.nodes, axis=1)
    up_w = 1.0 + r
    low_w = 1.0 + r ** eta
    C = C_low = 0.0
    for fld in fields:
        V = fld.flat[:, :, fit_region]
        if V.size:
            C = max(C, float(np.max(V / up_w[fit_region])))
            C_low = max(C_low, float(np.max(-V / low_w[fit_region])))
    viol = low = 0.0
    for fld in fields:
        V = fld.flat[:, :, test_region]
        if V.size:
            viol = max(viol, float(np.max(V - C * up_w[test_region])))
            low = max(low, float(np.max(-C_low * low_w[test_region] - V)))
    return GrowthReport(C, viol, C_low, low, eta)


def radial_regions(grid, inside_only=True):
    """Fit region ``|x| <= R/2`` and test region ``R/2 < |x| <= R`` with ``R`` the largest radius in D."""
    r = np.linalg.norm(grid.nodes, axis=1)
    base = grid.inside if inside_only else np.ones(grid.size, bool)
    R = float(r[base].max())
    return base & (r <= R / 2), base & (r > R / 2) & (r <= R)


# ---------------------------------------------------------------------------
# Obstacle
# ---------------------------------------------------------------------------

@dataclass
class ObstacleReport:
    min_slack: float
    level: int
    node: tuple
    regime: int

    def to_dict(self):
        return dict(self.__dict__, node=list(self.node))


def obstacle_check(field, spec, mask=None):
    """Minimum of ``v_i - max_{j != i}(v_j - c_ij)`` over nodes in D (or ``mask``)."""
    grid = field.grid
    mask = grid.inside if mask is None else np.asarray(mask, bool)
    nodes = grid.nodes[mask]
    V = field.flat[:, :, mask]
    m = grid.m
    worst, where = np.inf, (0, 0, 1)
    for i in range(1, m + 1):
        env = np.full(V.shape[::2], -np.inf)
        for j in range(1, m + 1):
            if j != i:
                env = np.maximum(env, V[:, j - 1] - spec.coeffs.c(nodes, i, j))
        slack = V[:, i - 1] - env
        k, p = np.unravel_index(np.argmin(slack), slack.shape)
        if slack[k, p] < worst:
            worst, where = float(slack[k, p]), (int(k), int(np.flatnonzero(mask)[p]), i)
    node = tuple(int(q) for q in np.unravel_index(where[1], grid.shape))
    return ObstacleReport(worst, where[0], node, where[2])


# ---------------------------------------------------------------------------
# Full verification suite
# ---------------------------------------------------------------------------

@dataclass
class Check:
    name: str
    status: str          # "pass", "fail" or "skipped"
    value: float | None = None
    threshold: float | None = None
    detail: str = ""

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class VerifyReport:
    checks: list = field(default_factory=list)

    @property
    def ok(self):
        return all(c.status != "fail" for c in self.checks)

    def add(self, name, value, threshold, passed, detail=""):
        self.checks.append(Check(name, "pass" if passed else "fail", value, threshold, detail))

    def skip(self, name, detail):
        self.checks.append(Check(name, "skipped", detail=detail))

    def to_dict(self):
        return {"ok": self.ok, "checks": [c.to_dict() for c in self.checks]}

    def table(self):
        lines = [f"{'check':<28} {'status':<8} {'value':>14} {'threshold':>12}"]
        for c in self.checks:
            val = "" if c.value is None else f"{c.value:.6g}"
            thr = "" if c.threshold is None else f"{c.threshold:.6g}"
            lines.append(f"{c.name:<28} {c.status:<8} {val:>14} {thr:>12}  {c.detail}")
        return "\n".join(lines)


def verify_field(spec, field, params: SchemeParams | None = None, ladder=None,
                 dpp_samples=200, lookahead=4, seed=0, band_cells=3, eta=1):
    """Run obstacle, DPP, growth and (when available) closed-form checks on one field."""
    rep = VerifyReport()
    grid = field.grid
    obs = obstacle_check(field, spec)
    rep.add("obstacle_min_slack", obs.min_slack, -EPS_OBSTACLE, obs.min_slack >= -EPS_OBSTACLE,
            f"at level {obs.level}, node {list(obs.node)}, regime {obs.regime}")

    ref = _counterexample_params(spec)
    L1 = min(lookahead, grid.steps)
    mask = off_front_mask(grid, ref[0], band_cells) if ref else None
    samples1 = sample_nodes(grid, dpp_samples, seed, mask, 1)
    r1 = dpp_residual(field, spec, samples1, 1, params)
    rep.add("dpp_residual_one_step", r1, 1e-9, r1 <= 1e-9, "scheme self-consistency")
    if ref is not None:
        samples = sample_nodes(grid, dpp_samples, seed, mask, L1)
        rL = dpp_residual(field, spec, samples, L1, params)
        bound = 2.0 * grid.dt
        rep.add(f"dpp_residual_lookahead_{L1}", rL, bound, rL <= bound,
                f"measured constant {rL / grid.dt:.3g} x dt")
    else:
        samples = sample_nodes(grid, dpp_samples, seed, None, L1)
        rL = dpp_residual(field, spec, samples, L1, params)
        rep.skip(f"dpp_residual_lookahead_{L1}",
                 f"measured {rL:.4g} = {rL / grid.dt:.3g} x dt; no closed-form bound")

    fit, test = radial_regions(grid)
    gr = growth_check([field], fit, test, eta)
    rep.add("growth_upper", gr.violation, 0.0, gr.violation <= 0, f"C_fit={gr.C_fit:.4g}")
    rep.add("growth_lower", gr.low_violation, 0.0, gr.low_violation <= 0, f"C_low={gr.C_low:.4g}")

    if ref is not None:
        T, c = ref
        gap_all, gap_off = counterexample_gap(field, T, c, band_cells)
        rep.add("oracle_off_front_gap", gap_off, 0.1 * c, gap_off <= 0.1 * c,
                f"gap incl. front band {gap_all:.4g}")
        V = field.flat[:, :, grid.inside]
        rep.add("bound_upper_T", float(V.max()), T, float(V.max()) <= T + 1e-12)
        rep.add("bound_lower_minus_c", float(V.min()), -c, float(V.min()) >= -c - 1e-12)
    else:
        rep.skip("oracle_off_front_gap", "no closed-form oracle for this model")

    if ladder is not None:
        rep.add("ladder_max_increase", ladder.max_increase, ladder.eps_mono, ladder.monotone,
                f"levels {ladder.levels}")
    return rep
