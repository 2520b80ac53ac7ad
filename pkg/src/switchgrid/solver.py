"""Monotone explicit scheme for the penalised switching system.

Each backward step applies the upwind / central-difference generator with
the penalised running reward, then projects onto the switching obstacle
``v_i >= max_{j != i} (v_j - c_ij)`` by Gauss-Seidel sweeps over regimes.

Faces of the truncation box: any stencil term that would need a node outside
the box is dropped (its rate is removed from the centre as well), which is a
zero-flux condition and keeps all weights nonnegative.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .errors import ConfigError, DivergenceError, SchemeError
from .grid import Grid, ValueField, cfl_timestep
from .kernels import get_backend
from .penalty import theta

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SchemeParams:
    """``dt`` defaults to the grid's ``T/M``; ``max_sweeps`` to ``m``.

    The projection allows ``m - 1`` improving sweeps plus one confirming
    sweep; a node still moving after that means a switching cycle paid
    for itself, i.e. cost positivity is broken.
    """

    dt: float | None = None
    eps_obs: float = 1e-12
    max_sweeps: int | None = None
    cfl_tol: float = 1e-9
    backend: str | None = None

    def __post_init__(self):
        if self.eps_obs < 0:
            raise ConfigError("eps_obs must be nonnegative")
        if self.dt is not None and not self.dt > 0:
            raise ConfigError("dt must be positive")


# ---------------------------------------------------------------------------
# Stencil
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class Stencil:
    """Generator rates on a fixed neighbour table.

    Slot 0 is the centre; then ``+e_k, -e_k`` for each axis; then the four
    diagonal neighbours ``(+k+l, -k-l, +k-l, -k+l)`` for each axis pair.
    ``rates[i, s, p]`` multiplies ``v[i, nbr[s, p]]``; missing neighbours point
    at the node itself with rate 0.
    """

    nbr: np.ndarray      # (S, Nn) int64
    rates: np.ndarray    # (m, S, Nn)
    offsets: list

    def weights(self, dt):
        w = dt * self.rates
        w[:, 0, :] += 1.0
        return w


def _offsets(d):
    offs = [(0,) * d]
    for k in range(d):
        for sgn in (1, -1):
            e = [0] * d
            e[k] = sgn
            offs.append(tuple(e))
    for k, l in combinations(range(d), 2):
        for sk, sl in ((1, 1), (-1, -1), (1, -1), (-1, 1)):
            e = [0] * d
            e[k], e[l] = sk, sl
            offs.append(tuple(e))
    return offs


def _node_coefficients(spec, nodes):
    mu = np.stack([spec.coeffs.mu(nodes, i) for i in spec.regimes.labels])
    sig = np.stack([spec.coeffs.sigma(nodes, i) for i in spec.regimes.labels])
    a = np.einsum("inkr,inlr->inkl", sig, sig)
    return mu, a


def build_stencil(spec, grid: Grid) -> Stencil:
    d, shape = grid.dim, np.asarray(grid.shape)
    h = grid.spacing
    offs = _offsets(d)
    S, N, m = len(offs), grid.size, grid.m
    multi = np.stack(np.unravel_index(np.arange(N), grid.shape), axis=-1)
    nbr = np.empty((S, N), dtype=np.int64)
    exists = np.empty((S, N), dtype=bool)
    for s, off in enumerate(offs):
        tgt = multi + np.asarray(off)
        ok = np.all((tgt >= 0) & (tgt < shape), axis=-1)
        tgt = np.where(ok[:, None], tgt, multi)
        nbr[s] = np.ravel_multi_index(tuple(tgt.T), grid.shape)
        exists[s] = ok

    mu, a = _node_coefficients(spec, grid.nodes)
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(a))):
        raise SchemeError("non-finite drift or volatility on the grid")
    rates = np.zeros((m, S, N))
    slot = {off: s for s, off in enumerate(offs)}
    for k in range(d):
        e = [0] * d
        e[k] = 1
        plus, minus = slot[tuple(e)], slot[tuple(-v for v in e)]
        diff = 0.5 * a[:, :, k, k] / h[k] ** 2
        rates[:, plus] = np.maximum(mu[:, :, k], 0.0) / h[k] + diff
        rates[:, minus] = np.maximum(-mu[:, :, k], 0.0) / h[k] + diff
    for k, l in combinations(range(d), 2):
        akl = a[:, :, k, l]
        if not np.any(akl != 0):
            continue
        ek = np.zeros(d, int)
        ek[k] = 1
        el = np.zeros(d, int)
        el[l] = 1
        pp, mm = slot[tuple(ek + el)], slot[tuple(-ek - el)]
        pm, mp = slot[tuple(ek - el)], slot[tuple(-ek + el)]
        axis_slots = [slot[tuple(ek)], slot[tuple(-ek)], slot[tuple(el)], slot[tuple(-el)]]
        full = np.all(exists[axis_slots], axis=0)
        pos = (akl > 0) & full & exists[pp] & exists[mm]
        neg = (akl < 0) & full & exists[pm] & exists[mp]
        half = np.abs(akl) / (2.0 * h[k] * h[l])
        rates[:, pp] += np.where(pos, half, 0.0)
        rates[:, mm] += np.where(pos, half, 0.0)
        rates[:, pm] += np.where(neg, half, 0.0)
        rates[:, mp] += np.where(neg, half, 0.0)
        used = pos | neg
        for s in axis_slots:
            rates[:, s] -= np.where(used, half, 0.0)
    rates[:, 1:] *= exists[None, 1:, :]
    if np.any(rates[:, 1:] < 0):
        raise SchemeError("diffusion matrix is not diagonally dominant on this grid; "
                          "the cross-derivative stencil is not monotone")
    rates[:, 0] = -np.sum(rates[:, 1:], axis=1)
    return Stencil(nbr, rates, offs)


# ---------------------------------------------------------------------------
# Per-solve discretisation
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class Discretization:
    spec: object
    grid: Grid
    n: int
    dt: float
    stencil: Stencil
    weights: np.ndarray   # (m, S, Nn)
    fdt: np.ndarray       # (m, Nn): dt * f_n
    g_n: np.ndarray       # (m, Nn)
    cost: np.ndarray      # (m, m, Nn)
    max_sweeps: int
    eps_obs: float
    kernels: object = field(repr=False, default=None)


def prepare(spec, n: int, grid: Grid, params: SchemeParams | None = None,
            stencil: Stencil | None = None) -> Discretization:
    """Assemble weights, penalised rewards and costs; enforce the CFL bound."""
    params = params or SchemeParams()
    dt = grid.dt
    if params.dt is not None and abs(params.dt - dt) > 1e-12 * dt:
        raise ConfigError(f"scheme dt={params.dt} does not match grid dt=T/M={dt}")
    bound = cfl_timestep(spec, grid.gspec)
    if dt > bound * (1.0 + params.cfl_tol):
        raise SchemeError(f"time step {dt:.6g} exceeds the CFL bound {bound:.6g}")
    stencil = stencil or build_stencil(spec, grid)
    weights = stencil.weights(dt)
    centre = weights[:, 0, :]
    if np.any(centre < -1e-9):
        raise SchemeError(f"negative centre weight {centre.min():.3g} at dt={dt:.6g}")
    np.maximum(centre, 0.0, out=centre)
    nodes = grid.nodes
    pen = n * np.asarray(theta(n, spec.domain, nodes))
    f_n = np.stack([spec.coeffs.f(nodes, i) - pen for i in spec.regimes.labels])
    g_n = np.stack([spec.coeffs.g(nodes, i) - pen for i in spec.regimes.labels])
    cost = np.ascontiguousarray(spec.cost_matrix(nodes))
    max_sweeps = params.max_sweeps or grid.m
    return Discretization(spec, grid, int(n), dt, stencil, np.ascontiguousarray(weights),
                          np.ascontiguousarray(dt * f_n), np.ascontiguousarray(g_n), cost,
                          max_sweeps, params.eps_obs, get_backend(params.backend))


# ---------------------------------------------------------------------------
# Operators
# ---------------------------------------------------------------------------

def switching_envelope(values, costs, i: int):
    """``max_{j != i} values[j] - costs[j]`` and its lowest-index argmax (labels 1..m)."""
    values = np.asarray(values, dtype=float)
    costs = np.asarray(costs, dtype=float)
    m = values.shape[0]
    if m < 2:
        raise ConfigError("switching needs at least two regimes")
    best, arg = -np.inf, None
    for j in range(1, m + 1):
        if j == i:
            continue
        cand = values[j - 1] - costs[j - 1]
        if cand > best:
            best, arg = cand, j
    return float(best), arg


def terminal_condition(spec, n: int, grid: Grid, params: SchemeParams | None = None, disc=None):
    """Smallest ``v >= g_n`` with ``v = max(g_n, Hv)``; array ``(m, Nn)``."""
    disc = disc or prepare(spec, n, grid, params)
    v = disc.g_n.copy()
    disc.kernels.project_obstacle(v, disc.cost, disc.max_sweeps, disc.eps_obs)
    _check_finite(v, grid, grid.steps)
    return v


def generator_apply(spec, grid: Grid, level_values, node, i: int, stencil: Stencil | None = None):
    """Discrete ``mu . Dv + tr(a D^2 v)/2`` of regime ``i`` at one node."""
    stencil = stencil or build_stencil(spec, grid)
    v = np.asarray(level_values, dtype=float).reshape(grid.m, -1)
    p = node if np.ndim(node) == 0 else grid.node_index(node)
    r = stencil.rates[i - 1, :, p]
    return float(np.dot(r, v[i - 1, stencil.nbr[:, p]]))


def _check_finite(v, grid, level):
    bad = ~np.isfinite(v)
    if np.any(bad):
        i, p = np.unravel_index(np.argmax(bad), v.shape)
        node = tuple(int(q) for q in np.unravel_index(p, grid.shape))
        raise DivergenceError(level, node, int(i) + 1)


def backward_step(spec, n: int, grid: Grid, v_next, params: SchemeParams | None = None,
                  disc: Discretization | None = None, level: int | None = None):
    """One explicit step from ``t + dt`` to ``t`` followed by the obstacle projection."""
    disc = disc or prepare(spec, n, grid, params)
    v_in = np.ascontiguousarray(np.asarray(v_next, dtype=float).reshape(grid.m, -1))
    out = np.empty_like(v_in)
    disc.kernels.explicit_step(v_in, disc.weights, disc.stencil.nbr, disc.fdt, out)
    disc.kernels.project_obstacle(out, disc.cost, disc.max_sweeps, disc.eps_obs)
    _check_finite(out, grid, -1 if level is None else level)
    return out.reshape(np.shape(v_next))


def solve(spec, n: int, grid: Grid, params: SchemeParams | None = None,
          stencil: Stencil | None = None) -> ValueField:
    """Backward sweep over all ``M + 1`` time levels."""
    params = params or SchemeParams()
    if grid.model_hash and grid.model_hash != spec.model_hash:
        raise ConfigError("grid was built for a different model")
    disc = prepare(spec, n, grid, params, stencil)
    M, m, N = grid.steps, grid.m, grid.size
    values = np.empty((M + 1, m, N))
    values[M] = terminal_condition(spec, n, grid, disc=disc)
    kern = disc.kernels
    for k in range(M - 1, -1, -1):
        out = values[k]
        kern.explicit_step(values[k + 1], disc.weights, disc.stencil.nbr, disc.fdt, out)
        kern.project_obstacle(out, disc.cost, disc.max_sweeps, disc.eps_obs)
        _check_finite(out, grid, k)
    log.info("solved %s n=%d: %d levels, %d nodes, %d regimes", spec.name, n, M + 1, N, m)
    meta = {"dt": disc.dt, "eps_obs": params.eps_obs, "max_sweeps": disc.max_sweeps}
    return ValueField(values.reshape((M + 1, m) + tuple(grid.shape)), grid, int(n),
                      spec.model_hash, meta)


# ---------------------------------------------------------------------------
# Policy
# ---------------------------------------------------------------------------

KEEP = 0


@dataclass(eq=False)
class SwitchingPolicy:
    """Feedback rule: ``actions[k, i-1, node]`` is 0 (keep) or the target regime label.

    Lookup at time ``t`` uses the level ``k`` whose interval ``[t_k, t_{k+1})``
    contains ``t``, and the nearest grid node in space.
    """

    actions: np.ndarray   # (M + 1, m, *shape) int8
    grid: Grid
    eps_obs: float

    @property
    def flat(self):
        return self.actions.reshape(self.actions.shape[0], self.actions.shape[1], -1)

    def level_at(self, t):
        k = np.floor(np.asarray(t) / self.grid.dt + 1e-9).astype(np.int64)
        return np.clip(k, 0, self.grid.steps)

    def lookup(self, t, x, i):
        """Actions for arrays of times, points and regimes (labels)."""
        k = self.level_at(t)
        p = self.grid.nearest_node(x)
        return self.flat[k, np.asarray(i) - 1, p]


def extract_policy(field: ValueField, spec, eps_obs: float = 1e-12) -> SwitchingPolicy:
    """Switch to the best target whenever ``v_i <= Hv_i + eps_obs``; ties go to the lowest label."""
    grid = field.grid
    cost = spec.cost_matrix(grid.nodes)
    V = field.flat
    M1, m, N = V.shape
    actions = np.zeros((M1, m, N), dtype=np.int8)
    for i in range(m):
        best = np.full((M1, N), -np.inf)
        arg = np.zeros((M1, N), dtype=np.int8)
        for j in range(m):
            if j == i:
                continue
            cand = V[:, j] - cost[i, j]
            better = cand > best
            best = np.where(better, cand, best)
            arg = np.where(better, j + 1, arg)
        actions[:, i] = np.where(V[:, i] <= best + eps_obs, arg, KEEP)
    return SwitchingPolicy(actions.reshape((M1, m) + tuple(grid.shape)), grid, eps_obs)
