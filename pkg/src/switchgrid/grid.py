"""Truncated space-time grids, value fields and interpolation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ExtrapolationError

INSIDE, RAMP, OUTSIDE = 0, 1, 2


@dataclass(frozen=True)
class GridSpec:
    """Truncation box ``[lo, hi]``, points per coordinate and time steps ``M``."""

    lo: tuple
    hi: tuple
    points: tuple
    steps: int

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        pts = tuple(int(v) for v in self.points)
        if not (len(lo) == len(hi) == len(pts)) or not lo:
            raise ConfigError("grid lo/hi/points must have one entry per coordinate")
        if any(not (math.isfinite(a) and math.isfinite(b)) for a, b in zip(lo, hi)):
            raise ConfigError("grid bounds must be finite")
        if any(p < 3 for p in pts):
            raise ConfigError("need at least 3 points per coordinate")
        if any(not (b > a) for a, b in zip(lo, hi)):
            raise ConfigError("zero grid spacing: every coordinate needs hi > lo")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ConfigError("need at least one time step")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "steps", int(self.steps))

    @property
    def dim(self):
        return len(self.points)

    @property
    def spacing(self):
        return np.array([(b - a) / (p - 1) for a, b, p in zip(self.lo, self.hi, self.points)])

    def with_steps(self, steps):
        return GridSpec(self.lo, self.hi, self.points, steps)

    def to_dict(self):
        return {"lo": list(self.lo), "hi": list(self.hi), "points": list(self.points), "steps": self.steps}


@dataclass(frozen=True, eq=False)
class Grid:
    gspec: GridSpec
    horizon: float
    m: int
    axes: tuple
    nodes: np.ndarray           # (Nn, d), C order over the axes
    dist: np.ndarray            # (Nn,) distance to the constraint set
    flags: np.ndarray           # (Nn,) INSIDE / RAMP / OUTSIDE
    ramp_width: float
    model_hash: str = ""

    @property
    def shape(self):
        return self.gspec.points

    @property
    def dim(self):
        return self.gspec.dim

    @property
    def size(self):
        return self.nodes.shape[0]

    @property
    def steps(self):
        return self.gspec.steps

    @property
    def dt(self):
        return self.horizon / self.gspec.steps

    @property
    def spacing(self):
        return self.gspec.spacing

    @property
    def times(self):
        return np.arange(self.steps + 1) * self.dt

    @property
    def inside(self):
        return self.flags == INSIDE

    def node_index(self, multi):
        return int(np.ravel_multi_index(tuple(multi), self.shape))

    def nearest_node(self, x):
        """Flat index of the nearest node for points ``x`` (..., d); clips to the box."""
        x = np.asarray(x, dtype=float)
        lo = np.asarray(self.gspec.lo)
        idx = np.rint((x - lo) / self.spacing).astype(np.int64)
        idx = np.clip(idx, 0, np.asarray(self.shape) - 1)
        return np.ravel_multi_index(tuple(np.moveaxis(idx, -1, 0)), self.shape)

    def in_hull(self, x, tol=1e-12):
        x = np.asarray(x, dtype=float)
        lo, hi = np.asarray(self.gspec.lo), np.asarray(self.gspec.hi)
        span = hi - lo
        return np.all((x >= lo - tol * span) & (x <= hi + tol * span), axis=-1)


def build_grid(spec, gspec: GridSpec, n_min: int | None = None) -> Grid:
    """Realise the node set and classify nodes against the constraint set.

    Every finite bound of the constraint set must lie strictly inside the
    truncation box; with ``n_min`` the margin must also be at least
    ``1/n_min`` so the steepest penalty ramp fits.  Nodes are flagged as
    inside D, inside the ramp ``0 < dist < 1/n_min`` (``n_min`` defaults
    to 1), or outside.
    """
    if gspec.dim != spec.dim:
        raise ConfigError(f"grid has {gspec.dim} coordinates, model has {spec.dim}")
    margin = 0.0 if n_min is None else 1.0 / n_min
    ext_lo, ext_hi = spec.domain.extent()
    for k in range(spec.dim):
        lo, hi = gspec.lo[k], gspec.hi[k]
        if ext_lo[k] > hi or ext_hi[k] < lo:
            raise ConfigError(f"constraint set does not meet the truncation box in coordinate {k + 1}")
        if math.isfinite(ext_lo[k]) and not (lo < ext_lo[k] and ext_lo[k] - lo >= margin):
            raise ConfigError(
                f"truncation box must extend past the constraint bound {ext_lo[k]:g} in coordinate "
                f"{k + 1} by at least {margin:g} (lo={lo:g})")
        if math.isfinite(ext_hi[k]) and not (hi > ext_hi[k] and hi - ext_hi[k] >= margin):
            raise ConfigError(
                f"truncation box must extend past the constraint bound {ext_hi[k]:g} in coordinate "
                f"{k + 1} by at least {margin:g} (hi={hi:g})")
    axes = tuple(np.linspace(a, b, p) for a, b, p in zip(gspec.lo, gspec.hi, gspec.points))
    mesh = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([g.ravel() for g in mesh], axis=-1)
    dist = np.asarray(spec.domain.distance(nodes), dtype=float)
    width = 1.0 / (n_min or 1)
    flags = np.where(dist == 0, INSIDE, np.where(dist < width, RAMP, OUTSIDE)).astype(np.int8)
    if not np.any(flags == INSIDE):
        raise ConfigError("no grid node lies inside the constraint set")
    return Grid(gspec, float(spec.horizon), spec.m, axes, nodes, dist, flags, width, spec.model_hash)


def _rates_at_nodes(spec, nodes, spacing):
    worst = 0.0
    for i in spec.regimes.labels:
        mu = spec.coeffs.mu(nodes, i)
        sig = spec.coeffs.sigma(nodes, i)
        diag = np.einsum("...kl,...kl->...k", sig, sig)  # (sigma sigma^T)_kk
        rate = np.sum(np.abs(mu) / spacing, axis=-1) + np.sum(diag / spacing ** 2, axis=-1)
        if rate.size:
            worst = max(worst, float(np.max(rate)))
    return worst


def cfl_timestep(spec, gspec: GridSpec) -> float:
    """Largest time step keeping every explicit-scheme weight nonnegative.

    ``1 / max_{nodes, regimes} (sum_k |mu_k|/dx_k + sum_k a_kk/dx_k^2)`` with
    ``a = sigma sigma^T``; without any dynamics the requested ``T/M`` is
    returned.
    """
    spacing = gspec.spacing
    if np.any(spacing <= 0):
        raise ConfigError("zero grid spacing")
    axes = [np.linspace(a, b, p) for a, b, p in zip(gspec.lo, gspec.hi, gspec.points)]
    nodes = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=-1)
    worst = _rates_at_nodes(spec, nodes, spacing)
    if worst == 0.0:
        return spec.horizon / gspec.steps
    return 1.0 / worst


def steps_for_cfl(spec, gspec: GridSpec) -> int:
    """Fewest time steps ``M`` with ``T/M`` at most the CFL bound."""
    bound = cfl_timestep(spec, gspec.with_steps(1))
    ratio = spec.horizon / bound
    steps = math.ceil(ratio - 1e-9 * ratio)
    return max(steps, 1)


@dataclass(eq=False)
class ValueField:
    """Discrete value function ``v(t_k, x, i)``.

    ``values`` has shape ``(M + 1, m, *grid.shape)``; level ``M`` holds the
    terminal condition.
    """

    values: np.ndarray
    grid: Grid
    n: int
    model_hash: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        expected = (self.grid.steps + 1, self.grid.m) + tuple(self.grid.shape)
        if self.values.shape != expected:
            raise ConfigError(f"value array has shape {self.values.shape}, expected {expected}")

    @property
    def flat(self):
        """View of shape ``(M + 1, m, Nn)``."""
        return self.values.reshape(self.values.shape[0], self.values.shape[1], -1)

    @property
    def dt(self):
        return self.grid.dt

    @property
    def times(self):
        return self.grid.times

    def level_of(self, t):
        T = self.grid.horizon
        if not (-1e-12 * T <= t <= T * (1 + 1e-12)):
            raise ExtrapolationError(f"time {t} outside [0, {T}]")
        return int(min(max(round(t / self.dt), 0), self.grid.steps))


def interp(field: ValueField, t: float, x, i: int) -> float:
    """Multilinear interpolation in space at the nearest time level."""
    grid = field.grid
    k = field.level_of(t)
    if not 1 <= i <= grid.m:
        raise ConfigError(f"regime {i} outside 1..{grid.m}")
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != grid.dim or not grid.in_hull(x):
        raise ExtrapolationError(f"point {x.tolist()} outside the grid hull")
    lo = np.asarray(grid.gspec.lo)
    h = grid.spacing
    pos = np.clip((x - lo) / h, 0.0, np.asarray(grid.shape) - 1.0)
    snap = np.rint(pos)
    pos = np.where(np.abs(pos - snap) < 1e-9, snap, pos)
    base = np.minimum(np.floor(pos).astype(int), np.asarray(grid.shape) - 2)
    frac = pos - base
    table = field.values[k, i - 1]
    total = 0.0
    for corner in range(2 ** grid.dim):
        w = 1.0
        idx = []
        for axis in range(grid.dim):
            bit = (corner >> axis) & 1
            w *= frac[axis] if bit else 1.0 - frac[axis]
            idx.append(base[axis] + bit)
        if w != 0.0:
            total += w * table[tuple(idx)]
    return float(total)
