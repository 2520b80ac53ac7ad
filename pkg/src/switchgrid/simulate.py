"""Forward Monte Carlo of the controlled diffusion under a feedback switching policy.

Randomness: path ``j`` draws its Gaussian increments from a Philox stream
keyed by ``(seed, j)``, so a path's noise does not depend on how many
paths are simulated, how they are chunked, or in which order chunks run.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ObstacleError

log = logging.getLogger(__name__)

CHUNK = 1024


def path_normals(seed: int, path_id: int, steps: int, dim: int) -> np.ndarray:
    """Standard normals ``(steps, dim)`` for one path from its own counter-based stream."""
    if not 0 <= seed < 2 ** 64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    gen = np.random.Generator(np.random.Philox(key=int(seed) + (int(path_id) << 64)))
    return gen.standard_normal((steps, dim))


@dataclass
class PathBundle:
    """Per-path results of a batch; trajectories only when recorded."""

    path_ids: np.ndarray
    payoff: np.ndarray
    running: np.ndarray
    terminal: np.ndarray
    costs: np.ndarray
    n_switches: np.ndarray
    violated: np.ndarray
    max_excursion: np.ndarray
    escaped: np.ndarray
    times: np.ndarray
    states: np.ndarray | None = None     # (P, K+1, d)
    regimes: np.ndarray | None = None    # (P, K+1)
    events: list = field(default_factory=list)  # (path_id, step, t, from, to, cost)

    def __len__(self):
        return self.path_ids.size

    @classmethod
    def concat(cls, parts):
        first = parts[0]
        arrays = {}
        for name in ("path_ids", "payoff", "running", "terminal", "costs", "n_switches",
                     "violated", "max_excursion", "escaped"):
            arrays[name] = np.concatenate([getattr(p, name) for p in parts])
        rec = first.states is not None
        return cls(**arrays, times=first.times,
                   states=np.concatenate([p.states for p in parts]) if rec else None,
                   regimes=np.concatenate([p.regimes for p in parts]) if rec else None,
                   events=[e for p in parts for e in p.events])


def _time_grid(T, t0, dt_sim):
    if not dt_sim > 0:
        raise ConfigError("simulation time step must be positive")
    if not 0 <= t0 <= T:
        raise ConfigError(f"start time {t0} outside [0, {T}]")
    span = T - t0
    steps = max(int(math.ceil(span / dt_sim - 1e-9)), 0)
    h = span / steps if steps else 0.0
    return steps, h


def _eval_by_regime(fn, X, I, labels, out_shape):
    out = np.zeros(out_shape)
    for r in labels:
        sel = I == r
        if np.any(sel):
            out[sel] = fn(X[sel], r)
    return out


def simulate_batch(spec, policy, t0, x0, i0, path_ids, dt_sim, seed, record=False) -> PathBundle:
    """Simulate the given path indices with Euler-Maruyama and left-rectangle rewards."""
    path_ids = np.asarray(path_ids, dtype=np.int64)
    P, d, m = path_ids.size, spec.dim, spec.m
    labels = list(spec.regimes.labels)
    steps, h = _time_grid(spec.horizon, t0, dt_sim)
    x0 = np.asarray(x0, dtype=float).reshape(d)
    if not policy.grid.in_hull(x0):
        raise ConfigError(f"start point {x0.tolist()} outside the policy grid")
    if i0 not in labels:
        raise ConfigError(f"start regime {i0} outside 1..{m}")
    noise = np.stack([path_normals(seed, j, steps, d) for j in path_ids]) if steps else \
        np.zeros((P, 0, d))
    cf = spec.coeffs
    X = np.tile(x0, (P, 1))
    I = np.full(P, int(i0), dtype=np.int64)
    running = np.zeros(P)
    costs = np.zeros(P)
    nsw = np.zeros(P, dtype=np.int64)
    alive = np.ones(P, dtype=bool)
    exc = np.asarray(spec.domain.distance(X), dtype=float)
    times = t0 + h * np.arange(steps + 1)
    if steps:
        times[-1] = spec.horizon
    states = np.empty((P, steps + 1, d)) if record else None
    regimes = np.empty((P, steps + 1), dtype=np.int64) if record else None
    events = []
    sqrt_h = math.sqrt(h)
    for k in range(steps + 1):
        t = times[k]
        for _ in range(m):
            act = np.where(alive, policy.lookup(np.full(P, t), X, I), 0)
            sw = act != 0
            if not np.any(sw):
                break
            for i in labels:
                for j in labels:
                    sel = sw & (I == i) & (act == j)
                    if np.any(sel):
                        c = cf.c(X[sel], i, j)
                        costs[sel] += c
                        if record:
                            for q, cq in zip(np.flatnonzero(sel), np.atleast_1d(c)):
                                events.append((int(path_ids[q]), k, float(t), i, j, float(cq)))
            nsw += sw
            I = np.where(sw, act, I)
        else:
            raise ObstacleError("policy switches in a cycle; costs must be positive")
        if record:
            states[:, k] = X
            regimes[:, k] = I
        if k == steps:
            break
        f = _eval_by_regime(cf.f, X, I, labels, P)
        mu = _eval_by_regime(cf.mu, X, I, labels, (P, d))
        sig = _eval_by_regime(cf.sigma, X, I, labels, (P, d, d))
        running = np.where(alive, running + f, running)
        step = mu * h + np.einsum("pkl,pl->pk", sig, noise[:, k]) * sqrt_h
        X = np.where(alive[:, None], X + step, X)
        exc = np.maximum(exc, np.where(alive, spec.domain.distance(X), 0.0))
        out = alive & ~policy.grid.in_hull(X)
        if np.any(out):
            log.warning("%d path(s) left the policy grid at t=%.4g", int(out.sum()), times[k + 1])
            alive &= ~out
    running = running * h   # left-rectangle rule on a uniform step
    terminal = _eval_by_regime(cf.g, X, I, labels, P)
    escaped = ~alive
    payoff = terminal + running - costs
    payoff = np.where(escaped, np.nan, payoff)
    return PathBundle(path_ids, payoff, running, terminal, costs, nsw, exc > 0, exc, escaped,
                      times, states, regimes, events)


def simulate_path(spec, policy, t0, x0, i0, dt_sim, seed, path_id=0) -> PathBundle:
    """A single recorded path (a bundle of one)."""
    return simulate_batch(spec, policy, t0, x0, i0, [path_id], dt_sim, seed, record=True)


def simulate_paths(spec, policy, t0, x0, i0, n_paths, dt_sim, seed, record=False,
                   threads=1) -> PathBundle:
    """Paths ``0..n_paths-1`` in chunks; results are assembled in path order."""
    if n_paths < 1:
        raise ConfigError("need at least one path")
    chunks = [np.arange(a, min(a + CHUNK, n_paths)) for a in range(0, n_paths, CHUNK)]

    def run(ids):
        return simulate_batch(spec, policy, t0, x0, i0, ids, dt_sim, seed, record)

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    return PathBundle.concat(parts)


@dataclass
class PayoffEstimate:
    mean: float
    stderr: float | None
    n_paths: int
    n_escaped: int
    violation_rate: float
    max_excursion: float

    def to_dict(self):
        return {"mean": self.mean, "stderr": self.stderr, "n_paths": self.n_paths,
                "n_escaped": self.n_escaped, "violation_rate": self.violation_rate,
                "max_excursion": self.max_excursion}


def summarize(bundle: PathBundle, domain=None) -> PayoffEstimate:
    ok = ~bundle.escaped
    vals = bundle.payoff[ok]
    n = vals.size
    mean = float(np.mean(vals)) if n else float("nan")
    stderr = float(np.std(vals, ddof=1) / math.sqrt(n)) if n >= 2 else None
    rate, exc = constraint_violation_rate(bundle, domain)
    return PayoffEstimate(mean, stderr, len(bundle), int((~ok).sum()), rate, exc)


def estimate_payoff(spec, policy, t0, x0, i0, N, dt_sim, seed, threads=1):
    """Sample mean and standard error of the payoff over ``N`` seeded paths."""
    if N < 2:
        raise ConfigError("estimate_payoff needs at least two paths")
    bundle = simulate_paths(spec, policy, t0, x0, i0, N, dt_sim, seed, threads=threads)
    est = summarize(bundle)
    return est.mean, est.stderr


def constraint_violation_rate(bundle: PathBundle, domain=None):
    """Fraction of paths with a sample outside D, and the largest sampled distance to D.

    With recorded trajectories and a ``domain`` the distances are recomputed;
    otherwise the excursions measured during simulation are used.
    """
    if len(bundle) == 0:
        raise ConfigError("empty path bundle")
    if domain is not None and bundle.states is not None:
        dist = np.asarray(domain.distance(bundle.states)).max(axis=1)
        return float(np.mean(dist > 0)), float(dist.max())
    return float(np.mean(bundle.violated)), float(bundle.max_excursion.max())
