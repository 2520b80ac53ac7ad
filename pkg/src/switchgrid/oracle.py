"""Ground truth: the closed-form counterexample value and exhaustive lattice DP.

Inadmissible states carry the marker :data:`MINUS_INF` (scalar API) or a
``False`` entry in a feasibility table; the marker never enters floating
point arithmetic.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ObstacleError


class _MinusInfinity:
    """Singleton standing for an empty admissible set; compares below every number."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "MINUS_INF"

    def __str__(self):
        return "-inf"

    def __eq__(self, other):
        return other is self

    def __hash__(self):
        return hash("MINUS_INF")

    def __lt__(self, other):
        return other is not self

    def __le__(self, other):
        return True

    def __gt__(self, other):
        return False

    def __ge__(self, other):
        return other is self


MINUS_INF = _MinusInfinity()


# ---------------------------------------------------------------------------
# Closed form for the discontinuous two-regime example
# ---------------------------------------------------------------------------

def counterexample_value(t, x, i, T=1.0, c=0.5):
    """Constrained value of the two-regime example at ``(t, x, i)``.

    Regime 1 (downward drift) is worth ``T - t`` when there is room to drift
    until the horizon (``x2 >= T - t``) and ``T - t - c`` otherwise, because
    one switch to the frozen regime is then unavoidable.  Regime 2 is
    worth ``T - t``.  Points outside ``x2 >= 0`` have no admissible strategy.
    """
    x2 = float(x[1])
    if x2 < 0:
        return MINUS_INF
    if not 0 <= t <= T:
        raise ConfigError(f"t={t} outside [0, {T}]")
    if i == 2:
        return T - t
    if i != 1:
        raise ConfigError(f"regime must be 1 or 2, got {i}")
    return T - t if x2 >= T - t else T - t - c


def counterexample_table(times, nodes, T=1.0, c=0.5):
    """Vectorised closed form: ``(values, feasible)`` of shape ``(K+1, 2, Nn)``."""
    times = np.asarray(times, dtype=float)[:, None]
    x2 = np.asarray(nodes, dtype=float)[:, 1][None, :]
    rem = T - times
    v1 = np.where(x2 >= rem, rem, rem - c)
    v2 = np.broadcast_to(rem, v1.shape)
    feas = np.broadcast_to(x2 >= 0, v1.shape)
    values = np.stack([v1, v2], axis=1)
    return np.where(np.stack([feas, feas], axis=1), values, 0.0), np.stack([feas, feas], axis=1)


# ---------------------------------------------------------------------------
# Exhaustive lattice dynamic programming
# ---------------------------------------------------------------------------

@dataclass
class LatticeDP:
    """Finite control problem on ``N`` lattice nodes and ``m`` regimes.

    ``transitions[i]`` is a row-stochastic ``(N, N)`` matrix for regime ``i``
    (0-based array index, label ``i + 1``); ``running`` is a reward rate
    earned for ``dt`` per step; ``mask[p]`` is False on forbidden nodes.
    """

    steps: int
    dt: float
    transitions: np.ndarray   # (m, N, N)
    running: np.ndarray       # (m, N)
    terminal: np.ndarray      # (m, N)
    costs: np.ndarray         # (m, m) or (m, m, N)
    mask: np.ndarray | None = None

    def __post_init__(self):
        P = np.asarray(self.transitions, dtype=float)
        self.transitions = P
        m, N, N2 = P.shape
        if N != N2 or m < 2:
            raise ConfigError("transitions must be (m, N, N) with m >= 2")
        if np.any(P < 0) or not np.allclose(P.sum(axis=2), 1.0, atol=1e-12):
            raise ConfigError("transition rows must be nonnegative and sum to 1")
        if (self.steps + 1) * m * N > 10 ** 6:
            raise ConfigError("lattice too large for exhaustive backward induction")
        self.running = np.broadcast_to(np.asarray(self.running, float), (m, N)).copy()
        self.terminal = np.broadcast_to(np.asarray(self.terminal, float), (m, N)).copy()
        costs = np.asarray(self.costs, dtype=float)
        if costs.ndim == 2:
            costs = np.repeat(costs[:, :, None], N, axis=2)
        self.costs = costs
        self.mask = np.ones(N, bool) if self.mask is None else np.asarray(self.mask, bool)

    @property
    def m(self):
        return self.transitions.shape[0]

    @property
    def size(self):
        return self.transitions.shape[1]


@dataclass
class LatticeResult:
    values: np.ndarray     # (K+1, m, N); meaningless where infeasible
    feasible: np.ndarray   # (K+1, m, N) bool
    actions: np.ndarray    # (K+1, m, N) int: 0 keep, else target label

    def value(self, k, p, i):
        return float(self.values[k, i - 1, p]) if self.feasible[k, i - 1, p] else MINUS_INF


def _close_switches(problem, keep, keep_ok):
    """Fixed point of ``v_i = max(keep_i, v_j - c_ij)`` over admissible entries."""
    m, N = keep.shape
    v, ok = keep.copy(), keep_ok.copy()
    act = np.zeros((m, N), dtype=np.int64)
    for sweep in range(m):
        changed = False
        new_v, new_ok, new_act = v.copy(), ok.copy(), act.copy()
        for i in range(m):
            for p in range(N):
                for j in range(m):
                    if j == i or not ok[j, p]:
                        continue
                    cand = v[j, p] - problem.costs[i, j, p]
                    if not new_ok[i, p] or cand > new_v[i, p]:
                        new_v[i, p], new_ok[i, p] = cand, True
                        new_act[i, p] = j + 1
                        changed = True
        v, ok, act = new_v, new_ok, new_act
        if not changed:
            return v, ok, act
    raise ObstacleError("switch chains did not close: a switching cycle has nonpositive cost")


def _backup(problem, v_next, ok_next):
    """Value of keeping for one step, then closing switch chains."""
    m, N = v_next.shape
    keep = np.zeros((m, N))
    keep_ok = np.zeros((m, N), dtype=bool)
    for i in range(m):
        P = problem.transitions[i]
        for p in range(N):
            if not problem.mask[p]:
                continue
            support = P[p] > 0
            if not np.all(ok_next[i, support]):
                continue
            keep[i, p] = problem.running[i, p] * problem.dt + float(P[p, support] @ v_next[i, support])
            keep_ok[i, p] = True
    return _close_switches(problem, keep, keep_ok)


def lattice_dp(problem: LatticeDP) -> LatticeResult:
    """Exact backward induction over keep/switch decisions on the lattice."""
    K, m, N = problem.steps, problem.m, problem.size
    values = np.zeros((K + 1, m, N))
    feas = np.zeros((K + 1, m, N), dtype=bool)
    acts = np.zeros((K + 1, m, N), dtype=np.int64)
    term_ok = np.broadcast_to(problem.mask, (m, N)).copy()
    values[K], feas[K], acts[K] = _close_switches(problem, np.where(term_ok, problem.terminal, 0.0), term_ok)
    for k in range(K - 1, -1, -1):
        values[k], feas[k], acts[k] = _backup(problem, values[k + 1], feas[k + 1])
    values[~feas] = 0.0
    return LatticeResult(values, feas, acts)


def lattice_dpp_residual(problem: LatticeDP, result: LatticeResult) -> float:
    """Max mismatch of the one-step dynamic-programming identity over feasible entries."""
    worst = 0.0
    for k in range(problem.steps):
        v, ok, _ = _backup(problem, result.values[k + 1], result.feasible[k + 1])
        if np.any(ok != result.feasible[k]):
            return float("inf")
        if np.any(ok):
            worst = max(worst, float(np.max(np.abs(v[ok] - result.values[k][ok]))))
    return worst


def lattice_from_1d_model(spec, xs, dt, steps, n=None):
    """Birth-death lattice for a one-dimensional model on nodes ``xs``.

    Up/down probabilities are ``dt * (mu^+/h + a/(2 h^2))`` and
    ``dt * (mu^-/h + a/(2 h^2))``; moves off either end are replaced by
    staying put.  With a penalty level ``n`` rewards are penalised and no
    node is masked; without it nodes outside the constraint set are masked.
    """
    if spec.dim != 1:
        raise ConfigError("lattice_from_1d_model needs a one-dimensional model")
    xs = np.asarray(xs, dtype=float)
    N = xs.size
    h = xs[1] - xs[0]
    if not np.allclose(np.diff(xs), h):
        raise ConfigError("lattice nodes must be equally spaced")
    m = spec.m
    pts = xs[:, None]
    P = np.zeros((m, N, N))
    for i in range(m):
        mu = spec.coeffs.mu(pts, i + 1)[:, 0]
        sig = spec.coeffs.sigma(pts, i + 1)[:, 0, :]
        a = np.sum(sig * sig, axis=-1)
        up = dt * (np.maximum(mu, 0) / h + 0.5 * a / h ** 2)
        dn = dt * (np.maximum(-mu, 0) / h + 0.5 * a / h ** 2)
        up[-1] = 0.0
        dn[0] = 0.0
        stay = 1.0 - up - dn
        if np.any(stay < -1e-12):
            raise ConfigError("time step too large: negative staying probability")
        for p in range(N):
            P[i, p, p] = max(stay[p], 0.0)
            if p + 1 < N:
                P[i, p, p + 1] = up[p]
            if p > 0:
                P[i, p, p - 1] = dn[p]
    lo, hi = spec.domain.extent()
    dist = np.maximum(np.maximum(lo[0] - xs, xs - hi[0]), 0.0)
    f = np.stack([spec.coeffs.f(pts, i + 1) for i in range(m)])
    g = np.stack([spec.coeffs.g(pts, i + 1) for i in range(m)])
    costs = np.stack([np.stack([spec.coeffs.c(pts, i + 1, j + 1) if i != j else np.zeros(N)
                                for j in range(m)]) for i in range(m)])
    if n is not None:
        pen = n * np.minimum(n * dist, 1.0)
        return LatticeDP(steps, dt, P, f - pen, g - pen, costs)
    return LatticeDP(steps, dt, P, f, g, costs, mask=dist == 0)


def counterexample_lattice(T=1.0, c=0.5, steps=20):
    """Shift lattice for the two-regime example along the constrained coordinate.

    Nodes are ``x2 = j * T/steps`` for ``j = -1..steps``; node ``j = -1`` is a
    forbidden sink.  Regime 1 moves one node down per step, regime 2 stays.
    Returns the problem and the ``x2`` coordinates.
    """
    h = T / steps
    x2 = np.arange(-1, steps + 1) * h
    N = x2.size
    P = np.zeros((2, N, N))
    P[0, 0, 0] = 1.0
    for p in range(1, N):
        P[0, p, p - 1] = 1.0
    P[1] = np.eye(N)
    prob = LatticeDP(steps, h, P, np.ones((2, N)), np.zeros((2, N)),
                     np.array([[0.0, c], [c, 0.0]]), mask=x2 >= -1e-12)
    return prob, x2
