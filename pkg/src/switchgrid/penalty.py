"""Penalised rewards for the unconstrained approximation of the constrained problem.

``theta(n, D, x) = min(n * dist(x, D), 1)`` ramps from 0 on ``D`` to 1 at
distance ``1/n``; both rewards are lowered by ``n * theta``.
"""
from __future__ import annotations

import numpy as np

from .domains import ConstraintDomain
from .errors import ConfigError


def _check_level(n):
    if int(n) != n or n < 1:
        raise ConfigError(f"penalty level must be an integer >= 1, got {n}")
    return int(n)


def dist_to_domain(domain: ConstraintDomain, x):
    if not isinstance(domain, ConstraintDomain):
        raise ConfigError(f"unsupported domain object {type(domain).__name__}")
    d = domain.distance(x)
    return float(d) if np.ndim(d) == 0 else d


def theta(n: int, domain: ConstraintDomain, x):
    n = _check_level(n)
    out = np.minimum(n * np.asarray(domain.distance(x)), 1.0)
    return float(out) if out.ndim == 0 else out


def penalized_running(spec, n: int, x, i: int):
    """``f(x, i) - n * theta_n(x)``."""
    n = _check_level(n)
    out = spec.coeffs.f(x, i) - n * np.asarray(theta(n, spec.domain, x))
    return float(out) if np.ndim(out) == 0 else out


def penalized_terminal(spec, n: int, x, i: int):
    """``g(x, i) - n * theta_n(x)``."""
    n = _check_level(n)
    out = spec.coeffs.g(x, i) - n * np.asarray(theta(n, spec.domain, x))
    return float(out) if np.ndim(out) == 0 else out


def penalty_ladder_levels(K: int) -> list:
    """Geometric ladder ``[1, 2, 4, ..., 2**K]``."""
    if K < 0:
        raise ConfigError("ladder exponent must be nonnegative")
    return [2 ** k for k in range(K + 1)]
