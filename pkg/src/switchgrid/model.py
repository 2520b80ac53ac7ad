"""Switching-problem instances: coefficients, constraint set, built-in examples.

Coefficient callables follow one vectorised contract.  ``x`` has shape
``(..., d)`` and regimes are labelled ``1..m``:

* ``drift(x, i)``      -> ``(..., d)``
* ``volatility(x, i)`` -> ``(..., d, d)``
* ``running(x, i)``    -> ``(...)``
* ``terminal(x, i)``   -> ``(...)``
* ``cost(x, i, j)``    -> ``(...)``

Callables may return anything broadcastable to those shapes (constants are
fine); :class:`CoefficientFields` normalises the output.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .domains import ConstraintDomain
from .errors import ConfigError, ValidationError

_ZERO_TOL = 1e-12


@dataclass(frozen=True)
class RegimeSet:
    m: int

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 2:
            raise ConfigError(f"need at least two regimes, got m={self.m}")

    @property
    def labels(self):
        return range(1, self.m + 1)


@dataclass(frozen=True)
class CoefficientFields:
    drift: Callable
    volatility: Callable
    running: Callable
    terminal: Callable
    cost: Callable

    def mu(self, x, i):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(self.drift(x, i), dtype=float), x.shape)

    def sigma(self, x, i):
        x = np.asarray(x, dtype=float)
        d = x.shape[-1]
        return np.broadcast_to(np.asarray(self.volatility(x, i), dtype=float), x.shape + (d,))

    def f(self, x, i):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(self.running(x, i), dtype=float), x.shape[:-1])

    def g(self, x, i):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(self.terminal(x, i), dtype=float), x.shape[:-1])

    def c(self, x, i, j):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(self.cost(x, i, j), dtype=float), x.shape[:-1])


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """A complete finite-horizon switching problem under a state constraint.

    ``region`` is the bounding box on which the coefficients are validated
    and the default truncation box for solves.  ``config`` is the JSON-able
    description the instance was built from; it feeds :attr:`model_hash`.
    """

    name: str
    dim: int
    regimes: RegimeSet
    horizon: float
    coeffs: CoefficientFields
    domain: ConstraintDomain
    L: float
    c_bar: float
    region: tuple
    config: dict = field(default_factory=dict)
    regime_names: tuple = ()
    initial: tuple | None = None

    def __post_init__(self):
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise ConfigError(f"horizon must be positive, got {self.horizon}")
        if int(self.dim) != self.dim or self.dim < 1:
            raise ConfigError(f"dimension must be >= 1, got {self.dim}")
        if self.domain.dim != self.dim:
            raise ConfigError("domain dimension does not match model dimension")
        lo, hi = (np.asarray(r, dtype=float) for r in self.region)
        if lo.shape != (self.dim,) or hi.shape != (self.dim,) or np.any(~(lo < hi)):
            raise ConfigError("region must be a pair of finite bounds with lo < hi per coordinate")
        object.__setattr__(self, "region", (lo, hi))

    @property
    def m(self):
        return self.regimes.m

    @property
    def model_hash(self):
        blob = json.dumps({"name": self.name, "config": self.config}, sort_keys=True,
                          default=lambda o: o.tolist() if hasattr(o, "tolist") else str(o))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def cost_matrix(self, x):
        """Switching costs at points ``x`` as an array ``(m, m, ...)`` (zero diagonal)."""
        x = np.asarray(x, dtype=float)
        out = np.zeros((self.m, self.m) + x.shape[:-1])
        for i in self.regimes.labels:
            for j in self.regimes.labels:
                if i != j:
                    out[i - 1, j - 1] = self.coeffs.c(x, i, j)
        return out


# ---------------------------------------------------------------------------
# Lipschitz and cost-floor validation
# ---------------------------------------------------------------------------

@dataclass
class ValidationReport:
    max_ratio: dict
    min_cost: float
    L: float
    c_bar: float
    sample_count: int
    seed: int
    region: tuple

    @property
    def lipschitz_ok(self):
        return all(r <= self.L * (1 + 1e-9) + 1e-12 for r in self.max_ratio.values())

    @property
    def cost_ok(self):
        return self.c_bar > 0 and self.min_cost >= self.c_bar * (1 - 1e-12)

    @property
    def passed(self):
        return self.lipschitz_ok and self.cost_ok

    def to_dict(self):
        return {
            "passed": self.passed,
            "lipschitz_ok": self.lipschitz_ok,
            "cost_ok": self.cost_ok,
            "max_ratio": self.max_ratio,
            "min_cost": self.min_cost,
            "L": self.L,
            "c_bar": self.c_bar,
            "sample_count": self.sample_count,
            "seed": self.seed,
            "region": [list(map(float, self.region[0])), list(map(float, self.region[1]))],
        }


def _checked(values, name, pts, regime):
    values = np.asarray(values, dtype=float)
    lead = pts.shape[0]
    flat = values.reshape(lead, -1)
    bad = ~np.all(np.isfinite(flat), axis=1)
    if np.any(bad):
        raise ValidationError(name, pts[np.argmax(bad)], regime)
    return flat


def _max_pair_ratio(pts, vals):
    best = 0.0
    for k in range(len(pts) - 1):
        dx = np.linalg.norm(pts[k + 1:] - pts[k], axis=1)
        dv = np.linalg.norm(vals[k + 1:] - vals[k], axis=1)
        ok = dx > 0
        if np.any(ok):
            best = max(best, float(np.max(dv[ok] / dx[ok])))
    return best


def validate_model(spec: ModelSpec, sample_count: int = 200, seed: int = 0) -> ValidationReport:
    """Sample-based check of the Lipschitz constant ``L`` and cost floor ``c_bar``.

    Points are drawn uniformly from ``spec.region``; Lipschitz ratios are taken
    over all pairs of sample points.
    """
    if sample_count < 2:
        raise ConfigError("sample_count must be at least 2")
    rng = np.random.default_rng(seed)
    lo, hi = spec.region
    pts = rng.uniform(lo, hi, size=(sample_count, spec.dim))
    cf = spec.coeffs
    ratios = {"drift": 0.0, "volatility": 0.0, "running": 0.0, "terminal": 0.0, "cost": 0.0}
    min_cost = math.inf
    for i in spec.regimes.labels:
        for name, fn in (("drift", cf.mu), ("volatility", cf.sigma),
                         ("running", cf.f), ("terminal", cf.g)):
            vals = _checked(fn(pts, i), name, pts, i)
            ratios[name] = max(ratios[name], _max_pair_ratio(pts, vals))
        for j in spec.regimes.labels:
            if j == i:
                continue
            vals = _checked(cf.c(pts, i, j), "cost", pts, i)
            ratios["cost"] = max(ratios["cost"], _max_pair_ratio(pts, vals))
            min_cost = min(min_cost, float(vals.min()))
    return ValidationReport(ratios, min_cost, float(spec.L), float(spec.c_bar),
                            sample_count, seed, (lo.copy(), hi.copy()))


# ---------------------------------------------------------------------------
# Structural conditions keeping the state viable in D
# ---------------------------------------------------------------------------

@dataclass
class H3Report:
    absorbing: bool
    invariant: bool
    convex_viable: bool
    absorbing_regimes: list
    invariant_regimes: list
    viable_regimes: list
    boundary_points: int

    @property
    def any(self):
        return self.absorbing or self.invariant or self.convex_viable

    def to_dict(self):
        return {
            "a_absorbing_regime": self.absorbing,
            "b_invariant_regime": self.invariant,
            "c_convex_viability": self.convex_viable,
            "absorbing_regimes": self.absorbing_regimes,
            "invariant_regimes": self.invariant_regimes,
            "viable_regimes": self.viable_regimes,
            "boundary_points": self.boundary_points,
        }


def check_h3_sufficient(spec: ModelSpec, boundary_sample: int = 64, seed: int = 0) -> H3Report:
    """Report which of three structural conditions for staying in D hold.

    (a) at every sampled boundary point some regime freezes the state
        (drift and volatility vanish);
    (b) one regime keeps the state in D: at every boundary point its
        volatility has no component along the outward normal and its drift
        does not point outward;
    (c) D is convex and one regime passes ``p.mu + tr(sigma sigma^T A)/2 <= 0``
        on a sample of the second-order normal cone, ``(p, A)`` in
        ``{(nu, 0), (nu, nu nu^T), (nu, 1e3 nu nu^T)}``.
    """
    rng = np.random.default_rng(seed)
    lo, hi = spec.region
    pts = spec.domain.sample_boundary(rng, lo, hi, boundary_sample)
    cf = spec.coeffs
    labels = list(spec.regimes.labels)
    mus = {i: cf.mu(pts, i) for i in labels}
    sig = {i: cf.sigma(pts, i) for i in labels}

    frozen = np.zeros((len(pts), len(labels)), dtype=bool)
    for col, i in enumerate(labels):
        frozen[:, col] = (np.max(np.abs(mus[i]), axis=-1, initial=0.0) <= _ZERO_TOL) & \
                         (np.max(np.abs(sig[i]).reshape(len(pts), -1), axis=-1, initial=0.0) <= _ZERO_TOL)
    absorbing = bool(np.all(np.any(frozen, axis=1)))
    absorbing_regimes = [i for col, i in enumerate(labels) if np.all(frozen[:, col])]

    invariant_regimes, viable_regimes = [], []
    for i in labels:
        inv_ok, cone_ok = True, True
        for k, x in enumerate(pts):
            for nu in spec.domain.outward_normals(x):
                drift_out = float(nu @ mus[i][k])
                leak = float(np.linalg.norm(sig[i][k].T @ nu))
                if leak > _ZERO_TOL or drift_out > _ZERO_TOL:
                    inv_ok = False
                a = sig[i][k] @ sig[i][k].T
                for scale in (0.0, 1.0, 1e3):
                    A = scale * np.outer(nu, nu)
                    if drift_out + 0.5 * float(np.trace(a @ A)) > _ZERO_TOL:
                        cone_ok = False
        if inv_ok:
            invariant_regimes.append(i)
        if cone_ok:
            viable_regimes.append(i)
    convex = spec.domain.kind in ("box", "halfspace", "ball", "polyhedron")
    return H3Report(absorbing, bool(invariant_regimes), convex and bool(viable_regimes),
                    absorbing_regimes, invariant_regimes, viable_regimes, len(pts))


# ---------------------------------------------------------------------------
# Built-in models
# ---------------------------------------------------------------------------

def builtin_counterexample(T: float = 1.0, c: float = 0.5) -> ModelSpec:
    """Two-regime deterministic model whose constrained value is discontinuous.

    State ``(x1, x2)`` constrained to ``x2 >= 0``.  Regime 1 moves ``x2`` down
    at unit speed, regime 2 freezes the state; both earn reward 1 per unit
    time, nothing at the horizon, and switching costs ``c`` either way.
    """
    if not c > 0:
        raise ConfigError("switching cost must be positive")

    def drift(x, i):
        out = np.zeros_like(x)
        if i == 1:
            out[..., 1] = -1.0
        return out

    return ModelSpec(
        name="counterexample",
        dim=2,
        regimes=RegimeSet(2),
        horizon=float(T),
        coeffs=CoefficientFields(
            drift=drift,
            volatility=lambda x, i: 0.0,
            running=lambda x, i: 1.0,
            terminal=lambda x, i: 0.0,
            cost=lambda x, i, j: c,
        ),
        domain=ConstraintDomain.box([-np.inf, 0.0], [np.inf, np.inf]),
        L=0.0,
        c_bar=float(c),
        region=((-1.0, -0.5), (1.0, 2.0)),
        config={"builtin": "counterexample", "params": {"c": float(c)}, "horizon": float(T)},
        regime_names=("move", "stop"),
    )


PUMPED_STORAGE_DEFAULTS = {"kappa": 1.0, "theta": 1.0, "xi": 0.5, "switch_cost": 0.05}

PUMP, STORE, GENERATE = 1, 2, 3
_LEVEL_DRIFT = {PUMP: 1.0, STORE: 0.0, GENERATE: -1.0}


def builtin_pumped_storage(l_max: float = 1.0, price_params: dict | None = None,
                           l0: float = 0.5, p0: float = 1.0, T: float = 1.0) -> ModelSpec:
    """Hydro pumped-storage plant with a mean-reverting electricity price.

    State is ``(level, price)``; the level lives in ``[0, l_max]``.  Regimes
    are pump (level drift +1), store (0) and generate (-1); the level has no
    noise.  The price follows ``dP = kappa (theta - P) dt + xi dW``.  Running
    reward is ``-price * level_drift``: pumping buys energy, generating
    sells it.  ``switch_cost`` is a scalar or an ``m x m`` matrix.
    """
    if not l_max > 0:
        raise ConfigError("l_max must be positive")
    if not 0 <= l0 <= l_max:
        raise ConfigError("initial level must lie in [0, l_max]")
    params = dict(PUMPED_STORAGE_DEFAULTS)
    unknown = set(price_params or {}) - set(params)
    if unknown:
        raise ConfigError(f"unknown price parameters: {sorted(unknown)}")
    params.update(price_params or {})
    kappa, theta, xi = float(params["kappa"]), float(params["theta"]), float(params["xi"])
    if kappa < 0 or xi < 0:
        raise ConfigError("kappa and xi must be nonnegative")
    costs = np.asarray(params["switch_cost"], dtype=float)
    if costs.ndim == 0:
        costs = np.full((3, 3), float(costs))
    if costs.shape != (3, 3):
        raise ConfigError("switch_cost must be a scalar or a 3x3 matrix")
    off = costs[~np.eye(3, dtype=bool)]
    if np.any(off <= 0):
        raise ConfigError("switching costs must be positive")

    def drift(x, i):
        out = np.empty_like(x)
        out[..., 0] = _LEVEL_DRIFT[i]
        out[..., 1] = kappa * (theta - x[..., 1])
        return out

    def volatility(x, i):
        out = np.zeros(x.shape + (2,))
        out[..., 1, 1] = xi
        return out

    def running(x, i):
        return -x[..., 1] * _LEVEL_DRIFT[i]

    spread = 4.0 * xi / math.sqrt(2.0 * kappa) if kappa > 0 else 4.0 * xi * math.sqrt(T)
    spread = max(spread, 1.0)
    cfg_params = {"l_max": float(l_max), "l0": float(l0), "p0": float(p0),
                  "kappa": kappa, "theta": theta, "xi": xi, "switch_cost": costs.tolist()}
    return ModelSpec(
        name="pumped_storage",
        dim=2,
        regimes=RegimeSet(3),
        horizon=float(T),
        coeffs=CoefficientFields(
            drift=drift,
            volatility=volatility,
            running=running,
            terminal=lambda x, i: 0.0,
            cost=lambda x, i, j: costs[i - 1, j - 1],
        ),
        domain=ConstraintDomain.box([0.0, -np.inf], [l_max, np.inf]),
        L=max(1.0, kappa),
        c_bar=float(off.min()),
        region=((-1.0, theta - spread), (l_max + 1.0, theta + spread)),
        config={"builtin": "pumped_storage", "params": cfg_params, "horizon": float(T)},
        regime_names=("pump", "store", "generate"),
        initial=(float(l0), float(p0)),
    )


# ---------------------------------------------------------------------------
# Tabulated (per-regime affine) coefficients and model files
# ---------------------------------------------------------------------------

def _affine(entry, d, what):
    """Parse ``a`` or ``{"const": a, "linear": [b1..bd]}`` into ``(a, b)``."""
    if isinstance(entry, (int, float)):
        return float(entry), np.zeros(d)
    if isinstance(entry, dict) and set(entry) <= {"const", "linear"}:
        b = np.asarray(entry.get("linear", [0.0] * d), dtype=float)
        if b.shape != (d,):
            raise ConfigError(f"{what}: linear part must have length {d}")
        return float(entry.get("const", 0.0)), b
    raise ConfigError(f"{what}: expected a number or {{'const', 'linear'}}")


def tabulated_model(dim, m, horizon, table, domain, L, c_bar, region, name="tabulated", config=None):
    """Model with per-regime constant drift/volatility and affine rewards."""
    allowed = {"drift", "volatility", "running", "terminal", "cost"}
    unknown = set(table) - allowed
    if unknown:
        raise ConfigError(f"unknown tabulated keys: {sorted(unknown)}")
    try:
        drift = np.asarray(table.get("drift", np.zeros((m, dim))), dtype=float)
        vol = np.asarray(table.get("volatility", np.zeros((m, dim, dim))), dtype=float)
        cost = np.asarray(table["cost"], dtype=float)
    except KeyError as exc:
        raise ConfigError("tabulated coefficients need a 'cost' matrix") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"tabulated coefficients are not numeric: {exc}") from exc
    if drift.shape != (m, dim) or vol.shape != (m, dim, dim) or cost.shape != (m, m):
        raise ConfigError("tabulated shapes must be drift (m,d), volatility (m,d,d), cost (m,m)")
    run = [_affine(e, dim, "running") for e in table.get("running", [0.0] * m)]
    term = [_affine(e, dim, "terminal") for e in table.get("terminal", [0.0] * m)]
    if len(run) != m or len(term) != m:
        raise ConfigError("running/terminal need one entry per regime")

    coeffs = CoefficientFields(
        drift=lambda x, i: drift[i - 1],
        volatility=lambda x, i: vol[i - 1],
        running=lambda x, i: run[i - 1][0] + x @ run[i - 1][1],
        terminal=lambda x, i: term[i - 1][0] + x @ term[i - 1][1],
        cost=lambda x, i, j: cost[i - 1, j - 1],
    )
    return ModelSpec(name=name, dim=dim, regimes=RegimeSet(m), horizon=float(horizon),
                     coeffs=coeffs, domain=domain, L=float(L), c_bar=float(c_bar),
                     region=region, config=config or {
                         "dim": dim, "regimes": m, "horizon": float(horizon),
                         "coefficients": {"tabulated": table}, "domain": domain.to_dict(),
                         "constants": {"L": float(L), "c_bar": float(c_bar)},
                         "region": {"lo": list(region[0]), "hi": list(region[1])}})


_MODEL_KEYS = {"dim", "regimes", "horizon", "coefficients", "domain", "constants", "region"}


def model_from_dict(data: dict) -> ModelSpec:
    """Build a model from the JSON model-file schema; unknown keys are rejected."""
    if not isinstance(data, dict):
        raise ConfigError("model file must contain a JSON object")
    unknown = set(data) - _MODEL_KEYS
    if unknown:
        raise ConfigError(f"unknown model keys: {sorted(unknown)}")
    for key in ("dim", "regimes", "horizon", "coefficients"):
        if key not in data:
            raise ConfigError(f"model file missing key {key!r}")
    dim, m, T = data["dim"], data["regimes"], data["horizon"]
    if not isinstance(dim, int) or not isinstance(m, int) or not isinstance(T, (int, float)):
        raise ConfigError("dim and regimes must be integers, horizon a number")
    coeffs = data["coefficients"]
    if not isinstance(coeffs, dict) or len(set(coeffs) & {"builtin", "tabulated"}) != 1:
        raise ConfigError("coefficients must hold exactly one of 'builtin' or 'tabulated'")
    constants = data.get("constants", {})
    if set(constants) - {"L", "c_bar"}:
        raise ConfigError(f"unknown constants: {sorted(set(constants) - {'L', 'c_bar'})}")

    if "builtin" in coeffs:
        if set(coeffs) - {"builtin", "params"}:
            raise ConfigError(f"unknown coefficient keys: {sorted(set(coeffs) - {'builtin', 'params'})}")
        name, params = coeffs["builtin"], dict(coeffs.get("params", {}))
        if name == "counterexample":
            if set(params) - {"c"}:
                raise ConfigError(f"unknown counterexample params: {sorted(set(params) - {'c'})}")
            spec = builtin_counterexample(T=float(T), c=float(params.get("c", 0.5)))
        elif name == "pumped_storage":
            top = {"l_max", "l0", "p0"}
            price = {k: v for k, v in params.items() if k not in top}
            spec = builtin_pumped_storage(
                l_max=float(params.get("l_max", 1.0)), price_params=price,
                l0=float(params.get("l0", 0.5)), p0=float(params.get("p0", 1.0)), T=float(T))
        else:
            raise ConfigError(f"unknown builtin model {name!r}")
        if (dim, m) != (spec.dim, spec.m):
            raise ConfigError(f"builtin {name!r} has dim={spec.dim}, regimes={spec.m}")
        overrides = {}
        if "domain" in data:
            overrides["domain"] = ConstraintDomain.from_dict(data["domain"])
        if "L" in constants:
            overrides["L"] = float(constants["L"])
        if "c_bar" in constants:
            overrides["c_bar"] = float(constants["c_bar"])
        if "region" in data:
            overrides["region"] = _region(data["region"])
        if overrides:
            cfg = dict(spec.config, **{k: data[k] for k in ("domain", "constants", "region") if k in data})
            spec = dataclasses.replace(spec, **overrides, config=cfg)
        return spec

    if set(coeffs) != {"tabulated"}:
        raise ConfigError("tabulated coefficients take no other keys")
    for key in ("domain", "constants", "region"):
        if key not in data:
            raise ConfigError(f"tabulated model needs {key!r}")
    if set(constants) != {"L", "c_bar"}:
        raise ConfigError("tabulated model needs constants L and c_bar")
    return tabulated_model(dim, m, T, coeffs["tabulated"], ConstraintDomain.from_dict(data["domain"]),
                           constants["L"], constants["c_bar"], _region(data["region"]),
                           config=data)


def _region(r):
    if not isinstance(r, dict) or set(r) != {"lo", "hi"}:
        raise ConfigError("region must be {'lo': [...], 'hi': [...]}")
    return (tuple(r["lo"]), tuple(r["hi"]))


def load_model(path) -> ModelSpec:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"model file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"model file {path} is not valid JSON: {exc}") from exc
    return model_from_dict(data)
