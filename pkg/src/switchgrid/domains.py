"""Closed convex constraint sets with exact Euclidean distance.

Four kinds are supported: axis-aligned ``box`` (bounds may be infinite),
``halfspace`` ``{x : a.x <= b}``, ``ball`` and ``polyhedron``
``{x : A x <= b}``.  All evaluators are vectorised over leading axes of
``x`` (shape ``(..., d)``).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .errors import ConfigError

KINDS = ("box", "halfspace", "ball", "polyhedron")

# Feasibility slack for candidate projections in the polyhedron distance.
_FEAS_TOL = 1e-12


def _as_float_array(value, name):
    try:
        arr = np.array(
            [float(v) if v is not None else np.nan for v in np.ravel(value)],
            dtype=float,
        ).reshape(np.shape(value))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"domain parameter {name!r} is not numeric") from exc
    return arr


def _norm(v):
    """Euclidean norm over the last axis, rescaled so tiny components do not underflow."""
    v = np.asarray(v, dtype=float)
    scale = np.max(np.abs(v), axis=-1, initial=0.0)
    safe = np.where(scale > 0, scale, 1.0)
    return scale * np.sqrt(np.sum((v / safe[..., None]) ** 2, axis=-1))


@dataclass(frozen=True, eq=False)
class ConstraintDomain:
    """A nonempty closed convex set D with membership and distance tests."""

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unsupported domain kind {self.kind!r}; expected one of {KINDS}")
        p = {k: _as_float_array(v, k) for k, v in self.params.items()}
        if self.kind == "box":
            self._require(p, "lower", "upper")
            lo, hi = np.atleast_1d(p["lower"]), np.atleast_1d(p["upper"])
            lo = np.where(np.isnan(lo), -np.inf, lo)
            hi = np.where(np.isnan(hi), np.inf, hi)
            if lo.shape != hi.shape or lo.ndim != 1:
                raise ConfigError("box bounds must be vectors of equal length")
            if np.any(lo > hi):
                raise ConfigError("box lower bound exceeds upper bound (empty domain)")
            p = {"lower": lo, "upper": hi}
        elif self.kind == "halfspace":
            self._require(p, "normal", "offset")
            a = np.atleast_1d(p["normal"])
            if not np.any(a != 0):
                raise ConfigError("halfspace normal must be nonzero")
            p = {"normal": a, "offset": float(p["offset"])}
        elif self.kind == "ball":
            self._require(p, "center", "radius")
            r = float(p["radius"])
            if not r >= 0:
                raise ConfigError("ball radius must be nonnegative")
            p = {"center": np.atleast_1d(p["center"]), "radius": r}
        else:
            self._require(p, "normals", "offsets")
            A = np.atleast_2d(p["normals"])
            b = np.atleast_1d(p["offsets"])
            if A.shape[0] != b.shape[0]:
                raise ConfigError("polyhedron needs one offset per normal")
            if np.any(np.linalg.norm(A, axis=1) == 0):
                raise ConfigError("polyhedron normals must be nonzero")
            res = linprog(np.zeros(A.shape[1]), A_ub=A, b_ub=b,
                          bounds=[(None, None)] * A.shape[1], method="highs")
            if res.status == 2:
                raise ConfigError("polyhedron is empty")
            p = {"normals": A, "offsets": b}
        object.__setattr__(self, "_p", p)

    @staticmethod
    def _require(p, *names):
        missing = [n for n in names if n not in p]
        if missing:
            raise ConfigError(f"domain parameters missing: {missing}")

    # -- constructors -------------------------------------------------------
    @classmethod
    def box(cls, lower, upper):
        return cls("box", {"lower": list(lower), "upper": list(upper)})

    @classmethod
    def halfspace(cls, normal, offset):
        return cls("halfspace", {"normal": list(normal), "offset": offset})

    @classmethod
    def ball(cls, center, radius):
        return cls("ball", {"center": list(center), "radius": radius})

    @classmethod
    def polyhedron(cls, normals, offsets):
        return cls("polyhedron", {"normals": [list(r) for r in normals], "offsets": list(offsets)})

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict) or set(data) - {"kind", "params"} or "kind" not in data:
            raise ConfigError("domain must be an object with keys 'kind' and 'params'")
        return cls(data["kind"], dict(data.get("params", {})))

    def to_dict(self):
        def enc(v):
            if isinstance(v, np.ndarray):
                return [None if not math.isfinite(x) else float(x) for x in v.ravel()] \
                    if v.ndim == 1 else [enc(r) for r in v]
            return float(v)
        return {"kind": self.kind, "params": {k: enc(v) for k, v in self._p.items()}}

    # -- geometry -----------------------------------------------------------
    @property
    def dim(self):
        p = self._p
        if self.kind == "box":
            return p["lower"].size
        if self.kind == "halfspace":
            return p["normal"].size
        if self.kind == "ball":
            return p["center"].size
        return p["normals"].shape[1]

    def _check_dim(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ConfigError(f"point dimension {x.shape[-1]} does not match domain dimension {self.dim}")
        return x

    def contains(self, x):
        x = self._check_dim(x)
        p = self._p
        if self.kind == "box":
            return np.all((x >= p["lower"]) & (x <= p["upper"]), axis=-1)
        if self.kind == "halfspace":
            return x @ p["normal"] <= p["offset"]
        if self.kind == "ball":
            return _norm(x - p["center"]) <= p["radius"]
        return np.all(x @ p["normals"].T <= p["offsets"], axis=-1)

    def distance(self, x):
        """Euclidean distance ``inf_{y in D} |x - y|``; zero exactly on D."""
        x = self._check_dim(x)
        p = self._p
        if self.kind == "box":
            below = np.maximum(p["lower"] - x, 0.0)
            above = np.maximum(x - p["upper"], 0.0)
            return _norm(below + above)
        if self.kind == "halfspace":
            a = p["normal"]
            return np.maximum(x @ a - p["offset"], 0.0) / np.linalg.norm(a)
        if self.kind == "ball":
            return np.maximum(_norm(x - p["center"]) - p["radius"], 0.0)
        return self._polyhedron_distance(x)

    def _polyhedron_distance(self, x):
        A, b = self._p["normals"], self._p["offsets"]
        k, d = A.shape
        flat = x.reshape(-1, d)
        inside = np.all(flat @ A.T <= b, axis=-1)
        best = np.full(flat.shape[0], np.inf)
        # The projection lies on the affine hull of some active set of at
        # most d faces; every feasible candidate bounds the distance above.
        for size in range(1, min(k, d) + 1):
            for S in itertools.combinations(range(k), size):
                AS = A[list(S)]
                G = AS @ AS.T
                if np.linalg.matrix_rank(G) < size:
                    continue
                resid = flat @ AS.T - b[list(S)]
                y = flat - np.linalg.solve(G, resid.T).T @ AS
                ok = np.all(y @ A.T <= b + _FEAS_TOL, axis=-1)
                dist = np.linalg.norm(flat - y, axis=-1)
                best = np.where(ok & (dist < best), dist, best)
        viol = np.max((flat @ A.T - b) / np.linalg.norm(A, axis=1), axis=-1)
        out = np.where(inside, 0.0, np.maximum(best, viol))
        return out.reshape(x.shape[:-1])

    def extent(self):
        """Per-coordinate ``(min, max)`` of D, with infinite entries when unbounded."""
        p = self._p
        d = self.dim
        if self.kind == "box":
            return p["lower"].copy(), p["upper"].copy()
        if self.kind == "ball":
            return p["center"] - p["radius"], p["center"] + p["radius"]
        if self.kind == "halfspace":
            A, b = p["normal"][None, :], np.array([p["offset"]])
        else:
            A, b = p["normals"], p["offsets"]
        lo, hi = np.empty(d), np.empty(d)
        for k in range(d):
            e = np.zeros(d)
            e[k] = 1.0
            for sign, out in ((1.0, lo), (-1.0, hi)):
                res = linprog(sign * e, A_ub=A, b_ub=b, bounds=[(None, None)] * d, method="highs")
                out[k] = sign * res.fun if res.status == 0 else -sign * np.inf
        return lo, hi

    def outward_normals(self, x):
        """Unit outward normals of the faces active at boundary point ``x``."""
        x = self._check_dim(x)
        p = self._p
        tol = 1e-9
        if self.kind == "box":
            out = []
            for k in range(self.dim):
                e = np.zeros(self.dim)
                if abs(x[k] - p["lower"][k]) <= tol:
                    e[k] = -1.0
                    out.append(e.copy())
                    e[k] = 0.0
                if abs(x[k] - p["upper"][k]) <= tol:
                    e[k] = 1.0
                    out.append(e)
            return out
        if self.kind == "halfspace":
            a = p["normal"]
            return [a / np.linalg.norm(a)]
        if self.kind == "ball":
            v = x - p["center"]
            nv = np.linalg.norm(v)
            return [v / nv] if nv > 0 else []
        A, b = p["normals"], p["offsets"]
        norms = np.linalg.norm(A, axis=1)
        active = np.abs((A @ x - b) / norms) <= tol
        return [A[r] / norms[r] for r in np.flatnonzero(active)]

    def sample_boundary(self, rng, lo, hi, count):
        """Draw ``count`` points of the boundary of D inside the box ``[lo, hi]``."""
        lo, hi = np.asarray(lo, float), np.asarray(hi, float)
        p = self._p
        pts = []
        attempts = 0
        while len(pts) < count and attempts < 100 * count + 100:
            attempts += 1
            y = rng.uniform(lo, hi)
            if self.kind == "box":
                faces = [(k, s) for k in range(self.dim) for s, bnd in
                         ((0, p["lower"][k]), (1, p["upper"][k]))
                         if np.isfinite(bnd) and lo[k] <= bnd <= hi[k]]
                if not faces:
                    break
                k, s = faces[rng.integers(len(faces))]
                y = np.clip(y, p["lower"], p["upper"])
                y[k] = p["upper"][k] if s else p["lower"][k]
            elif self.kind == "halfspace":
                a = p["normal"]
                y = y - (y @ a - p["offset"]) / (a @ a) * a
            elif self.kind == "ball":
                v = rng.standard_normal(self.dim)
                y = p["center"] + p["radius"] * v / np.linalg.norm(v)
            else:
                A, b = p["normals"], p["offsets"]
                r = rng.integers(A.shape[0])
                y = y - (A[r] @ y - b[r]) / (A[r] @ A[r]) * A[r]
                if np.any(A @ y > b + 1e-12):
                    continue
            if np.all(y >= lo - 1e-12) and np.all(y <= hi + 1e-12):
                pts.append(y)
        return np.array(pts).reshape(-1, self.dim)
