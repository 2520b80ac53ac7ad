"""Atomic, deterministic artifact files: value CSVs, path dumps and JSON records."""
from __future__ import annotations

import dataclasses
import io
import json
import os
import tempfile

import numpy as np

from .errors import ConfigError
from .grid import INSIDE, OUTSIDE, RAMP, GridSpec, ValueField, build_grid


def atomic_write(path, text):
    """Write ``text`` to a temp file in the target directory, then rename it into place."""
    path = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=folder)
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        obj = float(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def dumps(record):
    return json.dumps(_clean(record), indent=2, sort_keys=True) + "\n"


def write_json(path, record):
    atomic_write(path, dumps(record))


def _table_text(header, columns, int_cols=()):
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    fmt = ["%d" if k in int_cols else "%.17g" for k in range(len(header))]
    np.savetxt(buf, np.column_stack(columns), fmt=fmt, delimiter=",")
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Value fields
# ---------------------------------------------------------------------------

def field_metadata(field: ValueField, spec, levels):
    grid = field.grid
    return {
        "model": spec.name,
        "model_hash": field.model_hash,
        "model_config": spec.config,
        "grid": grid.gspec.to_dict(),
        "ramp_width": grid.ramp_width,
        "horizon": grid.horizon,
        "regimes": grid.m,
        "penalty_level": field.n,
        "levels": list(levels),
        "scheme": field.meta,
    }


def write_field(path, field: ValueField, spec, levels=None):
    """CSV rows ``t, x_1..x_d, regime, value`` plus ``<path>.json`` metadata.

    ``levels`` restricts the exported time levels (default: all).  Rows are
    ordered by level, regime, then node in C order.
    """
    grid = field.grid
    levels = list(range(grid.steps + 1)) if levels is None else sorted(set(int(k) for k in levels))
    if any(not 0 <= k <= grid.steps for k in levels):
        raise ConfigError(f"export levels must lie in 0..{grid.steps}")
    Nn, d, m = grid.size, grid.dim, grid.m
    t = np.repeat(grid.times[levels], m * Nn)
    X = np.tile(grid.nodes, (len(levels) * m, 1))
    reg = np.tile(np.repeat(np.arange(1, m + 1), Nn), len(levels))
    vals = field.flat[levels].reshape(-1)
    header = ["t"] + [f"x_{k + 1}" for k in range(d)] + ["regime", "value"]
    text = _table_text(header, [t, *X.T, reg, vals], int_cols=(d + 1,))
    atomic_write(path, text)
    write_json(str(path) + ".json", field_metadata(field, spec, levels))


def read_field(path, spec):
    """Rebuild a :class:`ValueField` from a CSV written by :func:`write_field`.

    The sidecar must describe every time level and match ``spec``'s hash.
    """
    meta_path = str(path) + ".json"
    try:
        with open(meta_path) as fh:
            meta = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"field metadata not found: {meta_path}") from exc
    if meta.get("model_hash") != spec.model_hash:
        raise ConfigError(f"field {path} was solved for a different model (hash {meta.get('model_hash')})")
    g = meta["grid"]
    gspec = GridSpec(g["lo"], g["hi"], g["points"], g["steps"])
    if meta["levels"] != list(range(gspec.steps + 1)):
        raise ConfigError(f"field {path} holds only some time levels; verification needs all of them")
    grid = build_grid(spec, gspec)
    width = float(meta["ramp_width"])
    flags = np.where(grid.dist == 0, INSIDE, np.where(grid.dist < width, RAMP, OUTSIDE)).astype(np.int8)
    grid = dataclasses.replace(grid, flags=flags, ramp_width=width)
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read field CSV {path}: {exc}") from exc
    expected = (gspec.steps + 1) * spec.m * grid.size
    if data.shape != (expected, spec.dim + 3):
        raise ConfigError(f"field CSV {path} has shape {data.shape}, expected ({expected}, {spec.dim + 3})")
    values = data[:, -1].reshape((gspec.steps + 1, spec.m) + tuple(gspec.points))
    return ValueField(values, grid, int(meta["penalty_level"]), spec.model_hash, dict(meta.get("scheme", {})))


# ---------------------------------------------------------------------------
# Paths
# ---------------------------------------------------------------------------

def write_paths(path, bundle):
    """CSV rows ``path_id, t, x_1..x_d, regime, event``; ``event`` is 1 where a switch happened."""
    if bundle.states is None:
        raise ConfigError("path dump needs recorded trajectories")
    P, K1, d = bundle.states.shape
    ev = np.zeros((P, K1), dtype=np.int64)
    row_of = {int(pid): q for q, pid in enumerate(bundle.path_ids)}
    for pid, step, *_ in bundle.events:
        ev[row_of[pid], step] = 1
    ids = np.repeat(bundle.path_ids, K1)
    t = np.tile(bundle.times, P)
    X = bundle.states.reshape(-1, d)
    header = ["path_id", "t"] + [f"x_{k + 1}" for k in range(d)] + ["regime", "event"]
    cols = [ids, t, *X.T, bundle.regimes.reshape(-1), ev.reshape(-1)]
    atomic_write(path, _table_text(header, cols, int_cols=(0, d + 2, d + 3)))


def write_events(path, bundle):
    """One row per switch: ``path_id, step, t, from, to, cost``."""
    header = ["path_id", "step", "t", "from", "to", "cost"]
    if bundle.events:
        cols = np.array(bundle.events, dtype=float).T
        text = _table_text(header, list(cols), int_cols=(0, 1, 3, 4))
    else:
        text = ",".join(header) + "\n"
    atomic_write(path, text)
