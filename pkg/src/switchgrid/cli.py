"""Command-line front end.

    switchgrid <solve|converge|simulate|verify|oracle> --config run.json [--out DIR]
               [--threads K] [--seed S] [--model FILE] [--n N] [--field CSV]

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 verification failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field

import jsonschema
import numpy as np

from . import artifacts
from .errors import ConfigError, NumericalError, SwitchgridError, VerificationError
from .grid import GridSpec, build_grid, steps_for_cfl
from .harness import obstacle_check, penalty_ladder, verify_field
from .model import builtin_counterexample, builtin_pumped_storage, load_model, model_from_dict
from .oracle import counterexample_table
from .simulate import simulate_paths, summarize
from .solver import SchemeParams, extract_policy, solve

log = logging.getLogger("switchgrid")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_VERIFY = 0, 2, 3, 4

_NUM = {"type": "number"}
_VEC = {"type": "array", "items": _NUM, "minItems": 1}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["model"],
    "properties": {
        "model": {"oneOf": [{"type": "string"}, {"type": "object"}]},
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "required": ["points"],
            "properties": {
                "lo": _VEC,
                "hi": _VEC,
                "points": {"type": "array", "items": {"type": "integer"}, "minItems": 1},
                "steps": {"oneOf": [{"type": "integer"}, {"const": "cfl"}]},
            },
        },
        "penalty": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n": {"type": "integer", "minimum": 1},
                "levels": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
            },
        },
        "scheme": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "eps_obs": {"type": "number", "minimum": 0},
                "max_sweeps": {"type": "integer", "minimum": 1},
                "backend": {"enum": ["cython", "python"]},
            },
        },
        "simulation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "paths": {"type": "integer"},
                "dt_sim": {"type": "number"},
                "seed": {"type": "integer", "minimum": 0},
                "t0": _NUM,
                "x0": _VEC,
                "i0": {"type": "integer"},
                "dump_paths": {"type": "boolean"},
            },
        },
        "verify": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "field": {"type": "string"},
                "dpp_samples": {"type": "integer", "minimum": 1},
                "lookahead": {"type": "integer", "minimum": 1},
                "band_cells": {"type": "integer", "minimum": 0},
                "eta": {"type": "integer", "minimum": 1},
                "ladder": {"type": "boolean"},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dir": {"type": "string"},
                "field_levels": {"oneOf": [{"const": "all"},
                                           {"type": "array", "items": {"type": "integer"}}]},
            },
        },
    },
}

_BUILTINS = {"counterexample": builtin_counterexample, "pumped_storage": builtin_pumped_storage}


@dataclass
class RunConfig:
    spec: object
    grid: dict
    levels: list
    n: int
    scheme: SchemeParams
    simulation: dict
    verify: dict
    out_dir: str
    field_levels: object = "all"
    threads: int = 1
    raw: dict = field(default_factory=dict)

    def grid_spec(self):
        lo = self.grid.get("lo", self.spec.region[0])
        hi = self.grid.get("hi", self.spec.region[1])
        pts = self.grid.get("points")
        if pts is None:
            raise ConfigError("config needs grid.points")
        gs = GridSpec(lo, hi, pts, 1)
        steps = self.grid.get("steps", "cfl")
        return gs.with_steps(steps_for_cfl(self.spec, gs) if steps == "cfl" else steps)


def _resolve(path, base):
    return path if os.path.isabs(path) else os.path.join(base, path)


def _load_spec(model, base):
    if isinstance(model, dict):
        return model_from_dict(model)
    path = _resolve(model, base)
    if not os.path.exists(path) and model in _BUILTINS:
        return _BUILTINS[model]()
    return load_model(path)


def load_config(path, overrides=None) -> RunConfig:
    """Parse and validate a run configuration; command-line overrides win."""
    overrides = overrides or {}
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config {path}: {where}: {exc.message}") from None
    base = os.path.dirname(os.path.abspath(path))
    model = overrides.get("model") or raw["model"]
    spec = _load_spec(model, os.getcwd() if overrides.get("model") else base)

    pen = raw.get("penalty", {})
    levels = pen.get("levels")
    if levels is not None and any(b < a for a, b in zip(levels, levels[1:])):
        raise ConfigError(f"penalty levels must be sorted ascending, got {levels}")
    n = overrides.get("n")
    if n is None:
        n = pen.get("n", levels[-1] if levels else 64)
    if n < 1:
        raise ConfigError("penalty level must be a positive integer")
    levels = levels or [n]

    sim = dict(raw.get("simulation", {}))
    if overrides.get("seed") is not None:
        sim["seed"] = overrides["seed"]
    if "paths" in sim and sim["paths"] < 1:
        raise ConfigError(f"simulation.paths must be at least 1, got {sim['paths']}")
    if not 0 <= sim.get("seed", 0) < 2 ** 64:
        raise ConfigError("seed must be an unsigned 64-bit integer")

    out = raw.get("output", {})
    out_dir = overrides.get("out") or _resolve(out.get("dir", "out"), base)
    verify = dict(raw.get("verify", {}))
    if overrides.get("field"):
        verify["field"] = os.path.abspath(overrides["field"])
    elif "field" in verify:
        verify["field"] = _resolve(verify["field"], base)
    threads = overrides.get("threads")
    threads = 1 if threads is None else threads
    if threads < 1:
        raise ConfigError("--threads must be at least 1")
    return RunConfig(spec, raw.get("grid", {}), levels, n, SchemeParams(**raw.get("scheme", {})),
                     sim, verify, out_dir, out.get("field_levels", "all"), threads, raw)


def _check_out_dir(path):
    os.makedirs(path, exist_ok=True)
    if not os.access(path, os.W_OK):
        raise ConfigError(f"output directory not writable: {path}")


def _grid(cfg, n_min):
    return build_grid(cfg.spec, cfg.grid_spec(), n_min=n_min)


def _solve(cfg, n=None):
    n = n or cfg.n
    grid = _grid(cfg, n)
    return solve(cfg.spec, n, grid, cfg.scheme), grid


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_solve(cfg: RunConfig):
    _check_out_dir(cfg.out_dir)
    fld, grid = _solve(cfg)
    levels = None if cfg.field_levels == "all" else cfg.field_levels
    path = os.path.join(cfg.out_dir, "value.csv")
    artifacts.write_field(path, fld, cfg.spec, levels)
    obs = obstacle_check(fld, cfg.spec)
    print(f"solved {cfg.spec.name}: n={fld.n}, grid {list(grid.shape)}, M={grid.steps}, "
          f"dt={grid.dt:.6g}, min obstacle slack {obs.min_slack:.3g}")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_converge(cfg: RunConfig):
    _check_out_dir(cfg.out_dir)
    grid = _grid(cfg, min(cfg.levels))
    report = penalty_ladder(cfg.spec, grid, cfg.levels, cfg.scheme)
    record = dict(report.to_dict(), model=cfg.spec.name, model_hash=cfg.spec.model_hash,
                  grid=grid.gspec.to_dict())
    artifacts.write_json(os.path.join(cfg.out_dir, "convergence.json"), record)
    print(f"{'n':>6} {'max increase':>14} {'sup diff':>12} {'off-front gap':>14}")
    for r in report.rungs:
        cells = [r.max_increase, r.sup_diff, r.off_front_gap]
        txt = ["-" if v is None else f"{v:.4g}" for v in cells]
        print(f"{r.n:>6} {txt[0]:>14} {txt[1]:>12} {txt[2]:>14}")
    if not report.monotone:
        print(f"monotonicity violated: increase {report.max_increase:.3g} > {report.eps_mono:g}")
        return EXIT_VERIFY
    return EXIT_OK


def _sim_params(cfg, grid):
    sim = cfg.simulation
    spec = cfg.spec
    x0 = sim.get("x0", spec.initial)
    if x0 is None:
        raise ConfigError("simulation.x0 is required for this model")
    return {
        "t0": float(sim.get("t0", 0.0)),
        "x0": tuple(x0),
        "i0": int(sim.get("i0", 1)),
        "n_paths": int(sim.get("paths", 1000)),
        "dt_sim": float(sim.get("dt_sim", grid.dt / 4)),
        "seed": int(sim.get("seed", 0)),
    }


def cmd_simulate(cfg: RunConfig):
    _check_out_dir(cfg.out_dir)
    fld, grid = _solve(cfg)
    policy = extract_policy(fld, cfg.spec, cfg.scheme.eps_obs)
    p = _sim_params(cfg, grid)
    dump = bool(cfg.simulation.get("dump_paths", False))
    bundle = simulate_paths(cfg.spec, policy, p["t0"], p["x0"], p["i0"], p["n_paths"], p["dt_sim"],
                            p["seed"], record=dump, threads=cfg.threads)
    est = summarize(bundle, cfg.spec.domain)
    summary = dict(est.to_dict(), seeds={"seed": p["seed"], "path_ids": [0, p["n_paths"] - 1]},
                   start={"t0": p["t0"], "x0": list(p["x0"]), "i0": p["i0"]}, dt_sim=p["dt_sim"],
                   penalty_level=fld.n, model=cfg.spec.name, model_hash=cfg.spec.model_hash,
                   mean_switches=float(bundle.n_switches.mean()))
    artifacts.write_json(os.path.join(cfg.out_dir, "summary.json"), summary)
    if dump:
        artifacts.write_paths(os.path.join(cfg.out_dir, "paths.csv"), bundle)
        artifacts.write_events(os.path.join(cfg.out_dir, "events.csv"), bundle)
    se = "n/a" if est.stderr is None else f"{est.stderr:.4g}"
    print(f"payoff mean {est.mean:.6g} (stderr {se}) over {est.n_paths} paths; "
          f"violation rate {est.violation_rate:.4g}, escaped {est.n_escaped}")
    return EXIT_OK


def cmd_verify(cfg: RunConfig):
    _check_out_dir(cfg.out_dir)
    v = cfg.verify
    ladder = None
    if "field" in v:
        fld = artifacts.read_field(v["field"], cfg.spec)
    else:
        fld, grid = _solve(cfg)
        if v.get("ladder", False) and len(cfg.levels) > 1:
            ladder = penalty_ladder(cfg.spec, _grid(cfg, min(cfg.levels)), cfg.levels, cfg.scheme)
    params = SchemeParams(eps_obs=fld.meta.get("eps_obs", cfg.scheme.eps_obs),
                          max_sweeps=cfg.scheme.max_sweeps, backend=cfg.scheme.backend)
    report = verify_field(cfg.spec, fld, params, ladder=ladder,
                          dpp_samples=v.get("dpp_samples", 200), lookahead=v.get("lookahead", 4),
                          seed=int(cfg.simulation.get("seed", 0)), band_cells=v.get("band_cells", 3),
                          eta=v.get("eta", 1))
    record = dict(report.to_dict(), model=cfg.spec.name, model_hash=cfg.spec.model_hash,
                  penalty_level=fld.n)
    artifacts.write_json(os.path.join(cfg.out_dir, "verify.json"), record)
    print(report.table())
    if not report.ok:
        raise VerificationError("verification failed: " +
                                ", ".join(c.name for c in report.checks if c.status == "fail"))
    return EXIT_OK


def cmd_oracle(cfg: RunConfig):
    """Tabulate the closed-form counterexample value on the configured grid."""
    spec = cfg.spec
    if spec.name != "counterexample":
        raise ConfigError("the oracle command needs the counterexample model")
    _check_out_dir(cfg.out_dir)
    grid = _grid(cfg, None)
    T, c = spec.horizon, float(spec.config["params"]["c"])
    values, feas = counterexample_table(grid.times, grid.nodes, T, c)
    Nn, m = grid.size, grid.m
    t = np.repeat(grid.times, m * Nn)
    X = np.tile(grid.nodes, ((grid.steps + 1) * m, 1))
    reg = np.tile(np.repeat(np.arange(1, m + 1), Nn), grid.steps + 1)
    ok = feas.reshape(-1)
    header = ["t", "x_1", "x_2", "regime", "value"]
    text = artifacts._table_text(header, [t[ok], X[ok, 0], X[ok, 1], reg[ok], values.reshape(-1)[ok]],
                                 int_cols=(3,))
    path = os.path.join(cfg.out_dir, "oracle.csv")
    artifacts.atomic_write(path, text)
    print(f"wrote {int(ok.sum())} closed-form values to {path} (points outside D omitted)")
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "converge": cmd_converge, "simulate": cmd_simulate,
            "verify": cmd_verify, "oracle": cmd_oracle}


def _setup_logging():
    level = os.environ.get("SWITCHGRID_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level not in levels:
        level = "error"
    logging.basicConfig(level=levels[level], format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr, force=True)


def build_parser():
    ap = argparse.ArgumentParser(prog="switchgrid", description=__doc__.split("\n")[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="run configuration (JSON)")
    ap.add_argument("--out", help="output directory (overrides output.dir)")
    ap.add_argument("--threads", type=int, help="worker cap for Monte Carlo")
    ap.add_argument("--seed", type=int, help="simulation seed (overrides simulation.seed)")
    ap.add_argument("--model", help="model file (overrides the config's model)")
    ap.add_argument("--n", type=int, help="penalty level for solve/simulate/verify")
    ap.add_argument("--field", help="verify a previously written value CSV")
    return ap


def main(argv=None):
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, {"out": args.out, "threads": args.threads, "seed": args.seed,
                                        "model": args.model, "n": args.n, "field": args.field})
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except VerificationError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_VERIFY
    except SwitchgridError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
