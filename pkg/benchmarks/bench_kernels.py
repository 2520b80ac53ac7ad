"""Compare the compiled and NumPy kernel backends on full solves and single kernels.

    python benchmarks/bench_kernels.py [--repeat 3] [--sizes 51x76 101x151 201x301]
"""
import argparse
import time

import numpy as np

from switchgrid import GridSpec, SchemeParams, build_grid, builtin_counterexample, solve, steps_for_cfl
from switchgrid.kernels import available_backends, get_backend
from switchgrid.solver import prepare


def _best(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _grid(spec, points):
    gs = GridSpec((-1.0, -0.5), (1.0, 2.0), points, 1)
    return build_grid(spec, gs.with_steps(steps_for_cfl(spec, gs)), n_min=64)


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--sizes", nargs="+", default=["51x76", "101x151", "201x301"])
    args = ap.parse_args()
    backends = available_backends()
    spec = builtin_counterexample()

    print(f"backends: {', '.join(backends)}")
    print(f"{'grid':>10} {'steps':>6} " + " ".join(f"{b + ' [s]':>12}" for b in backends) + f" {'speedup':>8}")
    for size in args.sizes:
        points = tuple(int(p) for p in size.split("x"))
        grid = _grid(spec, points)
        times = {b: _best(lambda b=b: solve(spec, 64, grid, SchemeParams(backend=b)), args.repeat)
                 for b in backends}
        speed = times["python"] / times["cython"] if "cython" in times else float("nan")
        print(f"{size:>10} {grid.steps:>6} " + " ".join(f"{times[b]:>12.4f}" for b in backends)
              + f" {speed:>8.2f}")

    # kernels in isolation on the largest grid
    grid = _grid(spec, tuple(int(p) for p in args.sizes[-1].split("x")))
    print(f"\nsingle kernels on {args.sizes[-1]} (best of {args.repeat}, 20 calls each)")
    for b in backends:
        disc = prepare(spec, 64, grid, SchemeParams(backend=b))
        kern = get_backend(b)
        v = np.ascontiguousarray(np.random.default_rng(0).normal(size=(spec.m, grid.size)))
        out = np.empty_like(v)

        def step():
            for _ in range(20):
                kern.explicit_step(v, disc.weights, disc.stencil.nbr, disc.fdt, out)

        def project():
            for _ in range(20):
                kern.project_obstacle(v.copy(), disc.cost, disc.max_sweeps, disc.eps_obs)

        print(f"  {b:<8} explicit_step {_best(step, args.repeat):.4f}s   "
              f"project_obstacle {_best(project, args.repeat):.4f}s")


if __name__ == "__main__":
    main()
