"""NumPy fallback for the compiled kernels (same arithmetic order)."""
import numpy as np

from .errors import ObstacleError


def explicit_step(v_next, weights, nbr, fdt, out):
    m, S, _ = weights.shape
    rows = np.arange(m)[:, None]
    acc = weights[:, 0, :] * v_next[rows, nbr[0]]
    for s in range(1, S):
        acc = acc + weights[:, s, :] * v_next[rows, nbr[s]]
    out[...] = acc + fdt


def project_obstacle(v, cost, max_sweeps, eps):
    m, N = v.shape
    active = np.ones(N, dtype=bool)
    used = 0
    for sweep in range(1, max_sweeps + 1):
        if not np.any(active):
            break
        used = sweep
        changed = np.zeros(N, dtype=bool)
        for i in range(m):
            best = np.full(N, -1e308)
            for j in range(m):
                if j != i:
                    best = np.maximum(best, v[j] - cost[i, j])
            changed |= (best - v[i]) > eps
            v[i] = np.where(active & (best > v[i]), best, v[i])
        active &= changed
    if np.any(active):
        node = int(np.argmax(active))
        raise ObstacleError(
            f"switching projection did not stabilise within {max_sweeps} sweeps at node {node}")
    return used
