# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the backward sweep.

Arithmetic order matches ``_pykernels`` exactly so both backends produce
bit-identical fields.
"""
from switchgrid.errors import ObstacleError


def explicit_step(const double[:, ::1] v_next, const double[:, :, ::1] weights,
                  const long long[:, ::1] nbr, const double[:, ::1] fdt,
                  double[:, ::1] out):
    cdef Py_ssize_t m = weights.shape[0]
    cdef Py_ssize_t S = weights.shape[1]
    cdef Py_ssize_t N = weights.shape[2]
    cdef Py_ssize_t i, s, p
    cdef double acc
    with nogil:
        for i in range(m):
            for p in range(N):
                acc = weights[i, 0, p] * v_next[i, nbr[0, p]]
                for s in range(1, S):
                    acc = acc + weights[i, s, p] * v_next[i, nbr[s, p]]
                out[i, p] = acc + fdt[i, p]


def project_obstacle(double[:, ::1] v, const double[:, :, ::1] cost,
                     int max_sweeps, double eps):
    """Gauss-Seidel sweeps ``v_i <- max(v_i, max_{j != i} v_j - c_ij)`` per node.

    Returns the largest number of sweeps any node needed (the last one
    confirms stability).  Raises ObstacleError if a node still moves on
    sweep ``max_sweeps``.
    """
    cdef Py_ssize_t m = v.shape[0]
    cdef Py_ssize_t N = v.shape[1]
    cdef Py_ssize_t i, j, p
    cdef int sweep, used = 0, bad = 0
    cdef Py_ssize_t bad_node = -1
    cdef double best, cand
    cdef bint changed
    with nogil:
        for p in range(N):
            sweep = 0
            changed = True
            while changed and sweep < max_sweeps:
                sweep += 1
                changed = False
                for i in range(m):
                    best = -1e308
                    for j in range(m):
                        if j != i:
                            cand = v[j, p] - cost[i, j, p]
                            if cand > best:
                                best = cand
                    if best - v[i, p] > eps:
                        changed = True
                    if best > v[i, p]:
                        v[i, p] = best
            if changed and bad == 0:
                bad = 1
                bad_node = p
            if sweep > used:
                used = sweep
    if bad:
        raise ObstacleError(f"switching projection did not stabilise within {max_sweeps} sweeps at node {bad_node}")
    return used
