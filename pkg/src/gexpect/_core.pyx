# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops: explicit backward march and bilinear field reads.

Semantics (and floating-point expression order) match `_core_py.py` exactly.
"""

import numpy as np


cdef inline Py_ssize_t _bracket(double[::1] times, double t, Py_ssize_t nt) nogil:
    # largest index i with times[i] <= t (searchsorted side="right" minus one),
    # clipped to [0, nt - 2]
    cdef Py_ssize_t lo = 0, hi = nt, mid
    while lo < hi:
        mid = (lo + hi) // 2
        if times[mid] <= t:
            lo = mid + 1
        else:
            hi = mid
    lo -= 1
    if lo < 0:
        lo = 0
    elif lo > nt - 2:
        lo = nt - 2
    return lo


def march_explicit_1d(double[:, ::1] values, double a_lower, double a_upper,
                      double dt, double dx, Py_ssize_t n_steps,
                      Py_ssize_t[::1] store_steps, double[:, :, ::1] out):
    cdef Py_ssize_t n_rows = values.shape[0]
    cdef Py_ssize_t n_x = values.shape[1]
    cdef Py_ssize_t n_store = store_steps.shape[0]
    cdef double dx2 = dx * dx
    cdef Py_ssize_t step, r, i, ns = 0
    cdef double left, cur, gamma, g
    with nogil:
        for step in range(1, n_steps + 1):
            for r in range(n_rows):
                left = values[r, 0]
                for i in range(1, n_x - 1):
                    cur = values[r, i]
                    gamma = (values[r, i + 1] - 2.0 * cur + left) / dx2
                    if gamma > 0.0:
                        g = 0.5 * (a_upper * gamma)
                    else:
                        g = 0.5 * (a_lower * gamma)
                    values[r, i] = cur + dt * g
                    left = cur
            if ns < n_store and store_steps[ns] == step:
                out[ns, :, :] = values
                ns += 1


def bilinear_read(double[::1] times, double x0, double dx,
                  double[:, ::1] field, double[::1] qt, double[::1] qx,
                  double[::1] out):
    cdef Py_ssize_t nt = times.shape[0]
    cdef Py_ssize_t nx = field.shape[1]
    cdef Py_ssize_t nq = qt.shape[0]
    cdef Py_ssize_t k, it, ix
    cdef double t, xi, wt, fx, v0, v1
    with nogil:
        for k in range(nq):
            t = qt[k]
            it = _bracket(times, t, nt)
            wt = (t - times[it]) / (times[it + 1] - times[it])
            if wt < 0.0:
                wt = 0.0
            elif wt > 1.0:
                wt = 1.0
            xi = (qx[k] - x0) / dx
            if xi < 0.0:
                xi = 0.0
            elif xi > nx - 1.0:
                xi = nx - 1.0
            ix = <Py_ssize_t>xi
            if ix > nx - 2:
                ix = nx - 2
            fx = xi - ix
            v0 = field[it, ix] * (1.0 - fx) + field[it, ix + 1] * fx
            v1 = field[it + 1, ix] * (1.0 - fx) + field[it + 1, ix + 1] * fx
            out[k] = v0 * (1.0 - wt) + v1 * wt
