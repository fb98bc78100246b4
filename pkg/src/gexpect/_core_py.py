"""Pure-numpy reference kernels.

Mirrors `_core.pyx` operation for operation; expression order is kept
identical so both backends produce bit-equal results.
"""

import numpy as np


def march_explicit_1d(values, a_lower, a_upper, dt, dx, n_steps, store_steps, out):
    """March `values` (n_rows, n_x) backward `n_steps` explicit steps in place.

    Interior nodes pick up dt * g(second difference) with
    g(gamma) = 0.5*(a_upper*gamma) for gamma > 0 else 0.5*(a_lower*gamma);
    boundary nodes are frozen (second difference forced to zero).
    Snapshots are copied into out[j] after step store_steps[j].
    """
    dx2 = dx * dx
    ns = 0
    n_store = len(store_steps)
    for step in range(1, n_steps + 1):
        gamma = (values[:, 2:] - 2.0 * values[:, 1:-1] + values[:, :-2]) / dx2
        g = np.where(gamma > 0.0, 0.5 * (a_upper * gamma), 0.5 * (a_lower * gamma))
        values[:, 1:-1] += dt * g
        if ns < n_store and store_steps[ns] == step:
            out[ns] = values
            ns += 1


def bilinear_read(times, x0, dx, field, qt, qx, out):
    """Bilinear read of field (n_t, n_x) at query points (qt, qx).

    Times may be non-uniform; space is uniform from x0 with step dx.
    Queries outside the grid are clamped to it.
    """
    nt = times.shape[0]
    nx = field.shape[1]
    it = np.searchsorted(times, qt, side="right") - 1
    np.clip(it, 0, nt - 2, out=it)
    wt = (qt - times[it]) / (times[it + 1] - times[it])
    np.clip(wt, 0.0, 1.0, out=wt)
    xi = (qx - x0) / dx
    np.clip(xi, 0.0, nx - 1.0, out=xi)
    ix = np.minimum(xi.astype(np.intp), nx - 2)
    fx = xi - ix
    v0 = field[it, ix] * (1.0 - fx) + field[it, ix + 1] * fx
    v1 = field[it + 1, ix] * (1.0 - fx) + field[it + 1, ix + 1] * fx
    out[:] = v0 * (1.0 - wt) + v1 * wt
