"""Monotone explicit solver for the band-worst-case heat equation.

Backward parabolic problem on [0, 1] x R (d = 1):

    -du/dt - g(d2u/dx2) = 0,    u(1, x) = phi(x),

with g the band form from `nonlinearity`.  The scheme is the explicit Euler
march with central second differences,

    u_k = u_{k+1} + dt * g(D2 u_{k+1}),

which is monotone under the step bound dt <= dx^2 / a_upper and therefore
converges to the (viscosity) solution on refinement.  At the spatial
truncation +-x_max the second difference is forced to zero, so the equation
degenerates to du/dt = 0 there (Lipschitz payoffs are asymptotically affine).

Payoffs on several monitoring dates are solved interval by interval: the
last-interval solution is restarted at each earlier date with the diagonal
re-read v(t_i, ..., x, x) as new terminal data.  Parameter grids coincide
with the spatial grid, so the diagonal is a node-exact read.  Solved fields
store every time step when no parameter axes are present and a strided
subset otherwise; reads interpolate multilinearly.
"""

import math
import struct
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from . import kernels
from .errors import NumericalError
from .nonlinearity import VolBand, eval_g_scalar
from .payoff import PayoffSpec

_MAGIC = b"GXVF1\n"


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Uniform space grid with CFL-derived time steps.

    n_x must be odd so x = 0 is a node.  cfl_fraction scales the monotone
    step bound dx^2 / a_upper; values above 1 would break monotonicity and
    are rejected.  param_time_slices bounds the stored interior time slices
    of parameter-carrying intervals; memory_limit guards total field bytes.
    """

    n_x: int = 401
    x_max: float = 8.0
    cfl_fraction: float = 0.8
    boundary: str = "linear"
    param_time_slices: int = 32
    memory_limit: int = 1_500_000_000

    def __post_init__(self):
        if self.n_x < 5 or self.n_x % 2 == 0:
            raise ValueError("n_x must be odd and >= 5")
        if self.x_max <= 0:
            raise ValueError("x_max must be positive")
        if not 0.0 < self.cfl_fraction <= 1.0:
            raise NumericalError("cfl_fraction must lie in (0, 1] "
                                 "(explicit scheme monotonicity)")
        if self.boundary != "linear":
            raise ValueError(f"unknown boundary rule {self.boundary!r}")

    @property
    def dx(self) -> float:
        return 2.0 * self.x_max / (self.n_x - 1)

    def x_nodes(self) -> np.ndarray:
        return np.linspace(-self.x_max, self.x_max, self.n_x)

    def steps_for(self, band: VolBand, t0: float, t1: float) -> int:
        dt_max = self.cfl_fraction * self.dx ** 2 / band.upper_scalar
        return max(1, int(math.ceil((t1 - t0) / dt_max - 1e-12)))

    def refined(self) -> "SpaceTimeGrid":
        return SpaceTimeGrid(2 * self.n_x - 1, self.x_max, self.cfl_fraction,
                             self.boundary, self.param_time_slices,
                             self.memory_limit)

    @classmethod
    def default_for(cls, band: VolBand, n_x: int = 401) -> "SpaceTimeGrid":
        # eight terminal standard deviations of the widest diffusion
        return cls(n_x=n_x, x_max=8.0 * max(1.0, math.sqrt(band.upper_scalar)))


@dataclass
class IntervalField:
    """Solution slab of one monitoring interval.

    values has shape (*param_shape, n_times, n_x) with times ascending;
    times[0] == t_start and times[-1] == t_end exactly.
    """

    t_start: float
    t_end: float
    times: np.ndarray
    values: np.ndarray
    dt: float

    @property
    def param_dim(self) -> int:
        return self.values.ndim - 2


def _store_steps(n_steps: int, param_dim: int, interior: int) -> np.ndarray:
    if param_dim == 0:
        return np.arange(1, n_steps + 1, dtype=np.intp)
    slices = interior if param_dim == 1 else max(2, interior // 4)
    marks = np.unique(np.round(np.linspace(0, n_steps, min(n_steps, slices) + 1)))
    return marks[marks > 0].astype(np.intp)


def solve_interval(terminal_data, band: VolBand, grid: SpaceTimeGrid,
                   interval) -> IntervalField:
    """March terminal_data (..., n_x) backward over interval = (s, t)."""
    if band.d != 1:
        raise ValueError("the PDE solver is implemented for d = 1")
    t0, t1 = float(interval[0]), float(interval[1])
    if not t0 < t1:
        raise ValueError("interval must satisfy s < t")
    data = np.asarray(terminal_data, dtype=float)
    if data.shape[-1] != grid.n_x:
        raise ValueError("terminal data does not match the spatial grid")
    if not np.isfinite(data).all():
        raise NumericalError("terminal data contains non-finite values")

    n_steps = grid.steps_for(band, t0, t1)
    dt = (t1 - t0) / n_steps
    param_shape = data.shape[:-1]
    steps = _store_steps(n_steps, len(param_shape), grid.param_time_slices)
    n_stored = len(steps) + 1

    rows = int(np.prod(param_shape, dtype=np.int64)) if param_shape else 1
    need = (n_stored * rows * grid.n_x * 8) * 3 + rows * grid.n_x * 8
    if need > grid.memory_limit:
        raise NumericalError(
            f"field storage would need ~{need / 1e9:.2f} GB "
            f"(> limit {grid.memory_limit / 1e9:.2f} GB); "
            "coarsen n_x or param_time_slices")

    work = np.ascontiguousarray(data.reshape(rows, grid.n_x))
    stored = np.empty((n_stored, rows, grid.n_x))
    stored[0] = work
    kernels.march_explicit_1d(work, band.lower_scalar, band.upper_scalar,
                              dt, grid.dx, n_steps, steps, stored[1:])

    # march order is descending time: stored[j] sits at t1 - steps[j-1]*dt
    times = np.empty(n_stored)
    times[0] = t1
    times[1:] = t1 - steps * dt
    times = times[::-1].copy()
    times[0], times[-1] = t0, t1
    values = stored[::-1].swapaxes(0, 1).reshape(*param_shape, n_stored, grid.n_x)
    return IntervalField(t0, t1, times, np.ascontiguousarray(values), dt)


class ValueField:
    """Nested solved field: one IntervalField per monitoring interval.

    Interval i (0-based) covers [T_i, T_{i+1}) with T = (0, t_1, ..., 1) and
    carries i parameter axes (the monitored history).  Reads interpolate
    linearly in every axis and clamp to the truncated domain, reporting
    clamped queries.
    """

    def __init__(self, intervals, x_nodes, payoff=None, band=None, grid=None):
        self.intervals = list(intervals)
        self.x = np.asarray(x_nodes, dtype=float)
        self.payoff = payoff
        self.band = band
        self.grid = grid
        self.dx = float(self.x[1] - self.x[0])
        self.x_max = float(self.x[-1])
        self.boundaries = np.array([self.intervals[0].t_start]
                                   + [iv.t_end for iv in self.intervals])
        self._derived = {}
        self._interp = {}

    @property
    def n_intervals(self) -> int:
        return len(self.intervals)

    def interval_index(self, t: float) -> int:
        inner = self.boundaries[1:-1]
        return int(np.searchsorted(inner, t, side="right"))

    def _array(self, i: int, kind: str) -> np.ndarray:
        if kind == "value":
            return self.intervals[i].values
        key = (i, kind)
        if key not in self._derived:
            v = self.intervals[i].values
            dx = self.dx
            if kind == "gradient":
                out = np.empty_like(v)
                out[..., 1:-1] = (v[..., 2:] - v[..., :-2]) / (2.0 * dx)
                out[..., 0] = (v[..., 1] - v[..., 0]) / dx
                out[..., -1] = (v[..., -1] - v[..., -2]) / dx
            elif kind == "hessian":
                out = np.zeros_like(v)
                out[..., 1:-1] = (v[..., 2:] - 2.0 * v[..., 1:-1]
                                  + v[..., :-2]) / (dx * dx)
            else:
                raise ValueError(f"unknown field kind {kind!r}")
            self._derived[key] = np.ascontiguousarray(out)
        return self._derived[key]

    def _interpolator(self, i: int, kind: str):
        key = (i, kind)
        if key not in self._interp:
            iv = self.intervals[i]
            pts = (self.x,) * iv.param_dim + (iv.times, self.x)
            self._interp[key] = RegularGridInterpolator(
                pts, self._array(i, kind), method="linear",
                bounds_error=False, fill_value=None)
        return self._interp[key]

    def read_along(self, t, x, history=None, kind="value"):
        """Vectorized field read at (t_k, history_k, x_k).

        t, x: (K,); history: (K, >= n-1) monitored values (columns beyond an
        interval's parameter count are ignored).  Returns (values, clamped)
        with clamped flagging queries outside the spatial truncation.
        """
        t = np.asarray(t, dtype=float).ravel()
        x = np.asarray(x, dtype=float).ravel()
        if t.shape != x.shape:
            raise ValueError("t and x must have matching shapes")
        out = np.empty(t.shape[0])
        clamped = np.abs(x) > self.x_max + 1e-12
        inner = self.boundaries[1:-1]
        idx = np.searchsorted(inner, t, side="right")
        for i in range(self.n_intervals):
            sel = idx == i
            if not sel.any():
                continue
            iv = self.intervals[i]
            qt = np.clip(t[sel], iv.t_start, iv.t_end)
            qx = x[sel]
            if iv.param_dim == 0:
                out[sel] = kernels.bilinear_read(
                    iv.times, -self.x_max, self.dx,
                    self._array(i, kind), qt, np.asarray(qx, dtype=float))
            else:
                if history is None:
                    raise ValueError("history required for nested intervals")
                hist = np.asarray(history, dtype=float)[sel, :iv.param_dim]
                clamped[sel] |= (np.abs(hist) > self.x_max + 1e-12).any(axis=1)
                cols = [np.clip(hist[:, j], -self.x_max, self.x_max)
                        for j in range(iv.param_dim)]
                cols += [qt, np.clip(qx, -self.x_max, self.x_max)]
                out[sel] = self._interpolator(i, kind)(np.column_stack(cols))
        return out, clamped

    def value(self, t: float, history=(), x: float = 0.0,
              kind: str = "value") -> float:
        hist = None
        if len(history):
            hist = np.asarray(history, dtype=float).reshape(1, -1)
        vals, _ = self.read_along([t], [x], hist, kind)
        return float(vals[0])

    def terminal_slice(self, i: int) -> np.ndarray:
        return self.intervals[i].values[..., -1, :]

    def initial_slice(self, i: int) -> np.ndarray:
        return self.intervals[i].values[..., 0, :]

    def stitching_defect(self) -> float:
        """Max mismatch between interval ends and stitched diagonals (0 by
        construction; a plumbing check)."""
        worst = 0.0
        for i in range(self.n_intervals - 1):
            diag = np.diagonal(self.initial_slice(i + 1), axis1=-2, axis2=-1)
            worst = max(worst, float(np.abs(self.terminal_slice(i) - diag).max()))
        return worst

    def space_lipschitz(self) -> float:
        """Largest discrete space-Lipschitz constant over stored slices."""
        worst = 0.0
        for iv in self.intervals:
            d = np.abs(np.diff(iv.values, axis=-1)).max()
            worst = max(worst, float(d) / self.dx)
        return worst

    def sup_norm(self) -> float:
        return max(float(np.abs(iv.values).max()) for iv in self.intervals)

    # -- serialization ------------------------------------------------------
    def to_csv(self, path):
        """Columnar dump: t, x1..x_{n-1}, x, v, dv, d2v."""
        import csv

        n_par = self.n_intervals - 1
        header = (["t"] + [f"x{j + 1}" for j in range(n_par)]
                  + ["x", "v", "dv", "d2v"])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for i, iv in enumerate(self.intervals):
                v = self._array(i, "value")
                dv = self._array(i, "gradient")
                d2v = self._array(i, "hessian")
                pd = iv.param_dim
                for pidx in np.ndindex(*v.shape[:pd]):
                    pvals = [repr(self.x[j]) for j in pidx]
                    pad = [""] * (n_par - pd)
                    for k, tk in enumerate(iv.times):
                        for m in range(len(self.x)):
                            w.writerow([repr(float(tk))] + pvals + pad
                                       + [repr(self.x[m]),
                                          repr(float(v[pidx + (k, m)])),
                                          repr(float(dv[pidx + (k, m)])),
                                          repr(float(d2v[pidx + (k, m)]))])

    def to_binary(self, path):
        """Compact dump: magic, dims, little-endian doubles."""
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<IId", len(self.intervals), len(self.x),
                                 self.x_max))
            for iv in self.intervals:
                fh.write(struct.pack("<ddII", iv.t_start, iv.t_end,
                                     iv.param_dim, len(iv.times)))
                fh.write(iv.times.astype("<f8").tobytes())
                fh.write(np.ascontiguousarray(iv.values).astype("<f8").tobytes())

    @classmethod
    def from_binary(cls, path) -> "ValueField":
        with open(path, "rb") as fh:
            if fh.read(len(_MAGIC)) != _MAGIC:
                raise ValueError("not a field dump")
            n_iv, n_x, x_max = struct.unpack("<IId", fh.read(16))
            x = np.linspace(-x_max, x_max, n_x)
            intervals = []
            for _ in range(n_iv):
                t0, t1, pd, n_t = struct.unpack("<ddII", fh.read(24))
                times = np.frombuffer(fh.read(8 * n_t), dtype="<f8").astype(float)
                count = n_x ** pd * n_t * n_x
                vals = np.frombuffer(fh.read(8 * count), dtype="<f8").astype(float)
                vals = vals.reshape((n_x,) * pd + (n_t, n_x))
                dt = times[1] - times[0] if n_t > 1 else t1 - t0
                intervals.append(IntervalField(t0, t1, times, vals, dt))
        return cls(intervals, x)


def conditional_expectation(payoff: PayoffSpec, band: VolBand,
                            grid: SpaceTimeGrid) -> ValueField:
    """Solve the nested field so conditional values are readable anywhere.

    Marches the last interval first, restarting each earlier one with the
    node-exact diagonal of its successor.  Rejects more than three
    monitoring dates (parameter storage grows as n_x^(n-1)).
    """
    if payoff.n > 3:
        raise ValueError("at most three monitoring dates are supported")
    if band.d != 1:
        raise ValueError("conditional solves are implemented for d = 1")
    x = grid.x_nodes()
    n = payoff.n
    open_axes = [x.reshape((1,) * j + (-1,) + (1,) * (n - 1 - j))
                 for j in range(n)]
    terminal = np.asarray(payoff.expr(*open_axes), dtype=float)
    terminal = np.broadcast_to(terminal, (grid.n_x,) * n).copy()

    times = (0.0,) + payoff.times
    intervals = [None] * n
    for i in range(n, 0, -1):
        intervals[i - 1] = solve_interval(terminal, band, grid,
                                          (times[i - 1], times[i]))
        if i > 1:
            first = intervals[i - 1].values[..., 0, :]
            terminal = np.ascontiguousarray(
                np.diagonal(first, axis1=-2, axis2=-1))
    return ValueField(intervals, x, payoff=payoff, band=band, grid=grid)


def g_expectation(payoff: PayoffSpec, band: VolBand, grid: SpaceTimeGrid,
                  field: ValueField | None = None) -> float:
    """Worst-case expectation: the solved field read at (t=0, x=0)."""
    if field is None:
        field = conditional_expectation(payoff, band, grid)
    return field.value(0.0, (), 0.0)


def derivatives(field: ValueField):
    """First/second difference fields per interval (central inside, one-sided
    gradient at the truncation, hessian zero there per the boundary rule)."""
    grads = [field._array(i, "gradient") for i in range(field.n_intervals)]
    hessians = [field._array(i, "hessian") for i in range(field.n_intervals)]
    return grads, hessians


@dataclass
class RefineRow:
    n_x: int
    value: float
    diff: float | None = None
    order: float | None = None


def refine_study(payoff: PayoffSpec, band: VolBand, grids) -> list:
    """Values and empirical order across a chain of dx-halving grids."""
    grids = list(grids)
    if len(grids) < 3:
        raise ValueError("need at least three grids")
    for g1, g2 in zip(grids, grids[1:]):
        ratio = g2.dx / g1.dx
        if not 0.45 <= ratio <= 0.55:
            raise ValueError("grids must halve dx")
    rows = [RefineRow(g.n_x, g_expectation(payoff, band, g)) for g in grids]
    for prev, row in zip(rows, rows[1:]):
        row.diff = row.value - prev.value
    for r0, r1 in zip(rows[1:], rows[2:]):
        if r0.diff and r1.diff and abs(r1.diff) > 0:
            r1.order = math.log2(abs(r0.diff / r1.diff))
    return rows


def scheme_nonlinearity(gamma, band: VolBand):
    """The per-node update form used by the march (d=1 closed form)."""
    return eval_g_scalar(gamma, band.lower_scalar, band.upper_scalar)
