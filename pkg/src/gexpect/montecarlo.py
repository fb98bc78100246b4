"""Monte Carlo under the mutually singular measure family of a volatility band.

Each admissible measure is realized in strong form: a deterministic
piecewise-constant control alpha(t) inside the (floored) band drives

    X_{k+1} = X_k + sqrt(alpha(t_k)) dW_k,

so the realized quadratic variation is alpha(t) dt exactly by construction.
Suprema over the uncountable family are approximated by finite control
families; every estimate here is therefore a statistical LOWER bound of the
corresponding band value, and callers pair it with the PDE reference.

Randomness contract: path draws come in fixed 4096-path blocks seeded by
(seed, block index), so a path's increments are a pure function of
(seed, path index) - stable under path-count growth and parallel scheduling.
"""

import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .nonlinearity import VolBand, as_symmetric, sym_floor
from .payoff import PayoffSpec

PATH_BLOCK = 4096


def derive_seed(seed: int, *tags) -> int:
    """Stable sub-seed for an estimator role (keeps independent quantities on
    distinct noise)."""
    text = "gexpect:" + ":".join(str(t) for t in tags) + f":{int(seed)}"
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big") >> 1


def _block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((int(seed), int(block))))


def iter_increment_blocks(seed: int, n_paths: int, n_steps: int, dt: float,
                          d: int = 1):
    """Yield (lo, hi, dW) blocks of N(0, dt) increments.

    Full blocks are always drawn before truncation, so path i's numbers do
    not depend on n_paths.
    """
    scale = math.sqrt(dt)
    n_blocks = (n_paths + PATH_BLOCK - 1) // PATH_BLOCK
    for b in range(n_blocks):
        lo = b * PATH_BLOCK
        hi = min(lo + PATH_BLOCK, n_paths)
        shape = (PATH_BLOCK, n_steps) if d == 1 else (PATH_BLOCK, n_steps, d)
        dw = _block_rng(seed, b).standard_normal(shape) * scale
        yield lo, hi, dw[:hi - lo]


def map_controls(fn, controls, degree: int = 1):
    """Apply fn to each control; results in submission order (deterministic
    regardless of completion order)."""
    if degree is None or degree <= 1 or len(controls) <= 1:
        return [fn(c) for c in controls]
    with ThreadPoolExecutor(max_workers=min(degree, len(controls))) as pool:
        return list(pool.map(fn, controls))


class ControlProcess:
    """Piecewise-constant volatility control on [0, 1].

    breakpoints: 0 = s_0 < ... < s_m = 1; values: per-piece diffusion, scalar
    (d=1) or (d, d) symmetric matrices; floor: the strictly positive constant
    c making the effective lower bound max(c I, a_lower).
    """

    def __init__(self, breakpoints, values, floor: float = 1e-6, label: str = ""):
        self.breakpoints = np.asarray(breakpoints, dtype=float)
        vals = np.asarray(values, dtype=float)
        if vals.ndim == 1:
            self.values = vals
            self.d = 1
        elif vals.ndim == 3 and vals.shape[1] == vals.shape[2]:
            self.values = np.stack([as_symmetric(v) for v in vals])
            self.d = vals.shape[1]
        else:
            raise ValueError("values must be (m,) scalars or (m, d, d) matrices")
        if floor <= 0:
            raise ValueError("floor must be strictly positive")
        self.floor = float(floor)
        self.label = label or f"control-{len(self.breakpoints) - 1}pc"
        bp = self.breakpoints
        if bp.ndim != 1 or len(bp) != len(self.values) + 1:
            raise ValueError("need one more breakpoint than control pieces")
        if abs(bp[0]) > 1e-12 or abs(bp[-1] - 1.0) > 1e-12:
            raise ValueError("breakpoints must start at 0 and end at 1")
        if np.any(np.diff(bp) <= 0):
            raise ValueError("breakpoints must be strictly increasing")

    @classmethod
    def constant(cls, value, floor: float = 1e-6, label: str = ""):
        value = np.asarray(value, dtype=float)
        vals = value[None] if value.ndim else np.array([float(value)])
        if not label:
            label = (f"const-{float(value):.6g}" if value.ndim == 0
                     else "const-matrix")
        return cls([0.0, 1.0], vals, floor=floor, label=label)

    def validate(self, band: VolBand):
        if self.d != band.d:
            raise ValueError("control dimension does not match the band")
        if self.d == 1:
            lo = max(band.lower_scalar, self.floor)
            up = band.upper_scalar
            if np.any(self.values < lo - 1e-12) or np.any(self.values > up + 1e-12):
                raise ValueError(
                    f"control {self.label!r} leaves the floored band "
                    f"[{lo}, {up}]")
        else:
            lifted = sym_floor(band.a_lower, self.floor)
            for v in self.values:
                if np.linalg.eigvalsh(v - lifted).min() < -1e-10:
                    raise ValueError(f"control {self.label!r} below floored bound")
                if np.linalg.eigvalsh(band.a_upper - v).min() < -1e-10:
                    raise ValueError(f"control {self.label!r} above upper bound")

    def step_values(self, step_times) -> np.ndarray:
        """Control value at each (left-endpoint) step time."""
        idx = np.searchsorted(self.breakpoints, step_times, side="right") - 1
        idx = np.clip(idx, 0, len(self.values) - 1)
        return self.values[idx]

    def __repr__(self):
        return f"ControlProcess({self.label!r})"


@dataclass
class ControlFamily:
    """Finite stand-in for the band's measure family (shared floor)."""

    band: VolBand
    controls: list
    floor: float = 1e-6

    def __post_init__(self):
        if not self.controls:
            raise ValueError("control family must be non-empty")
        labels = [c.label for c in self.controls]
        if len(set(labels)) != len(labels):
            raise ValueError("control labels must be unique")
        for c in self.controls:
            if abs(c.floor - self.floor) > 0:
                raise ValueError("all controls must share the family floor")
            c.validate(self.band)

    def __iter__(self):
        return iter(self.controls)

    def __len__(self):
        return len(self.controls)

    @classmethod
    def constants(cls, band: VolBand, count: int, floor: float = 1e-6):
        """Evenly spaced constant controls spanning the floored band (d=1)."""
        lo = max(band.lower_scalar, floor)
        up = band.upper_scalar
        levels = np.linspace(lo, up, count) if count > 1 else np.array([up])
        controls = [ControlProcess.constant(v, floor=floor,
                                            label=f"const-{v:.6g}")
                    for v in levels]
        return cls(band, controls, floor)

    @classmethod
    def with_random_piecewise(cls, band: VolBand, count: int, pieces: int,
                              seed: int, base: "ControlFamily | None" = None,
                              floor: float = 1e-6):
        """Append randomly sampled piecewise-constant controls (fixed once
        drawn; not adaptive)."""
        floor = base.floor if base is not None else floor
        lo = max(band.lower_scalar, floor)
        up = band.upper_scalar
        rng = np.random.default_rng(
            np.random.SeedSequence((int(seed), 0x9C0FFEE)))
        controls = list(base.controls) if base is not None else []
        bp = np.linspace(0.0, 1.0, pieces + 1)
        for j in range(count):
            vals = rng.uniform(lo, up, size=pieces)
            controls.append(ControlProcess(
                bp, vals, floor=floor, label=f"random-{j}"))
        return cls(band, controls, floor)


def write_family(family: ControlFamily, path):
    """Flat key-value description: breakpoints and values per control."""
    lines = [f"floor = {family.floor!r}", f"count = {len(family)}"]
    for i, c in enumerate(family, start=1):
        lines.append(f"control.{i}.label = {c.label}")
        lines.append(f"control.{i}.breakpoints = "
                     + ",".join(repr(float(b)) for b in c.breakpoints))
        if c.d != 1:
            raise ValueError("family files support scalar controls")
        lines.append(f"control.{i}.values = "
                     + ",".join(repr(float(v)) for v in c.values))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_family(path, band: VolBand) -> ControlFamily:
    kv = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, val = line.partition("=")
            kv[key.strip()] = val.strip()
    floor = float(kv.pop("floor"))
    count = int(kv.pop("count"))
    controls = []
    for i in range(1, count + 1):
        label = kv.pop(f"control.{i}.label")
        bp = [float(v) for v in kv.pop(f"control.{i}.breakpoints").split(",")]
        vals = [float(v) for v in kv.pop(f"control.{i}.values").split(",")]
        controls.append(ControlProcess(bp, vals, floor=floor, label=label))
    if kv:
        raise ValueError(f"unknown keys in family file: {sorted(kv)}")
    return ControlFamily(band, controls, floor)


@dataclass
class PathBundle:
    """Simulated paths of one control: increments, states, analytic QV.

    alpha/qv are deterministic functions of time for piecewise-constant
    controls and are stored once (not per path); qv increments equal
    alpha * dt exactly by construction.
    """

    control: ControlProcess
    seed: int
    times: np.ndarray        # (M+1,)
    increments: np.ndarray   # (N, M) driving Brownian increments
    paths: np.ndarray        # (N, M+1)
    alpha: np.ndarray        # (M,) per-step control value (d=1)
    qv: np.ndarray           # (M+1,) realized quadratic variation

    @property
    def n_paths(self) -> int:
        return self.paths.shape[0]

    @property
    def n_steps(self) -> int:
        return self.increments.shape[1]

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def monitor_indices(self, monitor_times) -> np.ndarray:
        m = self.n_steps
        idx = np.round(np.asarray(monitor_times, dtype=float) * m).astype(int)
        if np.abs(np.asarray(monitor_times) * m - idx).max() > 1e-9 * m:
            raise ValueError("monitoring times must lie on the path grid")
        return idx

    def monitor_values(self, monitor_times) -> np.ndarray:
        return self.paths[:, self.monitor_indices(monitor_times)]

    def to_csv(self, path, max_paths: int | None = None):
        import csv

        if self.paths.ndim != 2:
            raise ValueError("CSV export is d=1 only")
        n = self.n_paths if max_paths is None else min(max_paths, self.n_paths)
        alpha_t = np.append(self.alpha, self.alpha[-1])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path_id", "t", "X", "qv", "alpha"])
            for p in range(n):
                for k, t in enumerate(self.times):
                    w.writerow([p, repr(float(t)), repr(float(self.paths[p, k])),
                                repr(float(self.qv[k])), repr(float(alpha_t[k]))])


def simulate(control: ControlProcess, n_paths: int, n_steps: int,
             seed: int, band: VolBand | None = None) -> PathBundle:
    """Materialize a full bundle (use the block iterator for huge runs)."""
    if n_paths < 1 or n_steps < 1:
        raise ValueError("need n_paths >= 1 and n_steps >= 1")
    if band is not None:
        control.validate(band)
    times = np.linspace(0.0, 1.0, n_steps + 1)
    dt = 1.0 / n_steps
    grid_bp = np.round(control.breakpoints * n_steps)
    if np.abs(control.breakpoints * n_steps - grid_bp).max() > 1e-9 * n_steps:
        raise ValueError("control breakpoints must lie on the path grid")
    if control.d != 1:
        return _simulate_multi(control, n_paths, n_steps, seed, times, dt)
    alpha = control.step_values(times[:-1])
    vol = np.sqrt(alpha)
    dW = np.empty((n_paths, n_steps))
    for lo, hi, blk in iter_increment_blocks(seed, n_paths, n_steps, dt):
        dW[lo:hi] = blk
    paths = np.empty((n_paths, n_steps + 1))
    paths[:, 0] = 0.0
    np.cumsum(vol * dW, axis=1, out=paths[:, 1:])
    qv = np.empty(n_steps + 1)
    qv[0] = 0.0
    np.cumsum(alpha * dt, out=qv[1:])
    return PathBundle(control, seed, times, dW, paths, alpha, qv)


def _simulate_multi(control, n_paths, n_steps, seed, times, dt):
    d = control.d
    alpha = control.step_values(times[:-1])          # (M, d, d)
    roots = np.empty_like(alpha)
    for k, a in enumerate(alpha):
        w, v = np.linalg.eigh(a)
        roots[k] = (v * np.sqrt(np.maximum(w, 0.0))) @ v.T
    dW = np.empty((n_paths, n_steps, d))
    for lo, hi, blk in iter_increment_blocks(seed, n_paths, n_steps, dt, d):
        dW[lo:hi] = blk
    incr = np.einsum("kij,nkj->nki", roots, dW)
    paths = np.concatenate([np.zeros((n_paths, 1, d)),
                            np.cumsum(incr, axis=1)], axis=1)
    qv = np.concatenate([np.zeros((1, d, d)),
                         np.cumsum(alpha * dt, axis=0)], axis=0)
    return PathBundle(control, seed, times, dW, paths, alpha, qv)


@dataclass
class DualRow:
    label: str
    mean: float
    stderr: float
    n_paths: int


@dataclass
class DualResult:
    value: float
    stderr: float
    argmax: ControlProcess
    table: list

    def row(self, label: str) -> DualRow:
        return next(r for r in self.table if r.label == label)


def dual_value(payoff: PayoffSpec, family: ControlFamily, n_paths: int,
               n_steps: int, seed: int) -> DualResult:
    """Max over the family of the plain Monte Carlo payoff mean.

    A statistical lower bound of the band value; increments are drawn once
    per block and shared by every control (common random numbers).
    """
    if family.band.d != 1:
        raise ValueError("dual values of cylinder payoffs are d=1 only")
    mon = np.round(np.asarray(payoff.times) * n_steps).astype(int)
    if np.abs(np.asarray(payoff.times) * n_steps - mon).max() > 1e-9 * n_steps:
        raise ValueError("monitoring times must lie on the path grid")
    dt = 1.0 / n_steps
    step_times = np.arange(n_steps) * dt
    vols = [np.sqrt(c.step_values(step_times)) for c in family]
    for c in family:
        bp = np.round(c.breakpoints * n_steps)
        if np.abs(c.breakpoints * n_steps - bp).max() > 1e-9 * n_steps:
            raise ValueError(f"control {c.label!r} breakpoints off the grid")
    sums = np.zeros(len(family))
    sq_sums = np.zeros(len(family))
    for lo, hi, dw in iter_increment_blocks(seed, n_paths, n_steps, dt):
        for j, vol in enumerate(vols):
            scaled = vol * dw
            np.cumsum(scaled, axis=1, out=scaled)
            monitored = np.where(mon[None, :] > 0,
                                 scaled[:, np.maximum(mon - 1, 0)], 0.0)
            xi = payoff.evaluate(monitored)
            sums[j] += xi.sum()
            sq_sums[j] += (xi * xi).sum()
    means = sums / n_paths
    variances = np.maximum(sq_sums / n_paths - means ** 2, 0.0)
    stderrs = np.sqrt(variances / max(n_paths - 1, 1))
    table = [DualRow(c.label, float(m), float(se), n_paths)
             for c, m, se in zip(family, means, stderrs)]
    best = int(np.argmax(means))
    return DualResult(float(means[best]), float(stderrs[best]),
                      family.controls[best], table)


def conditional_supremum(payoff: PayoffSpec, field, bundle: PathBundle,
                         t: float):
    """Worst-case conditional value along each path at time t.

    Reads the solved field (the dual/dynamic-programming identity justifies
    substituting it for the essential supremum); at t = 1 the payoff is read
    off the path directly.  Returns (values, clamped) per path.
    """
    times = bundle.times
    k = int(np.round(t * bundle.n_steps))
    if abs(times[k] - t) > 1e-9:
        raise ValueError("t must lie on the bundle grid")
    if k == bundle.n_steps:
        return payoff.evaluate(bundle.monitor_values(payoff.times)), \
            np.zeros(bundle.n_paths, dtype=bool)
    hist = None
    if payoff.n > 1:
        hist = bundle.monitor_values(payoff.times[:-1])
    qt = np.full(bundle.n_paths, times[k])
    return field.read_along(qt, bundle.paths[:, k], hist)


@dataclass
class NormEstimate:
    value: float
    stderr: float
    per_control: list   # (label, value, stderr)


def _power_mean(samples: np.ndarray, p: float):
    m = float(np.mean(samples))
    se = float(np.std(samples, ddof=1) / math.sqrt(len(samples)))
    value = m ** (1.0 / p) if m > 0 else 0.0
    dse = se / (p * m ** (1.0 - 1.0 / p)) if m > 0 else se
    return value, dse


def lp_norm_detail(payoff: PayoffSpec, p: float, family: ControlFamily,
                   field, n_paths: int, n_steps: int, seed: int,
                   t_nodes: int = 17) -> NormEstimate:
    """sup over the family of E[ sup_t (conditional |payoff|)^p ]^(1/p).

    `field` must be solved for payoff.absolute(); the time sup runs over a
    t_nodes-point grid joined with the monitoring dates (lower bound of the
    continuous-time sup, as documented).
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    abs_payoff = payoff.absolute()
    if field.payoff is not None and field.payoff.expr != abs_payoff.expr:
        raise ValueError("field must be solved for the absolute payoff")
    grid_idx = np.unique(np.concatenate([
        np.round(np.linspace(0, n_steps, t_nodes)).astype(int),
        np.round(np.asarray(payoff.times) * n_steps).astype(int)]))
    rows = []
    for control in family:
        bundle = simulate(control, n_paths, n_steps, seed)
        sup_vals = np.zeros(bundle.n_paths)
        for k in grid_idx:
            vals, _ = conditional_supremum(abs_payoff, field, bundle,
                                           bundle.times[k])
            np.maximum(sup_vals, np.abs(vals), out=sup_vals)
        v, se = _power_mean(sup_vals ** p, p)
        rows.append((control.label, v, se))
    best = max(range(len(rows)), key=lambda j: rows[j][1])
    return NormEstimate(rows[best][1], rows[best][2], rows)


def lp_norm(payoff, p, family, field, n_paths, n_steps, seed,
            t_nodes: int = 17) -> float:
    return lp_norm_detail(payoff, p, family, field, n_paths, n_steps, seed,
                          t_nodes).value


def hp_norm_detail(h_per_bundle, bundles, p: float) -> NormEstimate:
    """sup over bundles of E[(∫ alpha H^2 dt)^{p/2}]^{1/p} (left Riemann)."""
    rows = []
    for h, bundle in zip(h_per_bundle, bundles, strict=True):
        if bundle.alpha.ndim != 1:
            raise ValueError("integrand norms are d=1 only")
        h = np.asarray(h, dtype=float)
        if h.shape != (bundle.n_paths, bundle.n_steps):
            raise ValueError("integrand samples misaligned with bundle steps")
        integral = ((bundle.alpha * h * h) * bundle.dt).sum(axis=1)
        v, se = _power_mean(integral ** (p / 2.0), p)
        rows.append((bundle.control.label, v, se))
    best = max(range(len(rows)), key=lambda j: rows[j][1])
    return NormEstimate(rows[best][1], rows[best][2], rows)


def hp_norm(h_per_bundle, bundles, p: float) -> float:
    return hp_norm_detail(h_per_bundle, bundles, p).value


def sp_norm_detail(y_per_bundle, bundles, p: float) -> NormEstimate:
    """sup over bundles of E[sup_t |Y_t|^p]^{1/p} on the bundle grid."""
    rows = []
    for y, bundle in zip(y_per_bundle, bundles, strict=True):
        y = np.asarray(y, dtype=float)
        if y.shape != (bundle.n_paths, bundle.n_steps + 1):
            raise ValueError("process samples misaligned with bundle grid")
        sup = np.abs(y).max(axis=1)
        v, se = _power_mean(sup ** p, p)
        rows.append((bundle.control.label, v, se))
    best = max(range(len(rows)), key=lambda j: rows[j][1])
    return NormEstimate(rows[best][1], rows[best][2], rows)


def sp_norm(y_per_bundle, bundles, p: float) -> float:
    return sp_norm_detail(y_per_bundle, bundles, p).value


@dataclass
class QvReport:
    max_abs_residual: float
    rms_terminal: float
    dt: float


def qv_identity_check(bundle: PathBundle) -> QvReport:
    """Analytic QV against its pathwise reconstruction X^2 - 2∫X dX.

    The discrete stochastic integral uses left endpoints, so the
    reconstruction telescopes to the realized sum of squared increments and
    the residual measures realized-vs-analytic QV (O(dt^1/2) in RMS).
    """
    if bundle.paths.ndim != 2:
        raise ValueError("qv identity check is d=1 only")
    dx = np.diff(bundle.paths, axis=1)
    ito = np.cumsum(bundle.paths[:, :-1] * dx, axis=1)
    recon = bundle.paths[:, 1:] ** 2 - 2.0 * ito
    resid = bundle.qv[1:][None, :] - recon
    return QvReport(float(np.abs(resid).max()),
                    float(np.sqrt(np.mean(resid[:, -1] ** 2))),
                    bundle.dt)
