"""Monte Carlo engines for the killed and drifted processes.

Two engines: walk-on-spheres for the isotropic stable process on ball
unions (exact per-sphere exit law, sampled from the Beta representation of
the radial overshoot) and jump-Euler for any family and drift.  Stable
increments are exact in law via positive-stable subordination of a
Gaussian vector (Kanter's sampler).  Randomness is drawn from
counter-based Philox streams keyed by (experiment seed, walk index), so a
walk's path never depends on how work is sharded.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np
from numba import njit
from scipy import integrate

from . import special
from .geometry import Domain, Grid, delta
from .kernels import DriftField, GreenGrid, green_ball_exact
from .spectral import ProcessSpec, levy_density, sphere_surface

_TINY = 1e-300


def stream(seed: int, index: int) -> np.random.Generator:
    """Counter-based stream for one walk; keying by walk index makes the
    draw sequence independent of shard boundaries."""
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, index & 0xFFFFFFFFFFFFFFFF],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def stable_ball_exit_moment(d: int, alpha: float, R: float, x) -> float:
    """E^x tau for the stable process in B(0,R):
    C(d,alpha) (R^2-|x|^2)^{alpha/2}."""
    x = np.asarray(x, float)
    c = special.gamma(d / 2) / (2.0 ** alpha * special.gamma(1 + alpha / 2)
                                * special.gamma((d + alpha) / 2))
    return float(c * max(R * R - (x * x).sum(), 0.0) ** (alpha / 2))


# ---------------------------------------------------------------------------
# Exact stable increments (Kanter subordination)


@njit(cache=True, nogil=True)
def _fill_increments(U, alphas, modes, scales, d, out):  # pragma: no cover
    """Transform uniform draws (B, W) into stable increments (B, d).

    Per component, by mode: 0 = Kanter positive-stable subordination of
    Box-Muller normals (any alpha); 1 = planar Cauchy via its closed
    radial inverse CDF (alpha = 1, d = 2); 2 = Cauchy as a normal ratio
    (alpha = 1, d > 2).  The column layout per step is fixed by
    (alphas, d), so a walk's path does not depend on draw-block sizes.
    """
    B = U.shape[0]
    K = alphas.shape[0]
    eps = 1e-12
    for i in range(B):
        for q in range(d):
            out[i, q] = 0.0
        col = 0
        for k in range(K):
            mode = modes[k]
            if mode == 1:
                u1 = U[i, col]
                u2 = U[i, col + 1]
                col += 2
                if u1 > 1.0 - eps:
                    u1 = 1.0 - eps
                c = 1.0 / (1.0 - u1)
                rad = scales[k] * math.sqrt(c * c - 1.0)
                ang = 2.0 * math.pi * u2
                out[i, 0] += rad * math.cos(ang)
                out[i, 1] += rad * math.sin(ang)
                continue
            if mode == 2:
                # Box-Muller normals; the first is the Cauchy denominator
                npairs = (d + 2) // 2
                den = 1.0
                idx = 0
                for p in range(npairs):
                    ua = U[i, col]
                    ub = U[i, col + 1]
                    col += 2
                    rr = math.sqrt(-2.0 * math.log(ua if ua > _TINY else _TINY))
                    z0 = rr * math.cos(2.0 * math.pi * ub)
                    z1 = rr * math.sin(2.0 * math.pi * ub)
                    if p == 0:
                        den = abs(z0)
                        if den < 1e-30:
                            den = 1e-30
                        if idx < d:
                            out[i, idx] += scales[k] * z1 / den
                            idx += 1
                    else:
                        if idx < d:
                            out[i, idx] += scales[k] * z0 / den
                            idx += 1
                        if idx < d:
                            out[i, idx] += scales[k] * z1 / den
                            idx += 1
                continue
            rho = alphas[k] / 2.0
            u1 = U[i, col]
            u2 = U[i, col + 1]
            col += 2
            if u1 < eps:
                u1 = eps
            if u1 > 1.0 - eps:
                u1 = 1.0 - eps
            th = u1 * math.pi
            w = -math.log(u2 if u2 > _TINY else _TINY)
            lb = (rho * math.log(math.sin(rho * th))
                  + (1.0 - rho) * math.log(math.sin((1.0 - rho) * th))
                  - math.log(math.sin(th))) / (1.0 - rho)
            s = math.exp((lb - math.log(w)) * (1.0 - rho) / rho)
            fac = scales[k] * math.sqrt(2.0 * s)
            j = 0
            while j < d:
                ua = U[i, col]
                ub = U[i, col + 1]
                col += 2
                rr = math.sqrt(-2.0 * math.log(ua if ua > _TINY else _TINY))
                out[i, j] += fac * rr * math.cos(2.0 * math.pi * ub)
                j += 1
                if j < d:
                    out[i, j] += fac * rr * math.sin(2.0 * math.pi * ub)
                    j += 1


@njit(cache=True)
def _walk_scan(x0, incr, drift_dt, centers, radii, pos_out):  # pragma: no cover
    """Advance X_{k+1} = X_k + drift*dt + incr_k until the union of balls
    is left; fills pos_out with X_1.. and returns the exit row or -1."""
    B = incr.shape[0]
    d = incr.shape[1]
    x = x0.copy()
    for k in range(B):
        for q in range(d):
            x[q] += incr[k, q] + drift_dt[q]
            pos_out[k, q] = x[q]
        inside = False
        for b in range(centers.shape[0]):
            s2 = 0.0
            for q in range(d):
                dd = x[q] - centers[b, q]
                s2 += dd * dd
            if s2 < radii[b] * radii[b]:
                inside = True
                break
        if not inside:
            return k
    return -1


@njit(cache=True)
def _tally_counts(positions, n_pos, origin, shape_arr, strides, flat_map,
                  spacing, counts):  # pragma: no cover - jitted
    for k in range(n_pos):
        fid = 0
        ok = True
        for q in range(positions.shape[1]):
            idx = int(math.floor(positions[k, q] / spacing + 0.5)) - origin[q]
            if idx < 0 or idx >= shape_arr[q]:
                ok = False
                break
            fid += idx * strides[q]
        if ok:
            cid = flat_map[fid]
            if cid >= 0:
                counts[cid] += 1


def _component_layout(spec: ProcessSpec) -> tuple[np.ndarray, np.ndarray, int]:
    """(alphas, sampler modes, uniforms per step) for the exact sampler."""
    if not spec.is_power_law:
        raise ValueError(
            "exact increment sampling supports the stable families only; "
            "use the jump-Euler path with small-jump Gaussian compensation")
    alphas = np.array([a for a, _w, _A in spec.components])
    d = spec.d
    modes = np.empty(alphas.size, dtype=np.int64)
    width = 0
    for k, a in enumerate(alphas):
        if a == 1.0 and d == 2:
            modes[k] = 1
            width += 2
        elif a == 1.0:
            modes[k] = 2
            width += 2 * ((d + 2) // 2)
        else:
            modes[k] = 0
            width += 2 + 2 * ((d + 1) // 2)
    return alphas, modes, width


def _component_scales(spec: ProcessSpec, t: float) -> np.ndarray:
    return np.array([(w * t) ** (1.0 / a) for a, w, _A in spec.components])


def sample_increments(spec: ProcessSpec, t: float, rng: np.random.Generator,
                      n: int) -> np.ndarray:
    """n independent increments of the process over time t, exact in law."""
    if t <= 0:
        raise ValueError("time step must be positive")
    alphas, modes, width = _component_layout(spec)
    scales = _component_scales(spec, t)
    U = rng.random((n, width))
    out = np.empty((n, spec.d))
    _fill_increments(U, alphas, modes, scales, spec.d, out)
    return out


def sample_increment(spec: ProcessSpec, t: float,
                     rng: np.random.Generator) -> np.ndarray:
    return sample_increments(spec, t, rng, 1)[0]


# ---------------------------------------------------------------------------
# Relativistic fallback: compound Poisson + Gaussian compensation


@lru_cache(maxsize=32)
def _compensated_tables(spec: ProcessSpec, r_min: float):
    d = spec.d
    sig = sphere_surface(d)

    def tail_intensity(s):
        return float(levy_density(spec, s) * s ** (d - 1))

    r_cut = r_min
    lam, _ = integrate.quad(tail_intensity, r_min, np.inf, limit=400)
    lam *= sig
    # inverse-CDF table for the jump radius on [r_min, r_cut]
    while True:
        r_cut *= 2.0
        t, _ = integrate.quad(tail_intensity, r_cut, np.inf, limit=400)
        if t * sig < 1e-12 * lam:
            break
    grid = np.geomspace(r_min, r_cut, 1024)
    dens = np.array([tail_intensity(s) for s in grid]) * sig
    cdf = integrate.cumulative_trapezoid(dens, grid, initial=0.0)
    cdf /= cdf[-1]
    var_coord, _ = integrate.quad(
        lambda s: float(levy_density(spec, s) * s ** (d + 1)), 0.0, r_min,
        limit=400)
    var_coord *= sig / d
    return lam, grid, cdf, var_coord


def _compensated_increments(spec: ProcessSpec, t: float,
                            rng: np.random.Generator, n: int,
                            r_min: float) -> np.ndarray:
    lam, grid, cdf, var_coord = _compensated_tables(spec, r_min)
    d = spec.d
    out = rng.standard_normal((n, d)) * math.sqrt(var_coord * t)
    counts = rng.poisson(lam * t, size=n)
    total = int(counts.sum())
    if total:
        radii = np.interp(rng.random(total), cdf, grid)
        dirs = rng.standard_normal((total, d))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        jumps = radii[:, None] * dirs
        idx = np.repeat(np.arange(n), counts)
        np.add.at(out, idx, jumps)
    return out


# ---------------------------------------------------------------------------
# Exit records and the mergeable moment estimator


@dataclass
class ExitRecord:
    tau: float
    exit_position: np.ndarray
    steps: int
    forced: bool = False            # WoS boundary-cutoff surrogate exit
    tau_surrogate: bool = False     # WoS per-sphere time draws are matched
                                    # in mean/variance, not in joint law
    occupation: np.ndarray | None = None   # seconds per grid cell
    grid: Grid | None = None


_DYADIC_BITS = 1074


def _dyadic(x: float) -> int:
    p, q = float(x).as_integer_ratio()
    return p << (_DYADIC_BITS - (q.bit_length() - 1))


class Estimator:
    """Streaming mean/second-moment accumulator with exact merge.

    Sums are kept as exact dyadic integers, so merging shards is
    associative and commutative bit-for-bit and pooled moments equal
    single-pass moments exactly.
    """

    __slots__ = ("n", "_s1", "_s2")

    def __init__(self, n: int = 0, s1: int = 0, s2: int = 0):
        self.n = n
        self._s1 = s1
        self._s2 = s2

    @classmethod
    def from_samples(cls, xs) -> "Estimator":
        s1 = 0
        s2 = 0
        n = 0
        for x in np.asarray(xs, dtype=float).ravel().tolist():
            if not math.isfinite(x):
                raise ValueError("estimator samples must be finite")
            s1 += _dyadic(x)
            s2 += _dyadic(x * x)
            n += 1
        return cls(n, s1, s2)

    def merge(self, other: "Estimator") -> "Estimator":
        return Estimator(self.n + other.n, self._s1 + other._s1,
                         self._s2 + other._s2)

    def __eq__(self, other) -> bool:
        return (isinstance(other, Estimator) and self.n == other.n
                and self._s1 == other._s1 and self._s2 == other._s2)

    @property
    def mean(self) -> float:
        if self.n == 0:
            raise ValueError("empty estimator")
        return float(Fraction(self._s1, self.n) / (1 << _DYADIC_BITS))

    @property
    def second_moment(self) -> float:
        if self.n == 0:
            raise ValueError("empty estimator")
        return float(Fraction(self._s2, self.n) / (1 << _DYADIC_BITS))

    @property
    def variance(self) -> float:
        if self.n < 2:
            return 0.0
        m = self.mean
        return max(self.second_moment - m * m, 0.0) * self.n / (self.n - 1)

    @property
    def std_error(self) -> float:
        return math.sqrt(self.variance / self.n) if self.n else math.inf

    def ci95(self) -> tuple[float, float]:
        h = 1.959963984540054 * self.std_error
        m = self.mean
        return m - h, m + h


# ---------------------------------------------------------------------------
# Jump-Euler engine


def _drift_constant_vector(b: DriftField | None, d: int):
    if b is None or b.kind == "zero":
        return np.zeros(d)
    if b.kind == "constant":
        return np.asarray(b.vector, float)
    return None


def _expected_steps(spec: ProcessSpec, domain: Domain, x0, dt: float) -> int:
    """Rough path length estimate used to size draw blocks only."""
    if spec.family == "isotropic-stable" and len(domain.balls) == 1:
        bl = domain.balls[0]
        tau = stable_ball_exit_moment(
            spec.d, spec.alpha, bl.radius,
            np.asarray(x0, float) - np.asarray(bl.center, float))
        return max(int(tau / dt), 8)
    return max(int(delta(domain, x0) / dt ** (1.0 / 2.0)), 64)


@dataclass
class EulerBatch:
    tau: np.ndarray
    exit_positions: np.ndarray
    steps: np.ndarray
    tally_sum: np.ndarray | None = None     # sum over walks of cell seconds
    tally_sumsq: np.ndarray | None = None
    visits: np.ndarray | None = None
    untallied_time: float = 0.0             # inside-D seconds missing a cell


def euler_batch(spec: ProcessSpec, domain: Domain, b: DriftField | None,
                x0, dt: float, n: int, seed: int, *, walk_offset: int = 0,
                grid: Grid | None = None, max_steps: int = 5_000_000,
                r_min: float | None = None) -> EulerBatch:
    """Run n jump-Euler walks keyed (seed, walk_offset + i)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    x0 = np.asarray(x0, float)
    if delta(domain, x0) <= 0:
        raise ValueError("start point must lie inside the domain")
    if b is not None and b.sup_bound is None:
        raise ValueError("drift needs a finite sup bound on the domain")
    d = spec.d
    const_drift = _drift_constant_vector(b, d)
    centers = domain.centers()
    radii = domain.radii()

    exact = spec.is_power_law
    if exact:
        alphas, modes, width = _component_layout(spec)
        scales = _component_scales(spec, dt)
    else:
        r_min = r_min if r_min is not None else 0.05 * domain.r0
    block = min(max(int(1.3 * _expected_steps(spec, domain, x0, dt)), 256),
                1 << 16)

    taus = np.empty(n)
    exits = np.empty((n, d))
    steps = np.empty(n, dtype=np.int64)
    tally_sum = tally_sumsq = visits = None
    lookup = None
    if grid is not None:
        origin, shape, strides, flat = grid.lattice_lookup()
        lookup = (origin.astype(np.int64), shape.astype(np.int64),
                  strides.astype(np.int64), flat)
        tally_sum = np.zeros(grid.size)
        tally_sumsq = np.zeros(grid.size)
        visits = np.zeros(grid.size, dtype=np.int64)
    untallied = 0.0

    incr = np.empty((block, d))
    pos = np.empty((block, d))
    counts = np.empty(0, dtype=np.int64)
    for i in range(n):
        rng = stream(seed, walk_offset + i)
        x = x0.copy()
        done = 0
        if grid is not None:
            counts = np.zeros(grid.size, dtype=np.int64)
            _tally_counts(x[None, :], 1, *lookup, grid.spacing, counts)
        while True:
            if exact:
                U = rng.random((block, width))
                _fill_increments(U, alphas, modes, scales, d, incr)
            else:
                incr = _compensated_increments(spec, dt, rng, block, r_min)
            if const_drift is not None:
                k = _walk_scan(x, incr, const_drift * dt, centers, radii, pos)
            else:
                k = -1
                for j in range(block):
                    x_next = x + b(x) * dt + incr[j]
                    pos[j] = x_next
                    x = x_next
                    if delta(domain, x_next) <= 0.0:
                        k = j
                        break
            n_in = k if k >= 0 else block
            if grid is not None and n_in > 0:
                _tally_counts(pos, n_in, *lookup, grid.spacing, counts)
            if k >= 0:
                steps[i] = done + k + 1
                taus[i] = steps[i] * dt
                exits[i] = pos[k]
                break
            done += block
            if const_drift is not None:
                x = pos[-1].copy()
            if done >= max_steps:
                raise RuntimeError(
                    f"walk {walk_offset + i} exceeded {max_steps} steps")
        if grid is not None:
            sec = counts * dt
            tally_sum += sec
            tally_sumsq += sec * sec
            visits += counts
            untallied += taus[i] - sec.sum()
    return EulerBatch(taus, exits, steps, tally_sum, tally_sumsq, visits,
                      untallied)


def euler_exit(spec: ProcessSpec, domain: Domain, b: DriftField | None, x0,
               dt: float, rng_or_seed, *, grid: Grid | None = None,
               max_steps: int = 5_000_000) -> ExitRecord:
    """One jump-Euler walk; accepts a seed (keyed stream 0) or a Generator
    for ad-hoc use."""
    if isinstance(rng_or_seed, np.random.Generator):
        # wrap: run a single manual walk off the supplied generator
        seed_mode = False
        rng = rng_or_seed
    else:
        seed_mode = True
    if seed_mode:
        batch = euler_batch(spec, domain, b, x0, dt, 1, int(rng_or_seed),
                            grid=grid, max_steps=max_steps)
        occ = batch.tally_sum if grid is not None else None
        return ExitRecord(float(batch.tau[0]), batch.exit_positions[0],
                          int(batch.steps[0]), occupation=occ, grid=grid)
    # generator path: sequential stepping, exact same update rule
    x = np.asarray(x0, float).copy()
    if delta(domain, x) <= 0:
        raise ValueError("start point must lie inside the domain")
    drift = b if b is not None else DriftField.zero(spec.d)
    occ = np.zeros(grid.size) if grid is not None else None
    lookup = grid.lattice_lookup() if grid is not None else None
    k = 0
    while True:
        if grid is not None:
            cnt = np.zeros(grid.size, dtype=np.int64)
            _tally_counts(x[None, :], 1, lookup[0].astype(np.int64),
                          lookup[1].astype(np.int64),
                          lookup[2].astype(np.int64), lookup[3],
                          grid.spacing, cnt)
            occ += cnt * dt
        x = x + drift(x) * dt + sample_increment(spec, dt, rng)
        k += 1
        if delta(domain, x) <= 0:
            return ExitRecord(k * dt, x, k, occupation=occ, grid=grid)
        if k >= max_steps:
            raise RuntimeError(f"walk exceeded {max_steps} steps")


# ---------------------------------------------------------------------------
# Walk-on-spheres engine


@lru_cache(maxsize=64)
def _wos_time_moments(d: int, alpha: float) -> tuple[float, float]:
    """(m1, m2) of the exit time of the unit ball from its center."""
    m1 = stable_ball_exit_moment(d, alpha, 1.0, np.zeros(d))

    def f(s):
        y = np.zeros(d)
        y[0] = s
        g = green_ball_exact(alpha, d, 1.0, np.zeros(d), y)
        return g * stable_ball_exit_moment(d, alpha, 1.0, y) * s ** (d - 1)

    val, _ = integrate.quad(f, 0.0, 1.0, limit=200, points=[1e-9])
    m2 = 2.0 * sphere_surface(d) * val
    return m1, m2


def wos_exit(alpha: float, domain: Domain, x0, eps_b: float,
             rng: np.random.Generator, *, with_time: bool = True,
             max_steps: int = 100_000) -> ExitRecord:
    """Walk-on-spheres exit sample for the isotropic alpha-stable process.

    Each move samples the exact exit position of the largest inscribed
    ball centered at the current point (radial factor R/sqrt(w) with
    w ~ Beta(alpha/2, 1-alpha/2), uniform direction).  Exit times are
    drawn per sphere from a Gamma surrogate matched to the first two
    moments of the true ball exit time: the total mean is exact, the
    pathwise law is not (tau_surrogate flag).
    """
    if not 0.0 < alpha < 2.0:
        raise ValueError("alpha must lie in (0, 2)")
    d = domain.dim
    x = np.asarray(x0, float).copy()
    if delta(domain, x) <= 0:
        raise ValueError("start point must lie inside the domain")
    if eps_b <= 0 or eps_b >= domain.r0:
        raise ValueError("boundary cutoff must satisfy 0 < eps_b << r0")
    shape = scale = 0.0
    if with_time:
        m1, m2 = _wos_time_moments(d, alpha)
        var = max(m2 - m1 * m1, 1e-12)
        shape = m1 * m1 / var
        scale = var / m1
    a_beta, b_beta = alpha / 2.0, 1.0 - alpha / 2.0

    tau = 0.0
    steps = 0
    while True:
        rho = delta(domain, x)
        if rho < eps_b:
            return ExitRecord(tau, x, steps, forced=True,
                              tau_surrogate=with_time)
        w = rng.beta(a_beta, b_beta)
        dirv = rng.standard_normal(d)
        dirv /= np.linalg.norm(dirv)
        if with_time:
            tau += rho ** alpha * rng.gamma(shape, scale)
        x = x + (rho / math.sqrt(w)) * dirv
        steps += 1
        if delta(domain, x) <= 0.0:
            return ExitRecord(tau, x, steps, tau_surrogate=with_time)
        if steps >= max_steps:
            raise RuntimeError(f"WoS exceeded {max_steps} steps")


def wos_batch(alpha: float, domain: Domain, x0, eps_b: float, n: int,
              seed: int, *, walk_offset: int = 0,
              with_time: bool = True):
    """n WoS walks on per-walk streams; returns (records as arrays)."""
    taus = np.empty(n)
    exits = np.empty((n, domain.dim))
    steps = np.empty(n, dtype=np.int64)
    forced = np.zeros(n, dtype=bool)
    for i in range(n):
        rec = wos_exit(alpha, domain, x0, eps_b,
                       stream(seed, walk_offset + i), with_time=with_time)
        taus[i] = rec.tau
        exits[i] = rec.exit_position
        steps[i] = rec.steps
        forced[i] = rec.forced
    return taus, exits, steps, forced


# ---------------------------------------------------------------------------
# Estimators over walks


def exit_moment(spec: ProcessSpec, domain: Domain, b: DriftField | None, x0,
                n: int, engine: str, seed: int, *, dt: float = 1e-3,
                eps_b: float | None = None, shards: int = 1) -> Estimator:
    """Mean exit time with CI; shard merge is exact and sharding does not
    change the result."""
    bounds = np.linspace(0, n, shards + 1).astype(int)
    est = Estimator()
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        if hi == lo:
            continue
        if engine == "euler":
            batch = euler_batch(spec, domain, b, x0, dt, hi - lo, seed,
                                walk_offset=lo)
            taus = batch.tau
        elif engine == "wos":
            if spec.family != "isotropic-stable":
                raise ValueError("WoS engine requires the stable family")
            if b is not None and b.kind != "zero":
                raise ValueError("WoS engine is driftless")
            eb = eps_b if eps_b is not None else 1e-4 * domain.r0
            taus, _, _, _ = wos_batch(spec.alpha, domain, x0, eb, hi - lo,
                                      seed, walk_offset=lo)
        else:
            raise ValueError(f"unknown engine {engine!r}")
        est = est.merge(Estimator.from_samples(taus))
    return est


def estimate_green_mc(spec: ProcessSpec, domain: Domain,
                      b: DriftField | None, x0, grid: Grid, n: int,
                      seed: int, *, engine: str = "euler", dt: float = 1e-3,
                      shards: int = 1) -> GreenGrid:
    """Occupation-density estimate of G(x0, .) on the grid cells.

    Euler engine only: WoS has no unbiased per-cell occupation profile at
    desk scale, so requesting it is an error rather than a silent bias.
    """
    if engine != "euler":
        raise ValueError(
            "estimate_green_mc supports engine='euler' only; WoS occupation "
            "profiles are biased and intentionally not offered")
    x0 = np.asarray(x0, float)
    bounds = np.linspace(0, n, shards + 1).astype(int)
    s1 = np.zeros(grid.size)
    s2 = np.zeros(grid.size)
    visits = np.zeros(grid.size, dtype=np.int64)
    tau_est = Estimator()
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        if hi == lo:
            continue
        batch = euler_batch(spec, domain, b, x0, dt, hi - lo, seed,
                            walk_offset=lo, grid=grid)
        s1 += batch.tally_sum
        s2 += batch.tally_sumsq
        visits += batch.visits
        tau_est = tau_est.merge(Estimator.from_samples(batch.tau))
    vol = grid.cell_volume
    mean_sec = s1 / n
    values = mean_sec / vol
    var = np.maximum(s2 / n - mean_sec ** 2, 0.0)
    sigma = np.sqrt(var / n) / vol
    gg = GreenGrid(domain, x0[None, :], grid, values[None, :],
                   sigma[None, :], band=grid.spacing,
                   visits=visits[None, :])
    gg.exit_time = tau_est  # summary statistic for the mass identity
    return gg


@dataclass(frozen=True)
class ExteriorPartition:
    """Radial annuli about a center: sets [e_i, e_{i+1}) plus a final
    unbounded set [e_last, inf)."""

    center: tuple[float, ...]
    edges: tuple[float, ...]

    @property
    def n_sets(self) -> int:
        return len(self.edges)

    def classify(self, z: np.ndarray) -> np.ndarray:
        r = np.linalg.norm(np.asarray(z, float)
                           - np.asarray(self.center)[None, :], axis=1)
        return np.searchsorted(np.asarray(self.edges), r, side="right") - 1


@dataclass
class ExitHistogram:
    partition: ExteriorPartition
    counts: np.ndarray
    n: int
    freqs: np.ndarray
    ci95: np.ndarray               # multinomial half-widths
    shell_widths: tuple[float, ...]
    shell_masses: np.ndarray       # fraction within each width of the boundary
    forced_fraction: float
    below_first_edge: int


def exit_histogram(spec: ProcessSpec, domain: Domain, b: DriftField | None,
                   x0, partition: ExteriorPartition, n: int, seed: int, *,
                   engine: str = "wos", dt: float = 1e-3,
                   eps_b: float | None = None,
                   shell_widths=(0.04, 0.02, 0.01)) -> ExitHistogram:
    """Exit-position frequencies over an exterior partition, plus the mass
    of thin boundary shells (which must vanish as the width shrinks)."""
    if engine == "wos":
        if spec.family != "isotropic-stable":
            raise ValueError("WoS engine requires the stable family")
        if b is not None and b.kind != "zero":
            raise ValueError("WoS engine is driftless")
        eb = eps_b if eps_b is not None else 1e-4 * domain.r0
        _, exits, _, forced = wos_batch(spec.alpha, domain, x0, eb, n, seed)
    elif engine == "euler":
        batch = euler_batch(spec, domain, b, x0, dt, n, seed)
        exits = batch.exit_positions
        forced = np.zeros(n, dtype=bool)
    else:
        raise ValueError(f"unknown engine {engine!r}")

    free = ~forced
    idx = partition.classify(exits[free])
    counts = np.bincount(idx[idx >= 0], minlength=partition.n_sets)
    below = int((idx < 0).sum())
    m = int(free.sum())
    freqs = counts / m
    ci = 1.959963984540054 * np.sqrt(np.maximum(freqs * (1 - freqs), 0) / m)

    dist_out = (np.linalg.norm(exits[free] - domain.centers()[None, 0], axis=1)
                - domain.radii()[0])
    if len(domain.balls) > 1:
        alt = np.stack([np.linalg.norm(exits[free] - c[None, :], axis=1) - r
                        for c, r in zip(domain.centers(), domain.radii())])
        dist_out = alt.min(axis=0)
    shell = np.array([(dist_out < wdt).mean() for wdt in shell_widths])
    return ExitHistogram(partition, counts, m, freqs, ci,
                         tuple(shell_widths), shell,
                         float(forced.mean()), below)
