"""Characteristic exponent, Lévy density, and the derived scale functions.

Process families are isotropic and unimodal; the radial Lévy density is
non-increasing, so everything here reduces to one-dimensional radial
integrals.  Power-law families (stable and stable mixtures) are normalized
numerically so each component contributes exactly w_k |xi|^alpha_k to the
characteristic exponent, which makes all stable-case oracles closed form.
"""
from __future__ import annotations

import json
import math
import warnings
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy import special as _sps
from scipy.optimize import brentq

from . import special


@contextmanager
def _quiet():
    # QUADPACK warns near singular endpoints even when the returned error
    # estimate is fine; callers here check the estimates instead.
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        yield

FAMILIES = ("isotropic-stable", "stable-mixture", "relativistic-stable")

QUAD_TOL = 1e-10          # absolute+relative target for radial quadrature
QUAD_LIMIT = 400          # hard cap on adaptive subdivisions


class QuadratureError(RuntimeError):
    """Raised when a radial quadrature cannot reach its tolerance."""

    def __init__(self, msg: str, achieved: float):
        super().__init__(f"{msg} (achieved error estimate {achieved:.3e})")
        self.achieved = achieved


def sphere_surface(d: int) -> float:
    """Surface area of the unit sphere in R^d."""
    return 2.0 * math.pi ** (d / 2) / special.gamma(d / 2)


def _uniform_sphere_cf(d: int, t: np.ndarray) -> np.ndarray:
    """E exp(i t w.e1) for w uniform on the unit sphere of R^d."""
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)
    small = np.abs(t) < 1e-6
    ts = t[small]
    out[small] = 1.0 - ts * ts / (2.0 * d)  # series; next term O(t^4)
    tv = t[~small]
    if d == 2:
        out[~small] = _sps.j0(tv)
    elif d == 3:
        out[~small] = np.sin(tv) / tv
    else:
        nu = d / 2.0 - 1.0
        out[~small] = special.gamma(d / 2) * (2.0 / tv) ** nu * _sps.jv(nu, tv)
    return out


def _cf_oscillation_nodes(d: int, n: int) -> np.ndarray:
    """Zeros of the sphere characteristic function, used to segment tails."""
    if d == 2:
        return _sps.jn_zeros(0, n)
    if d == 3:
        return np.arange(1, n + 1) * math.pi
    nu = d / 2.0 - 1.0
    # asymptotic McMahon zeros of J_nu are accurate enough for segmentation
    k = np.arange(1, n + 1)
    b = (k + nu / 2.0 - 0.25) * math.pi
    return b - (4.0 * nu * nu - 1.0) / (8.0 * b)


def _accelerated_tail(g, a: float, nodes: np.ndarray, limit: int = 60) -> float:
    """Integral of an oscillatory g over [a, inf) via inter-zero segments
    and repeated averaging of partial sums."""
    edges = [a] + [z for z in nodes if z > a][:limit]
    if len(edges) < 3:
        return 0.0
    terms = []
    with _quiet():
        for lo, hi in zip(edges[:-1], edges[1:]):
            t, _ = integrate.quad(g, lo, hi, limit=80)
            terms.append(t)
    ps = np.cumsum(terms)
    while ps.size > 4:
        ps = 0.5 * (ps[1:] + ps[:-1])
    return float(ps[len(ps) // 2])


@dataclass(frozen=True)
class ProcessSpec:
    """Parameterized isotropic unimodal process family.

    components holds per-component (exponent, weight, density constant A)
    for the power-law families, so nu(r) = sum_k A_k r^(-d-a_k) and
    psi(xi) = sum_k w_k xi^a_k.  The relativistic family keeps its closed
    subordination form instead and evaluates nu by quadrature.
    """

    family: str
    d: int
    alpha: float
    beta: float | None = None
    weights: tuple[float, float] | None = None
    mass: float | None = None
    components: tuple[tuple[float, float, float], ...] = field(default=())

    @property
    def is_power_law(self) -> bool:
        return self.family in ("isotropic-stable", "stable-mixture")

    def params_dict(self) -> dict:
        p: dict = {"alpha": self.alpha}
        if self.family == "stable-mixture":
            p["beta"] = self.beta
            p["weights"] = list(self.weights)
        if self.family == "relativistic-stable":
            p["m"] = self.mass
        return p


@dataclass(frozen=True)
class ScalingWitness:
    direction: str            # "lower" | "upper"
    order: float
    theta0: float
    const: float
    lam_grid: tuple[float, ...]
    theta_grid: tuple[float, ...]
    slack: float              # worst-case relative slack, >= 0
    worst_pair: tuple[float, float]


@dataclass(frozen=True)
class ScalingViolation:
    direction: str
    order: float
    theta0: float
    const: float
    pair: tuple[float, float]  # offending (lambda, theta)
    lhs: float
    rhs: float
    slack: float               # negative


def _stable_psi_unit(d: int, a: float) -> float:
    """psi(1) for the unnormalized density r^(-d-a), by radial quadrature."""
    sig = sphere_surface(d)

    def f(s):
        return float((1.0 - _uniform_sphere_cf(d, np.array([s]))[0]) * s ** (-1.0 - a))

    with _quiet():
        v1, e1 = integrate.quad(f, 0.0, 1.0, epsabs=QUAD_TOL, epsrel=QUAD_TOL,
                                limit=QUAD_LIMIT)
        cut = 40.0
        v2, e2 = integrate.quad(f, 1.0, cut, epsabs=QUAD_TOL, epsrel=QUAD_TOL,
                                limit=QUAD_LIMIT)
    tail_const = cut ** (-a) / a
    nodes = _cf_oscillation_nodes(d, 160)

    def g(s):
        return float(_uniform_sphere_cf(d, np.array([s]))[0] * s ** (-1.0 - a))

    tail_osc = _accelerated_tail(g, cut, nodes, limit=100)
    return sig * (v1 + v2 + tail_const - tail_osc)


def make_process(family: str, params: dict, d: int) -> ProcessSpec:
    """Build a ProcessSpec with the density normalization cached.

    For the power-law families the constant of each component is fixed
    numerically so that the component's exponent contribution is exactly
    w_k |xi|^a_k (verified rather than hard-coded, so mixtures inherit
    correctness).
    """
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}; expected one of {FAMILIES}")
    if not isinstance(d, int) or d < 2:
        raise ValueError(f"dimension must be an integer >= 2, got {d}")
    alpha = float(params["alpha"])
    if not 0.0 < alpha < 2.0:
        raise ValueError(f"alpha must lie in (0, 2), got {alpha}")

    if family == "isotropic-stable":
        A = 1.0 / _stable_psi_unit(d, alpha)
        return ProcessSpec(family, d, alpha, components=((alpha, 1.0, A),))

    if family == "stable-mixture":
        beta = float(params["beta"])
        if not 0.0 < beta < 2.0:
            raise ValueError(f"beta must lie in (0, 2), got {beta}")
        w = params.get("weights", (1.0, 1.0))
        w = (float(w[0]), float(w[1]))
        if w[0] <= 0 or w[1] <= 0:
            raise ValueError("mixture weights must be positive")
        comps = tuple(
            (a, wk, wk / _stable_psi_unit(d, a)) for a, wk in zip((alpha, beta), w)
        )
        return ProcessSpec(family, d, alpha, beta=beta, weights=w, components=comps)

    m = float(params["m"])
    if m <= 0:
        raise ValueError(f"relativistic mass must be positive, got {m}")
    return ProcessSpec(family, d, alpha, mass=m)


def spec_to_json(spec: ProcessSpec) -> str:
    return json.dumps({"family": spec.family, "d": spec.d,
                       "params": spec.params_dict()}, sort_keys=True)


def spec_from_json(doc: str | dict) -> ProcessSpec:
    obj = json.loads(doc) if isinstance(doc, str) else doc
    return make_process(obj["family"], obj["params"], int(obj["d"]))


# ---------------------------------------------------------------------------
# Lévy density and characteristic exponent


def _rel_subordinator_const(alpha: float) -> float:
    return alpha / (2.0 * special.gamma(1.0 - alpha / 2.0))


def levy_density(spec: ProcessSpec, r) -> np.ndarray | float:
    """Radial Lévy density nu(r) w.r.t. Lebesgue measure on R^d.

    Relativistic case: the Bessel-K closed form of the subordination
    integral over the tempered one-sided stable density.
    """
    scalar = np.isscalar(r)
    r = np.atleast_1d(np.asarray(r, dtype=float))
    if np.any(r <= 0):
        raise ValueError("levy_density requires r > 0")
    if spec.is_power_law:
        out = np.zeros_like(r)
        for a, _w, A in spec.components:
            out += A * r ** (-spec.d - a)
    else:
        c = _rel_subordinator_const(spec.alpha)
        mrho = spec.mass ** (2.0 / spec.alpha)
        d, a = spec.d, spec.alpha
        out = (c * (4.0 * math.pi) ** (-d / 2.0) * 2.0
               * (r * r / (4.0 * mrho)) ** (-(d + a) / 4.0)
               * _sps.kv((d + a) / 2.0, spec.mass ** (1.0 / a) * r))
    return float(out[0]) if scalar else out


def levy_density_quadrature(spec: ProcessSpec, r: float) -> float:
    """Subordination-integral route for the relativistic density, kept as
    the independent cross-check of the Bessel-K closed form."""
    if spec.is_power_law:
        return float(levy_density(spec, r))
    c = _rel_subordinator_const(spec.alpha)
    mrho = spec.mass ** (2.0 / spec.alpha)
    d, a = spec.d, spec.alpha

    def f(u):
        return ((4.0 * math.pi * u) ** (-d / 2.0)
                * math.exp(-r * r / (4.0 * u) - mrho * u)
                * u ** (-1.0 - a / 2.0))

    c1 = 1.0 + a / 2.0 + d / 2.0
    ustar = (-c1 + math.sqrt(c1 * c1 + mrho * r * r)) / (2.0 * mrho)
    ustar = max(ustar, r * r / (4.0 * c1), 1e-300)
    with _quiet():
        v1, _ = integrate.quad(f, 0.0, ustar, limit=QUAD_LIMIT)
        v2, _ = integrate.quad(f, ustar, np.inf, limit=QUAD_LIMIT)
    return c * (v1 + v2)


def psi(spec: ProcessSpec, xi) -> np.ndarray | float:
    """Characteristic exponent (closed form)."""
    scalar = np.isscalar(xi)
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    if np.any(xi < 0):
        raise ValueError("psi requires xi >= 0")
    if spec.is_power_law:
        out = np.zeros_like(xi)
        for a, w, _A in spec.components:
            out += w * xi ** a
    else:
        mrho = spec.mass ** (2.0 / spec.alpha)
        out = (xi * xi + mrho) ** (spec.alpha / 2.0) - spec.mass
    return float(out[0]) if scalar else out


def psi_from_levy(spec: ProcessSpec, xi: float, tol: float = 1e-9) -> tuple[float, float]:
    """Characteristic exponent by radial quadrature of the jump integral.

    Returns (value, error estimate).  The radial integral is split at the
    scale 1/xi; the oscillatory tail is summed between the zeros of the
    sphere characteristic function with series acceleration.  Raises
    QuadratureError when the achieved error estimate exceeds tol relative.
    """
    if xi < 0:
        raise ValueError("psi_from_levy requires xi >= 0")
    if xi == 0.0:
        return 0.0, 0.0
    d = spec.d
    sig = sphere_surface(d)
    cut = 1.0 / xi

    def f(s):
        om = _uniform_sphere_cf(d, np.array([xi * s]))[0]
        return float((1.0 - om) * levy_density(spec, s) * s ** (d - 1))

    with _quiet():
        v1, e1 = integrate.quad(f, 0.0, cut, epsabs=0.0, epsrel=1e-12,
                                limit=QUAD_LIMIT)
        far = 40.0 / xi
        v2, e2 = integrate.quad(f, cut, far, epsabs=0.0, epsrel=1e-12,
                                limit=QUAD_LIMIT)

    # tail beyond `far`: the constant part integrates exactly for power-law
    # components; the oscillatory part is accelerated between cf zeros.
    if spec.is_power_law:
        tail_const = sig * sum(A * far ** (-a) / a for a, _w, A in spec.components)
    else:
        with _quiet():
            tc, _ = integrate.quad(
                lambda s: float(levy_density(spec, s) * s ** (d - 1)),
                far, np.inf, limit=QUAD_LIMIT)
        tail_const = sig * tc

    nodes = _cf_oscillation_nodes(d, 200) / xi

    def g(s):
        om = _uniform_sphere_cf(d, np.array([xi * s]))[0]
        return float(om * levy_density(spec, s) * s ** (d - 1))

    tail_osc = sig * _accelerated_tail(g, far, nodes, limit=80)
    val = sig * (v1 + v2) + tail_const - tail_osc
    err = sig * (e1 + e2) + abs(tail_osc) * 1e-6
    if err > tol * max(abs(val), 1e-300):
        raise QuadratureError("psi quadrature did not converge", err)
    return val, err


# ---------------------------------------------------------------------------
# Pruitt function h, renewal-type function V, potential comparand U


def _h_component_unit(d: int, a: float) -> float:
    """h(1) for a unit power-law component A=1: sigma * (1/(2-a) + 1/a)."""
    return sphere_surface(d) * (1.0 / (2.0 - a) + 1.0 / a)


def _h_power_law(spec: ProcessSpec, r: np.ndarray) -> np.ndarray:
    out = np.zeros_like(r)
    for a, _w, A in spec.components:
        out += A * _h_component_unit(spec.d, a) * r ** (-a)
    return out


def _h_quadrature(spec: ProcessSpec, r: float) -> tuple[float, float]:
    """h(r) by radial quadrature split at s = r (generic path)."""
    d = spec.d
    sig = sphere_surface(d)

    def inner(s):
        return float(levy_density(spec, s) * s ** (d + 1)) / (r * r)

    def outer(s):
        return float(levy_density(spec, s) * s ** (d - 1))

    with _quiet():
        v1, e1 = integrate.quad(inner, 0.0, r, epsabs=0.0, epsrel=1e-12,
                                limit=QUAD_LIMIT)
        v2, e2 = integrate.quad(outer, r, np.inf, epsabs=0.0, epsrel=1e-12,
                                limit=QUAD_LIMIT)
    return sig * (v1 + v2), sig * (e1 + e2)


def renewal(spec: ProcessSpec, r: float) -> tuple[float, float]:
    """(h(r), V(r)).  V(0) = 0 by convention."""
    if r < 0:
        raise ValueError("renewal requires r >= 0")
    if r == 0.0:
        return math.inf, 0.0
    if spec.is_power_law:
        h = float(_h_power_law(spec, np.array([r]))[0])
    else:
        h, _ = _h_quadrature(spec, r)
    # h underflows to 0 for huge radii of tempered families; V(inf) = inf
    return h, (1.0 / math.sqrt(h)) if h > 0 else math.inf


def renewal_quadrature(spec: ProcessSpec, r: float) -> tuple[float, float]:
    """Generic-quadrature route for h, kept as the cross-check of the
    closed split-integral used for power-law families."""
    h, _err = _h_quadrature(spec, r)
    return h, 1.0 / math.sqrt(h)


def v_scale(spec: ProcessSpec, r) -> np.ndarray:
    """Vectorized V over an array of radii (hot path for the kernels)."""
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    pos = r > 0
    if spec.is_power_law:
        h = _h_power_law(spec, np.where(pos, r, 1.0))
        out[pos] = 1.0 / np.sqrt(h[pos])
    else:
        flat = np.atleast_1d(r)
        vals = np.array([renewal(spec, float(ri))[1] if ri > 0 else 0.0
                         for ri in flat])
        out = vals.reshape(r.shape)
    return out


def v_inverse(spec: ProcessSpec, t: float) -> float:
    """Inverse of V by monotone bracketing to 1e-10 relative."""
    if t < 0:
        raise ValueError("v_inverse requires t >= 0")
    if t == 0.0:
        return 0.0
    lo, hi = 1e-12, 1e12

    def f(r):
        return renewal(spec, r)[1] - t

    flo, fhi = f(lo), f(hi)
    grow = 0
    while flo > 0 and grow < 8:
        lo *= 1e-3
        flo = f(lo)
        grow += 1
    while fhi < 0 and grow < 16:
        hi *= 1e3
        fhi = f(hi)
        grow += 1
    if flo > 0 or fhi < 0:
        raise ValueError(f"v_inverse bracket failed for t={t}")
    return brentq(f, lo, hi, rtol=1e-12, maxiter=200)


def potential_u(spec: ProcessSpec, r) -> np.ndarray | float:
    """U(r) = V(r)^2 / r^d, radially non-increasing; infinite at r = 0."""
    scalar = np.isscalar(r)
    r = np.atleast_1d(np.asarray(r, dtype=float))
    if np.any(r < 0):
        raise ValueError("potential_u requires r >= 0")
    out = np.full_like(r, math.inf)
    pos = r > 0
    v = v_scale(spec, r[pos])
    out[pos] = v * v / r[pos] ** spec.d
    return float(out[0]) if scalar else out


# ---------------------------------------------------------------------------
# Scaling certification


def default_lambda_grid() -> np.ndarray:
    return np.logspace(0.0, 3.0, 40)


def default_theta_grid(theta0: float) -> np.ndarray:
    lo = max(theta0, 1e-3)
    return np.logspace(math.log10(lo), 3.0, 40)


def check_scaling(f, direction: str, order: float, theta0: float, const: float,
                  lam_grid=None, theta_grid=None,
                  max_product: float | None = None):
    """Grid-certify a weak scaling condition for a positive function.

    lower: f(lam * th) >= const * lam^order * f(th); upper: <= with the
    inequality reversed.  Pairs with lam * th > max_product are skipped
    (used for short-range certificates).  Returns a ScalingWitness with the
    minimal relative slack, or a ScalingViolation for the worst pair.
    """
    if direction not in ("lower", "upper"):
        raise ValueError("direction must be 'lower' or 'upper'")
    if direction == "lower" and not 0.0 < const <= 1.0:
        raise ValueError("lower scaling requires const in (0, 1]")
    if direction == "upper" and (const < 1.0 or order >= 2.0):
        raise ValueError("upper scaling requires const >= 1 and order < 2")
    lam_grid = default_lambda_grid() if lam_grid is None else np.asarray(lam_grid, float)
    theta_grid = (default_theta_grid(theta0) if theta_grid is None
                  else np.asarray(theta_grid, float))
    if lam_grid.size == 0 or theta_grid.size == 0:
        raise ValueError("scaling grids must be non-empty")
    if np.any(lam_grid < 1.0):
        raise ValueError("lambda grid must satisfy lambda >= 1")
    theta_grid = theta_grid[theta_grid > theta0]
    if theta_grid.size == 0:
        raise ValueError("theta grid has no points above the threshold")

    worst_slack = math.inf
    worst_pair = (float(lam_grid[0]), float(theta_grid[0]))
    worst_lhs = worst_rhs = 0.0
    for th in theta_grid:
        fth = float(f(th))
        for lam in lam_grid:
            if max_product is not None and lam * th > max_product:
                continue
            lhs = float(f(lam * th))
            rhs = const * lam ** order * fth
            if direction == "lower":
                slack = lhs / rhs - 1.0
            else:
                slack = rhs / lhs - 1.0
            if slack < worst_slack:
                worst_slack = slack
                worst_pair = (float(lam), float(th))
                worst_lhs, worst_rhs = lhs, rhs
    if worst_slack is math.inf:
        raise ValueError("no grid pair satisfied the range constraints")
    if worst_slack < 0:
        return ScalingViolation(direction, order, theta0, const, worst_pair,
                                worst_lhs, worst_rhs, worst_slack)
    return ScalingWitness(direction, order, theta0, const,
                          tuple(map(float, lam_grid)),
                          tuple(map(float, theta_grid)),
                          worst_slack, worst_pair)


@dataclass(frozen=True)
class SandwichReport:
    c1: float
    rows: tuple[tuple[float, float, float], ...]   # (r, h(r), psi(1/r))
    min_lower_ratio: float    # min of h(r) / (psi(1/r)/2); >= 1 iff lower holds
    min_upper_ratio: float    # min of C1 psi(1/r) / h(r); >= 1 iff upper holds
    passed: bool
    failures: tuple[tuple[float, float, float], ...]


def sandwich_check(spec: ProcessSpec, r_grid, h_fn=None) -> SandwichReport:
    """Assert psi(1/r)/2 <= h(r) <= (d pi^2 / 2) psi(1/r) on the grid.

    h_fn lets tests inject an adversarial h; the default is the spec's own
    renewal function.
    """
    r_grid = np.asarray(r_grid, dtype=float)
    if np.any(r_grid <= 0):
        raise ValueError("sandwich grid must be positive")
    c1 = spec.d * math.pi ** 2 / 2.0
    get_h = (lambda r: renewal(spec, r)[0]) if h_fn is None else h_fn
    rows = []
    fails = []
    min_lo = math.inf
    min_hi = math.inf
    for r in r_grid:
        h = float(get_h(float(r)))
        p = float(psi(spec, 1.0 / r))
        rows.append((float(r), h, p))
        lo = h / (0.5 * p)
        hi = (c1 * p) / h
        min_lo = min(min_lo, lo)
        min_hi = min(min_hi, hi)
        if lo < 1.0 or hi < 1.0:
            fails.append((float(r), h, p))
    return SandwichReport(c1, tuple(rows), min_lo, min_hi,
                          not fails, tuple(fails))
