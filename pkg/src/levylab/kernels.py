"""Closed-form and estimate-form kernels.

green_ball_exact is the classical ball Green function of the isotropic
stable process and serves as ground truth for the stable-case acceptance
checks; green_sharp is the two-sided comparand built from U, V and the
boundary distances, valid for every family with the right scaling.  The
singular two-point integrals (Kato norms, kappa functionals) exclude a
near-diagonal band and add the analytic correction obtained from the local
form U(s) of the integrand.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from . import special
from .geometry import Domain, Grid, delta, domain_from_json, domain_to_json
from .spectral import (ProcessSpec, levy_density, potential_u, renewal,
                       sphere_surface, spec_from_json, spec_to_json,
                       v_inverse, v_scale)


class PoleError(ValueError):
    """Two-point kernel evaluated on its diagonal."""


class SingularityError(ValueError):
    """Integral is non-integrable in the requested scaling regime."""


# ---------------------------------------------------------------------------
# Drift fields


class DriftField:
    """Vector field b with evaluation and optional sup bound on the domain.

    kinds: "zero", "constant", "radial" (profile times unit direction,
    either radially outward or a fixed direction), "tabulated"
    (nearest-node values on a point cloud).
    """

    def __init__(self, kind: str, dim: int, *, vector=None, profile=None,
                 direction="outward", center=None, points=None, values=None,
                 sup_bound: float | None = None):
        self.kind = kind
        self.dim = int(dim)
        self.vector = None if vector is None else np.asarray(vector, float)
        self.profile = profile
        self.direction = direction
        self.center = (np.zeros(self.dim) if center is None
                       else np.asarray(center, float))
        self.points = None if points is None else np.asarray(points, float)
        self.values = None if values is None else np.asarray(values, float)
        self.sup_bound = sup_bound

    @staticmethod
    def zero(dim: int) -> "DriftField":
        return DriftField("zero", dim, sup_bound=0.0)

    @staticmethod
    def constant(vector) -> "DriftField":
        v = np.asarray(vector, float)
        return DriftField("constant", v.size, vector=v,
                          sup_bound=float(np.linalg.norm(v)))

    @staticmethod
    def radial(dim: int, profile, direction="outward", center=None,
               sup_bound: float | None = None) -> "DriftField":
        if direction != "outward":
            direction = np.asarray(direction, float)
            direction = direction / np.linalg.norm(direction)
        return DriftField("radial", dim, profile=profile, direction=direction,
                          center=center, sup_bound=sup_bound)

    @staticmethod
    def tabulated(points, values) -> "DriftField":
        points = np.asarray(points, float)
        values = np.asarray(values, float)
        if points.shape[0] != values.shape[0]:
            raise ValueError("tabulated drift needs one vector per point")
        return DriftField("tabulated", points.shape[1], points=points,
                          values=values,
                          sup_bound=float(np.linalg.norm(values, axis=1).max()))

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        single = x.ndim == 1
        pts = x.reshape(-1, self.dim)
        if self.kind == "zero":
            out = np.zeros_like(pts)
        elif self.kind == "constant":
            out = np.broadcast_to(self.vector, pts.shape).copy()
        elif self.kind == "radial":
            rel = pts - self.center
            s = np.linalg.norm(rel, axis=1)
            mag = np.asarray(self.profile(s), float)
            if isinstance(self.direction, str):
                unit = np.zeros_like(rel)
                nz = s > 0
                unit[nz] = rel[nz] / s[nz, None]
            else:
                unit = np.broadcast_to(self.direction, pts.shape)
            out = mag[:, None] * unit
        elif self.kind == "tabulated":
            d2 = ((pts[:, None, :] - self.points[None, :, :]) ** 2).sum(axis=2)
            out = self.values[np.argmin(d2, axis=1)]
        else:
            raise ValueError(f"unknown drift kind {self.kind!r}")
        if not np.all(np.isfinite(out)):
            raise ValueError("drift field evaluated to a non-finite value")
        return out[0] if single else out.reshape(x.shape)

    def magnitude(self, x) -> np.ndarray | float:
        v = self.__call__(x)
        return np.linalg.norm(v, axis=-1)

    def to_json(self) -> str:
        if self.kind == "zero":
            return json.dumps({"kind": "zero", "dim": self.dim})
        if self.kind == "constant":
            return json.dumps({"kind": "constant",
                               "vector": self.vector.tolist()})
        if self.kind == "tabulated":
            return json.dumps({"kind": "tabulated",
                               "points": self.points.tolist(),
                               "values": self.values.tolist()})
        raise ValueError("radial drift profiles are callables; not serializable")

    @staticmethod
    def from_json(doc: str | dict) -> "DriftField":
        obj = json.loads(doc) if isinstance(doc, str) else doc
        kind = obj["kind"]
        if kind == "zero":
            return DriftField.zero(int(obj["dim"]))
        if kind == "constant":
            return DriftField.constant(obj["vector"])
        if kind == "tabulated":
            return DriftField.tabulated(obj["points"], obj["values"])
        raise ValueError(f"cannot deserialize drift kind {kind!r}")


# ---------------------------------------------------------------------------
# Green grids


@dataclass
class GreenGrid:
    """Two-point function tabulated on sources x grid cells.

    values[i, j] ~ G(source_i, cell_j); sigma holds per-entry uncertainty
    (zero for deterministic fills).  Entries within `band` of the source
    are excluded from comparisons; signed=True marks perturbation-series
    terms, which may be negative.
    """

    domain: Domain
    sources: np.ndarray            # (P, d)
    grid: Grid
    values: np.ndarray             # (P, M)
    sigma: np.ndarray              # (P, M)
    band: float
    visits: np.ndarray | None = None
    signed: bool = False

    @property
    def n_sources(self) -> int:
        return int(self.sources.shape[0])

    def off_band_mask(self) -> np.ndarray:
        """True where the target cell is outside the exclusion band."""
        dist = np.linalg.norm(
            self.sources[:, None, :] - self.grid.points[None, :, :], axis=2)
        return dist >= self.band

    def comparable_mask(self, max_rel_sigma: float = 0.25) -> np.ndarray:
        ok = self.off_band_mask()
        with np.errstate(divide="ignore", invalid="ignore"):
            rel = np.abs(self.sigma) / np.abs(self.values)
        ok &= np.isfinite(self.values)
        ok &= np.where(np.isfinite(rel), rel <= max_rel_sigma, self.sigma == 0)
        if self.visits is not None:
            ok &= self.visits > 0
        return ok

    def source_index(self, x, tol: float = 1e-9) -> int:
        x = np.asarray(x, float)
        d = np.linalg.norm(self.sources - x[None, :], axis=1)
        i = int(np.argmin(d))
        if d[i] > tol:
            raise ValueError(f"point {x} is not a source of this grid")
        return i

    def write(self, csv_path, header_path, spec: ProcessSpec | None = None):
        """CSV body (x_idx, y_idx, value, sigma) plus a JSON side header."""
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x_idx", "y_idx", "value", "sigma"])
            for i in range(self.n_sources):
                for j in range(self.grid.size):
                    w.writerow([i, j, repr(float(self.values[i, j])),
                                repr(float(self.sigma[i, j]))])
        head = {
            "domain": json.loads(domain_to_json(self.domain)),
            "spec": None if spec is None else json.loads(spec_to_json(spec)),
            "spacing": self.grid.spacing,
            "band": self.band,
            "signed": self.signed,
            "sources": self.sources.tolist(),
            "grid_points": self.grid.points.tolist(),
        }
        with open(header_path, "w") as fh:
            json.dump(head, fh, sort_keys=True, indent=1)

    @staticmethod
    def read(csv_path, header_path) -> "GreenGrid":
        with open(header_path) as fh:
            head = json.load(fh)
        domain = domain_from_json(head["domain"])
        pts = np.array(head["grid_points"], float)
        grid = Grid(pts, float(head["spacing"]))
        sources = np.array(head["sources"], float)
        values = np.zeros((sources.shape[0], pts.shape[0]))
        sigma = np.zeros_like(values)
        with open(csv_path) as fh:
            rd = csv.reader(fh)
            next(rd)
            for i, j, v, s in rd:
                values[int(i), int(j)] = float(v)
                sigma[int(i), int(j)] = float(s)
        return GreenGrid(domain, sources, grid, values, sigma,
                         float(head["band"]), signed=bool(head["signed"]))


# ---------------------------------------------------------------------------
# Kernel estimates


def heat_kernel_bound(spec: ProcessSpec, t: float, r: float) -> float:
    """min([V^{-1}(sqrt t)]^{-d}, t / (V(r)^2 r^d)); first branch at r=0."""
    if t <= 0:
        raise ValueError("heat_kernel_bound requires t > 0")
    first = v_inverse(spec, math.sqrt(t)) ** (-spec.d)
    if r == 0.0:
        return first
    v = renewal(spec, r)[1]
    return min(first, t / (v * v * r ** spec.d))


def green_sharp(spec: ProcessSpec, domain: Domain, x, y) -> np.ndarray | float:
    """Sharp-estimate comparand U(x-y) V(dx) V(dy) / V(r(x,y))^2.

    Zero when either point is outside the domain; +inf on the diagonal
    (pole signal).
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    scalar = x.ndim == 1 and y.ndim == 1
    x, y = np.broadcast_arrays(x, y)
    xs = x.reshape(-1, x.shape[-1])
    ys = y.reshape(-1, y.shape[-1])
    dx = delta(domain, xs)
    dy = delta(domain, ys)
    s = np.linalg.norm(xs - ys, axis=1)
    rmax = np.maximum(np.maximum(dx, dy), s)
    out = np.zeros(xs.shape[0])
    inside = (dx > 0) & (dy > 0)
    diag = inside & (s == 0.0)
    ok = inside & ~diag
    vx = v_scale(spec, dx[ok])
    vy = v_scale(spec, dy[ok])
    vr = v_scale(spec, rmax[ok])
    # vx*vy first, so swapping the arguments is exactly symmetric
    out[ok] = potential_u(spec, s[ok]) * (vx * vy) / (vr * vr)
    out[diag] = math.inf
    return float(out[0]) if scalar else out.reshape(x.shape[:-1])


def stable_green_const(d: int, alpha: float) -> float:
    """Gamma(d/2) / (2^alpha pi^{d/2} Gamma(alpha/2)^2)."""
    return special.gamma(d / 2) / (
        2.0 ** alpha * math.pi ** (d / 2) * special.gamma(alpha / 2) ** 2)


def _ball_profile(alpha: float, d: int, w: np.ndarray) -> np.ndarray:
    """int_0^w s^{alpha/2-1} (1+s)^{-d/2} ds via the incomplete beta."""
    a = alpha / 2.0
    b = (d - alpha) / 2.0
    w = np.asarray(w, float)
    x = w / (1.0 + w)
    x = np.where(np.isinf(w), 1.0, x)
    return special.beta(a, b) * special.betainc_reg_arr(a, b, x)


def _ball_profile_quad(alpha: float, d: int, w: float) -> float:
    """Adaptive-quadrature route for the ball profile (cross-check path)."""
    if w <= 0:
        return 0.0
    # substitute s = v^{2/alpha}: the integrand becomes smooth at 0
    p = 2.0 / alpha
    val, _ = integrate.quad(
        lambda v: p / (1.0 + v ** p) ** (d / 2.0),
        0.0, w ** (alpha / 2.0), limit=200)
    return val


def green_ball_exact(alpha: float, d: int, R: float, x, y,
                     profile="betainc") -> np.ndarray | float:
    """Ball Green function of the isotropic alpha-stable process.

    B(d,alpha) |x-y|^{alpha-d} int_0^w s^{alpha/2-1}(1+s)^{-d/2} ds with
    w = (R^2-|x|^2)(R^2-|y|^2) / (R^2 |x-y|^2).  Ball centered at 0.
    +inf on the diagonal; raises for points outside the closed ball.
    """
    if not 0.0 < alpha < 2.0:
        raise ValueError("alpha must lie in (0, 2)")
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    scalar = x.ndim == 1 and y.ndim == 1
    x, y = np.broadcast_arrays(x, y)
    xs = x.reshape(-1, d)
    ys = y.reshape(-1, d)
    x2 = (xs * xs).sum(axis=1)
    y2 = (ys * ys).sum(axis=1)
    R2 = R * R
    tol = 1e-12 * R2
    if np.any(x2 > R2 + tol) or np.any(y2 > R2 + tol):
        raise ValueError("green_ball_exact requires points inside the ball")
    r2 = ((xs - ys) ** 2).sum(axis=1)
    out = np.zeros(xs.shape[0])
    diag = r2 == 0.0
    interior = (x2 < R2) & (y2 < R2)
    out[diag & interior] = math.inf
    ok = interior & ~diag
    if np.any(ok):
        w = (R2 - x2[ok]) * (R2 - y2[ok]) / (R2 * r2[ok])
        if profile == "betainc":
            F = _ball_profile(alpha, d, w)
        else:
            F = np.array([_ball_profile_quad(alpha, d, wi) for wi in w])
        out[ok] = stable_green_const(d, alpha) * r2[ok] ** ((alpha - d) / 2.0) * F
    return float(out[0]) if scalar else out.reshape(x.shape[:-1])


def grad_green_ball_exact(alpha: float, d: int, R: float, z, y) -> np.ndarray:
    """Analytic gradient in the first argument of green_ball_exact."""
    z = np.asarray(z, float)
    y = np.asarray(y, float)
    scalar = z.ndim == 1 and y.ndim == 1
    z, y = np.broadcast_arrays(z, y)
    zs = z.reshape(-1, d)
    ys = y.reshape(-1, d)
    z2 = (zs * zs).sum(axis=1)
    y2 = (ys * ys).sum(axis=1)
    R2 = R * R
    rel = zs - ys
    r2 = (rel * rel).sum(axis=1)
    diag = r2 == 0.0
    if np.any(diag):
        if scalar:
            raise PoleError("gradient requested on the diagonal")
        r2 = np.where(diag, 1.0, r2)  # rows zeroed below
    w = (R2 - z2) * (R2 - y2) / (R2 * r2)
    B = stable_green_const(d, alpha)
    F = _ball_profile(alpha, d, w)
    dF = np.where(w > 0, w ** (alpha / 2.0 - 1.0) * (1.0 + w) ** (-d / 2.0), 0.0)
    pref = r2 ** ((alpha - d) / 2.0)
    # grad w = -2 z (R^2-|y|^2)/(R^2 r^2) - 2 w (z-y)/r^2
    grad_w = (-2.0 * zs * ((R2 - y2) / (R2 * r2))[:, None]
              - 2.0 * (w / r2)[:, None] * rel)
    grad = (B * ((alpha - d) * pref / r2 * F)[:, None] * rel
            + B * (pref * dF)[:, None] * grad_w)
    grad[diag] = 0.0
    return grad[0] if scalar else grad.reshape(z.shape)


def exact_ball_evaluator(alpha: float, domain: Domain):
    """(green, grad) pair closed over a stable ball domain (single ball,
    any center; the kernel is translation invariant)."""
    if len(domain.balls) != 1:
        raise ValueError("exact ball kernel needs a single-ball domain")
    c = np.asarray(domain.balls[0].center, float)
    R = domain.balls[0].radius
    d = domain.dim

    def g(x, y):
        return green_ball_exact(alpha, d, R, np.asarray(x, float) - c,
                                np.asarray(y, float) - c)

    def dg(z, y):
        return grad_green_ball_exact(alpha, d, R, np.asarray(z, float) - c,
                                     np.asarray(y, float) - c)

    return g, dg


def sharp_evaluator(spec: ProcessSpec, domain: Domain):
    """(green, grad) pair for the sharp comparand; the gradient is a
    numerically differentiated envelope, not exact."""
    def g(x, y):
        return green_sharp(spec, domain, x, y)

    def dg(z, y, h=None):
        z = np.asarray(z, float)
        y = np.asarray(y, float)
        zs = np.atleast_2d(z)
        ys = np.broadcast_to(y, zs.shape)
        dz = delta(domain, zs)
        s = np.linalg.norm(zs - ys, axis=1)
        step = 1e-5 * np.maximum(np.minimum(dz, s), 1e-12)
        grad = np.zeros_like(zs)
        for k in range(zs.shape[1]):
            e = np.zeros(zs.shape[1])
            e[k] = 1.0
            grad[:, k] = (g(zs + step[:, None] * e, ys)
                          - g(zs - step[:, None] * e, ys)) / (2.0 * step)
        return grad[0] if z.ndim == 1 else grad
    return g, dg


@dataclass(frozen=True)
class ThreeGResult:
    quotient: float     # G(x,z) G(z,y) / G(x,y)
    bound_ratio: float  # quotient / [V(dz) max(G(x,z)/V(dx), G(z,y)/V(dy))]


def three_g_check(spec: ProcessSpec, domain: Domain, triple, green) -> ThreeGResult:
    """Evaluate the 3G quotient and its boundary-weighted normalization."""
    x, z, y = (np.asarray(p, float) for p in triple)
    if (np.array_equal(x, z) or np.array_equal(z, y)
            or np.array_equal(x, y)):
        raise ValueError("3G check needs three distinct points")
    for p in (x, z, y):
        if delta(domain, p) <= 0:
            raise ValueError("3G points must lie inside the domain")
    gxz = float(green(x, z))
    gzy = float(green(z, y))
    gxy = float(green(x, y))
    q = gxz * gzy / gxy
    vx = v_scale(spec, np.array([delta(domain, x)]))[0]
    vy = v_scale(spec, np.array([delta(domain, y)]))[0]
    vz = v_scale(spec, np.array([delta(domain, z)]))[0]
    rho = q / (vz * max(gxz / vx, gzy / vy))
    return ThreeGResult(q, rho)


# ---------------------------------------------------------------------------
# Kato class machinery


def _angular_mean_magnitude(b: DriftField, x: np.ndarray, s: float,
                            n_dirs: int) -> float:
    """Mean of |b| over the sphere of radius s around x."""
    d = x.size
    if b.kind == "zero":
        return 0.0
    if b.kind == "constant":
        return float(np.linalg.norm(b.vector))
    if d == 2:
        ang = (np.arange(n_dirs) + 0.5) * (2.0 * math.pi / n_dirs)
        dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    else:
        # product rule: Gauss-Legendre in cos(polar), uniform azimuth
        n_mu = max(4, n_dirs // 8)
        mu, wmu = np.polynomial.legendre.leggauss(n_mu)
        ang = (np.arange(8) + 0.5) * (2.0 * math.pi / 8)
        mm, aa = np.meshgrid(mu, ang, indexing="ij")
        st = np.sqrt(1.0 - mm ** 2)
        dirs = np.stack([st * np.cos(aa), st * np.sin(aa),
                         np.broadcast_to(mm, aa.shape)], axis=-1).reshape(-1, 3)
        w = np.repeat(wmu / (2.0 * 8), 8)
        mags = b.magnitude(x[None, :] + s * dirs)
        return float((mags * w).sum())
    mags = b.magnitude(x[None, :] + s * dirs)
    return float(np.mean(mags))


def kato_norm(spec: ProcessSpec, b: DriftField, r: float,
              x_grid) -> tuple[float, float]:
    """K_r = sup over the x grid of int_{B(x,r)} |b(y)| U(x-y)/|x-y| dy.

    Polar form around each x: sigma_{d-1} int_0^r m(x,s) V(s)^2 / s^2 ds,
    which is integrable only when the lower scaling order exceeds one.
    Returns (value, quadrature error bound).
    """
    if r <= 0:
        raise ValueError("kato_norm requires r > 0")
    orders = ([a for a, _w, _A in spec.components] if spec.is_power_law
              else [spec.alpha])
    if min(orders) <= 1.0:
        raise SingularityError(
            "Kato integrand V(s)^2/s^2 is non-integrable at 0: the lower "
            f"scaling order {min(orders)} is <= 1")
    x_grid = np.atleast_2d(np.asarray(x_grid, float))
    sig = sphere_surface(spec.d)
    best = 0.0
    best_err = 0.0
    for x in x_grid:
        if b.kind in ("zero", "constant"):
            mag = float(b.magnitude(x)) if b.kind == "constant" else 0.0
            def f(s, m=mag):
                v = v_scale(spec, np.array([s]))[0]
                return m * v * v / (s * s)
        else:
            def f(s, x=x):
                v = v_scale(spec, np.array([s]))[0]
                m = _angular_mean_magnitude(b, x, s, 64)
                return m * v * v / (s * s)
        val, err = integrate.quad(f, 0.0, r, limit=200, epsabs=1e-13,
                                  epsrel=1e-11)
        val *= sig
        err *= sig
        if val > best:
            best, best_err = val, err
    return best, best_err


def kato_modulus_scan(spec: ProcessSpec, b: DriftField, r_grid,
                      x_grid=None) -> list[tuple[float, float, float]]:
    """Table of (r, K_r, err) along a decreasing grid of radii."""
    r_grid = np.asarray(r_grid, float)
    if np.any(r_grid <= 0) or np.any(np.diff(r_grid) >= 0):
        raise ValueError("kato scan needs a strictly decreasing positive grid")
    if x_grid is None:
        x_grid = np.zeros((1, spec.d))
    return [(float(r), *kato_norm(spec, b, float(r), x_grid)) for r in r_grid]


def _u_band_integral(spec: ProcessSpec, eps: float, power: int) -> float:
    """sigma_{d-1} int_0^eps V(s)^2 / s^power ds (power 1 or 2)."""
    sig = sphere_surface(spec.d)

    def f(s):
        v = v_scale(spec, np.array([s]))[0]
        return v * v / s ** power

    val, _ = integrate.quad(f, 0.0, eps, limit=200)
    return sig * val


@dataclass(frozen=True)
class KappaEstimate:
    kappa: float
    kappa_hat: float
    err_kappa: float
    err_kappa_hat: float


def _kappa_on_nodes(spec, domain, b, x, y, green, nodes: Grid,
                    band: float) -> tuple[float, float]:
    z = nodes.points
    vol = nodes.cell_volume
    dz = delta(domain, z)
    sy = np.linalg.norm(z - y[None, :], axis=1)
    sx = np.linalg.norm(z - x[None, :], axis=1)
    keep = (sx >= band) & (sy >= band)
    gxz = np.asarray(green(x[None, :], z[keep]), float).ravel()
    gzy = np.asarray(green(z[keep], y[None, :]), float).ravel()
    gxy = float(green(x, y))
    mag = np.asarray(b.magnitude(z[keep]), float)
    den = np.minimum(dz[keep], sy[keep])
    core = mag * gxz * gzy / (gxy * den)
    kappa = float(core.sum() * vol)

    dx = delta(domain, x)
    sxy = float(np.linalg.norm(x - y))
    whole = min(dx, sxy)
    hat = float((core * whole / np.minimum(dx, sx[keep])).sum() * vol)

    # analytic band corrections from the local U(s)/s form of the integrand
    mag_x = float(b.magnitude(x))
    mag_y = float(b.magnitude(y))
    c_u1 = _u_band_integral(spec, band, 2)   # int U(s)/s over the band
    c_u2 = _u_band_integral(spec, band, 1)   # int U(s) over the band
    kappa += mag_y * c_u1 + mag_x * c_u2 / whole
    hat += mag_y * c_u1 + mag_x * c_u1
    return kappa, hat


def kappa_pair(spec: ProcessSpec, domain: Domain, b: DriftField, x, y,
               green, grid: Grid, band: float | None = None,
               refine: bool = True) -> KappaEstimate:
    """The two drift-weighted 3G integrals (kappa, kappa-hat) for one pair.

    Exclusion-band quadrature on the supplied interior grid with analytic
    corrections on the bands around x and y; the error estimate comes from
    one mesh-halving refinement.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if np.array_equal(x, y):
        raise ValueError("kappa_pair requires x != y")
    if delta(domain, x) <= 0 or delta(domain, y) <= 0:
        raise ValueError("kappa_pair requires interior points")
    if band is None:
        band = grid.spacing
    k1, h1 = _kappa_on_nodes(spec, domain, b, x, y, green, grid, band)
    if not refine:
        return KappaEstimate(k1, h1, abs(k1) * 0.25, abs(h1) * 0.25)
    from .geometry import interior_grid
    fine = interior_grid(domain, grid.spacing / 2.0, 0.0)
    k2, h2 = _kappa_on_nodes(spec, domain, b, x, y, green, fine, band / 2.0)
    return KappaEstimate(k2, h2, abs(k2 - k1), abs(h2 - h1))


# ---------------------------------------------------------------------------
# Poisson kernel


def poisson_kernel(spec: ProcessSpec, domain: Domain, green: GreenGrid, x,
                   z) -> float:
    """Exit-position density int_D G(x,y) nu(|z-y|) dy by grid quadrature
    over the GreenGrid support."""
    x = np.asarray(x, float)
    z = np.asarray(z, float)
    dist_out = np.min(np.linalg.norm(domain.centers() - z[None, :], axis=1)
                      - domain.radii())
    if dist_out <= 0:
        raise ValueError("poisson_kernel requires z outside the closed domain")
    i = green.source_index(x)
    s = np.linalg.norm(green.grid.points - z[None, :], axis=1)
    nu = levy_density(spec, s)
    vals = np.where(np.isfinite(green.values[i]), green.values[i], 0.0)
    return float((vals * nu).sum() * green.grid.cell_volume)
