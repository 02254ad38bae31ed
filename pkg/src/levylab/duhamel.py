"""Green-level perturbation series for the drifted generator.

The drifted Green function solves G~ = G + integral G~ b.grad G, iterated
here as the term recursion G_n(x,y) = int G_{n-1}(x,z) b(z).grad_z G(z,y) dz
on a lattice.  Quadrature excludes a band around the two singular points
and adds the analytic correction obtained from the local U(s) form of the
base kernel; the certified geometric remainder uses q = C0 * max kappa,
with an uncertified empirical fallback when q >= 1 (large domains), since
terms may still decay through sign cancellation that the kappa bound
ignores.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Domain, Grid, delta, interior_grid
from .kernels import DriftField, GreenGrid, _u_band_integral
from .spectral import ProcessSpec


class DivergenceError(RuntimeError):
    """Series terms grow: no contraction at this domain size."""


def grad_green_num(green, z, y, h: float, domain: Domain | None = None) -> np.ndarray:
    """Central-difference gradient of a two-point kernel in its first
    argument, Richardson-extrapolated from steps h and h/2."""
    z = np.asarray(z, float)
    y = np.asarray(y, float)
    if np.linalg.norm(z - y) <= 2.0 * h:
        raise ValueError("finite-difference step too large near the diagonal")
    if domain is not None and delta(domain, z) <= 2.0 * h:
        raise ValueError("finite-difference step too large near the boundary")
    d = z.size

    def central(step):
        g = np.empty(d)
        for k in range(d):
            e = np.zeros(d)
            e[k] = step
            g[k] = (float(green(z + e, y)) - float(green(z - e, y))) / (2 * step)
        return g

    g1 = central(h)
    g2 = central(h / 2.0)
    return (4.0 * g2 - g1) / 3.0


def measure_grad_bound(green, grad, domain: Domain, z_pts, y_pts,
                       band: float) -> float:
    """Measured C0: max of |grad_z G(z,y)| (|z-y| ^ delta(z) ^ 1) / G(z,y)
    over off-band pairs."""
    z_pts = np.asarray(z_pts, float)
    y_pts = np.asarray(y_pts, float)
    best = 0.0
    dz = delta(domain, z_pts)
    for j, y in enumerate(y_pts):
        s = np.linalg.norm(z_pts - y[None, :], axis=1)
        keep = s >= band
        if not np.any(keep):
            continue
        g = np.asarray(green(z_pts[keep], y[None, :]), float).ravel()
        gr = np.asarray(grad(z_pts[keep], y[None, :]), float)
        gr = gr.reshape(-1, z_pts.shape[1])
        num = np.linalg.norm(gr, axis=1) * np.minimum(
            np.minimum(s[keep], dz[keep]), 1.0)
        ok = g > 0
        best = max(best, float((num[ok] / g[ok]).max(initial=0.0)))
    return best


def _pair_green(green, xs: np.ndarray, ys: np.ndarray,
                chunk: int = 256) -> np.ndarray:
    """green on the product xs x ys, chunked over ys columns."""
    out = np.empty((xs.shape[0], ys.shape[0]))
    for j0 in range(0, ys.shape[0], chunk):
        j1 = min(j0 + chunk, ys.shape[0])
        out[:, j0:j1] = green(xs[:, None, :], ys[None, j0:j1, :])
    return out


def _drift_grad_matrix(b: DriftField, grad, nodes: np.ndarray, vol: float,
                       band: float, chunk: int = 256) -> np.ndarray:
    """S[z, y] = b(z) . grad_z G(z, y) * cell volume, band entries zeroed."""
    M = nodes.shape[0]
    bvec = b(nodes)
    S = np.empty((M, M))
    for j0 in range(0, M, chunk):
        j1 = min(j0 + chunk, M)
        g = grad(nodes[:, None, :], nodes[None, j0:j1, :])
        S[:, j0:j1] = np.einsum("zq,zyq->zy", bvec, g) * vol
        s = np.linalg.norm(nodes[:, None, :] - nodes[None, j0:j1, :], axis=2)
        S[:, j0:j1][s < band] = 0.0
    return S


@dataclass
class SeriesState:
    """Everything duhamel_step needs, plus the measured contraction data."""

    spec: ProcessSpec
    domain: Domain
    b: DriftField
    grid: Grid
    sources: np.ndarray
    band: float
    green: object
    grad: object
    base: GreenGrid                      # G_0 = G_D on sources x nodes
    S: np.ndarray                        # quadrature matrix on nodes x nodes
    c_u1: float                          # int over band of U(s)/s
    c_u2: float                          # int over band of U(s)
    c0: float
    c3: float
    q: float
    terms: list[GreenGrid] = field(default_factory=list)

    @property
    def certified(self) -> bool:
        return self.q < 1.0

    @property
    def window_certified(self) -> bool:
        # q below 1/4 activates the small-domain two-sided window
        return self.q < 0.25


def kappa_matrix(spec: ProcessSpec, domain: Domain, b: DriftField,
                 green, xs: np.ndarray, grid: Grid,
                 band: float) -> np.ndarray:
    """kappa(x, y) for all x in xs, y in grid nodes, by the band-corrected
    lattice quadrature (nan inside the band)."""
    nodes = grid.points
    vol = grid.cell_volume
    dz = delta(domain, nodes)
    mag = np.asarray(b.magnitude(nodes), float)
    Gzz = _pair_green(green, nodes, nodes)
    sep = np.linalg.norm(nodes[:, None, :] - nodes[None, :, :], axis=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        T = np.where(sep >= band,
                     Gzz * mag[:, None] / np.minimum(dz[:, None], sep),
                     0.0) * vol
    Gxy = _pair_green(green, xs, nodes)
    sxz = np.linalg.norm(xs[:, None, :] - nodes[None, :, :], axis=2)
    Gm = np.where((sxz >= band) & np.isfinite(Gxy), Gxy, 0.0)
    num = Gm @ T
    dx = delta(domain, xs)
    c_u1 = _u_band_integral(spec, band, 2)
    c_u2 = _u_band_integral(spec, band, 1)
    mag_x = np.asarray(b.magnitude(xs), float)
    whole = np.minimum(dx[:, None], sxz)
    with np.errstate(divide="ignore", invalid="ignore"):
        kap = num / Gxy
        kap += mag[None, :] * c_u1
        kap += mag_x[:, None] * c_u2 / whole
    kap[sxz < band] = np.nan
    return kap


def build_series_state(spec: ProcessSpec, domain: Domain, b: DriftField,
                       grid: Grid, sources, green, grad,
                       band: float | None = None,
                       kappa_sample: int = 24,
                       seed: int = 0) -> SeriesState:
    """Fill G_0, the quadrature matrix, and the measured (C0, C3, q)."""
    sources = np.atleast_2d(np.asarray(sources, float))
    if band is None:
        band = grid.spacing
    nodes = grid.points
    vol = grid.cell_volume

    g0 = _pair_green(green, sources, nodes)
    base = GreenGrid(domain, sources, grid, g0, np.zeros_like(g0), band)
    S = _drift_grad_matrix(b, grad, nodes, vol, band)

    # contraction measurement over sources plus a reproducible node sample
    rng = np.random.default_rng(seed)
    idx = rng.choice(nodes.shape[0], size=min(kappa_sample, nodes.shape[0]),
                     replace=False)
    xs = np.vstack([sources, nodes[idx]])
    c0 = measure_grad_bound(green, grad, domain, nodes, xs, band)
    kap = kappa_matrix(spec, domain, b, green, xs, grid, band)
    c3 = float(np.nanmax(kap))
    return SeriesState(spec, domain, b, grid, sources, band, green, grad,
                       base, S, _u_band_integral(spec, band, 2),
                       _u_band_integral(spec, band, 1), c0, c3, c0 * c3)


def duhamel_step(state: SeriesState,
                 prev: GreenGrid | None = None) -> GreenGrid:
    """Next series term from the previous one (base term if prev omitted).

    Lattice quadrature with the in-band part of the z integral restored by
    the local-kernel correction around z = x; the odd near-y singularity
    cancels over the symmetric band and enters the error estimate only.
    """
    if prev is None:
        prev = state.terms[-1] if state.terms else state.base
    nodes = state.grid.points
    sources = state.sources
    vals = prev.values
    finite = np.isfinite(vals)
    sxz = np.linalg.norm(sources[:, None, :] - nodes[None, :, :], axis=2)
    masked = np.where((sxz >= state.band) & finite, vals, 0.0)
    out = masked @ state.S

    # near-x band correction: prev(x, z) ~ ratio * U(|x-z|) locally
    near = np.argmin(np.where(sxz >= state.band, sxz, np.inf), axis=1)
    base_near = state.base.values[np.arange(sources.shape[0]), near]
    prev_near = vals[np.arange(sources.shape[0]), near]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(base_near > 0, prev_near / base_near, 0.0)
    bx = state.b(sources)
    grad_xy = state.grad(sources[:, None, :], nodes[None, :, :])
    corr = np.einsum("xq,xyq->xy", bx, grad_xy) * state.c_u2
    corr *= ratio[:, None]
    out = out + corr

    # error estimate: half the local correction plus the dropped near-y part
    mag_y = np.asarray(state.b.magnitude(nodes), float)
    dy = delta(state.domain, nodes)
    prev_mag = np.where(finite, np.abs(vals), 0.0)
    env = (mag_y[None, :] * state.c_u2 * state.c0
           * prev_mag / np.maximum(np.minimum(dy[None, :], sxz), state.band))
    sigma = 0.5 * np.abs(corr) + env
    term = GreenGrid(state.domain, sources, state.grid, out, sigma,
                     state.band, signed=True)
    return term


@dataclass
class SeriesSum:
    total: GreenGrid
    terms: list[GreenGrid]
    q: float
    c0: float
    c3: float
    certified: bool
    window_certified: bool
    remainder: np.ndarray
    empirical_ratio: float
    n_terms: int


def _sup_vs_base(term: GreenGrid, base: GreenGrid) -> float:
    """Off-band sup of |term| / G_0 (the criterion the geometric bound
    controls; terms are signed and cross zero, so term-over-term entrywise
    ratios are meaningless)."""
    m = term.off_band_mask() & np.isfinite(base.values)
    m &= base.values > 0
    if not np.any(m):
        return math.inf
    return float(np.max(np.abs(term.values[m]) / base.values[m]))


def duhamel_sum(state: SeriesState, n_max: int, tol: float = 0.0) -> SeriesSum:
    """Sum the series to n_max terms (or until the per-entry remainder
    bound drops below tol * G_D).

    With q < 1 the geometric remainder is certified; with q >= 1 the sum
    still proceeds on the empirically observed term decay and is flagged
    uncertified; growing terms raise DivergenceError.
    """
    state.terms = []
    total = state.base.values.copy()
    mask_ok = np.isfinite(total)
    total = np.where(mask_ok, total, np.inf)
    sigma = np.zeros_like(state.base.values)
    prev = None
    sups = []        # sup |G_n| / G_0 per term
    for n in range(1, n_max + 1):
        term = duhamel_step(state, prev)
        state.terms.append(term)
        sups.append(_sup_vs_base(term, state.base))
        if n >= 2 and sups[-1] >= sups[-2] >= 1.0:
            raise DivergenceError(
                f"series terms grow (sup |G_n|/G_0 = {sups[-2]:.3g}, "
                f"{sups[-1]:.3g}); no contraction at this domain size")
        total = total + np.where(mask_ok, term.values, 0.0)
        sigma = sigma + term.sigma
        prev = term
        if state.certified and tol > 0.0:
            rem_factor = state.q ** (n + 1) / (1.0 - state.q)
            if rem_factor <= tol:
                break
    n_used = len(state.terms)
    # empirical contraction ratio from the last term-to-term sup decay
    emp = (sups[-1] / sups[-2]) if len(sups) >= 2 and sups[-2] > 0 else (
        sups[-1] if sups else 0.0)
    if state.certified:
        rem_factor = state.q ** (n_used + 1) / (1.0 - state.q)
    elif emp < 1.0:
        rem_factor = emp ** (n_used + 1) / (1.0 - emp)
    else:
        rem_factor = math.inf
    base_mag = np.where(mask_ok, np.abs(state.base.values), 0.0)
    remainder = rem_factor * base_mag
    gg = GreenGrid(state.domain, state.sources, state.grid, total,
                   sigma, state.band, signed=False)
    return SeriesSum(gg, state.terms, state.q, state.c0, state.c3,
                     state.certified, state.window_certified, remainder,
                     emp, n_used)


@dataclass
class ComparabilityReport:
    min_ratio: float
    max_ratio: float
    envelope: float                  # C with ratios in [1/C, C]
    n_cells: int
    hist_counts: np.ndarray
    hist_edges: np.ndarray
    mean_ratio: float
    ratio_sigma: np.ndarray          # propagated per-cell uncertainty


def comparability_report(G: GreenGrid, Gt: GreenGrid,
                         max_rel_sigma: float = 0.25,
                         extra_mask: np.ndarray | None = None,
                         bins: int = 24) -> ComparabilityReport:
    """Ratio statistics Gt/G over cells outside both exclusion bands with
    acceptable relative uncertainty."""
    if G.values.shape != Gt.values.shape:
        raise ValueError("grids are not aligned")
    m = G.comparable_mask(max_rel_sigma) & Gt.comparable_mask(max_rel_sigma)
    m &= G.values > 0
    if extra_mask is not None:
        m &= extra_mask
    if not np.any(m):
        raise ValueError("no comparable cells")
    ratio = Gt.values[m] / G.values[m]
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.sqrt((Gt.sigma[m] / Gt.values[m]) ** 2
                      + (G.sigma[m] / G.values[m]) ** 2)
    sig = np.abs(ratio) * np.where(np.isfinite(rel), rel, 0.0)
    counts, edges = np.histogram(ratio, bins=bins)
    mn, mx = float(ratio.min()), float(ratio.max())
    env = max(mx, 1.0 / mn) if mn > 0 else math.inf
    return ComparabilityReport(mn, mx, env, int(m.sum()), counts, edges,
                               float(ratio.mean()), sig)
