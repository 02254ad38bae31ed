"""Bounded smooth domains: balls and disjoint unions of balls.

Restricting to balls keeps the distance function, tangent balls, and the
sphere exit laws exact, so every geometric quantity downstream is
analytically checkable.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np


class EmptyGridError(ValueError):
    """Interior grid came out empty for the requested spacing/band."""


@dataclass(frozen=True)
class Ball:
    center: tuple[float, ...]
    radius: float


@dataclass(frozen=True)
class Domain:
    balls: tuple[Ball, ...]

    @property
    def dim(self) -> int:
        return len(self.balls[0].center)

    @property
    def diam(self) -> float:
        return geometry_summary(self)[0]

    @property
    def r0(self) -> float:
        return geometry_summary(self)[1]

    @property
    def distortion(self) -> float:
        return geometry_summary(self)[2]

    def centers(self) -> np.ndarray:
        return np.array([b.center for b in self.balls], dtype=float)

    def radii(self) -> np.ndarray:
        return np.array([b.radius for b in self.balls], dtype=float)


def ball(center, radius: float) -> Domain:
    return ball_union([(center, radius)])


def ball_union(balls) -> Domain:
    """Domain from (center, radius) pairs; balls must be pairwise disjoint
    with positive gaps."""
    items = []
    for c, r in balls:
        c = tuple(float(x) for x in c)
        r = float(r)
        if r <= 0:
            raise ValueError(f"ball radius must be positive, got {r}")
        items.append(Ball(c, r))
    if not items:
        raise ValueError("domain needs at least one ball")
    d = len(items[0].center)
    if d < 2:
        raise ValueError("dimension must be >= 2")
    if any(len(b.center) != d for b in items):
        raise ValueError("all centers must share one dimension")
    for i in range(len(items)):
        for j in range(i + 1, len(items)):
            gap = (math.dist(items[i].center, items[j].center)
                   - items[i].radius - items[j].radius)
            if gap <= 0:
                raise ValueError(
                    f"balls {i} and {j} overlap or touch (gap {gap:.3g})")
    return Domain(tuple(items))


def delta(domain: Domain, x) -> np.ndarray | float:
    """Distance to the complement; 0 outside the domain by convention."""
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 1
    pts = x.reshape(-1, x.shape[-1])
    c = domain.centers()
    r = domain.radii()
    dist = np.linalg.norm(pts[:, None, :] - c[None, :, :], axis=2)
    vals = np.max(np.maximum(r[None, :] - dist, 0.0), axis=1)
    return float(vals[0]) if scalar else vals.reshape(x.shape[:-1])


def contains(domain: Domain, x) -> np.ndarray | bool:
    v = delta(domain, x)
    return v > 0.0 if np.isscalar(v) else v > 0.0


def r_max(domain: Domain, y, z) -> float:
    """max(delta(y), delta(z), |y-z|), the scale entering the sharp
    Green estimate."""
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    return float(max(delta(domain, y), delta(domain, z),
                     np.linalg.norm(y - z)))


def geometry_summary(domain: Domain) -> tuple[float, float, float]:
    """(diam, localization radius r0, distortion = diam / r0).

    For unions, r0 = min(min radius, half the minimal gap): a conservative
    scale at which interior and exterior tangent balls exist everywhere.
    """
    balls = domain.balls
    if len(balls) == 1:
        R = balls[0].radius
        return 2.0 * R, R, 2.0
    diam = 0.0
    min_gap = math.inf
    for i in range(len(balls)):
        for j in range(i + 1, len(balls)):
            cc = math.dist(balls[i].center, balls[j].center)
            diam = max(diam, cc + balls[i].radius + balls[j].radius)
            min_gap = min(min_gap, cc - balls[i].radius - balls[j].radius)
    r0 = min(min(b.radius for b in balls), min_gap / 2.0)
    return diam, r0, diam / r0


def bounding_box(domain: Domain) -> tuple[np.ndarray, np.ndarray]:
    c = domain.centers()
    r = domain.radii()[:, None]
    return (c - r).min(axis=0), (c + r).max(axis=0)


@dataclass(frozen=True)
class Grid:
    """Lattice cells of spacing h with centers strictly inside the domain.

    points are sorted lexicographically, so the ordering is deterministic.
    """

    points: np.ndarray          # (M, d), read-only
    spacing: float

    def __post_init__(self):
        self.points.setflags(write=False)

    @property
    def size(self) -> int:
        return int(self.points.shape[0])

    @property
    def dim(self) -> int:
        return int(self.points.shape[1])

    @property
    def cell_volume(self) -> float:
        return float(self.spacing ** self.dim)

    def lattice_lookup(self):
        """(origin index, bbox shape, flat cell-id map) for O(1) tallying.

        The map covers the lattice bounding box of the grid; entries are
        the cell index or -1 for lattice sites outside the grid.
        """
        idx = np.rint(self.points / self.spacing).astype(np.int64)
        lo = idx.min(axis=0)
        shape = idx.max(axis=0) - lo + 1
        flat = np.full(int(np.prod(shape)), -1, dtype=np.int64)
        strides = np.cumprod(np.concatenate([[1], shape[::-1][:-1]]))[::-1]
        flat_ids = ((idx - lo) * strides).sum(axis=1)
        flat[flat_ids] = np.arange(self.size)
        return lo, shape, strides, flat


def interior_grid(domain: Domain, spacing: float, band: float = 0.0) -> Grid:
    """Lattice points of h Z^d (origin at 0) with delta >= band, inside D."""
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    if band < 0:
        raise ValueError("band must be nonnegative")
    lo, hi = bounding_box(domain)
    i_lo = np.floor(lo / spacing).astype(int) - 1
    i_hi = np.ceil(hi / spacing).astype(int) + 1
    axes = [np.arange(a, b + 1) for a, b in zip(i_lo, i_hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1) * spacing
    dv = delta(domain, pts)
    keep = (dv > 0.0) & (dv >= band)
    pts = pts[keep]
    if pts.shape[0] == 0:
        raise EmptyGridError(
            f"no lattice points with delta >= {band} at spacing {spacing}")
    order = np.lexsort(pts.T[::-1])
    return Grid(np.ascontiguousarray(pts[order]), float(spacing))


def domain_to_json(domain: Domain) -> str:
    return json.dumps(
        {"balls": [{"center": list(b.center), "radius": b.radius}
                   for b in domain.balls]}, sort_keys=True)


def domain_from_json(doc: str | dict) -> Domain:
    obj = json.loads(doc) if isinstance(doc, str) else doc
    return ball_union([(b["center"], b["radius"]) for b in obj["balls"]])
