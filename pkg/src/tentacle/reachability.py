"""Stationary reachable set of the tip for a constant curvature bound.

Extremal controls switch once: an arc of maximal curvature followed by a
straight piece (CL) or by the opposite arc (CC). Their tips trace four
curves; the boundary of the reachable set lies on them, so the set is a
union of faces of the curve arrangement.
"""

from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import shapely
from shapely.geometry import LinearRing, MultiLineString, Point, Polygon
from shapely.ops import polygonize, unary_union

from .equilibria import integrate_shape
from .output import csv_text, svg_polylines

KINDS = ("CL", "CC")


class BoundaryError(ValueError):
    pass


@dataclass(frozen=True)
class DubinsControl:
    ubar: int
    sbar: float
    kind: str = "CL"

    def __post_init__(self):
        if self.ubar not in (-1, 1):
            raise ValueError(f"ubar must be -1 or +1, got {self.ubar!r}")
        if not 0.0 <= self.sbar <= 1.0:
            raise ValueError(f"sbar must lie in [0, 1], got {self.sbar!r}")
        if self.kind not in KINDS:
            raise ValueError(f"kind must be CL or CC, got {self.kind!r}")

    def rates(self, omega_bar0: float, N: int) -> np.ndarray:
        """Curvature samples on the nodes s_k = k/N."""
        s = np.arange(N + 1) / N
        second = 0.0 if self.kind == "CL" else -self.ubar
        return omega_bar0 * np.where(s < self.sbar, self.ubar, second)


def _chord(theta0, c, L):
    """Displacement along an arc of length L, curvature c, starting angle theta0."""
    half = 0.5 * c * L
    length = L * np.sinc(half / np.pi)          # 2 sin(cL/2)/c, stable as c -> 0
    mid = theta0 + half
    return np.stack([np.sin(mid) * length, -np.cos(mid) * length], axis=-1)


def _tips_right(kind: str, sbar, omega_bar0: float) -> np.ndarray:
    """Closed-form tips for ubar = +1 (vectorized over sbar)."""
    sbar = np.asarray(sbar, dtype=float)
    first = _chord(0.0, omega_bar0, sbar)
    theta1 = omega_bar0 * sbar
    c2 = 0.0 if kind == "CL" else -omega_bar0
    return first + _chord(theta1, c2, 1.0 - sbar)


def _mirror(p):
    p = np.array(p, dtype=float)
    p[..., 0] = -p[..., 0]
    return p


def extremal_tip(c: DubinsControl, omega_bar0: float) -> np.ndarray:
    """Tip q(1) of the extremal control in closed form."""
    if omega_bar0 < 0:
        raise ValueError("omega_bar0 must be non-negative")
    tip = _tips_right(c.kind, c.sbar, float(omega_bar0))
    return tip if c.ubar == 1 else _mirror(tip)


def extremal_tip_quadrature(c: DubinsControl, omega_bar0: float, N: int) -> np.ndarray:
    """Tip from the rectangle-rule shape integration used by the equilibria module."""
    if N < 2:
        raise ValueError("N must be at least 2")
    rate = c.rates(float(omega_bar0), N)
    theta = np.concatenate([[0.0], np.cumsum(rate[:-1])]) / N      # theta_0..theta_N
    t = np.stack([np.sin(theta[1:]), -np.cos(theta[1:])], axis=1)
    return t.sum(axis=0) / N


def extremal_shape(c: DubinsControl, omega_bar0: float, N: int) -> np.ndarray:
    """Nodes q_0..q_N of the extremal configuration."""
    return integrate_shape(c.rates(float(omega_bar0), N), 1.0 / N)


class Membership(enum.Enum):
    INSIDE = "inside"
    BOUNDARY = "boundary"
    OUTSIDE = "outside"


@dataclass(frozen=True, eq=False)
class ReachBoundary:
    """Boundary loops of the reachable set (closed, first point not repeated).

    ``tips`` holds the extremal sweep: one row ``(kind, ubar, sbar, x, y)``
    per control (kind 0 = CL, 1 = CC).
    """

    omega_bar0: float
    outer: list
    holes: list
    tips: np.ndarray = field(repr=False)

    @property
    def loops(self):
        return list(self.outer) + list(self.holes)

    @property
    def points(self) -> np.ndarray:
        loops = self.loops
        return np.concatenate(loops) if loops else np.zeros((0, 2))

    @property
    def has_hole(self) -> bool:
        return len(self.holes) > 0

    def tips_csv(self) -> str:
        rows = [(KINDS[int(k)], int(u), s, x, y) for k, u, s, x, y in self.tips]
        return csv_text(("kind", "ubar", "sbar", "tipx", "tipy"), rows)

    def svg(self) -> str:
        loops = self.loops
        colors = ["#000000"] * len(self.outer) + ["#888888"] * len(self.holes)
        return svg_polylines(loops, closed=[True] * len(loops), strokes=colors)


def _family_tips(args):
    kind, sbar, omega_bar0 = args
    return _tips_right(kind, sbar, omega_bar0)


def _sweep(omega_bar0, sbar, workers):
    jobs = [(kind, sbar, omega_bar0) for kind in KINDS]
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            right = list(pool.map(_family_tips, jobs))     # map keeps job order
    else:
        right = [_family_tips(j) for j in jobs]
    curves, rows = [], []
    for kind_id, pts in enumerate(right):
        for ubar, curve in ((1, pts), (-1, _mirror(pts))):
            curves.append(curve)
            rows.append(np.column_stack([np.full(len(sbar), kind_id), np.full(len(sbar), ubar), sbar, curve]))
    return curves, np.concatenate(rows)


def _probe_tips(omega_bar0, n):
    """Tips of two-switch controls with curvatures in {-1, 0, 1}^3 on an n-point switch grid."""
    s = np.linspace(0.0, 1.0, n)
    s1, s2 = np.meshgrid(s, s, indexing="ij")
    keep = s1 <= s2
    s1, s2 = s1[keep], s2[keep]
    out = []
    for a in (-1, 0, 1):
        for b in (-1, 0, 1):
            for c in (-1, 0, 1):
                p = _chord(0.0, a * omega_bar0, s1)
                th = a * omega_bar0 * s1
                p = p + _chord(th, b * omega_bar0, s2 - s1)
                th = th + b * omega_bar0 * (s2 - s1)
                out.append(p + _chord(th, c * omega_bar0, 1.0 - s2))
    return np.concatenate(out)


def _ring_points(ring) -> np.ndarray:
    pts = np.asarray(ring.coords)[:-1]
    if not LinearRing(pts).is_ccw:
        pts = pts[::-1]
    # deterministic start: lowest then leftmost vertex
    i = int(np.lexsort((pts[:, 0], pts[:, 1]))[0])
    return np.ascontiguousarray(np.roll(pts, -i, axis=0))


def reachable_boundary(omega_bar0: float, resolution: int = 256, workers: int | None = None,
                       probe_resolution: int | None = None, min_area: float = 1e-10) -> ReachBoundary:
    """Boundary of the tip's reachable set for the constant bound ``omega_bar0``."""
    if resolution < 8:
        raise ValueError("resolution must be at least 8")
    omega_bar0 = float(omega_bar0)
    if omega_bar0 < 0:
        raise ValueError("omega_bar0 must be non-negative")
    sbar = np.linspace(0.0, 1.0, resolution)
    curves, tips = _sweep(omega_bar0, sbar, workers)

    lines = unary_union(MultiLineString([c for c in curves]))
    faces = [f for f in polygonize(lines) if f.area > min_area]
    if not faces:
        # degenerate arrangement (tiny omega_bar0): hull of the tips
        hull = shapely.convex_hull(shapely.MultiPoint(tips[:, 3:5]))
        ring = hull.exterior if isinstance(hull, Polygon) else None
        outer = [_ring_points(ring)] if ring is not None else [np.unique(tips[:, 3:5], axis=0)]
        return ReachBoundary(omega_bar0, outer, [], tips)

    # Faces without a probe tip are unreachable, except slivers from noding
    # nearly coincident curves, which are far below the sweep resolution.
    sliver = 0.25 / resolution**2
    probes = _probe_tips(omega_bar0, probe_resolution or max(64, resolution // 2))
    reached = []
    for f in faces:
        if f.area < sliver or np.any(shapely.contains_xy(f, probes[:, 0], probes[:, 1])):
            reached.append(f)
    region = unary_union(reached)
    polys = list(region.geoms) if hasattr(region, "geoms") else [region]
    polys = [g for g in polys if g.area >= sliver]
    polys.sort(key=lambda g: (-g.area, g.bounds))
    outer, holes = [], []
    for poly in polys:
        outer.append(_ring_points(poly.exterior))
        for interior in sorted(poly.interiors, key=lambda r: Polygon(r).bounds):
            if Polygon(interior).area >= sliver:
                holes.append(_ring_points(interior))
    return ReachBoundary(omega_bar0, outer, holes, tips)


def reachable_boundary_for(p, resolution: int = 256, **kw) -> ReachBoundary:
    """Reachable set for a parameter set; only constant effective bounds are supported."""
    if not p.constant_omega_bar:
        raise BoundaryError("reachable set is only available for a constant omega_bar")
    return reachable_boundary(float(p.omega_bar[0]), resolution, **kw)


def contains(point, b: ReachBoundary) -> Membership:
    """Even-odd membership against all loops, with a boundary band of two segment lengths."""
    loops = b.loops
    if not loops or any(len(lp) < 3 or not np.all(np.isfinite(lp)) for lp in loops):
        raise BoundaryError("malformed reachable boundary")
    p = np.asarray(point, dtype=float)
    if np.hypot(p[0], p[1]) > 1.0:
        return Membership.OUTSIDE
    pt = Point(p[0], p[1])
    for lp in loops:
        seg = float(np.max(np.hypot(*(np.roll(lp, -1, axis=0) - lp).T)))
        if LinearRing(lp).distance(pt) <= 2.0 * seg:
            return Membership.BOUNDARY
    count = sum(bool(Polygon(lp).contains(pt)) for lp in loops)
    return Membership.INSIDE if count % 2 == 1 else Membership.OUTSIDE


def outer_circle_gap(b: ReachBoundary) -> float:
    """Largest distance from an outer-boundary point to the unit circle."""
    pts = np.concatenate(b.outer)
    return float(np.max(np.abs(1.0 - np.hypot(pts[:, 0], pts[:, 1]))))
