"""Planar geometry: convex hull, minimum-area boxes, overlap tests, rotations.

Points are passed around as ``(x, y)`` pairs or ``(N, 2)`` numpy arrays.
All functions are pure.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateInput

DEDUP_TOL = 1e-12
OVERLAP_TOL = 1e-9


def wrap_angle(angle: float) -> float:
    """Wrap to (-pi, pi]."""
    a = math.remainder(angle, 2.0 * math.pi)
    if a == -math.pi:
        a = math.pi
    return a


def normalize_yaw_pi(yaw: float) -> float:
    """Reduce an orientation to [0, pi), the symmetry group of a rectangle."""
    y = math.fmod(yaw, math.pi)
    if y < 0.0:
        y += math.pi
    if y >= math.pi:
        y -= math.pi
    return y


@dataclass(frozen=True)
class Polygon2D:
    vertices: np.ndarray  # (N, 2)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 2)
        if len(v) < 3:
            raise DegenerateInput(f"polygon needs >= 3 vertices, got {len(v)}")
        if not np.all(np.isfinite(v)):
            raise DegenerateInput("polygon vertices must be finite")
        object.__setattr__(self, "vertices", v)

    def __len__(self):
        return len(self.vertices)

    @property
    def area(self) -> float:
        x, y = self.vertices[:, 0], self.vertices[:, 1]
        return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


@dataclass(frozen=True)
class OrientedBox2D:
    """Rectangle with half extents ``(a, b)``, ``a >= b``; ``yaw`` is the
    direction of the ``a`` axis, in [0, pi)."""

    center: tuple
    half_extents: tuple
    yaw: float

    def __post_init__(self):
        a, b = (float(v) for v in self.half_extents)
        if not (a >= b > 0.0):
            raise DegenerateInput(f"half extents must satisfy a >= b > 0, got ({a}, {b})")
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        object.__setattr__(self, "half_extents", (a, b))
        object.__setattr__(self, "yaw", normalize_yaw_pi(float(self.yaw)))

    @classmethod
    def from_axes(cls, center, extent_u: float, extent_v: float, yaw_u: float) -> "OrientedBox2D":
        """Build from half extents along an arbitrary axis pair.

        ``extent_u`` lies along ``yaw_u`` and ``extent_v`` along ``yaw_u + pi/2``.
        The result is re-expressed with the long axis first.
        """
        if extent_u >= extent_v:
            return cls(center, (extent_u, extent_v), yaw_u)
        return cls(center, (extent_v, extent_u), yaw_u + 0.5 * math.pi)

    @property
    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return np.array([c, s]), np.array([-s, c])

    @property
    def area(self) -> float:
        return 4.0 * self.half_extents[0] * self.half_extents[1]

    def corners(self) -> np.ndarray:
        """Four corners, counterclockwise."""
        u, v = self.axes
        a, b = self.half_extents
        c = np.asarray(self.center)
        return np.array([c - a * u - b * v, c + a * u - b * v, c + a * u + b * v, c - a * u + b * v])

    def signed_distance(self, points) -> np.ndarray:
        """Signed distance to the boundary (negative inside), Chebyshev style
        on the two axes: ``max(|du| - a, |dv| - b)``."""
        p = np.asarray(points, dtype=float).reshape(-1, 2) - np.asarray(self.center)
        u, v = self.axes
        a, b = self.half_extents
        return np.maximum(np.abs(p @ u) - a, np.abs(p @ v) - b)


def _dedupe_sorted(pts: np.ndarray) -> np.ndarray:
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts = pts[order]
    step = np.max(np.abs(np.diff(pts, axis=0)), axis=1)
    return pts[np.concatenate([[True], step > DEDUP_TOL])]


def _prune_interior(pts: np.ndarray) -> np.ndarray:
    """Akl-Toussaint: drop points strictly inside the octagon of extreme points."""
    if len(pts) < 64:
        return pts
    x, y = pts[:, 0], pts[:, 1]
    keys = (x, x + y, y, y - x, -x, -x - y, -y, x - y)  # CCW sweep of directions
    idx = []
    for k in keys:
        i = int(np.argmax(k))
        if not idx or i != idx[-1]:
            idx.append(i)
    if len(idx) > 1 and idx[0] == idx[-1]:
        idx.pop()
    poly = pts[idx]
    if len(poly) < 3:
        return pts
    inside = np.ones(len(pts), dtype=bool)
    for a, b in zip(poly, np.roll(poly, -1, axis=0)):
        cross = (b[0] - a[0]) * (y - a[1]) - (b[1] - a[1]) * (x - a[0])
        scale = max(abs(b[0] - a[0]), abs(b[1] - a[1]), 1.0)
        inside &= cross > 1e-9 * scale
    return pts[~inside]


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull_2d(points: Iterable[Sequence[float]]) -> Polygon2D:
    """Andrew's monotone chain. Returns a strictly convex CCW polygon."""
    pts = np.asarray(list(points) if not isinstance(points, np.ndarray) else points, dtype=float)
    pts = pts.reshape(-1, 2)
    if len(pts) < 3:
        raise DegenerateInput(f"convex hull needs >= 3 points, got {len(pts)}")
    if not np.all(np.isfinite(pts)):
        raise DegenerateInput("points must be finite")
    pts = _dedupe_sorted(_prune_interior(pts))
    P = pts.tolist()

    lower: list = []
    for p in P:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0.0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in reversed(P):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0.0:
            upper.pop()
        upper.append(p)
    hull = lower[:-1] + upper[:-1]
    # near-duplicates that were not lexsort neighbours can survive the first pass
    kept = []
    for p in hull:
        if not kept or max(abs(p[0] - kept[-1][0]), abs(p[1] - kept[-1][1])) > DEDUP_TOL:
            kept.append(p)
    while len(kept) > 1 and max(abs(kept[0][0] - kept[-1][0]), abs(kept[0][1] - kept[-1][1])) <= DEDUP_TOL:
        kept.pop()
    hull = kept
    if len(hull) < 3:
        raise DegenerateInput("points are collinear")
    return Polygon2D(np.array(hull))


def _as_hull_vertices(hull) -> np.ndarray:
    if isinstance(hull, Polygon2D):
        return hull.vertices
    return Polygon2D(hull).vertices


def min_area_obb(hull) -> OrientedBox2D:
    """Minimum-area enclosing rectangle of a convex CCW polygon by rotating calipers.

    For each hull edge the three remaining support points (far along the
    edge, behind it, and opposite it) are advanced monotonically, so the sweep
    is linear in the vertex count.
    """
    V = _as_hull_vertices(hull)
    n = len(V)
    edges = np.roll(V, -1, axis=0) - V
    lengths = np.hypot(edges[:, 0], edges[:, 1])
    if np.any(lengths <= 0.0):
        raise DegenerateInput("hull has a zero-length edge")
    U = edges / lengths[:, None]
    N = np.column_stack([-U[:, 1], U[:, 0]])  # inward normals of a CCW polygon

    def climb(idx: int, direction: np.ndarray) -> int:
        for _ in range(n):
            nxt = (idx + 1) % n
            if V[nxt] @ direction > V[idx] @ direction:
                idx = nxt
            else:
                break
        return idx

    u0, n0 = U[0], N[0]
    i_max_u = int(np.argmax(V @ u0))
    i_min_u = int(np.argmin(V @ u0))
    i_max_n = int(np.argmax(V @ n0))

    best = None
    for i in range(n):
        u, nv = U[i], N[i]
        i_max_u = climb(i_max_u, u)
        i_max_n = climb(i_max_n, nv)
        i_min_u = climb(i_min_u, -u)
        base = V[i]
        lo_u = (V[i_min_u] - base) @ u
        hi_u = (V[i_max_u] - base) @ u
        hi_n = (V[i_max_n] - base) @ nv
        area = (hi_u - lo_u) * hi_n
        if best is None or area < best[0]:
            best = (area, i, lo_u, hi_u, hi_n)

    _, i, lo_u, hi_u, hi_n = best
    u, nv = U[i], N[i]
    center = V[i] + 0.5 * (lo_u + hi_u) * u + 0.5 * hi_n * nv
    box = OrientedBox2D.from_axes(center, 0.5 * (hi_u - lo_u), 0.5 * hi_n, math.atan2(u[1], u[0]))
    return _canonical_square(box)


def _canonical_square(box: OrientedBox2D) -> OrientedBox2D:
    a, b = box.half_extents
    if a - b <= 1e-12 * a and box.yaw >= 0.5 * math.pi:
        return OrientedBox2D(box.center, (a, b), box.yaw - 0.5 * math.pi)
    return box


def obb_overlap(a: OrientedBox2D, b: OrientedBox2D, tol: float = OVERLAP_TOL) -> bool:
    """True iff the interiors intersect (separating-axis test on 4 edge normals).

    Projections that overlap by no more than ``tol`` count as touching.
    """
    ca, cb = a.corners(), b.corners()
    for axis in (*a.axes, *b.axes):
        pa, pb = ca @ axis, cb @ axis
        if min(pa.max(), pb.max()) - max(pa.min(), pb.min()) <= tol:
            return False
    return True


def rotate_about(p, center, angle: float) -> tuple[float, float]:
    c, s = math.cos(angle), math.sin(angle)
    dx, dy = p[0] - center[0], p[1] - center[1]
    return (center[0] + c * dx - s * dy, center[1] + s * dx + c * dy)


def rotation_matrix_2d(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])
