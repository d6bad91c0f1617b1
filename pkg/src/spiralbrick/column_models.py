"""Parametric spiral brick columns.

A column is a base layer of bricks repeated ``layers`` times, each copy
rotated about the base centroid by ``phi`` more than the one below. Three
base families are supported:

* ``SegmentBaseSpec``: straight segments of bricks joined at a fixed turn
  ``theta`` (``pi`` gives two antiparallel rows, ``pi/2`` a rectangle).
* ``PolygonBaseSpec``: a closed polygon given by its turning angles, convex
  or concave, with the same number of bricks on every edge.
* ``PolynomialBaseSpec``: bricks marched along the closed loop formed by a
  polynomial ``f`` and its mirror ``-f``.

Brick convention: ``BrickPose.yaw`` is the heading of the brick's ``l`` axis.
In segment and polygon bases the ``l`` axis runs along the edge; along a
polynomial loop the brick's ``w`` side follows the curve instead.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from scipy.optimize import brentq

from .errors import ClosureError, DomainError, InvalidSpec
from .geometry import OrientedBox2D, obb_overlap, wrap_angle

DEFAULT_PHI = math.pi / 45.0
CLOSURE_TOL = 1e-6
ANGLE_TOL = 1e-9


@dataclass(frozen=True)
class BrickDims:
    l: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("l", "w", "h"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0.0):
                raise InvalidSpec(f"brick dimension {name} must be > 0, got {v}")


DEFAULT_DIMS = BrickDims(l=0.1, w=0.5, h=0.025)


@dataclass(frozen=True)
class SegmentBaseSpec:
    blocks: tuple
    theta: float
    lam: float = 0.01

    family = "segment"

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(int(b) for b in self.blocks))

    @property
    def s(self) -> int:
        return len(self.blocks)


@dataclass(frozen=True)
class PolygonBaseSpec:
    turning_angles: tuple
    B: int
    lam: float = 0.01

    family = "polygon"

    def __post_init__(self):
        object.__setattr__(self, "turning_angles", tuple(float(t) for t in self.turning_angles))

    @property
    def n(self) -> int:
        return len(self.turning_angles)


@dataclass(frozen=True)
class PolynomialBaseSpec:
    coefficients: tuple  # lowest degree first
    domain: tuple
    kappa: float = 0.05

    family = "polynomial"

    def __post_init__(self):
        object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))
        object.__setattr__(self, "domain", tuple(float(d) for d in self.domain))


BaseSpec = Union[SegmentBaseSpec, PolygonBaseSpec, PolynomialBaseSpec]


@dataclass(frozen=True)
class ColumnSpec:
    base: BaseSpec
    dims: BrickDims = DEFAULT_DIMS
    layers: int = 17
    phi: float = DEFAULT_PHI

    def __post_init__(self):
        if int(self.layers) != self.layers or self.layers < 1:
            raise InvalidSpec(f"layers must be an integer >= 1, got {self.layers}")


@dataclass(frozen=True)
class BrickPose:
    position: tuple  # (x, y, z) of the brick center
    yaw: float

    def __post_init__(self):
        p = tuple(float(v) for v in self.position)
        if len(p) != 3 or not all(math.isfinite(v) for v in p) or not math.isfinite(self.yaw):
            raise ValueError(f"invalid brick pose {self.position!r}, {self.yaw!r}")
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "yaw", float(self.yaw))


@dataclass(frozen=True)
class Placement:
    layer: int
    index_in_layer: int
    pose: BrickPose


@dataclass(frozen=True)
class ColumnModel:
    spec: ColumnSpec
    placements: tuple
    closure_residual: float = 0.0

    @property
    def bricks_per_layer(self) -> int:
        return len(self.placements) // self.spec.layers if self.placements else 0

    def layer(self, k: int) -> list:
        return [p for p in self.placements if p.layer == k]


def brick_footprint(pose: BrickPose, dims: BrickDims) -> OrientedBox2D:
    """Footprint rectangle of a brick, ``l`` along ``pose.yaw``."""
    x, y, _ = pose.position
    return OrientedBox2D.from_axes((x, y), 0.5 * dims.l, 0.5 * dims.w, pose.yaw)


# ---------------------------------------------------------------------------
# margin formulas
# ---------------------------------------------------------------------------

def angle_factor(theta: float) -> float:
    """Corner factor ``1 / tan(theta / 2)``; exactly 0 at ``theta = pi``."""
    if not (0.0 < theta <= math.pi):
        raise DomainError(f"theta must lie in (0, pi], got {theta}")
    if theta == math.pi:
        return 0.0
    if theta <= 0.5 * math.pi:
        # half-angle identity; lands on exactly 1.0 at pi/2
        return (1.0 + math.cos(theta)) / math.sin(theta)
    return 1.0 / math.tan(0.5 * theta)


def segment_margin(B_i: int, dims: BrickDims, theta: float, lam: float) -> float:
    """Anchor-to-anchor pitch of a segment holding ``B_i`` bricks."""
    if B_i < 1:
        raise DomainError(f"B_i must be >= 1, got {B_i}")
    tau = angle_factor(theta)
    return B_i * dims.l + tau * dims.w + lam * (B_i - 1)


def polynomial_margin(theta: float, w: float, kappa: float) -> float:
    """Center distance of two successive bricks whose yaws differ by ``theta``."""
    if not (0.0 <= theta <= math.pi):
        raise DomainError(f"theta must lie in [0, pi], got {theta}")
    return w * math.sin(0.5 * (math.pi - theta)) + kappa


# ---------------------------------------------------------------------------
# base layers
# ---------------------------------------------------------------------------

def _heading(angle: float) -> np.ndarray:
    return np.array([math.cos(angle), math.sin(angle)])


def _left(d: np.ndarray) -> np.ndarray:
    return np.array([-d[1], d[0]])


def _lay_row(anchor, d, start: float, count: int, dims: BrickDims, lam: float, yaw: float):
    return [(anchor + d * (start + 0.5 * dims.l + j * (dims.l + lam)), yaw) for j in range(count)]


def _segment_layer(base: SegmentBaseSpec, dims: BrickDims):
    s, theta = base.s, base.theta
    if s < 2:
        raise InvalidSpec(f"segment base needs s >= 2, got {s}")
    if any(b < 1 for b in base.blocks):
        raise InvalidSpec(f"every B_i must be >= 1, got {list(base.blocks)}")
    if not (0.0 < theta <= math.pi):
        raise InvalidSpec(f"theta must lie in (0, pi], got {theta}")
    if base.lam < 0.0:
        raise InvalidSpec(f"lambda must be >= 0, got {base.lam}")
    if abs(s * theta - 2.0 * math.pi) > ANGLE_TOL:
        raise InvalidSpec(f"s * theta must equal 2*pi for a closed loop (s={s}, theta={theta})")
    parallel = abs(theta - math.pi) <= ANGLE_TOL
    if parallel and len(set(base.blocks)) != 1:
        raise InvalidSpec(f"parallel segments need equal B_i, got {list(base.blocks)}")
    if abs(theta - 0.5 * math.pi) <= ANGLE_TOL:
        b = base.blocks
        if b[0] != b[2] or b[1] != b[3]:
            raise InvalidSpec(f"orthogonal segments need opposite B_i equal, got {list(b)}")

    clearance = 0.5 * dims.w * angle_factor(theta)
    anchor = np.zeros(2)
    heading = 0.0
    bricks = []
    for B_i in base.blocks:
        d = _heading(heading)
        bricks += _lay_row(anchor, d, clearance, B_i, dims, base.lam, heading)
        anchor = anchor + segment_margin(B_i, dims, theta, base.lam) * d
        if parallel:
            # U-turn: the return row sits one brick width plus a gap to the left
            anchor = anchor + (dims.w + base.lam) * _left(d)
        heading += theta
    return bricks, float(np.linalg.norm(anchor))


def _polygon_layer(base: PolygonBaseSpec, dims: BrickDims):
    turns = base.turning_angles
    n = base.n
    if n < 3:
        raise InvalidSpec(f"polygon base needs >= 3 edges, got {n}")
    if base.B < 1:
        raise InvalidSpec(f"B must be >= 1, got {base.B}")
    if base.lam < 0.0:
        raise InvalidSpec(f"lambda must be >= 0, got {base.lam}")
    if abs(sum(turns) - 2.0 * math.pi) > ANGLE_TOL:
        raise InvalidSpec(f"turning angles must sum to 2*pi, got {sum(turns)}")
    if any(not (abs(t) < math.pi) for t in turns):
        raise InvalidSpec("each turning angle must satisfy |t| < pi")

    # half-width corner clearance at each vertex; vertex k ends edge k
    corner = [0.5 * dims.w * angle_factor(math.pi - abs(t)) for t in turns]
    run = base.B * dims.l + base.lam * (base.B - 1)
    anchor = np.zeros(2)
    heading = 0.0
    bricks = []
    for k in range(n):
        d = _heading(heading)
        start = corner[k - 1]
        bricks += _lay_row(anchor, d, start, base.B, dims, base.lam, heading)
        anchor = anchor + (start + run + corner[k]) * d
        heading += turns[k]
    return bricks, float(np.linalg.norm(anchor))


def regular_polygon_turns(n: int) -> tuple:
    """Turning angles of a regular convex ``n``-gon (interior angle ``pi - 2pi/n``)."""
    return (2.0 * math.pi / n,) * n


def star_turns(points: int, tip_turn: float) -> tuple:
    """Turning angles of an equilateral concave star with ``2 * points`` edges.

    Tips turn left by ``tip_turn``; the notches between them turn right by
    just enough that the turns sum to ``2 pi``.
    """
    notch = tip_turn - 2.0 * math.pi / points
    return (tip_turn, -notch) * points


class _ClosedCurve:
    """Arc-length parametrization of the loop ``f`` (left to right) then ``-f``."""

    def __init__(self, base: PolynomialBaseSpec, samples: int = 4001):
        x0, x1 = base.domain
        if not (math.isfinite(x0) and math.isfinite(x1) and x1 > x0):
            raise InvalidSpec(f"polynomial domain must satisfy x_min < x_max, got {base.domain}")
        if not base.coefficients:
            raise InvalidSpec("polynomial needs at least one coefficient")
        f = np.polynomial.Polynomial(base.coefficients)
        ends = (float(f(x0)), float(f(x1)))
        if max(abs(ends[0]), abs(ends[1])) > 1e-9:
            raise InvalidSpec(f"f must vanish at both domain ends for closure, got {ends}")
        xs = np.linspace(x0, x1, samples)
        ys = f(xs)
        upper = np.column_stack([xs, ys])
        lower = np.column_stack([xs[::-1], -ys[::-1]])[1:]
        pts = np.vstack([upper, lower])
        self.points = pts
        seg = np.hypot(*np.diff(pts, axis=0).T)
        self.s = np.concatenate([[0.0], np.cumsum(seg)])
        self.length = float(self.s[-1])
        self.upper_length = float(self.s[samples - 1])
        self.residual = float(np.linalg.norm(pts[-1] - pts[0]))
        if np.max(np.abs(ys)) <= 0.0:
            raise InvalidSpec("polynomial loop encloses no area")

    def at(self, s: float) -> np.ndarray:
        s = s % self.length
        return np.array([np.interp(s, self.s, self.points[:, 0]), np.interp(s, self.s, self.points[:, 1])])


def _polynomial_layer(base: PolynomialBaseSpec, dims: BrickDims):
    if base.kappa < 0.0:
        raise InvalidSpec(f"kappa must be >= 0, got {base.kappa}")
    curve = _ClosedCurve(base)
    half = 0.5 * dims.w

    def center(s):
        return curve.at(s)

    def tangent(s):
        d = curve.at(s + half) - curve.at(s - half)
        return math.atan2(d[1], d[0])

    def gap(s, c_ref, t_ref):
        theta = abs(wrap_angle(tangent(s) - t_ref))
        return float(np.linalg.norm(center(s) - c_ref)) - polynomial_margin(theta, dims.w, base.kappa)

    s0 = 0.5 * curve.upper_length
    placed = [(s0, center(s0), tangent(s0))]
    step = 0.01 * dims.w
    while True:
        s_prev, c_prev, t_prev = placed[-1]
        lo = s_prev
        g_lo = gap(lo, c_prev, t_prev)
        hi = None
        probe = lo
        while probe < s_prev + 4.0 * (dims.w + base.kappa):
            probe += step
            g = gap(probe, c_prev, t_prev)
            if g >= 0.0:
                hi = probe
                break
            lo, g_lo = probe, g
        if hi is None:
            break
        s_new = brentq(gap, lo, hi, args=(c_prev, t_prev), xtol=1e-14, rtol=1e-15, maxiter=200)
        if s_new >= s0 + curve.length:
            break
        c_new, t_new = center(s_new), tangent(s_new)
        # keep clear of the first brick across the wrap
        if s_new > s0 + 0.5 * curve.length and gap(s0, c_new, t_new) < 0.0:
            break
        placed.append((s_new, c_new, t_new))

    if len(placed) < 3:
        raise InvalidSpec("polynomial loop too short to hold 3 bricks")
    bricks = [(c, t + 0.5 * math.pi) for _, c, t in placed]
    return bricks, curve.residual


def _base_layer(base: BaseSpec, dims: BrickDims):
    if isinstance(base, SegmentBaseSpec):
        raw, residual = _segment_layer(base, dims)
    elif isinstance(base, PolygonBaseSpec):
        raw, residual = _polygon_layer(base, dims)
    elif isinstance(base, PolynomialBaseSpec):
        raw, residual = _polynomial_layer(base, dims)
    else:
        raise InvalidSpec(f"unknown base family {type(base).__name__}")
    if residual > CLOSURE_TOL:
        raise ClosureError(f"base loop misses its start anchor by {residual:.3g} m")
    centers = np.array([c for c, _ in raw])
    centroid = centers.mean(axis=0)
    z = 0.5 * dims.h
    poses = [BrickPose((c[0] - centroid[0], c[1] - centroid[1], z), yaw) for c, yaw in raw]
    return poses, residual


def build_base_layer(base: BaseSpec, dims: BrickDims) -> list:
    """Layer-0 brick poses, centred on the origin, in loop order."""
    poses, _ = _base_layer(base, dims)
    return poses


def build_column(spec: ColumnSpec) -> ColumnModel:
    base, residual = _base_layer(spec.base, spec.dims)
    placements = []
    for k in range(spec.layers):
        ang = k * spec.phi
        c, s = math.cos(ang), math.sin(ang)
        z = (k + 0.5) * spec.dims.h
        for i, p in enumerate(base):
            x, y, _ = p.position
            pose = BrickPose((c * x - s * y, s * x + c * y, z), p.yaw + ang)
            placements.append(Placement(k, i, pose))
    return ColumnModel(spec, tuple(placements), residual)


# ---------------------------------------------------------------------------
# validation and export
# ---------------------------------------------------------------------------

@dataclass
class ValidationReport:
    n_bricks: int
    overlaps: list = field(default_factory=list)  # (layer, i, j)
    closure_residual: float = 0.0
    count_consistent: bool = True

    @property
    def ok(self) -> bool:
        return not self.overlaps and self.count_consistent and self.closure_residual <= CLOSURE_TOL


def validate_column(model: ColumnModel) -> ValidationReport:
    layers: dict = {}
    for p in model.placements:
        layers.setdefault(p.layer, []).append(p)
    report = ValidationReport(n_bricks=len(model.placements), closure_residual=model.closure_residual)
    sizes = {len(v) for v in layers.values()}
    report.count_consistent = len(sizes) <= 1 and (
        not model.placements or len(model.placements) == model.spec.layers * sizes.pop()
    )
    dims = model.spec.dims
    for k in sorted(layers):
        bricks = layers[k]
        boxes = [brick_footprint(p.pose, dims) for p in bricks]
        reach = np.hypot(dims.l, dims.w)
        xy = np.array([b.center for b in boxes])
        for i in range(len(boxes)):
            near = np.nonzero(np.hypot(*(xy[i + 1:] - xy[i]).T) < reach)[0] + i + 1
            for j in near:
                if obb_overlap(boxes[i], boxes[j]):
                    report.overlaps.append((k, bricks[i].index_in_layer, bricks[j].index_in_layer))
    return report


# unit cube corners, and two CCW-from-outside triangles per face
_CUBE = np.array([[x, y, z] for z in (-1, 1) for y in (-1, 1) for x in (-1, 1)], dtype=float) * 0.5
_CUBE_FACES = [
    (0, 2, 3), (0, 3, 1),  # bottom
    (4, 5, 7), (4, 7, 6),  # top
    (0, 1, 5), (0, 5, 4),  # -y
    (2, 6, 7), (2, 7, 3),  # +y
    (0, 4, 6), (0, 6, 2),  # -x
    (1, 3, 7), (1, 7, 5),  # +x
]


def brick_vertices(pose: BrickPose, dims: BrickDims) -> np.ndarray:
    """Eight corners of the brick cuboid in world coordinates."""
    local = _CUBE * np.array([dims.l, dims.w, dims.h])
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    R = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return local @ R.T + np.asarray(pose.position)


def export_obj(model: ColumnModel, path) -> Path:
    path = Path(path)
    lines = [f"# spiral brick column: {len(model.placements)} bricks"]
    for n, p in enumerate(model.placements):
        lines.append(f"o brick_{p.layer}_{p.index_in_layer}")
        for v in brick_vertices(p.pose, model.spec.dims):
            lines.append(f"v {v[0]:.9f} {v[1]:.9f} {v[2]:.9f}")
        off = 8 * n + 1
        for a, b, c in _CUBE_FACES:
            lines.append(f"f {a + off} {b + off} {c + off}")
    path.write_text("\n".join(lines) + "\n")
    return path


def _layer_colour(k: int, total: int) -> str:
    t = k / max(total - 1, 1)
    r, g, b = (int(round(255 * v)) for v in (0.15 + 0.75 * t, 0.35 + 0.2 * (1 - t), 0.85 - 0.7 * t))
    return f"#{r:02x}{g:02x}{b:02x}"


def export_svg_topview(model: ColumnModel, path, layer: Optional[int] = None, px_per_m: float = 200.0) -> Path:
    """Top view of brick footprints; ``layer=None`` draws every layer."""
    path = Path(path)
    chosen = [p for p in model.placements if layer is None or p.layer == layer]
    dims = model.spec.dims
    corners = [brick_footprint(p.pose, dims).corners() for p in chosen]
    if corners:
        allc = np.vstack(corners)
        lo, hi = allc.min(axis=0) - 0.05, allc.max(axis=0) + 0.05
    else:
        lo, hi = np.array([-0.5, -0.5]), np.array([0.5, 0.5])
    width, height = (hi - lo) * px_per_m
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width:.1f}" height="{height:.1f}" '
        f'viewBox="0 0 {width:.3f} {height:.3f}">',
    ]
    for p, cs in zip(chosen, corners):
        # flip y so +y points up on screen
        pts = " ".join(f"{(x - lo[0]) * px_per_m:.3f},{(hi[1] - y) * px_per_m:.3f}" for x, y in cs)
        colour = _layer_colour(p.layer, model.spec.layers)
        out.append(
            f'<polygon class="brick" data-layer="{p.layer}" points="{pts}" fill="{colour}" '
            f'fill-opacity="0.6" stroke="#222222" stroke-width="0.5"/>'
        )
    out.append("</svg>")
    path.write_text("\n".join(out) + "\n")
    return path
