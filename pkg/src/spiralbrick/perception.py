"""Synthetic conveyor depth scenes and brick pose estimation.

Pipeline: ``render_depth`` (pinhole ray cast) -> ``backproject`` ->
``mlesac_plane`` (conveyor plane) -> ``filter_roi`` (points just above it)
-> ``estimate_brick_pose`` (hull + rotating calipers).
"""
from __future__ import annotations

import csv
import functools
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .column_models import BrickDims, BrickPose
from .errors import DegenerateInput, EmptyResult, GeometryError, ShapeMismatch
from .geometry import OrientedBox2D, convex_hull_2d, min_area_obb, normalize_yaw_pi

# optical frame (x right, y down, z forward) looking straight down at the world
_LOOK_DOWN = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]])

CONVEYOR_CENTER = (0.4, -0.3)
CAMERA_HEIGHT = 1.0


@dataclass(frozen=True)
class CameraModel:
    fx: float = 525.0
    fy: float = 525.0
    cx: float = 319.5
    cy: float = 239.5
    width: int = 640
    height: int = 480
    rotation: np.ndarray = field(default_factory=lambda: _LOOK_DOWN.copy())  # camera -> world
    translation: np.ndarray = field(default_factory=lambda: np.array([*CONVEYOR_CENTER, CAMERA_HEIGHT]))

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-9) or np.linalg.det(R) < 0:
            raise ValueError("rotation must be a proper rotation matrix")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))

    @classmethod
    def looking_down(cls, position, tilt: float = 0.0, **intrinsics) -> "CameraModel":
        """Camera at ``position`` looking along world -z, pitched by ``tilt`` about world x."""
        c, s = math.cos(tilt), math.sin(tilt)
        Rx = np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
        return cls(rotation=Rx @ _LOOK_DOWN, translation=np.asarray(position, dtype=float), **intrinsics)

    def pixel_rays(self) -> np.ndarray:
        """Camera-frame rays ``((u-cx)/fx, (v-cy)/fy, 1)``, shape (H, W, 3). Read-only."""
        return _pixel_rays(self.fx, self.fy, self.cx, self.cy, self.width, self.height)


@functools.lru_cache(maxsize=8)
def _pixel_rays(fx, fy, cx, cy, width, height) -> np.ndarray:
    uu, vv = np.meshgrid(np.arange(width, dtype=float), np.arange(height, dtype=float))
    rays = np.stack([(uu - cx) / fx, (vv - cy) / fy, np.ones_like(uu)], axis=-1)
    rays.flags.writeable = False
    return rays


@dataclass
class DepthImage:
    width: int
    height: int
    depths: np.ndarray  # (height, width), meters, 0 = no return

    def __post_init__(self):
        d = np.asarray(self.depths, dtype=float).reshape(self.height, self.width)
        if not np.all(np.isfinite(d)) or np.any(d < 0):
            raise ValueError("depths must be finite and >= 0")
        self.depths = d


@dataclass
class PointCloud:
    points: np.ndarray  # (N, 3)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class PlaneModel:
    normal: tuple
    d: float
    score: Optional[float] = None
    gamma: Optional[float] = None

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        norm = np.linalg.norm(n)
        if not norm > 0:
            raise DegenerateInput("plane normal must be non-zero")
        object.__setattr__(self, "normal", tuple(n / norm))
        object.__setattr__(self, "d", float(self.d) / norm)

    def signed_distance(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float).reshape(-1, 3) @ np.asarray(self.normal) - self.d

    def chart(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(origin, e1, e2): origin is the foot of the world origin, e1 the
        projection of world x (or y if x is normal to the plane)."""
        n = np.asarray(self.normal)
        ref = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        e1 = ref - (ref @ n) * n
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(n, e1)
        return self.d * n, e1, e2


@dataclass(frozen=True)
class MlesacParams:
    iterations: int = 200
    inlier_sigma: float = 0.002
    outlier_width: float = 0.5
    em_steps: int = 5
    seed: int = 0
    max_eval_points: int = 4096

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not (self.inlier_sigma > 0 and self.outlier_width > 0):
            raise ValueError("inlier_sigma and outlier_width must be > 0")
        if self.em_steps < 0 or self.max_eval_points < 3:
            raise ValueError("em_steps must be >= 0 and max_eval_points >= 3")


@dataclass(frozen=True)
class EstimatedPose:
    box: OrientedBox2D  # in the plane chart; equals world xy for a level plane
    z: float  # brick top height above the plane
    timestamp_ms: float  # time spent estimating
    center: tuple = (0.0, 0.0, 0.0)  # world position of the brick center

    def brick_yaw(self, dims: BrickDims) -> float:
        """Yaw of the brick's ``l`` axis, in [0, pi)."""
        if dims.w >= dims.l:
            return normalize_yaw_pi(self.box.yaw + 0.5 * math.pi)
        return self.box.yaw

    def as_brick_pose(self, dims: BrickDims) -> BrickPose:
        return BrickPose(self.center, self.brick_yaw(dims))


# ---------------------------------------------------------------------------
# rendering and back-projection
# ---------------------------------------------------------------------------

def _ray_box_entry(origin, dirs, pose: BrickPose, dims: BrickDims) -> np.ndarray:
    """Entry distance of each ray into the brick cuboid, ``inf`` on a miss."""
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    R = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    o = R.T @ (origin - np.asarray(pose.position))
    d = dirs @ R  # rows are R^T dir
    half = 0.5 * np.array([dims.l, dims.w, dims.h])
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (-half - o) * inv
        t2 = (half - o) * inv
    t1 = np.where(np.isnan(t1), -np.inf, t1)
    t2 = np.where(np.isnan(t2), np.inf, t2)
    t_near = np.minimum(t1, t2).max(axis=-1)
    t_far = np.maximum(t1, t2).min(axis=-1)
    hit = (t_near <= t_far) & (t_near > 0.0)
    return np.where(hit, t_near, np.inf)


def render_depth(
    brick: Optional[BrickPose],
    dims: BrickDims,
    plane_z: float,
    camera: CameraModel,
    noise_sigma: float = 0.0,
    seed: int = 0,
) -> DepthImage:
    """Z-depth image of a level conveyor at ``plane_z`` and an optional brick.

    ``brick`` is the pose of the brick centre. Depth noise is Gaussian and
    applied to every pixel with a return.
    """
    rays = camera.pixel_rays().reshape(-1, 3)  # z component is 1, so t is z-depth
    dirs = rays @ camera.rotation.T
    origin = camera.translation
    with np.errstate(divide="ignore", invalid="ignore"):
        t_plane = (plane_z - origin[2]) / dirs[:, 2]
    t_plane = np.where(np.isfinite(t_plane) & (t_plane > 0.0), t_plane, np.inf)
    if not np.isfinite(t_plane).any():
        raise GeometryError("no camera ray reaches the conveyor plane")
    t = t_plane
    if brick is not None:
        t = np.minimum(t, _ray_box_entry(origin, dirs, brick, dims))
    depth = np.where(np.isfinite(t), t, 0.0)
    if noise_sigma > 0.0:
        rng = np.random.default_rng(seed)
        noise = rng.normal(0.0, noise_sigma, size=depth.shape)
        valid = depth > 0.0
        depth = np.where(valid, np.maximum(depth + noise, 1e-6), 0.0)
    return DepthImage(camera.width, camera.height, depth.reshape(camera.height, camera.width))


def backproject(depth: DepthImage, camera: CameraModel) -> PointCloud:
    z = depth.depths.reshape(-1)
    keep = z > 0.0
    rays = camera.pixel_rays().reshape(-1, 3)[keep]
    pts_cam = rays * z[keep, None]
    return PointCloud(pts_cam @ camera.rotation.T + camera.translation)


# ---------------------------------------------------------------------------
# MLESAC plane segmentation
# ---------------------------------------------------------------------------

def _orient(normal: np.ndarray) -> np.ndarray:
    """Sign convention: +z component, else first non-zero component positive."""
    for comp in (normal[2], normal[0], normal[1]):
        if abs(comp) > 1e-12:
            return normal if comp > 0 else -normal
    return normal


def _fit_plane_lsq(points: np.ndarray) -> tuple[np.ndarray, float]:
    centroid = points.mean(axis=0)
    q = points - centroid
    _, vecs = np.linalg.eigh(q.T @ q)
    n = _orient(vecs[:, 0])
    return n, float(n @ centroid)


def _neg_log_likelihood(residuals: np.ndarray, sigma: float, nu: float, em_steps: int):
    """MLESAC cost per hypothesis column, with the mixing weight refined by EM."""
    gauss = np.exp(-0.5 * (residuals / sigma) ** 2) / (math.sqrt(2.0 * math.pi) * sigma)
    uniform = 1.0 / nu
    gamma = np.full(residuals.shape[1], 0.5)
    for _ in range(em_steps):
        p_in = gamma * gauss
        gamma = np.mean(p_in / (p_in + (1.0 - gamma) * uniform), axis=0)
    cost = -np.sum(np.log(gamma * gauss + (1.0 - gamma) * uniform), axis=0)
    return cost, gamma


def mlesac_plane(cloud: PointCloud, params: MlesacParams = MlesacParams()):
    """Robust plane fit. Returns ``(PlaneModel, inlier_mask)``.

    Hypotheses from random 3-point samples are scored on a seeded subsample of
    at most ``params.max_eval_points`` points; the winner is refit by least
    squares to all points within ``1.96 * inlier_sigma``.
    """
    P = cloud.points
    if len(P) < 3:
        raise DegenerateInput(f"plane fit needs >= 3 points, got {len(P)}")
    rng = np.random.default_rng(params.seed)
    if len(P) > params.max_eval_points:
        E = P[np.sort(rng.choice(len(P), params.max_eval_points, replace=False))]
    else:
        E = P
    m = len(E)

    samples = rng.integers(0, m, size=(params.iterations, 3))
    a, b, c = E[samples[:, 0]], E[samples[:, 1]], E[samples[:, 2]]
    normals = np.cross(b - a, c - a)
    norms = np.linalg.norm(normals, axis=1)
    scale = np.ptp(E, axis=0).max() if m > 1 else 0.0
    good = norms > 1e-12 * max(scale, 1e-12) ** 2
    if not good.any():
        raise DegenerateInput("every sampled triple was collinear")
    normals = normals[good] / norms[good, None]
    ds = np.einsum("ij,ij->i", normals, a[good])

    residuals = E @ normals.T - ds
    cost, gamma = _neg_log_likelihood(residuals, params.inlier_sigma, params.outlier_width, params.em_steps)
    best = int(np.argmin(cost))

    threshold = 1.96 * params.inlier_sigma
    n = _orient(normals[best])
    d = float(n @ a[good][best])
    mask = np.abs(P @ n - d) <= threshold
    if mask.sum() >= 3:
        n_fit, d_fit = _fit_plane_lsq(P[mask])
        if np.all(np.isfinite(n_fit)):
            n, d = n_fit, d_fit
            mask = np.abs(P @ n - d) <= threshold
    plane = PlaneModel(tuple(n), d, score=float(cost[best]), gamma=float(gamma[best]))
    return plane, mask


def filter_roi(cloud: PointCloud, plane: PlaneModel, band=(0.01, 0.05)) -> PointCloud:
    """Keep points whose signed height above ``plane`` lies in ``band``."""
    lo, hi = band
    if not len(cloud):
        raise EmptyResult("empty point cloud")
    h = plane.signed_distance(cloud.points)
    keep = (h >= lo) & (h <= hi)
    if not keep.any():
        raise EmptyResult(f"no points within {band} of the plane")
    return PointCloud(cloud.points[keep])


def remove_sparse_points(cloud: PointCloud, radius: float = 0.01, min_neighbors: int = 4) -> PointCloud:
    """Drop points with fewer than ``min_neighbors`` others within ``radius``.

    Depth-noise tails on the conveyor survive the height band as isolated
    points; a brick face is dense at any practical resolution.
    """
    if not len(cloud):
        raise EmptyResult("empty point cloud")
    dist, _ = cKDTree(cloud.points).query(cloud.points, k=min_neighbors + 1, distance_upper_bound=radius)
    keep = np.isfinite(dist[:, -1]).ravel() if dist.ndim > 1 else np.isfinite(dist)  # k includes the point itself
    if not keep.any():
        raise EmptyResult("no dense cluster above the plane")
    return PointCloud(cloud.points[keep])


def default_band(dims: BrickDims) -> tuple:
    return (0.4 * dims.h, 2.0 * dims.h)


def estimate_brick_pose(cloud: PointCloud, plane: PlaneModel, dims: BrickDims, extent_tol: float = 0.25) -> EstimatedPose:
    """Footprint box of the points above ``plane``.

    Orientation and extents come from the minimum-area box of the projected
    hull. The centre is the centroid of the top-face points, which averages
    out the pixel quantization that the hull extremes carry.
    """
    t0 = time.perf_counter()
    if len(cloud) < 3:
        raise EmptyResult(f"need >= 3 points for a pose, got {len(cloud)}")
    origin, e1, e2 = plane.chart()
    rel = cloud.points - origin
    uv = np.column_stack([rel @ e1, rel @ e2])
    heights = plane.signed_distance(cloud.points)

    box = min_area_obb(convex_hull_2d(uv))
    a, b = box.half_extents
    want_a, want_b = 0.5 * max(dims.w, dims.l), 0.5 * min(dims.w, dims.l)
    if abs(a - want_a) > extent_tol * want_a or abs(b - want_b) > extent_tol * want_b:
        raise ShapeMismatch(
            f"footprint half extents ({a:.4f}, {b:.4f}) differ from ({want_a:.4f}, {want_b:.4f}) by more than {extent_tol:.0%}"
        )

    z_med = float(np.median(heights))
    spread = 1.4826 * float(np.median(np.abs(heights - z_med)))
    top = heights >= z_med - max(3.0 * spread, 1e-6)
    z_top = float(heights[top].mean())
    cu, cv = uv[top].mean(axis=0)

    box = OrientedBox2D((cu, cv), box.half_extents, box.yaw)
    n = np.asarray(plane.normal)
    center3d = origin + cu * e1 + cv * e2 + (z_top - 0.5 * dims.h) * n
    elapsed = (time.perf_counter() - t0) * 1e3
    return EstimatedPose(box, z_top, elapsed, tuple(float(v) for v in center3d))


@dataclass(frozen=True)
class PerceptionConfig:
    camera: CameraModel = field(default_factory=CameraModel)
    mlesac: MlesacParams = MlesacParams()
    noise_sigma: float = 0.0
    band: Optional[tuple] = None  # defaults to default_band(dims)
    plane_z: float = 0.0


def estimate_from_depth(depth: DepthImage, dims: BrickDims, cfg: PerceptionConfig = PerceptionConfig()) -> EstimatedPose:
    """Full pipeline on one frame; ``timestamp_ms`` covers all of it."""
    t0 = time.perf_counter()
    cloud = backproject(depth, cfg.camera)
    plane, _ = mlesac_plane(cloud, cfg.mlesac)
    roi = filter_roi(cloud, plane, cfg.band or default_band(dims))
    roi = remove_sparse_points(roi)
    est = estimate_brick_pose(roi, plane, dims)
    elapsed = (time.perf_counter() - t0) * 1e3
    return EstimatedPose(est.box, est.z, elapsed, est.center)


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def write_ply(cloud: PointCloud, path) -> Path:
    path = Path(path)
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(cloud)}",
        "property double x",
        "property double y",
        "property double z",
        "end_header",
    ]
    lines += [f"{x:.9g} {y:.9g} {z:.9g}" for x, y, z in cloud.points]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_ply(path) -> PointCloud:
    with open(path) as fh:
        if fh.readline().strip() != "ply":
            raise ValueError(f"{path}: not a PLY file")
        count = None
        for line in fh:
            tok = line.split()
            if not tok:
                continue
            if tok[0] == "format" and tok[1] != "ascii":
                raise ValueError(f"{path}: only ASCII PLY is supported")
            if tok[0] == "element" and tok[1] == "vertex":
                count = int(tok[2])
            if tok[0] == "end_header":
                break
        if count is None:
            raise ValueError(f"{path}: no vertex element")
        rows = [next(fh).split()[:3] for _ in range(count)]
    return PointCloud(np.array(rows, dtype=float).reshape(-1, 3))


def write_cloud_csv(cloud: PointCloud, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "z"])
        w.writerows([[f"{v:.9g}" for v in p] for p in cloud.points])
    return path


def read_cloud_csv(path) -> PointCloud:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if rows and rows[0] == ["x", "y", "z"]:
        rows = rows[1:]
    return PointCloud(np.array(rows, dtype=float).reshape(-1, 3))


def write_depth_pgm(depth: DepthImage, path) -> Path:
    """16-bit binary PGM, millimetres (values above 65535 mm are clipped)."""
    path = Path(path)
    mm = np.clip(np.rint(depth.depths * 1000.0), 0, 65535).astype(">u2")
    header = f"P5\n{depth.width} {depth.height}\n65535\n".encode("ascii")
    path.write_bytes(header + mm.tobytes())
    return path


def read_depth_pgm(path) -> DepthImage:
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        tokens.append(data[pos:end].decode("ascii"))
        pos = end
    pos += 1
    magic, width, height, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic != "P5" or maxval > 65535:
        raise ValueError(f"{path}: expected a binary 16-bit PGM")
    dtype = ">u2" if maxval > 255 else "u1"
    mm = np.frombuffer(data, dtype=dtype, count=width * height, offset=pos)
    return DepthImage(width, height, mm.reshape(height, width).astype(float) / 1000.0)


def write_depth_csv(depth: DepthImage, path) -> Path:
    path = Path(path)
    np.savetxt(path, depth.depths, delimiter=",", fmt="%.9g")
    return path


def read_depth_csv(path) -> DepthImage:
    d = np.loadtxt(path, delimiter=",", ndmin=2)
    return DepthImage(d.shape[1], d.shape[0], d)
