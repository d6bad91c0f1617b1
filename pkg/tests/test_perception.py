import math

import numpy as np
import pytest

from spiralbrick.column_models import DEFAULT_DIMS, BrickPose
from spiralbrick.errors import DegenerateInput, EmptyResult, GeometryError, ShapeMismatch
from spiralbrick.geometry import rotation_matrix_2d
from spiralbrick.perception import (
    CONVEYOR_CENTER,
    CameraModel,
    DepthImage,
    MlesacParams,
    PerceptionConfig,
    PlaneModel,
    PointCloud,
    backproject,
    default_band,
    estimate_brick_pose,
    estimate_from_depth,
    filter_roi,
    mlesac_plane,
    read_cloud_csv,
    read_depth_csv,
    read_depth_pgm,
    read_ply,
    remove_sparse_points,
    render_depth,
    write_cloud_csv,
    write_depth_csv,
    write_depth_pgm,
    write_ply,
)

H = DEFAULT_DIMS.h
LEVEL = PlaneModel((0.0, 0.0, 1.0), 0.0)


def yaw_gap(a, b):
    d = math.fmod(abs(a - b), math.pi)
    return min(d, math.pi - d)


def brick_on_conveyor(x, y, yaw, plane_z=0.0):
    return BrickPose((x, y, plane_z + 0.5 * H), yaw)


@pytest.fixture(scope="module")
def camera():
    return CameraModel()


# ---------------------------------------------------------------------------
# camera and rendering


@pytest.mark.parametrize("kw", [{"fx": 0.0}, {"cx": 640.0}, {"cy": -1.0}, {"rotation": np.diag([1.0, 1.0, -1.0])}])
def test_camera_invariants(kw):
    with pytest.raises(ValueError):
        CameraModel(**kw)


@pytest.mark.parametrize("tilt", [0.0, 0.2, -0.35])
def test_centre_pixel_depth_over_empty_plane(tilt):
    cam = CameraModel.looking_down((0.0, 0.0, 1.3), tilt, cx=320.0, cy=240.0)
    depth = render_depth(None, DEFAULT_DIMS, 0.0, cam)
    assert depth.depths[240, 320] == pytest.approx(1.3 / math.cos(tilt), rel=1e-12)
    assert np.all(depth.depths > 0)


def test_brick_top_depth_straight_down():
    plane_z = 0.1
    cam = CameraModel.looking_down((0.4, -0.3, 1.0))
    depth = render_depth(brick_on_conveyor(0.4, -0.3, 0.0, plane_z), DEFAULT_DIMS, plane_z, cam)
    # straight down: z-depth of the top face is camera height - plane - h
    centre = depth.depths[235:245, 315:325]
    assert np.allclose(centre, 1.0 - plane_z - H, atol=1e-12)
    assert depth.depths[0, 0] == pytest.approx(1.0 - plane_z, abs=1e-12)


def test_render_noise_is_seeded(camera):
    brick = brick_on_conveyor(*CONVEYOR_CENTER, 0.3)
    a = render_depth(brick, DEFAULT_DIMS, 0.0, camera, 0.002, seed=1)
    b = render_depth(brick, DEFAULT_DIMS, 0.0, camera, 0.002, seed=1)
    c = render_depth(brick, DEFAULT_DIMS, 0.0, camera, 0.002, seed=2)
    assert np.array_equal(a.depths, b.depths)
    assert not np.array_equal(a.depths, c.depths)


def test_render_camera_facing_away():
    cam = CameraModel.looking_down((0.0, 0.0, 1.0), math.pi)
    with pytest.raises(GeometryError):
        render_depth(None, DEFAULT_DIMS, 0.0, cam)


def test_depth_image_rejects_negative():
    with pytest.raises(ValueError):
        DepthImage(2, 1, [[0.5, -0.1]])


# ---------------------------------------------------------------------------
# back-projection


def test_backproject_principal_ray_and_unit_offset():
    cam = CameraModel(fx=100.0, fy=100.0, cx=50.0, cy=40.0, width=200, height=80, rotation=np.eye(3), translation=np.zeros(3))
    d = np.zeros((80, 200))
    d[40, 50] = 2.5
    d[40, 150] = 1.0
    pts = backproject(DepthImage(200, 80, d), cam).points
    assert len(pts) == 2
    assert pts[0] == pytest.approx((0.0, 0.0, 2.5))
    assert pts[1] == pytest.approx((1.0, 0.0, 1.0))


def test_backproject_plane_round_trip():
    cam = CameraModel.looking_down((0.1, 0.2, 1.2), 0.3)
    cloud = backproject(render_depth(None, DEFAULT_DIMS, 0.05, cam), cam)
    assert len(cloud) == 640 * 480
    assert np.max(np.abs(cloud.points[:, 2] - 0.05)) <= 1e-9


def test_backproject_brick_top(camera):
    brick = brick_on_conveyor(*CONVEYOR_CENTER, 1.0)
    cloud = backproject(render_depth(brick, DEFAULT_DIMS, 0.0, camera), camera)
    top = cloud.points[cloud.points[:, 2] > 0.5 * H]
    assert np.allclose(top[:, 2], H, atol=1e-9)


# ---------------------------------------------------------------------------
# MLESAC


def test_mlesac_plane_with_outliers(rng):
    inliers = np.column_stack([rng.uniform(-1, 1, (500, 2)), np.zeros(500)])
    # outliers fill a 0.5 m slab just above the plane, clear of the inlier band
    outliers = np.column_stack([rng.uniform(-1, 1, (100, 2)), rng.uniform(0.02, 0.52, 100)])
    plane, mask = mlesac_plane(PointCloud(np.vstack([inliers, outliers])), MlesacParams(seed=3))
    assert plane.normal == pytest.approx((0.0, 0.0, 1.0), abs=1e-6)
    assert plane.d == pytest.approx(0.0, abs=1e-6)
    assert mask[:500].all() and not mask[500:].any()
    assert np.linalg.norm(plane.normal) == pytest.approx(1.0, abs=1e-12)


def test_mlesac_exact_plane(rng):
    pts = np.column_stack([rng.uniform(-1, 1, (200, 2)), np.ones(200)])
    plane, mask = mlesac_plane(PointCloud(pts))
    assert plane.normal == pytest.approx((0.0, 0.0, 1.0), abs=1e-12)
    assert plane.d == pytest.approx(1.0, abs=1e-12)
    assert mask.all()


def test_mlesac_too_few_points():
    with pytest.raises(DegenerateInput):
        mlesac_plane(PointCloud([[0, 0, 0], [1, 0, 0]]))


def test_mlesac_collinear_points():
    pts = np.column_stack([np.linspace(0, 1, 50), np.zeros(50), np.zeros(50)])
    with pytest.raises(DegenerateInput):
        mlesac_plane(PointCloud(pts))


def test_mlesac_deterministic(rng):
    pts = np.vstack([
        np.column_stack([rng.uniform(-1, 1, (800, 2)), rng.normal(0, 0.002, 800)]),
        rng.uniform(-1, 1, (300, 3)),
    ])
    a = mlesac_plane(PointCloud(pts), MlesacParams(seed=11))
    b = mlesac_plane(PointCloud(pts), MlesacParams(seed=11))
    assert a[0] == b[0]
    assert np.array_equal(a[1], b[1])


def tilted_trial(seed, outlier_fraction=0.4, n=1000, sigma=0.002):
    rng = np.random.default_rng(seed)
    normal = rng.normal(size=3)
    normal[2] = abs(normal[2]) + 1.0
    normal /= np.linalg.norm(normal)
    e1 = np.cross(normal, [1.0, 0.0, 0.0])
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(normal, e1)
    n_out = int(outlier_fraction * n)
    uv = rng.uniform(-0.5, 0.5, (n - n_out, 2))
    inl = uv[:, :1] * e1 + uv[:, 1:] * e2 + rng.normal(0, sigma, (n - n_out, 1)) * normal
    out = rng.uniform(-0.5, 0.5, (n_out, 3))
    return np.vstack([inl, out]), normal


def test_mlesac_robustness():
    hits = 0
    for seed in range(100):
        pts, normal = tilted_trial(seed)
        plane, _ = mlesac_plane(PointCloud(pts), MlesacParams(seed=seed))
        err = math.degrees(math.acos(min(1.0, abs(float(np.dot(plane.normal, normal))))))
        hits += err < 0.5
    assert hits >= 99


# ---------------------------------------------------------------------------
# region of interest and pose


def test_filter_roi_removes_plane_keeps_top(rng):
    plane_pts = np.column_stack([rng.uniform(-1, 1, (100, 2)), np.zeros(100)])
    top = np.column_stack([rng.uniform(-0.1, 0.1, (50, 2)), np.full(50, H)])
    kept = filter_roi(PointCloud(np.vstack([plane_pts, top])), LEVEL, (0.005, 0.1))
    assert len(kept) == 50
    assert np.allclose(kept.points[:, 2], H)
    with pytest.raises(EmptyResult):
        filter_roi(PointCloud(plane_pts), LEVEL, (0.005, 0.1))
    with pytest.raises(EmptyResult):
        filter_roi(PointCloud(np.empty((0, 3))), LEVEL, (0.005, 0.1))


def test_default_band():
    assert default_band(DEFAULT_DIMS) == pytest.approx((0.01, 0.05))


def test_remove_sparse_points_drops_isolated(rng):
    dense = np.column_stack([rng.uniform(0, 0.05, (400, 2)), np.full(400, H)])
    stray = np.array([[1.0, 1.0, H], [-1.0, 0.5, H]])
    kept = remove_sparse_points(PointCloud(np.vstack([dense, stray])))
    assert len(kept) == 400


def grid_top(center, yaw, a, b, step=0.004):
    u = np.arange(-a, a + 1e-12, step)
    v = np.arange(-b, b + 1e-12, step)
    uu, vv = np.meshgrid(u, v)
    xy = np.column_stack([uu.ravel(), vv.ravel()]) @ rotation_matrix_2d(yaw).T + center
    return np.column_stack([xy, np.full(len(xy), H)])


def test_estimate_axis_aligned_at_origin():
    cam = CameraModel.looking_down((0.0, 0.0, 1.0))
    depth = render_depth(brick_on_conveyor(0.0, 0.0, 0.0), DEFAULT_DIMS, 0.0, cam)
    est = estimate_from_depth(depth, DEFAULT_DIMS, PerceptionConfig(camera=cam))
    assert yaw_gap(est.brick_yaw(DEFAULT_DIMS), 0.0) < 1e-9
    assert est.center[:2] == pytest.approx((0.0, 0.0), abs=1e-3)


def test_estimate_noiseless_example(camera):
    truth = brick_on_conveyor(0.4, -0.3, 0.6)
    est = estimate_from_depth(render_depth(truth, DEFAULT_DIMS, 0.0, camera), DEFAULT_DIMS)
    pose = est.as_brick_pose(DEFAULT_DIMS)
    assert math.dist(pose.position, truth.position) < 1e-3
    assert yaw_gap(pose.yaw, truth.yaw) < 0.01
    assert est.z == pytest.approx(H, abs=1e-9)
    assert est.timestamp_ms > 0


def test_estimate_rejects_oversized_footprint():
    pts = grid_top(np.array([0.0, 0.0]), 0.0, 0.375, 0.375, step=0.01)
    with pytest.raises(ShapeMismatch):
        estimate_brick_pose(PointCloud(pts), LEVEL, DEFAULT_DIMS)


def test_estimate_needs_points():
    with pytest.raises(EmptyResult):
        estimate_brick_pose(PointCloud(np.empty((0, 3))), LEVEL, DEFAULT_DIMS)


def test_estimate_from_points_only():
    pts = grid_top(np.array([0.2, 0.1]), 1.2, 0.25, 0.05, step=0.002)
    est = estimate_brick_pose(PointCloud(pts), LEVEL, DEFAULT_DIMS)
    assert est.box.half_extents == pytest.approx((0.25, 0.05), abs=2e-3)
    assert yaw_gap(est.box.yaw, 1.2) < 1e-6


@pytest.mark.parametrize("seed", range(10))
def test_round_trip_random_poses(camera, seed):
    rng = np.random.default_rng(seed)
    x, y = np.asarray(CONVEYOR_CENTER) + rng.uniform([-0.15, -0.1], [0.15, 0.1])
    truth = brick_on_conveyor(x, y, rng.uniform(0, math.pi))
    pose = estimate_from_depth(render_depth(truth, DEFAULT_DIMS, 0.0, camera), DEFAULT_DIMS).as_brick_pose(DEFAULT_DIMS)
    assert math.dist(pose.position[:2], truth.position[:2]) < 1e-3
    assert yaw_gap(pose.yaw, truth.yaw) < 0.01


def test_noisy_frame_within_bound(camera):
    truth = brick_on_conveyor(0.35, -0.25, 2.0)
    depth = render_depth(truth, DEFAULT_DIMS, 0.0, camera, noise_sigma=0.002, seed=9)
    pose = estimate_from_depth(depth, DEFAULT_DIMS).as_brick_pose(DEFAULT_DIMS)
    assert math.dist(pose.position, truth.position) < 0.025


# ---------------------------------------------------------------------------
# file formats


def test_ply_and_csv_round_trip(tmp_path, rng):
    cloud = PointCloud(rng.normal(size=(50, 3)))
    for back in (read_ply(write_ply(cloud, tmp_path / "c.ply")), read_cloud_csv(write_cloud_csv(cloud, tmp_path / "c.csv"))):
        assert np.allclose(back.points, cloud.points, rtol=1e-8, atol=1e-12)


def test_depth_pgm_round_trip_millimetres(tmp_path, camera):
    depth = render_depth(brick_on_conveyor(*CONVEYOR_CENTER, 0.4), DEFAULT_DIMS, 0.0, camera)
    back = read_depth_pgm(write_depth_pgm(depth, tmp_path / "d.pgm"))
    assert (back.width, back.height) == (640, 480)
    assert np.max(np.abs(back.depths - depth.depths)) <= 0.0005 + 1e-12
    assert (tmp_path / "d.pgm").read_bytes().startswith(b"P5\n640 480\n65535\n")


def test_depth_csv_round_trip(tmp_path):
    depth = DepthImage(3, 2, [[0.0, 1.5, 2.25], [0.125, 0.0, 3.0]])
    back = read_depth_csv(write_depth_csv(depth, tmp_path / "d.csv"))
    assert np.array_equal(back.depths, depth.depths)


def test_ply_rejects_binary(tmp_path):
    p = tmp_path / "b.ply"
    p.write_text("ply\nformat binary_little_endian 1.0\nelement vertex 0\nend_header\n")
    with pytest.raises(ValueError):
        read_ply(p)
