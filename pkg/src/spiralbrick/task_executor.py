"""Pick-and-place execution with a free-flying gripper in a kinematic world.

Each brick follows the same cycle: hover above the estimated pose, descend
and grasp across the long sides, lift, travel in a straight line to hover
above the target, descend and release, then retreat and return to the watch
pose over the conveyor. Motion time comes from a trapezoidal velocity
profile per straight segment.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .column_models import DEFAULT_DIMS, BrickDims, BrickPose, ColumnModel, brick_footprint
from .errors import EmptyResult, ShapeMismatch, SpiralBrickError, UnreachableTarget
from .geometry import obb_overlap, wrap_angle
from .metrics_report import position_error, yaw_difference
from .perception import (
    CONVEYOR_CENTER,
    EstimatedPose,
    PerceptionConfig,
    estimate_from_depth,
    render_depth,
)

log = logging.getLogger(__name__)

OPEN, CLOSED = "open", "closed"
PICK_TO_PLACE_PHASES = (3, 4, 5)


class AssemblyError(SpiralBrickError):
    """A brick could not be perceived after all retries."""


@dataclass(frozen=True)
class ExecutorConfig:
    eta: float = 1.25
    v_max: float = 1.0
    a_max: float = 1.0
    omega_max: float = 1.0
    descend_clearance: float = 0.05
    workspace: tuple = (-2.5, -2.5, -0.1, 2.5, 2.5, 3.0)  # x0, y0, z0, x1, y1, z1

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError(f"eta must be > 0, got {self.eta}")
        for name in ("v_max", "a_max", "omega_max"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.descend_clearance < 0:
            raise ValueError("descend_clearance must be >= 0")


@dataclass(frozen=True)
class Waypoint:
    position: tuple
    yaw: float
    gripper: str
    phase: int


@dataclass(frozen=True)
class WaypointPlan:
    start: Waypoint  # gripper state before the plan runs
    waypoints: tuple

    def segments(self):
        """Consecutive straight-line segments, starting from ``start``."""
        pts = (self.start,) + self.waypoints
        return list(zip(pts[:-1], pts[1:]))

    @property
    def phases(self) -> tuple:
        return tuple(sorted({w.phase for w in self.waypoints}))


def interpolate_segment(w0: Waypoint, w1: Waypoint, n: int) -> np.ndarray:
    """``n`` evenly spaced positions on the straight segment from ``w0`` to ``w1``."""
    t = np.linspace(0.0, 1.0, n)[:, None]
    a, b = np.asarray(w0.position), np.asarray(w1.position)
    return a + t * (b - a)


@dataclass
class KinematicWorld:
    conveyor_center: tuple = CONVEYOR_CENTER
    spawn_half_extents: tuple = (0.15, 0.1)
    plane_z: float = 0.0
    dims: BrickDims = DEFAULT_DIMS
    placed: list = field(default_factory=list)
    conveyor_brick: Optional[BrickPose] = None
    gripper: Optional[Waypoint] = None

    def home(self, eta: float) -> Waypoint:
        """Watch pose: above the conveyor centre at pre-grasp height."""
        cx, cy = self.conveyor_center
        return Waypoint((cx, cy, self.plane_z + 0.5 * self.dims.h + eta), 0.0, OPEN, 0)

    def spawn(self, rng: np.random.Generator) -> BrickPose:
        cx, cy = self.conveyor_center
        hx, hy = self.spawn_half_extents
        pose = BrickPose(
            (cx + rng.uniform(-hx, hx), cy + rng.uniform(-hy, hy), self.plane_z + 0.5 * self.dims.h),
            rng.uniform(0.0, math.pi),
        )
        self.conveyor_brick = pose
        return pose

    def top_center_z(self) -> float:
        return max((p.position[2] for p in self.placed), default=-math.inf)

    def interpenetrating_pairs(self) -> list:
        """Placed bricks whose footprints overlap within the same layer."""
        out = []
        boxes = [(round(p.position[2] / self.dims.h), brick_footprint(p, self.dims)) for p in self.placed]
        for i in range(len(boxes)):
            for j in range(i + 1, len(boxes)):
                if boxes[i][0] == boxes[j][0] and obb_overlap(boxes[i][1], boxes[j][1]):
                    out.append((i, j))
        return out


@dataclass(frozen=True)
class ExecutionRecord:
    brick_id: int
    layer: int
    index_in_layer: int
    commanded_target: BrickPose
    achieved: BrickPose
    spawn: BrickPose
    estimate: BrickPose
    position_error_m: float
    orientation_diff_rad: float
    trajectory_time_s: float
    cycle_time_s: float
    pose_estimate_time_s: float
    attempts: int = 1


# ---------------------------------------------------------------------------

def _closing_yaw(footprint_long_axis: float) -> float:
    # fingers close across the long sides, i.e. along the short axis
    return footprint_long_axis + 0.5 * math.pi


def _check_workspace(points, cfg: ExecutorConfig):
    x0, y0, z0, x1, y1, z1 = cfg.workspace
    for p in points:
        if not (x0 <= p[0] <= x1 and y0 <= p[1] <= y1 and z0 <= p[2] <= z1):
            raise UnreachableTarget(f"waypoint {tuple(round(v, 4) for v in p)} lies outside the workspace {cfg.workspace}")


def plan_pick_place(
    estimated: EstimatedPose,
    target: BrickPose,
    cfg: ExecutorConfig,
    dims: BrickDims = DEFAULT_DIMS,
    home: Optional[Waypoint] = None,
    column_top_z: float = -math.inf,
) -> WaypointPlan:
    """Six-phase plan from an estimated conveyor pose to a target pose.

    ``column_top_z`` is the highest brick centre already placed; targets
    below it are refused, as are hover points that do not clear the column
    top by ``cfg.descend_clearance``.
    """
    if target.position[2] < column_top_z - 1e-9:
        raise UnreachableTarget(
            f"target z {target.position[2]:.4f} lies below the placed layer at z {column_top_z:.4f}"
        )
    up = np.array([0.0, 0.0, cfg.eta])
    p = np.asarray(estimated.center, dtype=float)
    q = p + up
    p_b = np.asarray(target.position, dtype=float)
    q_b = p_b + up
    if q_b[2] - 0.5 * dims.h < column_top_z + 0.5 * dims.h + cfg.descend_clearance:
        raise UnreachableTarget("hover point above the target does not clear the column")

    grasp_yaw = _closing_yaw(estimated.box.yaw)
    place_yaw_abs = _closing_yaw(brick_footprint(target, dims).yaw)
    # a brick is half-turn symmetric, so rotate by the shorter equivalent angle
    place_yaw = grasp_yaw + math.remainder(place_yaw_abs - grasp_yaw, math.pi)
    if home is None:
        home = Waypoint(tuple(q), grasp_yaw, OPEN, 0)

    wps = (
        Waypoint(tuple(q), grasp_yaw, OPEN, 1),
        Waypoint(tuple(p), grasp_yaw, CLOSED, 2),
        Waypoint(tuple(q), grasp_yaw, CLOSED, 3),
        Waypoint(tuple(q_b), place_yaw, CLOSED, 4),
        Waypoint(tuple(p_b), place_yaw, OPEN, 5),
        Waypoint(tuple(q_b), place_yaw, OPEN, 6),
        Waypoint(home.position, home.yaw, OPEN, 6),
    )
    _check_workspace([w.position for w in wps], cfg)
    return WaypointPlan(home, wps)


def segment_duration(distance: float, angle: float, cfg: ExecutorConfig) -> float:
    """Time for one straight move: trapezoidal (or triangular) translation,
    constant-rate rotation, whichever is slower."""
    if distance < 0 or angle < 0:
        raise ValueError("distance and angle must be >= 0")
    v, a = cfg.v_max, cfg.a_max
    if distance >= v * v / a:
        t_lin = distance / v + v / a
    else:
        t_lin = 2.0 * math.sqrt(distance / a)
    return max(t_lin, angle / cfg.omega_max)


def _move_time(w0: Waypoint, w1: Waypoint, cfg: ExecutorConfig) -> float:
    d = float(np.linalg.norm(np.subtract(w1.position, w0.position)))
    return segment_duration(d, abs(w1.yaw - w0.yaw), cfg)


def plan_times(plan: WaypointPlan, cfg: ExecutorConfig) -> tuple[float, float]:
    """(pick-to-place time, full cycle time) of a plan."""
    total = pick = 0.0
    for w0, w1 in plan.segments():
        t = _move_time(w0, w1, cfg)
        total += t
        if w1.phase in PICK_TO_PLACE_PHASES:
            pick += t
    return pick, total


def execute_plan(plan: WaypointPlan, world: KinematicWorld, cfg: ExecutorConfig, target: BrickPose):
    """Run ``plan`` in ``world``: the conveyor brick is removed and set down at
    ``target`` exactly. Returns ``(trajectory_time_s, cycle_time_s)``."""
    if world.conveyor_brick is None:
        raise UnreachableTarget("no brick on the conveyor")
    if target.position[2] < world.top_center_z() - 1e-9:
        raise UnreachableTarget("target lies below an already placed layer")
    pick, total = plan_times(plan, cfg)
    world.conveyor_brick = None
    world.placed.append(target)
    world.gripper = plan.waypoints[-1]
    return pick, total


@dataclass
class AssemblyLog:
    name: str
    seed: int
    records: list

    def __len__(self):
        return len(self.records)


def run_assembly(
    model: ColumnModel,
    exec_cfg: ExecutorConfig = ExecutorConfig(),
    perception_cfg: PerceptionConfig = PerceptionConfig(),
    seed: int = 0,
    retries: int = 3,
    world: Optional[KinematicWorld] = None,
    name: str = "column",
    on_frame=None,
) -> AssemblyLog:
    """Assemble every placement of ``model`` in order.

    Each brick is spawned at a seeded random conveyor pose, estimated from a
    rendered depth frame, planned and executed. Errors are those of the
    estimate against the spawn pose, which is what a rigid grasp would carry
    to the placement. ``on_frame(brick_id, depth)`` sees every rendered frame.
    """
    dims = model.spec.dims
    if world is None:
        world = KinematicWorld(dims=dims, plane_z=perception_cfg.plane_z)
    rng = np.random.default_rng(seed)
    home = world.home(exec_cfg.eta)
    world.gripper = home
    records = []
    for brick_id, placement in enumerate(model.placements):
        truth = world.spawn(rng)
        est = None
        for attempt in range(1, retries + 2):
            frame_seed, mlesac_seed = (int(v) for v in rng.integers(0, 2**31 - 1, size=2))
            depth = render_depth(truth, dims, world.plane_z, perception_cfg.camera, perception_cfg.noise_sigma, frame_seed)
            if on_frame is not None:
                on_frame(brick_id, depth)
            cfg = replace(perception_cfg, mlesac=replace(perception_cfg.mlesac, seed=mlesac_seed))
            t0 = time.perf_counter()
            try:
                est = estimate_from_depth(depth, dims, cfg)
            except (ShapeMismatch, EmptyResult) as exc:
                log.warning("brick %d attempt %d: %s", brick_id, attempt, exc)
                continue
            t_est = time.perf_counter() - t0
            break
        if est is None:
            raise AssemblyError(f"brick {brick_id} (layer {placement.layer}): no usable pose after {retries + 1} frames")

        plan = plan_pick_place(est, placement.pose, exec_cfg, dims, world.gripper, world.top_center_z())
        traj, cycle = execute_plan(plan, world, exec_cfg, placement.pose)
        estimate = est.as_brick_pose(dims)
        records.append(
            ExecutionRecord(
                brick_id=brick_id,
                layer=placement.layer,
                index_in_layer=placement.index_in_layer,
                commanded_target=placement.pose,
                achieved=world.placed[-1],
                spawn=truth,
                estimate=estimate,
                position_error_m=position_error(estimate.position, truth.position),
                orientation_diff_rad=yaw_difference(estimate.yaw, truth.yaw),
                trajectory_time_s=traj,
                cycle_time_s=cycle,
                pose_estimate_time_s=t_est,
                attempts=attempt,
            )
        )
        log.debug("brick %d placed: traj %.3f s, estimate %.3f s", brick_id, traj, t_est)
    return AssemblyLog(name, seed, records)
