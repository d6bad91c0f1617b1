"""JSON documents: run configurations, column models and assembly logs.

Every document carries a versioned ``schema`` field. Floats are written
with Python's shortest round-trip repr, so reading a document back gives
bit-identical values.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

from .column_models import (
    DEFAULT_PHI,
    DEFAULT_DIMS,
    BrickDims,
    BrickPose,
    ColumnModel,
    ColumnSpec,
    Placement,
    PolygonBaseSpec,
    PolynomialBaseSpec,
    SegmentBaseSpec,
    build_base_layer,
    regular_polygon_turns,
)
from .errors import ParseError, SpiralBrickError, ValidationError
from .perception import CAMERA_HEIGHT, CONVEYOR_CENTER, CameraModel, MlesacParams, PerceptionConfig
from .task_executor import AssemblyLog, ExecutionRecord, ExecutorConfig

CONFIG_SCHEMA = "spiralbrick.config/1"
MODEL_SCHEMA = "spiralbrick.model/1"
LOG_SCHEMA = "spiralbrick.assembly_log/1"

# record fields that hold wall-clock measurements and vary run to run
WALL_CLOCK_FIELDS = ("pose_estimate_time_s",)

FAMILIES = ("segment", "polygon", "polynomial")
SEGMENT_CONFIGURATIONS = {"parallel": math.pi, "orthogonal": 0.5 * math.pi}


def dumps(doc: dict) -> str:
    return json.dumps(doc, indent=2, allow_nan=False) + "\n"


def write_document(doc: dict, path) -> Path:
    path = Path(path)
    path.write_text(dumps(doc))
    return path


def read_document(path, schema: Optional[str] = None) -> dict:
    """Load a JSON document; syntax errors become ``ParseError`` with line/column."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"{path}: cannot read ({exc.strerror or exc})") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: top level must be an object")
    if schema is not None and doc.get("schema") != schema:
        raise ParseError(f"{path}: schema must be {schema!r}, got {doc.get('schema')!r}")
    return doc


# ---------------------------------------------------------------------------
# run configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WorldConfig:
    conveyor_center: tuple = CONVEYOR_CENTER
    spawn_half_extents: tuple = (0.15, 0.1)


@dataclass(frozen=True)
class RunConfig:
    name: str
    column: ColumnSpec
    executor: ExecutorConfig = ExecutorConfig()
    perception: PerceptionConfig = field(default_factory=PerceptionConfig)
    world: WorldConfig = WorldConfig()
    seed: int = 0
    retries: int = 3
    out: Optional[str] = None
    source: dict = field(default_factory=dict, compare=False)  # the document as read


class _Reader:
    """Pulls typed fields out of nested dicts, collecting every problem."""

    def __init__(self):
        self.problems: list = []

    def fail(self, path: str, msg: str):
        self.problems.append(f"{path.lstrip('.') or '<root>'}: {msg}")

    def section(self, doc: dict, key: str, path: str) -> dict:
        v = doc.get(key, {})
        if not isinstance(v, dict):
            self.fail(f"{path}.{key}", "must be an object")
            return {}
        return v

    def unknown(self, doc: dict, allowed, path: str):
        for k in doc:
            if k not in allowed:
                self.fail(f"{path}.{k}", "unknown field")

    def number(self, doc, key, path, default=None, *, positive=False, nonneg=False, required=False):
        if key not in doc:
            if required:
                self.fail(f"{path}.{key}", "is required")
            return default
        v = doc[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            self.fail(f"{path}.{key}", f"must be a finite number, got {v!r}")
            return default
        if positive and not v > 0:
            self.fail(f"{path}.{key}", f"must be > 0, got {v!r}")
            return default
        if nonneg and v < 0:
            self.fail(f"{path}.{key}", f"must be >= 0, got {v!r}")
            return default
        return float(v)

    def integer(self, doc, key, path, default=None, *, minimum=None, required=False):
        if key not in doc:
            if required:
                self.fail(f"{path}.{key}", "is required")
            return default
        v = doc[key]
        if isinstance(v, bool) or not isinstance(v, int):
            self.fail(f"{path}.{key}", f"must be an integer, got {v!r}")
            return default
        if minimum is not None and v < minimum:
            self.fail(f"{path}.{key}", f"must be >= {minimum}, got {v}")
            return default
        return v

    def numbers(self, doc, key, path, *, length=None, required=False, integer=False):
        if doc.get(key) is None:
            if required:
                self.fail(f"{path}.{key}", "is required")
            return None
        v = doc[key]
        kind = int if integer else (int, float)
        if (
            not isinstance(v, list)
            or not v
            or any(isinstance(x, bool) or not isinstance(x, kind) or not math.isfinite(x) for x in v)
        ):
            what = "integers" if integer else "finite numbers"
            self.fail(f"{path}.{key}", f"must be a non-empty list of {what}")
            return None
        if length is not None and len(v) != length:
            self.fail(f"{path}.{key}", f"must have {length} entries, got {len(v)}")
            return None
        return tuple(v)

    def angle(self, doc, key, path, default=None):
        """``key`` in radians or ``key_deg`` in degrees, not both."""
        if key in doc and f"{key}_deg" in doc:
            self.fail(f"{path}", f"give {key} or {key}_deg, not both")
            return default
        if f"{key}_deg" in doc:
            v = self.number(doc, f"{key}_deg", path)
            return default if v is None else math.radians(v)
        return self.number(doc, key, path, default)


def _parse_base(r: _Reader, col: dict, path: str):
    present = [f for f in FAMILIES if f in col]
    if len(present) != 1:
        r.fail(path, f"needs exactly one base family of {list(FAMILIES)}, got {present or 'none'}")
        return None
    family = present[0]
    bp = f"{path}.{family}"
    body = col[family]
    if not isinstance(body, dict):
        r.fail(bp, "must be an object")
        return None
    lam = r.number(col, "lambda", path, 0.01, nonneg=True)
    kappa = r.number(col, "kappa", path, 0.05, nonneg=True)

    if family == "segment":
        r.unknown(body, ("blocks", "theta", "theta_deg", "configuration", "lambda"), bp)
        blocks = r.numbers(body, "blocks", bp, required=True, integer=True)
        if blocks is not None and min(blocks) < 1:
            r.fail(f"{bp}.blocks", "every segment needs at least one brick")
        theta = r.angle(body, "theta", bp)
        conf = body.get("configuration")
        if conf is not None:
            if conf not in SEGMENT_CONFIGURATIONS:
                r.fail(f"{bp}.configuration", f"must be one of {sorted(SEGMENT_CONFIGURATIONS)}, got {conf!r}")
            elif theta is not None and theta != SEGMENT_CONFIGURATIONS[conf]:
                r.fail(bp, f"theta contradicts configuration {conf!r}")
            else:
                theta = SEGMENT_CONFIGURATIONS[conf]
        if theta is None:
            r.fail(bp, "needs theta, theta_deg or configuration")
        lam = r.number(body, "lambda", bp, lam, nonneg=True)
        if blocks is None or theta is None or lam is None:
            return None
        return SegmentBaseSpec(blocks, theta, lam)

    if family == "polygon":
        r.unknown(body, ("sides", "turning_angles", "turning_angles_deg", "bricks_per_edge", "lambda"), bp)
        given = [k for k in ("sides", "turning_angles", "turning_angles_deg") if k in body]
        turns = None
        if len(given) != 1:
            r.fail(bp, f"needs exactly one of sides, turning_angles, turning_angles_deg, got {given or 'none'}")
        elif given[0] == "sides":
            n = r.integer(body, "sides", bp, minimum=3)
            turns = None if n is None else regular_polygon_turns(n)
        else:
            vals = r.numbers(body, given[0], bp)
            if vals is not None:
                turns = tuple(math.radians(v) for v in vals) if given[0].endswith("_deg") else vals
        B = r.integer(body, "bricks_per_edge", bp, required=True, minimum=1)
        lam = r.number(body, "lambda", bp, lam, nonneg=True)
        if turns is None or B is None or lam is None:
            return None
        return PolygonBaseSpec(turns, B, lam)

    r.unknown(body, ("coefficients", "domain", "kappa"), bp)
    coeffs = r.numbers(body, "coefficients", bp, required=True)
    domain = r.numbers(body, "domain", bp, length=2, required=True)
    if domain is not None and not domain[0] < domain[1]:
        r.fail(f"{bp}.domain", "must be increasing")
        domain = None
    kappa = r.number(body, "kappa", bp, kappa, nonneg=True)
    if coeffs is None or domain is None or kappa is None:
        return None
    return PolynomialBaseSpec(coeffs, domain, kappa)


def _parse_column(r: _Reader, doc: dict) -> Optional[ColumnSpec]:
    path = "column"
    if "column" not in doc:
        r.fail(path, "is required")
        return None
    col = r.section(doc, "column", "")
    r.unknown(col, FAMILIES + ("lambda", "kappa", "dims", "layers", "phi", "phi_deg"), path)
    base = _parse_base(r, col, path)
    d = r.section(col, "dims", path)
    r.unknown(d, ("l", "w", "h"), f"{path}.dims")
    l = r.number(d, "l", f"{path}.dims", DEFAULT_DIMS.l, positive=True)
    w = r.number(d, "w", f"{path}.dims", DEFAULT_DIMS.w, positive=True)
    h = r.number(d, "h", f"{path}.dims", DEFAULT_DIMS.h, positive=True)
    layers = r.integer(col, "layers", path, 17, minimum=1)
    phi = r.angle(col, "phi", path, DEFAULT_PHI)
    if None in (base, l, w, h, layers, phi):
        return None
    dims = BrickDims(l, w, h)
    try:
        build_base_layer(base, dims)
    except (SpiralBrickError, ValueError) as exc:
        r.fail(f"{path}.{base.family}", str(exc))
        return None
    return ColumnSpec(base, dims, layers, phi)


def _parse_executor(r: _Reader, doc: dict) -> ExecutorConfig:
    path = "executor"
    e = r.section(doc, "executor", "")
    r.unknown(e, ("eta", "v_max", "a_max", "omega_max", "descend_clearance"), path)
    d = ExecutorConfig()
    kw = {k: r.number(e, k, path, getattr(d, k), positive=True) for k in ("eta", "v_max", "a_max", "omega_max")}
    kw["descend_clearance"] = r.number(e, "descend_clearance", path, d.descend_clearance, nonneg=True)
    if any(v is None for v in kw.values()):
        return d
    return ExecutorConfig(**kw)


def _parse_perception(r: _Reader, doc: dict, world: WorldConfig) -> PerceptionConfig:
    path = "perception"
    p = r.section(doc, "perception", "")
    r.unknown(p, ("noise_sigma", "camera", "mlesac", "band", "plane_z"), path)
    noise = r.number(p, "noise_sigma", path, 0.0, nonneg=True)
    plane_z = r.number(p, "plane_z", path, 0.0)
    band = r.numbers(p, "band", path, length=2)
    if band is not None and not (0.0 <= band[0] < band[1]):
        r.fail(f"{path}.band", "must satisfy 0 <= low < high")
        band = None

    c = r.section(p, "camera", path)
    cp = f"{path}.camera"
    r.unknown(c, ("fx", "fy", "cx", "cy", "width", "height", "position", "tilt", "tilt_deg"), cp)
    intr = {k: r.number(c, k, cp, getattr(CameraModel, k), positive=True) for k in ("fx", "fy")}
    intr.update({k: r.number(c, k, cp, getattr(CameraModel, k), nonneg=True) for k in ("cx", "cy")})
    intr.update({k: r.integer(c, k, cp, getattr(CameraModel, k), minimum=1) for k in ("width", "height")})
    pos = r.numbers(c, "position", cp, length=3) or (*world.conveyor_center, (plane_z or 0.0) + CAMERA_HEIGHT)
    tilt = r.angle(c, "tilt", cp, 0.0)
    camera = CameraModel()
    if None not in intr.values() and tilt is not None:
        try:
            camera = CameraModel.looking_down(pos, tilt, **intr)
        except ValueError as exc:
            r.fail(cp, str(exc))

    m = r.section(p, "mlesac", path)
    mp = f"{path}.mlesac"
    r.unknown(m, ("iterations", "inlier_sigma", "outlier_width", "em_steps", "seed", "max_eval_points"), mp)
    dm = MlesacParams()
    mkw = {
        "iterations": r.integer(m, "iterations", mp, dm.iterations, minimum=1),
        "inlier_sigma": r.number(m, "inlier_sigma", mp, dm.inlier_sigma, positive=True),
        "outlier_width": r.number(m, "outlier_width", mp, dm.outlier_width, positive=True),
        "em_steps": r.integer(m, "em_steps", mp, dm.em_steps, minimum=0),
        "seed": r.integer(m, "seed", mp, dm.seed, minimum=0),
        "max_eval_points": r.integer(m, "max_eval_points", mp, dm.max_eval_points, minimum=3),
    }
    mlesac = dm if None in mkw.values() else MlesacParams(**mkw)
    return PerceptionConfig(
        camera=camera,
        mlesac=mlesac,
        noise_sigma=noise if noise is not None else 0.0,
        band=band,
        plane_z=plane_z if plane_z is not None else 0.0,
    )


def _parse_world(r: _Reader, doc: dict) -> WorldConfig:
    w = r.section(doc, "world", "")
    r.unknown(w, ("conveyor_center", "spawn_half_extents"), "world")
    center = r.numbers(w, "conveyor_center", "world", length=2) or CONVEYOR_CENTER
    half = r.numbers(w, "spawn_half_extents", "world", length=2) or (0.15, 0.1)
    if min(half) < 0:
        r.fail("world.spawn_half_extents", "must be >= 0")
        half = (0.15, 0.1)
    return WorldConfig(tuple(float(v) for v in center), tuple(float(v) for v in half))


def config_from_document(doc: dict, name: str = "config") -> RunConfig:
    """Validate a parsed config document; raises ``ValidationError`` listing
    every problem found."""
    r = _Reader()
    if doc.get("schema", CONFIG_SCHEMA) != CONFIG_SCHEMA:
        r.fail("schema", f"must be {CONFIG_SCHEMA!r}, got {doc.get('schema')!r}")
    r.unknown(doc, ("schema", "name", "column", "executor", "perception", "world", "seed", "retries", "out"), "")
    column = _parse_column(r, doc)
    executor = _parse_executor(r, doc)
    world = _parse_world(r, doc)
    perception = _parse_perception(r, doc, world)
    seed = r.integer(doc, "seed", "", 0, minimum=0)
    retries = r.integer(doc, "retries", "", 3, minimum=0)
    out = doc.get("out")
    if out is not None and not isinstance(out, str):
        r.fail("out", "must be a string")
    nm = doc.get("name", name)
    if not isinstance(nm, str) or not nm:
        r.fail("name", "must be a non-empty string")
    if r.problems:
        raise ValidationError(r.problems)
    return RunConfig(nm, column, executor, perception, world, seed, retries, out, doc)


PRESETS = ("defaults", "parallel", "orthogonal", "triangle", "square", "concave_decagon", "polynomial")


def preset_path(name: str):
    return resources.files("spiralbrick").joinpath("presets", f"{name}.json")


def load_preset_document(name: str) -> dict:
    if name not in PRESETS:
        raise ParseError(f"unknown preset {name!r}; choose from {list(PRESETS)}")
    return json.loads(preset_path(name).read_text())


def parse_config(path_or_preset) -> RunConfig:
    """Read a config file, or a shipped preset by name."""
    p = Path(path_or_preset)
    if not p.exists() and str(path_or_preset) in PRESETS:
        return config_from_document(load_preset_document(str(path_or_preset)), str(path_or_preset))
    return config_from_document(read_document(p), p.stem)


def config_document(cfg: RunConfig) -> dict:
    """Fully resolved config, defaults included, that parses back to ``cfg``."""
    spec = cfg.column
    base = spec.base
    if base.family == "segment":
        body = {"blocks": list(base.blocks), "theta": base.theta, "lambda": base.lam}
    elif base.family == "polygon":
        body = {"turning_angles": list(base.turning_angles), "bricks_per_edge": base.B, "lambda": base.lam}
    else:
        body = {"coefficients": list(base.coefficients), "domain": list(base.domain), "kappa": base.kappa}
    cam = cfg.perception.camera
    return {
        "schema": CONFIG_SCHEMA,
        "name": cfg.name,
        "column": {
            base.family: body,
            "dims": asdict(spec.dims),
            "layers": spec.layers,
            "phi": spec.phi,
        },
        "executor": {k: getattr(cfg.executor, k) for k in ("eta", "v_max", "a_max", "omega_max", "descend_clearance")},
        "perception": {
            "noise_sigma": cfg.perception.noise_sigma,
            "plane_z": cfg.perception.plane_z,
            "band": list(cfg.perception.band) if cfg.perception.band else None,
            "camera": {
                "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
                "width": cam.width, "height": cam.height,
                "position": [float(v) for v in cam.translation],
                "tilt": _camera_tilt(cam),
            },
            "mlesac": asdict(cfg.perception.mlesac),
        },
        "world": {
            "conveyor_center": list(cfg.world.conveyor_center),
            "spawn_half_extents": list(cfg.world.spawn_half_extents),
        },
        "seed": cfg.seed,
        "retries": cfg.retries,
    }


def _camera_tilt(cam: CameraModel) -> float:
    # inverse of CameraModel.looking_down: rotation = Rx(tilt) @ look_down
    R = cam.rotation
    return math.atan2(-R[2, 1], -R[1, 1])


# ---------------------------------------------------------------------------
# models and logs
# ---------------------------------------------------------------------------

def _pose(p: BrickPose) -> dict:
    return {"position": list(p.position), "yaw": p.yaw}


def _unpose(d: dict) -> BrickPose:
    return BrickPose(tuple(d["position"]), d["yaw"])


def model_document(model: ColumnModel, config: Optional[RunConfig] = None) -> dict:
    spec = model.spec
    doc = {
        "schema": MODEL_SCHEMA,
        "family": spec.base.family,
        "dims": asdict(spec.dims),
        "layers": spec.layers,
        "phi": spec.phi,
        "bricks_per_layer": model.bricks_per_layer,
        "closure_residual": model.closure_residual,
        "placements": [
            {"layer": p.layer, "index_in_layer": p.index_in_layer, **_pose(p.pose)} for p in model.placements
        ],
    }
    if config is not None:
        doc["config"] = config_document(config)
    return doc


def model_from_document(doc: dict) -> ColumnModel:
    """Rebuild a model; the spec comes from the embedded config when present."""
    if doc.get("schema") != MODEL_SCHEMA:
        raise ParseError(f"model schema must be {MODEL_SCHEMA!r}, got {doc.get('schema')!r}")
    try:
        if "config" in doc:
            spec = config_from_document(doc["config"]).column
        else:
            raise ParseError("model document has no embedded config")
        placements = tuple(
            Placement(int(p["layer"]), int(p["index_in_layer"]), _unpose(p)) for p in doc["placements"]
        )
    except (KeyError, TypeError) as exc:
        raise ParseError(f"malformed model document: {exc!r}") from exc
    return ColumnModel(spec, placements, float(doc.get("closure_residual", 0.0)))


_RECORD_POSES = ("commanded_target", "achieved", "spawn", "estimate")
_RECORD_SCALARS = (
    "position_error_m",
    "orientation_diff_rad",
    "trajectory_time_s",
    "cycle_time_s",
    "pose_estimate_time_s",
)


def log_document(log: AssemblyLog) -> dict:
    records = []
    for r in log.records:
        d = {"brick_id": r.brick_id, "layer": r.layer, "index_in_layer": r.index_in_layer, "attempts": r.attempts}
        d.update({k: _pose(getattr(r, k)) for k in _RECORD_POSES})
        d.update({k: getattr(r, k) for k in _RECORD_SCALARS})
        records.append(d)
    return {
        "schema": LOG_SCHEMA,
        "name": log.name,
        "seed": log.seed,
        "wall_clock_fields": list(WALL_CLOCK_FIELDS),
        "records": records,
    }


def log_from_document(doc: dict) -> AssemblyLog:
    if doc.get("schema") != LOG_SCHEMA:
        raise ParseError(f"log schema must be {LOG_SCHEMA!r}, got {doc.get('schema')!r}")
    try:
        records = [
            ExecutionRecord(
                brick_id=int(d["brick_id"]),
                layer=int(d["layer"]),
                index_in_layer=int(d["index_in_layer"]),
                attempts=int(d.get("attempts", 1)),
                **{k: _unpose(d[k]) for k in _RECORD_POSES},
                **{k: float(d[k]) for k in _RECORD_SCALARS},
            )
            for d in doc["records"]
        ]
        return AssemblyLog(str(doc.get("name", "column")), int(doc.get("seed", 0)), records)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed assembly log: {exc!r}") from exc


def strip_wall_clock(doc: dict) -> dict:
    """Copy of a log document without the wall-clock measurements."""
    fields = set(doc.get("wall_clock_fields", WALL_CLOCK_FIELDS))
    out = dict(doc)
    out["records"] = [{k: v for k, v in r.items() if k not in fields} for r in doc["records"]]
    return out
