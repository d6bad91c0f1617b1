"""Command-line entry point.

    spiralbrick generate --config square --obj --svg --out runs/square
    spiralbrick estimate --synthetic --pose 0.4,-0.3,0.6 --noise 0
    spiralbrick simulate --config square --seed 7 --out runs/square
    spiralbrick report runs/square

Failures print one JSON line on stderr and exit nonzero.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import documents as docs
from .column_models import BrickPose, build_column, export_obj, export_svg_topview, validate_column
from .errors import ParseError, SpiralBrickError, ValidationError
from .metrics_report import aggregate, emit_csv, emit_svg_plots
from .perception import (
    DepthImage,
    PerceptionConfig,
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
    write_depth_pgm,
)
from .task_executor import KinematicWorld, run_assembly

log = logging.getLogger("spiralbrick")

ESTIMATE_SCHEMA = "spiralbrick.estimate/1"
DEFAULT_OUT = Path("spiralbrick_out")

EXIT_RUNTIME = 1
EXIT_USAGE = 2


def _setup_logging():
    level = os.environ.get("SPIRALBRICK_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def _load_config(ref: str, args) -> docs.RunConfig:
    cfg = docs.parse_config(ref)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "noise", None) is not None:
        cfg = replace(cfg, perception=replace(cfg.perception, noise_sigma=args.noise))
    if getattr(args, "retries", None) is not None:
        cfg = replace(cfg, retries=args.retries)
    return cfg


def _out_dir(args, cfg: docs.RunConfig, many: bool) -> Path:
    base = Path(args.out) if args.out else Path(cfg.out) if cfg.out else DEFAULT_OUT / cfg.name
    return base / cfg.name if many and args.out else base


def _write_geometry(model, out: Path, args) -> list:
    written = []
    if args.obj:
        written.append(export_obj(model, out / "column.obj"))
    if args.svg:
        written.append(export_svg_topview(model, out / "topview.svg"))
    return written


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_generate(args) -> dict:
    refs = args.config or ["defaults"]
    results = []
    for ref in refs:
        cfg = _load_config(ref, args)
        out = _out_dir(args, cfg, len(refs) > 1)
        out.mkdir(parents=True, exist_ok=True)
        model = build_column(cfg.column)
        report = validate_column(model)
        if not report.ok:
            raise SpiralBrickError(f"{cfg.name}: generated model fails validation ({len(report.overlaps)} overlaps)")
        files = [docs.write_document(docs.model_document(model, cfg), out / "model.json")]
        files += _write_geometry(model, out, args)
        results.append({"name": cfg.name, "bricks": len(model.placements), "files": [str(f) for f in files]})
    return {"generated": results}


def _parse_pose(text: str) -> tuple:
    try:
        x, y, yaw = (float(v) for v in text.split(","))
    except ValueError as exc:
        raise ParseError(f"--pose must be x,y,yaw, got {text!r}") from exc
    return x, y, yaw


def _read_input(path: Path):
    suffix = path.suffix.lower()
    if suffix == ".ply":
        return read_ply(path)
    if suffix == ".pgm":
        return read_depth_pgm(path)
    if suffix == ".csv":
        # depth CSV is a pixel grid, cloud CSV has an x,y,z header
        with open(path) as fh:
            head = fh.readline().strip().lower()
        return read_cloud_csv(path) if head == "x,y,z" else read_depth_csv(path)
    raise ParseError(f"{path}: expected .ply, .pgm or .csv input")


def cmd_estimate(args) -> dict:
    cfg = _load_config(args.config, args) if args.config else None
    pcfg = cfg.perception if cfg else PerceptionConfig(noise_sigma=args.noise or 0.0)
    dims = cfg.column.dims if cfg else docs.DEFAULT_DIMS
    doc = {"schema": ESTIMATE_SCHEMA}
    if args.synthetic:
        if not args.pose:
            raise ParseError("--synthetic needs --pose x,y,yaw")
        x, y, yaw = _parse_pose(args.pose)
        truth = BrickPose((x, y, pcfg.plane_z + 0.5 * dims.h), yaw)
        seed = args.seed if args.seed is not None else 0
        depth = render_depth(truth, dims, pcfg.plane_z, pcfg.camera, pcfg.noise_sigma, seed)
        doc["truth"] = {"position": list(truth.position), "yaw": truth.yaw}
        est = estimate_from_depth(depth, dims, pcfg)
    elif args.input:
        data = _read_input(Path(args.input))
        if isinstance(data, DepthImage):
            est = estimate_from_depth(data, dims, pcfg)
        else:
            t0 = time.perf_counter()
            plane, _ = mlesac_plane(data, pcfg.mlesac)
            roi = remove_sparse_points(filter_roi(data, plane, pcfg.band or default_band(dims)))
            est = estimate_brick_pose(roi, plane, dims)
            est = replace(est, timestamp_ms=(time.perf_counter() - t0) * 1e3)
    else:
        raise ParseError("estimate needs --synthetic or an input file")
    pose = est.as_brick_pose(dims)
    doc.update(
        position=list(pose.position),
        yaw=pose.yaw,
        footprint={"center": list(est.box.center), "half_extents": list(est.box.half_extents), "yaw": est.box.yaw},
        pose_estimate_time_s=est.timestamp_ms / 1e3,
    )
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        docs.write_document(doc, out)
    return doc


def _simulate_one(cfg: docs.RunConfig, out: Path, args) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    model = build_column(cfg.column)
    docs.write_document(docs.config_document(cfg), out / "config.json")
    docs.write_document(docs.model_document(model, cfg), out / "model.json")
    _write_geometry(model, out, args)

    on_frame = None
    if args.save_clouds:
        clouds = out / "clouds"
        clouds.mkdir(exist_ok=True)
        seen: dict = {}

        def on_frame(brick_id, depth):
            seen[brick_id] = seen.get(brick_id, 0) + 1
            write_depth_pgm(depth, clouds / f"brick_{brick_id:04d}_frame{seen[brick_id]}.pgm")

    world = KinematicWorld(
        conveyor_center=cfg.world.conveyor_center,
        spawn_half_extents=cfg.world.spawn_half_extents,
        plane_z=cfg.perception.plane_z,
        dims=cfg.column.dims,
    )
    alog = run_assembly(
        model, cfg.executor, cfg.perception, seed=cfg.seed, retries=cfg.retries,
        world=world, name=cfg.name, on_frame=on_frame,
    )
    docs.write_document(docs.log_document(alog), out / "log.json")
    elapsed = time.perf_counter() - t0
    log.info("%s: %d bricks in %.1f s -> %s", cfg.name, len(alog), elapsed, out)
    return {"name": cfg.name, "run_dir": str(out), "bricks": len(alog), "seed": cfg.seed, "wall_time_s": elapsed}


def cmd_simulate(args) -> dict:
    refs = args.config or ["defaults"]
    cfgs = [_load_config(ref, args) for ref in refs]
    outs = [_out_dir(args, c, len(cfgs) > 1) for c in cfgs]
    if len(set(outs)) != len(outs):
        raise ValidationError([f"name: run directories collide ({', '.join(map(str, outs))})"])
    if len(cfgs) == 1:
        runs = [_simulate_one(cfgs[0], outs[0], args)]
    else:
        with ThreadPoolExecutor(max_workers=min(len(cfgs), os.cpu_count() or 1)) as pool:
            runs = list(pool.map(lambda co: _simulate_one(co[0], co[1], args), zip(cfgs, outs)))
    return {"runs": runs}


def cmd_report(args) -> dict:
    summaries, files = [], []
    for run in args.run_dirs:
        run = Path(run)
        summary = aggregate(docs.log_from_document(docs.read_document(run / "log.json", docs.LOG_SCHEMA)))
        rep = run / "report"
        rep.mkdir(exist_ok=True)
        files.append(emit_csv(summary, rep / "metrics.csv"))
        files += emit_svg_plots(summary, rep)
        files.append(docs.write_document({"name": summary.name, "bricks": len(summary), **summary.aggregates}, rep / "summary.json"))
        summaries.append(summary)
    if len(summaries) > 1 and args.out:
        files += emit_svg_plots(summaries, Path(args.out))
    return {
        "reports": [{"name": s.name, "bricks": len(s), **s.aggregates} for s in summaries],
        "files": [str(f) for f in files],
    }


# ---------------------------------------------------------------------------

class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Raises instead of exiting so usage errors share the JSON error line."""

    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="spiralbrick", description="Spiral brick column generation and assembly simulation.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, multi=True):
        if multi:
            p.add_argument("--config", action="append", help="config file or preset name (repeatable)")
        else:
            p.add_argument("--config", help="config file or preset name")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--noise", type=float, help="depth noise sigma [m]")

    g = sub.add_parser("generate", help="build a column model")
    common(g)
    g.add_argument("--obj", action="store_true", help="also write column.obj")
    g.add_argument("--svg", action="store_true", help="also write topview.svg")
    g.set_defaults(func=cmd_generate)

    e = sub.add_parser("estimate", help="estimate one brick pose")
    common(e, multi=False)
    e.add_argument("input", nargs="?", help="point cloud (.ply, x,y,z .csv) or depth image (.pgm, .csv)")
    e.add_argument("--synthetic", action="store_true", help="render a synthetic frame instead of reading input")
    e.add_argument("--pose", help="synthetic brick pose as x,y,yaw")
    e.set_defaults(func=cmd_estimate)

    s = sub.add_parser("simulate", help="assemble a column and log every brick")
    common(s)
    s.add_argument("--retries", type=int)
    s.add_argument("--save-clouds", action="store_true", help="keep every depth frame under clouds/")
    s.add_argument("--obj", action="store_true")
    s.add_argument("--svg", action="store_true")
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("report", help="metrics CSV and plots from run directories")
    r.add_argument("run_dirs", nargs="+")
    r.add_argument("--out", help="directory for plots overlaying all runs")
    r.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    _setup_logging()
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "retries", None) is not None and args.retries < 0:
            raise ValidationError(["--retries: must be >= 0"])
        if getattr(args, "noise", None) is not None and not args.noise >= 0:
            raise ValidationError(["--noise: must be >= 0"])
        result = args.func(args)
    except _UsageError as exc:
        _fail("UsageError", str(exc), EXIT_USAGE)
        return EXIT_USAGE
    except (ParseError, ValidationError) as exc:
        _fail(type(exc).__name__, str(exc), EXIT_USAGE, getattr(exc, "problems", None))
        return EXIT_USAGE
    except (SpiralBrickError, OSError, ValueError) as exc:
        _fail(type(exc).__name__, str(exc), EXIT_RUNTIME)
        return EXIT_RUNTIME
    print(json.dumps(result, indent=2))
    return 0


def _fail(kind: str, message: str, code: int, problems=None):
    payload = {"error": kind, "message": message, "exit": code}
    if problems:
        payload["problems"] = problems
    print(json.dumps(payload), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
