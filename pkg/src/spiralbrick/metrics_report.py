"""Per-brick error and timing metrics, as CSV tables and SVG charts."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import EmptyLog

SERIES = ("position_error_m", "orientation_diff_rad", "pose_time_s", "traj_time_s")

# file name, series, y label, scale applied before plotting
PLOTS = (
    ("position_error.svg", "position_error_m", "position error [m]", 1.0),
    ("orientation_diff.svg", "orientation_diff_rad", "orientation difference [deg]", 180.0 / math.pi),
    ("pose_time.svg", "pose_time_s", "pose estimation time [s]", 1.0),
    ("trajectory_time.svg", "traj_time_s", "trajectory time [s]", 1.0),
)

# orientation is given in degrees for reading and in radians for exact round trips
CSV_HEADER = (
    "brick",
    "layer",
    "index_in_layer",
    "position_error_m",
    "orientation_diff_deg",
    "orientation_diff_rad",
    "pose_time_s",
    "traj_time_s",
)


def position_error(a, b) -> float:
    return float(math.dist(tuple(a), tuple(b)))


def yaw_difference(a: float, b: float) -> float:
    """Orientation gap of two rectangles, in [0, pi/2]."""
    d = math.fmod(abs(a - b), math.pi)
    return min(d, math.pi - d)


@dataclass(frozen=True)
class MetricsSummary:
    name: str
    brick: tuple
    layer: tuple
    index_in_layer: tuple
    position_error_m: tuple
    orientation_diff_rad: tuple
    pose_time_s: tuple
    traj_time_s: tuple

    def __len__(self):
        return len(self.brick)

    def stats(self, series: str) -> dict:
        v = np.asarray(getattr(self, series), dtype=float)
        return {"mean": float(v.mean()), "max": float(v.max()), "min": float(v.min())}

    @property
    def aggregates(self) -> dict:
        return {s: self.stats(s) for s in SERIES}


def aggregate(log) -> MetricsSummary:
    """Series and mean/max/min from an ``AssemblyLog``, ordered by brick id."""
    records = sorted(log.records, key=lambda r: r.brick_id)
    if not records:
        raise EmptyLog(f"assembly log {log.name!r} has no records")
    return MetricsSummary(
        name=log.name,
        brick=tuple(r.brick_id for r in records),
        layer=tuple(r.layer for r in records),
        index_in_layer=tuple(r.index_in_layer for r in records),
        position_error_m=tuple(r.position_error_m for r in records),
        orientation_diff_rad=tuple(r.orientation_diff_rad for r in records),
        pose_time_s=tuple(r.pose_estimate_time_s for r in records),
        traj_time_s=tuple(r.trajectory_time_s for r in records),
    )


def emit_csv(summary: MetricsSummary, path) -> Path:
    """One row per brick. Floats use the shortest repr that round-trips."""
    if not len(summary):
        raise EmptyLog("nothing to write")
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for i in range(len(summary)):
            w.writerow([
                summary.brick[i],
                summary.layer[i],
                summary.index_in_layer[i],
                repr(float(summary.position_error_m[i])),
                repr(math.degrees(summary.orientation_diff_rad[i])),
                repr(float(summary.orientation_diff_rad[i])),
                repr(float(summary.pose_time_s[i])),
                repr(float(summary.traj_time_s[i])),
            ])
    return path


def read_csv(path, name: str = "") -> MetricsSummary:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise ValueError(f"{path}: unexpected header {rows[0] if rows else None}")
    cols = list(zip(*rows[1:])) if len(rows) > 1 else [()] * len(CSV_HEADER)
    return MetricsSummary(
        name=name or Path(path).stem,
        brick=tuple(int(v) for v in cols[0]),
        layer=tuple(int(v) for v in cols[1]),
        index_in_layer=tuple(int(v) for v in cols[2]),
        position_error_m=tuple(float(v) for v in cols[3]),
        orientation_diff_rad=tuple(float(v) for v in cols[5]),
        pose_time_s=tuple(float(v) for v in cols[6]),
        traj_time_s=tuple(float(v) for v in cols[7]),
    )


# ---------------------------------------------------------------------------
# SVG charts
# ---------------------------------------------------------------------------

_COLOURS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")


def _nice_ticks(lo: float, hi: float, n: int = 5) -> list:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=10 * mag)
    first = math.floor(lo / step) * step
    ticks = []
    t = first
    while t <= hi + 1e-12 * step:
        ticks.append(round(t, 12))
        t += step
    return ticks


def _chart(summaries: Sequence[MetricsSummary], series: str, ylabel: str, scale: float) -> str:
    W, H, left, right, top, bottom = 640, 400, 70, 150, 20, 50
    pw, ph = W - left - right, H - top - bottom
    values = [np.asarray(getattr(s, series), dtype=float) * scale for s in summaries]
    n_max = max(len(v) for v in values)
    y_hi = max(float(v.max()) for v in values)
    yt = _nice_ticks(0.0, y_hi if y_hi > 0 else 1.0)
    y_top = yt[-1] if yt[-1] > 0 else 1.0
    xt = _nice_ticks(0.0, max(n_max - 1, 1))

    def X(i):
        return left + pw * i / max(xt[-1], 1)

    def Y(v):
        return top + ph * (1.0 - v / y_top)

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{W}" height="{H}" viewBox="0 0 {W} {H}" '
        'font-family="sans-serif" font-size="11">',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#000000"/>',
    ]
    for t in yt:
        out.append(f'<line x1="{left - 4}" y1="{Y(t):.2f}" x2="{left}" y2="{Y(t):.2f}" stroke="#000000"/>')
        out.append(f'<text x="{left - 6}" y="{Y(t) + 4:.2f}" text-anchor="end">{t:g}</text>')
    for t in xt:
        out.append(f'<line x1="{X(t):.2f}" y1="{top + ph}" x2="{X(t):.2f}" y2="{top + ph + 4}" stroke="#000000"/>')
        out.append(f'<text x="{X(t):.2f}" y="{top + ph + 16}" text-anchor="middle">{t:g}</text>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{H - 10}" text-anchor="middle">brick index</text>')
    out.append(
        f'<text x="16" y="{top + ph / 2:.1f}" text-anchor="middle" transform="rotate(-90 16 {top + ph / 2:.1f})">{ylabel}</text>'
    )
    for k, (s, v) in enumerate(zip(summaries, values)):
        colour = _COLOURS[k % len(_COLOURS)]
        pts = " ".join(f"{X(i):.2f},{Y(y):.2f}" for i, y in enumerate(v))
        out.append(f'<polyline class="series" data-name="{s.name}" points="{pts}" fill="none" stroke="{colour}" stroke-width="1"/>')
        for i, y in enumerate(v):
            out.append(f'<circle cx="{X(i):.2f}" cy="{Y(y):.2f}" r="1.5" fill="{colour}"/>')
        ly = top + 14 + 16 * k
        out.append(f'<line x1="{left + pw + 10}" y1="{ly - 4}" x2="{left + pw + 28}" y2="{ly - 4}" stroke="{colour}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 32}" y="{ly}">{s.name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_svg_plots(summaries, outdir) -> list:
    """Write the four metric charts into ``outdir``; several summaries share axes."""
    if isinstance(summaries, MetricsSummary):
        summaries = [summaries]
    if not summaries or any(not len(s) for s in summaries):
        raise EmptyLog("nothing to plot")
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []
    for fname, series, ylabel, scale in PLOTS:
        p = outdir / fname
        p.write_text(_chart(summaries, series, ylabel, scale))
        paths.append(p)
    return paths
