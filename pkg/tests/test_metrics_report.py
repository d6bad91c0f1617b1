import math
import xml.etree.ElementTree as ET

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spiralbrick.column_models import BrickPose
from spiralbrick.errors import EmptyLog
from spiralbrick.metrics_report import (
    CSV_HEADER,
    PLOTS,
    MetricsSummary,
    aggregate,
    emit_csv,
    emit_svg_plots,
    position_error,
    read_csv,
    yaw_difference,
)
from spiralbrick.task_executor import AssemblyLog, ExecutionRecord

P0 = BrickPose((0.0, 0.0, 0.0), 0.0)


def record(i, pos_err=0.0, yaw_err=0.0, pose_t=0.1, traj_t=5.0):
    return ExecutionRecord(
        brick_id=i, layer=i // 8, index_in_layer=i % 8,
        commanded_target=P0, achieved=P0, spawn=P0, estimate=P0,
        position_error_m=pos_err, orientation_diff_rad=yaw_err,
        trajectory_time_s=traj_t, cycle_time_s=traj_t + 4, pose_estimate_time_s=pose_t,
    )


def synthetic_log(n=136, name="square"):
    recs = [
        record(i, pos_err=1e-4 * (1 + math.sin(i)), yaw_err=1e-4 * (i % 7) / 3, pose_t=0.1 + 1e-3 * (i % 11), traj_t=5 + (i % 5) / 3)
        for i in range(n)
    ]
    return AssemblyLog(name, 0, recs)


# ---------------------------------------------------------------------------
# scalar metrics


@pytest.mark.parametrize(
    "a, b, expected",
    [((0, 0, 0), (0.003, 0.004, 0), 0.005), ((1, 2, 3), (1, 2, 3), 0.0), ((1, 0, 0), (0, 0, 0), 1.0)],
)
def test_position_error(a, b, expected):
    assert position_error(a, b) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize(
    "a, b, expected",
    [(0.1, 0.1 + math.pi, 0.0), (0.0, math.pi / 2, math.pi / 2), (0.02, -0.03, 0.05), (3.1, -3.1, 2 * math.pi - 6.2)],
)
def test_yaw_difference(a, b, expected):
    assert yaw_difference(a, b) == pytest.approx(abs(expected), abs=1e-12)


angles = st.floats(min_value=-50, max_value=50, allow_nan=False)
vec3 = st.tuples(*[st.floats(min_value=-1e3, max_value=1e3, allow_nan=False)] * 3)


@settings(max_examples=500)
@given(angles, angles)
def test_yaw_difference_properties(a, b):
    d = yaw_difference(a, b)
    assert 0.0 <= d <= math.pi / 2
    assert d == pytest.approx(yaw_difference(b, a), abs=1e-12)
    assert yaw_difference(a + math.pi, b) == pytest.approx(d, abs=1e-9)


@settings(max_examples=500)
@given(vec3, vec3, vec3)
def test_position_error_is_a_metric(a, b, c):
    ab = position_error(a, b)
    assert ab >= 0.0
    assert ab == position_error(b, a)
    assert (ab == 0.0) == (tuple(map(float, a)) == tuple(map(float, b)))
    assert position_error(a, c) <= ab + position_error(b, c) + 1e-9 * (1 + ab)


# ---------------------------------------------------------------------------
# aggregation


def test_aggregate_single_record():
    s = aggregate(AssemblyLog("one", 0, [record(0, 0.002, 0.01, 0.2, 4.0)]))
    for series, v in [("position_error_m", 0.002), ("orientation_diff_rad", 0.01), ("pose_time_s", 0.2), ("traj_time_s", 4.0)]:
        assert s.stats(series) == {"mean": v, "max": v, "min": v}


def test_aggregate_orders_by_brick_and_counts():
    log = synthetic_log()
    log.records.reverse()
    s = aggregate(log)
    assert len(s) == 136
    assert s.brick == tuple(range(136))
    assert all(len(getattr(s, k)) == 136 for k in ("position_error_m", "orientation_diff_rad", "pose_time_s", "traj_time_s"))


def test_aggregate_zero_errors():
    s = aggregate(AssemblyLog("z", 0, [record(i) for i in range(5)]))
    assert s.stats("position_error_m") == {"mean": 0.0, "max": 0.0, "min": 0.0}
    assert s.stats("orientation_diff_rad") == {"mean": 0.0, "max": 0.0, "min": 0.0}


def test_aggregate_empty():
    with pytest.raises(EmptyLog):
        aggregate(AssemblyLog("empty", 0, []))


# ---------------------------------------------------------------------------
# files


def test_csv_lines_and_header(tmp_path):
    path = emit_csv(aggregate(synthetic_log()), tmp_path / "m.csv")
    lines = path.read_text().splitlines()
    assert len(lines) == 137
    assert tuple(lines[0].split(",")) == CSV_HEADER


def test_csv_round_trip_bit_exact(tmp_path):
    s = aggregate(synthetic_log())
    back = read_csv(emit_csv(s, tmp_path / "m.csv"), name=s.name)
    assert back == s


def test_csv_orientation_in_degrees(tmp_path):
    s = aggregate(AssemblyLog("d", 0, [record(0, yaw_err=math.pi / 4)]))
    row = emit_csv(s, tmp_path / "d.csv").read_text().splitlines()[1].split(",")
    assert float(row[4]) == pytest.approx(45.0)


def test_empty_summary_is_rejected(tmp_path):
    empty = MetricsSummary("e", (), (), (), (), (), (), ())
    with pytest.raises(EmptyLog):
        emit_csv(empty, tmp_path / "e.csv")
    with pytest.raises(EmptyLog):
        emit_svg_plots(empty, tmp_path)
    assert not (tmp_path / "e.csv").exists()


def test_svg_plots_four_files(tmp_path):
    paths = emit_svg_plots(aggregate(synthetic_log()), tmp_path / "plots")
    assert [p.name for p in paths] == [p[0] for p in PLOTS]
    assert len(paths) == 4
    for p in paths:
        root = ET.parse(p).getroot()
        assert root.get("version") == "1.1"
        assert len(root.findall("{http://www.w3.org/2000/svg}circle")) == 136
    labels = (tmp_path / "plots" / "orientation_diff.svg").read_text()
    assert "[deg]" in labels
    assert "[m]" in (tmp_path / "plots" / "position_error.svg").read_text()


def test_svg_plots_are_deterministic(tmp_path):
    s = aggregate(synthetic_log())
    a = [p.read_bytes() for p in emit_svg_plots(s, tmp_path / "a")]
    b = [p.read_bytes() for p in emit_svg_plots(s, tmp_path / "b")]
    assert a == b


def test_svg_overlays_several_models(tmp_path):
    runs = [aggregate(synthetic_log(136, "square")), aggregate(synthetic_log(340, "concave_decagon"))]
    path = emit_svg_plots(runs, tmp_path)[3]
    root = ET.parse(path).getroot()
    lines = root.findall("{http://www.w3.org/2000/svg}polyline")
    assert [l.get("data-name") for l in lines] == ["square", "concave_decagon"]
