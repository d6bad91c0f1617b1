import math

import numpy as np
import pytest

from spiralbrick.column_models import (
    DEFAULT_DIMS,
    ColumnSpec,
    PolygonBaseSpec,
    PolynomialBaseSpec,
    SegmentBaseSpec,
    build_column,
    regular_polygon_turns,
    star_turns,
)

PRESET_BASES = {
    "parallel": SegmentBaseSpec((3, 3), math.pi),
    "orthogonal": SegmentBaseSpec((2, 3, 2, 3), 0.5 * math.pi),
    "triangle": PolygonBaseSpec(regular_polygon_turns(3), 2),
    "square": PolygonBaseSpec(regular_polygon_turns(4), 2),
    "concave_decagon": PolygonBaseSpec(star_turns(5, math.radians(108)), 2),
    "polynomial": PolynomialBaseSpec((0.6, 0.0, 0.0, 0.0, -1.46484375), (-0.8, 0.8)),
}


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(scope="session")
def dims():
    return DEFAULT_DIMS


@pytest.fixture(scope="session")
def square_model():
    return build_column(ColumnSpec(PRESET_BASES["square"]))


@pytest.fixture(scope="session")
def preset_models():
    return {name: build_column(ColumnSpec(base)) for name, base in PRESET_BASES.items()}


# acceptance verdicts, filled in by tests/test_acceptance.py
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, title, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {title}  ({detail})")
