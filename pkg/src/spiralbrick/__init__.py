"""Spiral brick columns: layout generation, depth-based brick pose estimation
and a kinematic pick-and-place assembly simulation."""

from .column_models import (
    DEFAULT_DIMS,
    BrickDims,
    BrickPose,
    ColumnModel,
    ColumnSpec,
    PolygonBaseSpec,
    PolynomialBaseSpec,
    SegmentBaseSpec,
    build_column,
    validate_column,
)
from .documents import parse_config
from .errors import SpiralBrickError
from .metrics_report import aggregate
from .perception import PerceptionConfig, estimate_from_depth, render_depth
from .task_executor import ExecutorConfig, run_assembly

__version__ = "0.1.0"
