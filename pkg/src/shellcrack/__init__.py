"""Phase-field brittle fracture on single-chart thin shells with anisotropic mesh adaptation."""

from .charts import (
    ChartEval,
    ChartKind,
    SurfaceChart,
    make_cylinder,
    make_flat,
    make_sphere,
)

__all__ = [
    "ChartEval",
    "ChartKind",
    "SurfaceChart",
    "make_cylinder",
    "make_flat",
    "make_sphere",
]
