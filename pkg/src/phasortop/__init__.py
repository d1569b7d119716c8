"""Multi-scale topology optimisation with Rank-2 laminates and phasor-based
dehomogenisation."""

from .cli import EvalReport, RunConfig, run
from .dehom import DehomResult, dehomogenise
from .grids import GridHierarchy, build_grid_hierarchy
from .optimize import MultiScaleResult, OptParams, run_optimization

__all__ = [
    "EvalReport", "RunConfig", "run",
    "DehomResult", "dehomogenise",
    "GridHierarchy", "build_grid_hierarchy",
    "MultiScaleResult", "OptParams", "run_optimization",
]

__version__ = "0.1.0"
