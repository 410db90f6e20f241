"""Matrix-free geometric multigrid solver for phase-field brittle fracture."""

from . import cli, fem, krylov, mesh, mgsolve, model, nonlinear, scenarios
from .mesh import BoundaryId, GridHierarchy, build_lshape, build_square
from .model import MaterialParams, SplitKind
from .nonlinear import ActiveSetParams, SolverConfig
from .scenarios import make_lshape, make_multiple_fractures, run

__version__ = "0.1.0"

__all__ = [
    "cli", "fem", "krylov", "mesh", "mgsolve", "model", "nonlinear",
    "scenarios", "BoundaryId", "GridHierarchy", "build_lshape",
    "build_square", "MaterialParams", "SplitKind", "ActiveSetParams",
    "SolverConfig", "make_lshape", "make_multiple_fractures", "run",
]
