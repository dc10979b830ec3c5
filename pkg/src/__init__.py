"""
Poisson Ball Toolkit パッケージ
"""

from .config import RunConfig, SolverConfig
from .errors import PoissonBallError
from .experiments import ExperimentRunner
from .functional import ScalarField, rayleigh, sharp_constant, threshold
from .geometry import BallGrid, BoundaryField, MobiusMap, SphereGrid, make_ball_grid, make_sphere_grid
from .kernel import PoissonOperator, build_operator
from .obstruction import KillingField, kw_report
from .solver import Solution, maximize_subcritical

__version__ = "1.0.0"
__all__ = [
    "RunConfig",
    "SolverConfig",
    "PoissonBallError",
    "ExperimentRunner",
    "ScalarField",
    "rayleigh",
    "sharp_constant",
    "threshold",
    "BallGrid",
    "BoundaryField",
    "MobiusMap",
    "SphereGrid",
    "make_ball_grid",
    "make_sphere_grid",
    "PoissonOperator",
    "build_operator",
    "KillingField",
    "kw_report",
    "Solution",
    "maximize_subcritical",
]
