"""
Poisson Ball Toolkit
単位球体上の共形不変な Poisson 核積分方程式を数値的に調べる Python ツール
"""

__version__ = "1.0.0"
__author__ = "mashi727"
__license__ = "MIT"

from .src.experiments import ExperimentRunner
from .src.kernel import PoissonOperator, build_operator
from .src.solver import maximize_subcritical

__all__ = [
    "ExperimentRunner",
    "PoissonOperator",
    "build_operator",
    "maximize_subcritical",
]
