"""Mixed autonomous / conventional ride-hailing fleets.

The platform decides how much demand to reveal to self-interested drivers
(CVs) and dispatches its own autonomous vehicles (AVs) on the rest.
"""

from .bilevel import (
    BilevelSolution,
    BundleConfig,
    GdConfig,
    GeneticConfig,
    av_first,
    bundle_method,
    evaluate_profit,
    exhaustive_search,
    genetic,
    gradient_descent,
    multistart,
)
from .cv_eq import CvEquilibrium, SolverError, solve_cv_equilibrium, verify_equilibrium
from .endogenous import EndogenousConfig, equilibrium_cv_count, evaluate_profit_endogenous_av, solve_endogenous
from .model import DerivedNetwork, NetworkError, NetworkSpec, build_derived, generate_grid, load_network

__version__ = "0.1.0"

__all__ = [
    "BilevelSolution",
    "BundleConfig",
    "CvEquilibrium",
    "DerivedNetwork",
    "EndogenousConfig",
    "GdConfig",
    "GeneticConfig",
    "NetworkError",
    "NetworkSpec",
    "SolverError",
    "av_first",
    "build_derived",
    "bundle_method",
    "equilibrium_cv_count",
    "evaluate_profit",
    "evaluate_profit_endogenous_av",
    "exhaustive_search",
    "generate_grid",
    "genetic",
    "gradient_descent",
    "load_network",
    "multistart",
    "solve_cv_equilibrium",
    "solve_endogenous",
    "verify_equilibrium",
]
