"""Bi-level platform problem: AVs are dispatched, CVs reach equilibrium on the rest."""

from .algorithms import (
    bundle_method,
    default_starts,
    exhaustive_search,
    genetic,
    gradient_descent,
    multistart,
    selection_probabilities,
)
from .core import (
    BilevelSolution,
    BundleConfig,
    GdConfig,
    GeneticConfig,
    ProfitOracle,
    av_dispatch_lp,
    av_first,
    evaluate_profit,
    numerical_gradient,
)

__all__ = [
    "BilevelSolution",
    "BundleConfig",
    "GdConfig",
    "GeneticConfig",
    "ProfitOracle",
    "av_dispatch_lp",
    "av_first",
    "bundle_method",
    "default_starts",
    "evaluate_profit",
    "exhaustive_search",
    "genetic",
    "gradient_descent",
    "multistart",
    "numerical_gradient",
    "selection_probabilities",
]
