"""Numerical back ends: bounded simplex and the log-barrier concave solver."""

from .concave import solve_concave_log
from .lp import LinearProgram, SolveResult, solve_lp

__all__ = ["LinearProgram", "SolveResult", "solve_concave_log", "solve_lp"]
