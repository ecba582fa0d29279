from .bnb import MilpOptions, solve_milp
from .model import CONTINUOUS, EQ, GE, INF, INTEGER, LE, TOL, MilpModel, SolveResult, Status, Tolerances
from .simplex import solve_lp

__all__ = ["MilpOptions", "solve_milp", "solve_lp", "MilpModel", "SolveResult", "Status",
           "Tolerances", "TOL", "CONTINUOUS", "INTEGER", "LE", "EQ", "GE", "INF"]
