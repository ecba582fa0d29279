"""One entry point over the built-in solver and the external routes."""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import ValidationError
from .bnb import MilpOptions, solve_milp
from .external import default_command, solve_command, solve_highs
from .model import MilpModel, SolveResult

BACKENDS = ("builtin", "highs", "command")


@dataclass(frozen=True)
class SolverOptions:
    backend: str = "builtin"
    gap: float = 1e-3
    abs_gap: float = 1e-9
    node_limit: int | None = None
    time_limit: float | None = None
    command: str | None = None

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ValidationError(f"unknown solver backend {self.backend!r}; use one of {BACKENDS}")
        if self.gap < 0:
            raise ValidationError("gap must be nonnegative")


def solve(model: MilpModel, options: SolverOptions | None = None) -> SolveResult:
    opts = options or SolverOptions()
    if opts.backend == "builtin":
        return solve_milp(model, MilpOptions(gap=opts.gap, abs_gap=opts.abs_gap,
                                             node_limit=opts.node_limit, time_limit=opts.time_limit))
    if opts.backend == "highs":
        return solve_highs(model, gap=opts.gap, time_limit=opts.time_limit)
    cmd = opts.command or default_command(opts.gap, opts.time_limit)
    return solve_command(model, cmd)
