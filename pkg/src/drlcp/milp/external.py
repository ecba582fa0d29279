"""Hand a model to another solver.

Two routes exist: an arbitrary command that reads an MPS file and writes a
solution file of ``name value`` lines, and an in-process call to the HiGHS
solver bundled with scipy.  The solution file may also carry ``status``,
``objective`` and ``bound`` lines.
"""

from __future__ import annotations

import math
import shlex
import subprocess
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from ..errors import ParseError, ValidationError
from .io import write_mps
from .model import EQ, GE, INTEGER, LE, MilpModel, SolveResult, Status, relative_gap

_STATUS = {s.value.lower(): s for s in Status}


def default_command(gap: float = 1e-3, time_limit: float | None = None) -> str:
    cmd = f"{shlex.quote(sys.executable)} -m drlcp.milp.highs_runner {{model}} {{solution}} --gap {gap!r}"
    if time_limit is not None:
        cmd += f" --time-limit {time_limit!r}"
    return cmd


def read_solution(path, model: MilpModel) -> SolveResult:
    path = Path(path)
    if not path.exists():
        raise ParseError(f"{path}: solver wrote no solution file")
    x = np.full(model.n_vars, math.nan)
    index = {v.name: v.id for v in model.variables}
    status = None
    objective = bound = math.nan
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if len(parts) != 2:
            raise ParseError(f"{path}:{lineno}: expected 'name value'")
        key, val = parts
        if key == "status":
            if val.lower() not in _STATUS:
                raise ParseError(f"{path}:{lineno}: unknown status {val!r}")
            status = _STATUS[val.lower()]
            continue
        try:
            num = float(val)
        except ValueError:
            raise ParseError(f"{path}:{lineno}: bad number {val!r}") from None
        if key == "objective":
            objective = num
        elif key == "bound":
            bound = num
        elif key in index:
            x[index[key]] = num
        else:
            raise ParseError(f"{path}:{lineno}: unknown variable {key!r}")
    if status is None:
        status = Status.OPTIMAL if not np.isnan(x).any() else Status.INFEASIBLE
    if status in (Status.INFEASIBLE, Status.UNBOUNDED) or np.isnan(x).any():
        return SolveResult(status, bound=bound)
    ints = model.integer_ids()
    x[ints] = np.round(x[ints])
    if math.isnan(objective):
        objective = model.evaluate(x)
    if math.isnan(bound):
        bound = objective
    return SolveResult(status, x=x, objective=objective, bound=bound,
                       gap=relative_gap(objective, bound))


def solve_command(model: MilpModel, command: str, workdir=None, timeout: float | None = None) -> SolveResult:
    """Write ``model`` as MPS, run ``command`` and read the solution back.

    ``command`` may use the placeholders ``{model}`` and ``{solution}``.
    """
    t0 = time.perf_counter()
    with tempfile.TemporaryDirectory(dir=workdir) as tmp:
        mps = Path(tmp) / "model.mps"
        sol = Path(tmp) / "solution.txt"
        write_mps(model, mps)
        args = [a.format(model=str(mps), solution=str(sol)) for a in shlex.split(command)]
        try:
            proc = subprocess.run(args, capture_output=True, text=True, timeout=timeout)
        except subprocess.TimeoutExpired:
            return SolveResult(Status.TIME_LIMIT, time=time.perf_counter() - t0)
        if proc.returncode != 0:
            raise ValidationError(f"solver command failed ({proc.returncode}): {proc.stderr.strip()}")
        res = read_solution(sol, model)
    res.time = time.perf_counter() - t0
    return res


def solve_highs(model: MilpModel, gap: float = 1e-3, time_limit: float | None = None) -> SolveResult:
    """In-process HiGHS through ``scipy.optimize.milp``."""
    from scipy.optimize import Bounds, LinearConstraint, milp

    t0 = time.perf_counter()
    n = model.n_vars
    c = model.cost_vector()
    lo, hi = model.bounds()
    integrality = np.array([v.kind == INTEGER for v in model.variables], dtype=int)
    cons = []
    if model.n_rows:
        A = model.matrix()
        rhs = model.rhs()
        senses = model.senses()
        lb = np.array([r if s in (GE, EQ) else -np.inf for s, r in zip(senses, rhs)])
        ub = np.array([r if s in (LE, EQ) else np.inf for s, r in zip(senses, rhs)])
        cons.append(LinearConstraint(A, lb, ub))
    opts = {"mip_rel_gap": gap, "disp": False}
    if time_limit is not None:
        opts["time_limit"] = time_limit
    res = milp(c if n else np.zeros(0), integrality=integrality, bounds=Bounds(lo, hi),
               constraints=cons, options=opts)
    dt = time.perf_counter() - t0
    if res.x is None:
        status = {2: Status.INFEASIBLE, 3: Status.UNBOUNDED, 1: Status.TIME_LIMIT}.get(
            res.status, Status.INFEASIBLE)
        return SolveResult(status, time=dt)
    x = np.asarray(res.x, dtype=float)
    ints = model.integer_ids()
    x[ints] = np.round(x[ints])
    obj = model.evaluate(x)
    bound = getattr(res, "mip_dual_bound", None)
    bound = obj if bound is None or not np.isfinite(bound) else float(bound) + model.obj_constant
    status = Status.OPTIMAL if res.status == 0 else Status.TIME_LIMIT
    return SolveResult(status, x=x, objective=obj, bound=min(bound, obj),
                       gap=relative_gap(obj, min(bound, obj)), time=dt,
                       nodes=int(getattr(res, "mip_node_count", 0) or 0))
