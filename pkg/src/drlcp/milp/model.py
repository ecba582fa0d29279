"""Mixed-integer linear program container and solver result types."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

import numpy as np
import scipy.sparse as sp

from ..errors import ModelTooLarge, ValidationError

INF = math.inf

CONTINUOUS = "continuous"
INTEGER = "integer"

LE, EQ, GE = "<=", "=", ">="


@dataclass(frozen=True)
class Tolerances:
    """All numerical tolerances used by the built-in solver, in one place."""

    feasibility: float = 1e-7
    reduced_cost: float = 1e-9
    integrality: float = 1e-6
    pivot: float = 1e-9


TOL = Tolerances()


class Status(str, Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    GAP_LIMIT = "GapLimit"
    NODE_LIMIT = "NodeLimit"
    TIME_LIMIT = "TimeLimit"

    def __str__(self):
        return self.value


@dataclass
class Variable:
    id: int
    name: str
    kind: str = CONTINUOUS
    lower: float = 0.0
    upper: float = INF


@dataclass
class Row:
    id: int
    name: str
    coeffs: dict[int, float]
    sense: str
    rhs: float


@dataclass
class SolveResult:
    status: Status
    x: np.ndarray | None = None
    objective: float = math.nan
    bound: float = math.nan
    gap: float = math.nan
    nodes: int = 0
    time: float = 0.0
    iterations: int = 0
    state: object = None
    events: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.x is not None

    def value(self, var_id: int) -> float:
        return float(self.x[var_id])


def relative_gap(incumbent: float, bound: float) -> float:
    if not math.isfinite(incumbent):
        return INF
    if not math.isfinite(bound):
        return INF
    return max(0.0, incumbent - bound) / max(abs(incumbent), 1e-10)


class MilpModel:
    """Minimization MILP with sparse rows.

    Variable ids are dense ``0..n-1`` in creation order; names must be unique.
    """

    def __init__(self, name: str = "drlcp", max_vars: int = 200_000, max_rows: int = 500_000):
        self.name = name
        self.variables: list[Variable] = []
        self.rows: list[Row] = []
        self.objective: dict[int, float] = {}
        self.obj_constant = 0.0
        self.max_vars = max_vars
        self.max_rows = max_rows
        self._names: set[str] = set()
        self._row_names: set[str] = set()

    # -- construction -----------------------------------------------------
    @property
    def n_vars(self) -> int:
        return len(self.variables)

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    def add_var(self, name: str, lower: float = 0.0, upper: float = INF, kind: str = CONTINUOUS) -> int:
        if name in self._names:
            raise ValidationError(f"duplicate variable name {name!r}")
        if kind not in (CONTINUOUS, INTEGER):
            raise ValidationError(f"unknown variable kind {kind!r}")
        lower, upper = float(lower), float(upper)
        if math.isnan(lower) or math.isnan(upper) or lower > upper:
            raise ValidationError(f"bad bounds [{lower}, {upper}] for {name!r}")
        if len(self.variables) >= self.max_vars:
            raise ModelTooLarge(f"more than {self.max_vars} variables")
        vid = len(self.variables)
        self.variables.append(Variable(vid, name, kind, lower, upper))
        self._names.add(name)
        return vid

    def add_row(self, coeffs: Mapping[int, float] | Iterable[tuple[int, float]], sense: str,
                rhs: float, name: str | None = None) -> int:
        if sense not in (LE, EQ, GE):
            raise ValidationError(f"unknown row sense {sense!r}")
        items = coeffs.items() if isinstance(coeffs, Mapping) else coeffs
        clean: dict[int, float] = {}
        n = len(self.variables)
        for j, a in items:
            if not 0 <= j < n:
                raise ValidationError(f"row references unknown variable id {j}")
            a = float(a)
            if not math.isfinite(a):
                raise ValidationError("non-finite row coefficient")
            clean[j] = clean.get(j, 0.0) + a
        clean = {j: a for j, a in clean.items() if a != 0.0}
        rhs = float(rhs)
        if not math.isfinite(rhs):
            raise ValidationError("non-finite right-hand side")
        rid = len(self.rows)
        if name is None:
            name = f"r{rid}"
        if name in self._row_names:
            raise ValidationError(f"duplicate row name {name!r}")
        if rid >= self.max_rows:
            raise ModelTooLarge(f"more than {self.max_rows} rows")
        self.rows.append(Row(rid, name, clean, sense, rhs))
        self._row_names.add(name)
        return rid

    def set_objective(self, coeffs: Mapping[int, float], constant: float = 0.0) -> None:
        obj: dict[int, float] = {}
        for j, a in coeffs.items():
            if not 0 <= j < self.n_vars:
                raise ValidationError(f"objective references unknown variable id {j}")
            obj[j] = obj.get(j, 0.0) + float(a)
        self.objective = {j: a for j, a in sorted(obj.items()) if a != 0.0}
        self.obj_constant = float(constant)

    def add_objective(self, coeffs: Mapping[int, float], constant: float = 0.0) -> None:
        merged = dict(self.objective)
        for j, a in coeffs.items():
            merged[j] = merged.get(j, 0.0) + float(a)
        self.set_objective(merged, self.obj_constant + constant)

    def set_bounds(self, var_id: int, lower: float | None = None, upper: float | None = None) -> None:
        v = self.variables[var_id]
        lo = v.lower if lower is None else float(lower)
        hi = v.upper if upper is None else float(upper)
        if lo > hi:
            raise ValidationError(f"bad bounds [{lo}, {hi}] for {v.name!r}")
        v.lower, v.upper = lo, hi

    def var_id(self, name: str) -> int:
        for v in self.variables:
            if v.name == name:
                return v.id
        raise KeyError(name)

    # -- queries ----------------------------------------------------------
    def integer_ids(self) -> np.ndarray:
        return np.array([v.id for v in self.variables if v.kind == INTEGER], dtype=int)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([v.lower for v in self.variables], dtype=float)
        hi = np.array([v.upper for v in self.variables], dtype=float)
        return lo, hi

    def cost_vector(self) -> np.ndarray:
        c = np.zeros(self.n_vars)
        for j, a in self.objective.items():
            c[j] = a
        return c

    def matrix(self) -> sp.csr_matrix:
        indptr = [0]
        indices: list[int] = []
        data: list[float] = []
        for row in self.rows:
            for j in sorted(row.coeffs):
                indices.append(j)
                data.append(row.coeffs[j])
            indptr.append(len(indices))
        return sp.csr_matrix((np.array(data, dtype=float), np.array(indices, dtype=int),
                              np.array(indptr, dtype=int)), shape=(self.n_rows, self.n_vars))

    def senses(self) -> list[str]:
        return [r.sense for r in self.rows]

    def rhs(self) -> np.ndarray:
        return np.array([r.rhs for r in self.rows], dtype=float)

    def evaluate(self, x: np.ndarray) -> float:
        return float(self.cost_vector() @ x + self.obj_constant)

    def max_violation(self, x: np.ndarray) -> float:
        """Largest row or bound violation of ``x`` (0 when feasible)."""
        x = np.asarray(x, dtype=float)
        worst = 0.0
        if self.n_rows:
            act = self.matrix() @ x
            for r, a in zip(self.rows, act):
                if r.sense == LE:
                    worst = max(worst, a - r.rhs)
                elif r.sense == GE:
                    worst = max(worst, r.rhs - a)
                else:
                    worst = max(worst, abs(a - r.rhs))
        lo, hi = self.bounds()
        worst = max(worst, float(np.max(lo - x, initial=0.0)), float(np.max(x - hi, initial=0.0)))
        return worst

    def copy(self) -> MilpModel:
        m = MilpModel(self.name, self.max_vars, self.max_rows)
        m.variables = [Variable(v.id, v.name, v.kind, v.lower, v.upper) for v in self.variables]
        m.rows = [Row(r.id, r.name, dict(r.coeffs), r.sense, r.rhs) for r in self.rows]
        m.objective = dict(self.objective)
        m.obj_constant = self.obj_constant
        m._names = set(self._names)
        m._row_names = set(self._row_names)
        return m

    def relaxed(self) -> MilpModel:
        m = self.copy()
        for v in m.variables:
            v.kind = CONTINUOUS
        return m

    def summary(self) -> dict:
        n_int = sum(v.kind == INTEGER for v in self.variables)
        nnz = sum(len(r.coeffs) for r in self.rows)
        return {"variables": self.n_vars, "integer": n_int, "rows": self.n_rows, "nonzeros": nnz}

    def __repr__(self):
        s = self.summary()
        return f"MilpModel({self.name!r}, vars={s['variables']}, int={s['integer']}, rows={s['rows']})"
