"""Single-item inventory benchmark with fixed-size lot purchases.

Per stage ``s`` an order ``u_s >= 0`` is booked before the demand ``xi_s`` is
seen, then binary lots ``gamma_{s,k}`` of size ``q_k`` may be bought after it::

    x_{s+1} = x_s + u_s + sum_k q_k gamma_{s,k} - xi_s,   x_{s+1} >= 0
    cost_s  = a x_{s+1} + b u_s + sum_k c_k q_k gamma_{s,k}
"""

from __future__ import annotations

import csv
import io
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import partial
from pathlib import Path

import numpy as np

from . import oracle
from .ambiguity import WassersteinSet, estimate_radius, truncated_gaussian
from .errors import ValidationError
from .lifting import DisturbanceSpace, LiftingSpec
from .milp.backend import SolverOptions, solve
from .milp.model import Status
from .reformulation import build_wasserstein
from .system import CompiledProblem, StageCost, SystemModel, compile_problem

MEANS = (50, 30, 70, 30, 50, 30, 70, 30, 50, 30, 70, 30, 50, 30, 70, 30)
REFERENCE_DRAWS = 2000


@dataclass(frozen=True)
class InventorySpec:
    horizon: int = 2
    a: float = 5.0
    b: float = 2.0
    c: tuple = (5.0, 5.0, 5.0)
    q: tuple = (30.0, 30.0, 30.0)
    x0: float = 0.0
    lower: float = 20.0
    upper: float = 100.0
    means: tuple | None = None
    std: float = 1.0
    n_samples: int = 20
    seed: int = 0
    segments: int = 1
    theta: float | None = None  # None: estimate against a reference draw
    int_bound: float = 10.0

    def __post_init__(self):
        if self.horizon < 1:
            raise ValidationError("horizon must be positive")
        if len(self.c) != len(self.q) or not self.c:
            raise ValidationError("lot prices and sizes must have the same positive length")
        if any(ck <= self.b for ck in self.c):
            raise ValidationError("lot prices must exceed the booking cost")
        if any(qk <= 0 for qk in self.q):
            raise ValidationError("lot sizes must be positive")
        if self.a < 0 or self.b < 0:
            raise ValidationError("holding and booking costs must be nonnegative")
        if self.std < 0 or self.n_samples < 1 or self.segments < 1:
            raise ValidationError("std >= 0, n_samples >= 1 and segments >= 1 are required")
        if not self.lower < self.upper:
            raise ValidationError("support must have positive width")
        m = self.mean_vector()
        if m.size != self.horizon:
            raise ValidationError(f"need {self.horizon} demand means, got {m.size}")

    def mean_vector(self) -> np.ndarray:
        if self.means is not None:
            return np.asarray(self.means, dtype=float).reshape(-1)
        if self.horizon > len(MEANS):
            raise ValidationError(f"default means cover at most {len(MEANS)} stages")
        return np.asarray(MEANS[: self.horizon], dtype=float)

    @property
    def lots(self) -> int:
        return len(self.q)

    def space(self) -> DisturbanceSpace:
        return DisturbanceSpace.box(self.horizon, self.lower, self.upper)

    def lifting(self) -> LiftingSpec:
        return LiftingSpec.equal_division(self.space(), self.segments)

    def draw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return truncated_gaussian(self.mean_vector(), self.std, self.space(), n, rng)


def system_model(spec: InventorySpec, horizon: int | None = None, x0: float | None = None,
                 known_first: bool = False) -> SystemModel:
    """Inventory dynamics, robust constraints and costs.

    With ``known_first`` the first stage's demand is already folded into
    ``x0``: its disturbance has no effect and no control observes it.
    """
    T = spec.horizon if horizon is None else horizon
    K = spec.lots
    q = np.asarray(spec.q, dtype=float)
    c = np.asarray(spec.c, dtype=float)
    D = np.full((T, 1, 1), -1.0)
    if known_first:
        D[0] = 0.0
    n_con = 2 * T + 2 * T * K
    cA = np.zeros((T, n_con, 1))
    cB = np.zeros((T, n_con, 1))
    cC = np.zeros((T, n_con, K))
    rhs = np.zeros(n_con)
    r = 0
    for s in range(T):  # x_{s+1} >= 0
        cA[s, r, 0] = -1.0
        r += 1
    for s in range(T):  # u_s >= 0
        cB[s, r, 0] = -1.0
        r += 1
    for s in range(T):  # 0 <= gamma_{s,k} <= 1
        for k in range(K):
            cC[s, r, k] = -1.0
            cC[s, r + 1, k] = 1.0
            rhs[r + 1] = 1.0
            r += 2
    u_mask = np.zeros((T, 1, T, 1), dtype=bool)
    g_mask = np.zeros((T, K, T, 1), dtype=bool)
    first = 1 if known_first else 0
    for s in range(T):
        u_mask[s, 0, first:s, 0] = True  # order for stage s sees demands before s
        g_mask[s, :, first:s + 1, 0] = True  # lots for stage s see demand s too
    cost = StageCost(np.array([[spec.a]]), np.array([[spec.b]]), (c * q)[None, :])
    return SystemModel(T, 1, 1, K, 1, A=[[1.0]], B=[[1.0]], C=q[None, :], D=D,
                       x0=[spec.x0 if x0 is None else x0], con_A=cA, con_B=cB, con_C=cC,
                       q=rhs, costs=cost, u_mask=u_mask, g_mask=g_mask)


def training_samples(spec: InventorySpec) -> np.ndarray:
    return spec.draw(spec.n_samples, np.random.default_rng([spec.seed, 0]))


def radius(spec: InventorySpec, samples: np.ndarray) -> float:
    if spec.theta is not None:
        return float(spec.theta)
    ref = spec.draw(REFERENCE_DRAWS, np.random.default_rng([spec.seed, 1]))
    return estimate_radius(samples, ref)


def build(spec: InventorySpec):
    """``(SystemModel, LiftingSpec, WassersteinSet)`` of the open-loop problem."""
    samples = training_samples(spec)
    ball = WassersteinSet(radius(spec, samples), samples, spec.space())
    return system_model(spec), spec.lifting(), ball


@dataclass
class OpenLoopReport:
    horizon: int
    segments: int
    status: Status
    objective: float
    bound: float
    gap: float
    time_s: float
    theta: float
    policy: np.ndarray | None
    oracle_value: float = math.nan
    robust_residual: float = math.nan
    sampled_violations: int = -1
    counts: dict = field(default_factory=dict)

    def row(self) -> dict:
        return {"T": self.horizon, "p": self.segments, "objective": self.objective,
                "bound": self.bound, "gap": self.gap, "time_s": self.time_s,
                "status": str(self.status)}


def certify(compiled: CompiledProblem, ball: WassersteinSet, theta_vec, n_random: int = 100_000,
            seed: int = 0):
    """Oracle value and robust-feasibility report of a policy vector."""
    nm = compiled.numeric(theta_vec)
    value = oracle.worst_case_expectation(nm.d, nm.r, ball, compiled.spec).value
    feas = oracle.check_robust_feasibility(nm.E, nm.m, compiled.spec, n_random=n_random, seed=seed)
    return value, feas


def run_open_loop(spec: InventorySpec, solver: SolverOptions | None = None, certify_policy: bool = True,
                  n_random: int = 100_000) -> OpenLoopReport:
    model, lifting, ball = build(spec)
    t0 = time.perf_counter()
    compiled = compile_problem(model, lifting, int_bound=spec.int_bound)
    ref = build_wasserstein(compiled, ball, name=f"inventory_T{spec.horizon}_p{spec.segments}")
    res = solve(ref.model, solver)
    dt = time.perf_counter() - t0
    rep = OpenLoopReport(spec.horizon, spec.segments, res.status, res.objective, res.bound, res.gap,
                         dt, ball.theta, None, counts=ref.counts())
    if res.ok:
        rep.policy = ref.policy(res.x)
        if certify_policy:
            val, feas = certify(compiled, ball, rep.policy, n_random, spec.seed)
            rep.oracle_value = val
            rep.robust_residual = feas.max_residual
            rep.sampled_violations = feas.violations
    return rep


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path, rows: list[dict]) -> None:
    if not rows:
        return
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) for k, v in r.items()})


def summary_table(reports: list[OpenLoopReport]) -> str:
    """Text block laid out like an objective/time table."""
    buf = io.StringIO()
    buf.write(f"{'T':>3} {'p':>3} {'objective':>12} {'time (s)':>10} {'gap':>9}  status\n")
    for r in reports:
        buf.write(f"{r.horizon:>3} {r.segments:>3} {r.objective:>12.1f} {r.time_s:>10.2f} "
                  f"{r.gap:>9.2e}  {r.status}\n")
    return buf.getvalue()


# -- closed loop ------------------------------------------------------------------


@dataclass
class ClosedLoopReport:
    segments: int
    totals: np.ndarray
    steps_solved: np.ndarray
    diagnostics: list
    seed: int
    time_s: float

    @property
    def mean(self) -> float:
        ok = self.totals[np.isfinite(self.totals)]
        return float(ok.mean()) if ok.size else math.nan

    @property
    def std(self) -> float:
        ok = self.totals[np.isfinite(self.totals)]
        return float(ok.std(ddof=1)) if ok.size > 1 else 0.0

    def rows(self) -> list[dict]:
        return [{"sim_id": i, "total_cost": float(c), "steps_solved": int(n)}
                for i, (c, n) in enumerate(zip(self.totals, self.steps_solved))]


class _TailSolver:
    """Solves the remaining-horizon problem once the current demand is known."""

    def __init__(self, spec: InventorySpec, samples: np.ndarray, theta: float,
                 solver: SolverOptions | None):
        self.spec, self.samples, self.theta, self.solver = spec, samples, theta, solver

    def step(self, s: int, x: float, u: float, xi: float):
        """Returns ``(gamma_s, u_{s+1})`` or raises on solver failure."""
        spec = self.spec
        H = spec.horizon - s
        model = system_model(spec, horizon=H, x0=x - xi, known_first=True)
        space = DisturbanceSpace.box(H, spec.lower, spec.upper)
        lifting = LiftingSpec.equal_division(space, spec.segments)
        tail = self.samples[:, s:].copy()
        tail[:, 0] = xi
        compiled = compile_problem(model, lifting, int_bound=spec.int_bound)
        ref = build_wasserstein(compiled, WassersteinSet(self.theta, tail, space))
        lay = compiled.layout
        y00 = int(ref.policy_ids[0][lay.y0_ids[0, 0]])
        ref.model.set_bounds(y00, u, u)
        res = solve(ref.model, self.solver)
        if not res.ok:
            raise RuntimeError(f"step {s}: solver status {res.status}")
        theta = ref.policy(res.x)
        gamma = np.round(theta[lay.z0_ids[0]])
        u_next = float(theta[lay.y0_ids[1, 0]]) if H > 1 else 0.0
        return gamma, max(u_next, 0.0)


def first_order(spec: InventorySpec, samples, theta, solver) -> float:
    """The order placed before any demand is seen (from the full open-loop solve)."""
    model = system_model(spec)
    compiled = compile_problem(model, spec.lifting(), int_bound=spec.int_bound)
    ref = build_wasserstein(compiled, WassersteinSet(theta, samples, spec.space()))
    res = solve(ref.model, solver)
    if not res.ok:
        raise RuntimeError(f"initial solve ended with status {res.status}")
    return max(float(ref.policy(res.x)[compiled.layout.y0_ids[0, 0]]), 0.0)


def _simulate(spec: InventorySpec, gen: InventorySpec, samples, theta, solver, u0: float, seed: int,
              sim: int):
    """One demand path; returns ``(total, steps solved, error or None)``."""
    tail = _TailSolver(spec, samples, theta, solver)
    q = np.asarray(spec.q, dtype=float)
    cq = np.asarray(spec.c, dtype=float) * q
    demand = gen.draw(1, np.random.default_rng([seed, 2, sim]))[0]
    x, u, total, steps = spec.x0, u0, 0.0, 0
    try:
        for s in range(spec.horizon):
            gamma, u_next = tail.step(s, x, u, float(demand[s]))
            steps += 1
            x = x + u + float(q @ gamma) - float(demand[s])
            if x < -1e-7 or np.any((gamma != 0) & (gamma != 1)):
                raise RuntimeError(f"step {s}: infeasible realized state {x}")
            total += spec.a * x + spec.b * u + float(cq @ gamma)
            u = u_next
    except RuntimeError as e:
        return math.nan, steps, str(e)
    return total, steps, None


def run_closed_loop(spec: InventorySpec, n_sims: int, seed: int, solver: SolverOptions | None = None,
                    demand_std: float | None = None, threads: int = 1) -> ClosedLoopReport:
    """Shrinking-horizon simulation; demand paths come from ``seed``.

    Each path draws from its own stream, so ``threads > 1`` (worker
    processes) gives the same totals as a serial run.
    """
    if n_sims < 1:
        raise ValidationError("n_sims must be >= 1")
    if threads < 1:
        raise ValidationError("threads must be >= 1")
    t0 = time.perf_counter()
    samples = training_samples(spec)
    theta = radius(spec, samples)
    u0 = first_order(spec, samples, theta, solver)
    gen = spec if demand_std is None else replace(spec, std=demand_std)
    work = partial(_simulate, spec, gen, samples, theta, solver, u0, seed)
    if threads == 1:
        out = [work(sim) for sim in range(n_sims)]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            out = list(pool.map(work, range(n_sims)))
    totals = np.array([o[0] for o in out])
    steps = np.array([o[1] for o in out], dtype=int)
    diags = [{"sim_id": sim, "error": o[2]} for sim, o in enumerate(out) if o[2] is not None]
    return ClosedLoopReport(spec.segments, totals, steps, diags, seed, time.perf_counter() - t0)
