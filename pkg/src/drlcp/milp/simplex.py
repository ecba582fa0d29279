"""Dense-tableau bounded-variable simplex.

Every row ``a_i x (<=, =, >=) b_i`` gets a slack so that the system reads
``A x + s = b`` with bounds on all columns.  Phase 1 adds artificial columns
only for rows whose slack cannot absorb the initial residual.

The tableau ``B^-1 [A I art]`` is kept explicitly.  That is wasteful for large
sparse models but simple, and a tableau copy is all branch-and-bound needs to
warm-start a child node with the dual simplex.
"""

from __future__ import annotations

import math
import time

import numpy as np

from ..errors import NumericalFailure
from .model import EQ, GE, LE, TOL, MilpModel, SolveResult, Status, Tolerances

REFACTOR_EVERY = 400
BLAND_AFTER = 60


class StandardForm:
    """``M = [A | I]`` with per-column costs and bounds; slacks follow structurals."""

    def __init__(self, model: MilpModel):
        A = model.matrix().toarray()
        m, n = A.shape
        self.n = n
        self.m = m
        self.M = np.hstack([A, np.eye(m)])
        self.b = model.rhs()
        self.c = np.concatenate([model.cost_vector(), np.zeros(m)])
        self.const = model.obj_constant
        s_lo = np.zeros(m)
        s_hi = np.zeros(m)
        for i, sense in enumerate(model.senses()):
            if sense == LE:
                s_lo[i], s_hi[i] = 0.0, math.inf
            elif sense == GE:
                s_lo[i], s_hi[i] = -math.inf, 0.0
            else:
                assert sense == EQ
        lo, hi = model.bounds()
        self.lb = np.concatenate([lo, s_lo])
        self.ub = np.concatenate([hi, s_hi])
        self.b_scale = 1.0 + (float(np.max(np.abs(self.b))) if m else 0.0)


class LPState:
    """A basis together with its tableau; the unit of warm starting."""

    __slots__ = ("M", "b", "c", "lb", "ub", "tab", "x", "basis", "is_basic", "d", "n",
                 "pivots", "since_refactor")

    def copy(self) -> LPState:
        s = LPState.__new__(LPState)
        s.M, s.b, s.c, s.n = self.M, self.b, self.c, self.n
        s.lb = self.lb.copy()
        s.ub = self.ub.copy()
        s.tab = self.tab.copy()
        s.x = self.x.copy()
        s.basis = self.basis.copy()
        s.is_basic = self.is_basic.copy()
        s.d = self.d.copy()
        s.pivots = self.pivots
        s.since_refactor = self.since_refactor
        return s

    @property
    def nbytes(self) -> int:
        return self.tab.nbytes

    def snapshot(self) -> tuple[np.ndarray, np.ndarray]:
        """Basis and column values; enough to rebuild the state by refactoring."""
        return self.basis.copy(), self.x.copy()

    def objective(self) -> float:
        return float(self.c[: self.n] @ self.x[: self.n])


def _nonbasic_start(lb, ub):
    return np.where(np.isfinite(lb), lb, np.where(np.isfinite(ub), ub, 0.0))


def _pivot(s: LPState, r: int, q: int) -> None:
    tab = s.tab
    row = tab[r] / tab[r, q]
    tab[r] = row
    col = tab[:, q].copy()
    col[r] = 0.0
    nz = np.flatnonzero(col)
    if nz.size:
        tab[nz] -= np.outer(col[nz], row)
        tab[nz, q] = 0.0
    tab[r, q] = 1.0
    s.d -= s.d[q] * row
    s.d[q] = 0.0
    leaving = s.basis[r]
    s.is_basic[leaving] = False
    s.is_basic[q] = True
    s.basis[r] = q
    s.pivots += 1
    s.since_refactor += 1


def refactor(s: LPState) -> None:
    """Recompute tableau, basic values and reduced costs from the basis."""
    B = s.M[:, s.basis]
    try:
        s.tab = np.linalg.solve(B, s.M)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure("singular basis during refactorization") from exc
    nb = ~s.is_basic
    s.x[s.basis] = np.linalg.solve(B, s.b - s.M[:, nb] @ s.x[nb])
    s.tab[:, s.basis] = np.eye(len(s.basis))
    s.d = s.c - s.c[s.basis] @ s.tab
    s.d[s.basis] = 0.0
    s.since_refactor = 0


def from_basis(M, b, c, n, lb, ub, basis, x) -> LPState:
    s = LPState.__new__(LPState)
    s.M, s.b, s.c, s.n = M, b, c, n
    s.lb, s.ub = lb.copy(), ub.copy()
    s.basis = basis.copy()
    s.is_basic = np.zeros(M.shape[1], dtype=bool)
    s.is_basic[s.basis] = True
    s.x = x.copy()
    nb = ~s.is_basic
    s.x[nb] = np.clip(s.x[nb], s.lb[nb], s.ub[nb])
    s.x[nb & ~np.isfinite(s.x)] = 0.0
    s.pivots = 0
    refactor(s)
    return s


def primal(s: LPState, tol: Tolerances, max_iter: int) -> Status | None:
    """Primal simplex from a primal-feasible basis.  Returns OPTIMAL/UNBOUNDED, or
    None when the iteration budget runs out."""
    m = len(s.basis)
    degenerate = 0
    for _ in range(max_iter):
        if s.since_refactor >= REFACTOR_EVERY:
            refactor(s)
        nb = ~s.is_basic
        can_inc = nb & (s.x < s.ub - tol.feasibility) & (s.d < -tol.reduced_cost)
        can_dec = nb & (s.x > s.lb + tol.feasibility) & (s.d > tol.reduced_cost)
        score = np.where(can_inc | can_dec, np.abs(s.d), 0.0)
        if degenerate > BLAND_AFTER:
            cands = np.flatnonzero(score)
            if cands.size == 0:
                return Status.OPTIMAL
            q = int(cands[0])
        else:
            q = int(np.argmax(score))
            if score[q] <= 0.0:
                return Status.OPTIMAL
        direction = 1.0 if can_inc[q] else -1.0
        alpha = direction * s.tab[:, q]
        xb = s.x[s.basis]
        ratios = np.full(m, math.inf)
        pos = alpha > tol.pivot
        neg = alpha < -tol.pivot
        ratios[pos] = (xb[pos] - s.lb[s.basis[pos]]) / alpha[pos]
        ratios[neg] = (s.ub[s.basis[neg]] - xb[neg]) / -alpha[neg]
        np.maximum(ratios, 0.0, out=ratios)
        tmin = float(ratios.min()) if m else math.inf
        flip = s.ub[q] - s.lb[q]
        if flip <= tmin:
            if not math.isfinite(flip):
                return Status.UNBOUNDED
            t = flip
            s.x[q] = s.ub[q] if direction > 0 else s.lb[q]
            s.x[s.basis] = xb - t * alpha
            degenerate = 0
            continue
        t = tmin
        ties = np.flatnonzero(ratios <= tmin + 1e-12)
        if degenerate > BLAND_AFTER:
            r = int(ties[np.argmin(s.basis[ties])])
        else:
            r = int(ties[np.argmax(np.abs(alpha[ties]))])
        leaving = s.basis[r]
        s.x[q] += direction * t
        s.x[s.basis] = xb - t * alpha
        s.x[leaving] = s.lb[leaving] if alpha[r] > 0 else s.ub[leaving]
        _pivot(s, r, q)
        degenerate = degenerate + 1 if t <= 1e-12 else 0
    return None


def dual(s: LPState, tol: Tolerances, max_iter: int) -> Status | None:
    """Dual simplex from a dual-feasible basis.  Returns OPTIMAL (primal feasible
    reached), INFEASIBLE, or None when the budget runs out."""
    for _ in range(max_iter):
        if s.since_refactor >= REFACTOR_EVERY:
            refactor(s)
        xb = s.x[s.basis]
        lo_b = s.lb[s.basis]
        hi_b = s.ub[s.basis]
        below = lo_b - xb
        above = xb - hi_b
        infeas = np.maximum(below, above)
        r = int(np.argmax(infeas))
        if infeas[r] <= tol.feasibility:
            return Status.OPTIMAL
        row = s.tab[r]
        nb = ~s.is_basic
        up_room = s.x < s.ub - tol.feasibility
        down_room = s.x > s.lb + tol.feasibility
        if below[r] >= above[r]:
            target = lo_b[r]
            cand = nb & (((row < -tol.pivot) & up_room) | ((row > tol.pivot) & down_room))
        else:
            target = hi_b[r]
            cand = nb & (((row > tol.pivot) & up_room) | ((row < -tol.pivot) & down_room))
        idx = np.flatnonzero(cand)
        if idx.size == 0:
            return Status.INFEASIBLE
        ratios = np.abs(s.d[idx]) / np.abs(row[idx])
        rmin = ratios.min()
        ties = idx[ratios <= rmin + 1e-12]
        q = int(ties[np.argmax(np.abs(row[ties]))])
        leaving = s.basis[r]
        delta = (xb[r] - target) / row[q]
        s.x[q] += delta
        s.x[s.basis] = xb - delta * s.tab[:, q]
        s.x[leaving] = target
        _pivot(s, r, q)
    return None


def _accurate(s: LPState, tol: Tolerances) -> bool:
    res = s.M @ s.x - s.b
    scale = 1.0 + float(np.max(np.abs(s.b))) if len(s.b) else 1.0
    return float(np.max(np.abs(res), initial=0.0)) <= 1e-6 * scale


def _finish(s: LPState, tol: Tolerances, max_iter: int, retries: int = 3) -> Status:
    """Run primal simplex to optimality, refactoring when accuracy degrades."""
    for _ in range(retries + 1):
        status = primal(s, tol, max_iter)
        if status is None:
            raise NumericalFailure("simplex iteration limit reached")
        if _accurate(s, tol):
            return status
        refactor(s)
        xb = s.x[s.basis]
        if np.any(xb < s.lb[s.basis] - tol.feasibility) or np.any(xb > s.ub[s.basis] + tol.feasibility):
            st = dual(s, tol, max_iter)
            if st is Status.INFEASIBLE:
                return st
    raise NumericalFailure("could not restore an accurate basis")


def cold_start(std: StandardForm, lb: np.ndarray, ub: np.ndarray, tol: Tolerances = TOL,
               max_iter: int | None = None) -> tuple[Status, LPState | None]:
    """Two-phase primal simplex from the slack basis."""
    m, ncol = std.M.shape
    n = std.n
    max_iter = max_iter or 50 * (m + ncol) + 1000
    lb = lb.copy()
    ub = ub.copy()
    x = np.zeros(ncol)
    x[:n] = _nonbasic_start(lb[:n], ub[:n])
    rho = std.b - std.M[:, :n] @ x[:n]
    slack_lo = lb[n:]
    slack_hi = ub[n:]
    fits = (rho >= slack_lo) & (rho <= slack_hi)
    slack_val = np.clip(rho, slack_lo, slack_hi)
    x[n:] = slack_val
    art_rows = np.flatnonzero(~fits)
    sign = np.sign(rho[art_rows] - slack_val[art_rows])
    n_art = art_rows.size
    art = np.zeros((m, n_art))
    art[art_rows, np.arange(n_art)] = sign
    M1 = np.hstack([std.M, art])
    lb1 = np.concatenate([lb, np.zeros(n_art)])
    ub1 = np.concatenate([ub, np.full(n_art, math.inf)])
    x1 = np.concatenate([x, np.abs(rho[art_rows] - slack_val[art_rows])])
    basis = np.arange(n, n + m)
    basis[art_rows] = ncol + np.arange(n_art)
    sigma = np.ones(m)
    sigma[art_rows] = sign

    s = LPState.__new__(LPState)
    s.M, s.b, s.n = M1, std.b, n
    s.lb, s.ub, s.x = lb1, ub1, x1
    s.tab = M1 * sigma[:, None]
    s.basis = basis
    s.is_basic = np.zeros(ncol + n_art, dtype=bool)
    s.is_basic[basis] = True
    s.pivots = 0
    s.since_refactor = 0

    if n_art:
        s.c = np.concatenate([np.zeros(ncol), np.ones(n_art)])
        s.d = s.c - s.c[s.basis] @ s.tab
        s.d[s.basis] = 0.0
        status = primal(s, tol, max_iter)
        if status is None:
            raise NumericalFailure("phase 1 iteration limit reached")
        if not _accurate(s, tol):
            refactor(s)
            primal(s, tol, max_iter)
        infeas = float(s.x[ncol:].sum())
        if infeas > tol.feasibility * std.b_scale:
            return Status.INFEASIBLE, None
        # artificials are pinned to zero; nonbasic ones are dropped
        keep_art = np.flatnonzero(s.is_basic[ncol:])
        keep = np.concatenate([np.arange(ncol), ncol + keep_art])
        remap = -np.ones(ncol + n_art, dtype=int)
        remap[keep] = np.arange(keep.size)
        s.M = M1[:, keep]
        s.tab = s.tab[:, keep]
        s.x = s.x[keep]
        s.x[ncol:] = 0.0
        s.lb = lb1[keep]
        s.ub = ub1[keep]
        s.ub[ncol:] = 0.0
        s.basis = remap[s.basis]
        s.is_basic = s.is_basic[keep]
    s.c = np.concatenate([std.c, np.zeros(s.M.shape[1] - ncol)])
    s.d = s.c - s.c[s.basis] @ s.tab
    s.d[s.basis] = 0.0
    status = _finish(s, tol, max_iter)
    return status, s


def warm_start(parent: LPState, lb: np.ndarray, ub: np.ndarray, tol: Tolerances = TOL,
               max_iter: int | None = None, copy: bool = True) -> tuple[Status, LPState]:
    """Re-optimize ``parent`` after structural bounds change (dual simplex).

    ``lb``/``ub`` cover the structural columns only.
    """
    s = parent.copy() if copy else parent
    n = s.n
    m, ncol = s.M.shape
    max_iter = max_iter or 50 * (m + ncol) + 1000
    s.lb[:n] = lb
    s.ub[:n] = ub
    nb = np.flatnonzero(~s.is_basic[:n])
    moved = nb[(s.x[nb] < lb[nb]) | (s.x[nb] > ub[nb])]
    if moved.size:
        new = np.clip(s.x[moved], lb[moved], ub[moved])
        delta = new - s.x[moved]
        s.x[moved] = new
        s.x[s.basis] -= s.tab[:, moved] @ delta
    status = dual(s, tol, max_iter)
    if status is Status.INFEASIBLE:
        return status, s
    if status is None:
        raise NumericalFailure("dual simplex iteration limit reached")
    return _finish(s, tol, max_iter), s


def solve_lp(model: MilpModel, lower=None, upper=None, tol: Tolerances = TOL,
             std: StandardForm | None = None) -> SolveResult:
    """Solve the LP relaxation of ``model`` (integrality ignored).

    ``lower``/``upper`` optionally override the variable bounds.  The returned
    ``state`` can be handed to :func:`warm_start`.
    """
    t0 = time.perf_counter()
    std = std or StandardForm(model)
    lo, hi = model.bounds()
    if lower is not None:
        lo = np.asarray(lower, dtype=float)
    if upper is not None:
        hi = np.asarray(upper, dtype=float)
    if np.any(lo > hi):
        return SolveResult(Status.INFEASIBLE, time=time.perf_counter() - t0)
    lb = np.concatenate([lo, std.lb[std.n:]])
    ub = np.concatenate([hi, std.ub[std.n:]])
    status, state = cold_start(std, lb, ub, tol)
    return _result(status, state, std.const, t0)


def _result(status, state, const, t0) -> SolveResult:
    dt = time.perf_counter() - t0
    if status is not Status.OPTIMAL:
        return SolveResult(status, time=dt, state=state,
                           iterations=state.pivots if state is not None else 0)
    x = state.x[: state.n].copy()
    obj = state.objective() + const
    return SolveResult(Status.OPTIMAL, x=x, objective=obj, bound=obj, gap=0.0, time=dt,
                       iterations=state.pivots, state=state)
