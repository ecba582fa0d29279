"""Best-first branch-and-bound over the dense simplex.

Node order is (LP bound, creation number), branching picks the most fractional
integer variable with ties going to the lowest id, so a given model and option
set always yields the same node sequence.  A rounding dive from the root (and
periodically from the node being processed) supplies early incumbents.  The
dive is deterministic as well, so the pruning it enables is reproducible.

Models whose rows split into independent blocks are solved block by block, in
order of the smallest variable id of each block.  A block's solution then does
not depend on what else sits in the model.
"""

from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from ..errors import NumericalFailure, ValidationError
from . import simplex
from .model import EQ, GE, LE, TOL, MilpModel, SolveResult, Status, Tolerances, relative_gap


@dataclass(frozen=True)
class MilpOptions:
    gap: float = 1e-3
    abs_gap: float = 1e-9
    node_limit: int | None = None
    time_limit: float | None = None
    cache_bytes: int = 256 * 2**20
    record_events: bool = False
    tol: Tolerances = TOL
    dive_every: int = 100  # run the diving heuristic at the root and every this many nodes
    decompose: bool = True  # solve independent row blocks separately


class _Warm:
    """Parent LP state shared by the two children of a node."""

    __slots__ = ("state", "basis", "x", "refs")

    def __init__(self, state, keep_tableau: bool):
        self.refs = 2
        if keep_tableau:
            self.state = state
            self.basis = self.x = None
        else:
            self.state = None
            self.basis, self.x = state.snapshot()


@dataclass
class _Node:
    bound: float
    seq: int
    lower: np.ndarray
    upper: np.ndarray
    warm: _Warm | None
    depth: int


def _fractional(x, ints, tol):
    xi = x[ints]
    f = xi - np.floor(xi)
    frac = np.minimum(f, 1.0 - f)
    return np.where(frac > tol.integrality, frac, -1.0)


def _dive(state, lo, hi, ints, tol, max_depth):
    """Fix the most fractional variable to its nearest integer until integral."""
    lo, hi = lo.copy(), hi.copy()
    for _ in range(max_depth):
        x = state.x[: state.n]
        score = _fractional(x, ints, tol)
        k = int(np.argmax(score))
        if score[k] < 0:
            return x.copy()
        j = int(ints[k])
        v = round(x[j])
        lo[j] = hi[j] = min(max(v, lo[j]), hi[j])
        try:
            st, state = simplex.warm_start(state, lo, hi, tol, copy=True)
        except NumericalFailure:
            return None
        if st is not Status.OPTIMAL:
            return None
    return None


def _blocks(model: MilpModel):
    """``(columns, rows)`` of each independent block, ordered by smallest column.

    Columns that appear in no row come back as ``loose``; rows without
    nonzeros as ``empty``.
    """
    A = model.matrix()
    n, m = model.n_vars, model.n_rows
    P = abs(A).tocoo()
    G = sp.coo_matrix((np.ones(P.nnz), (P.col, n + P.row)), shape=(n + m, n + m))
    _, labels = connected_components(G, directed=False)
    used = np.zeros(n, dtype=bool)
    used[P.col] = True
    row_nnz = np.diff(A.indptr)
    blocks: dict[int, tuple[list, list]] = {}
    for j in range(n):
        if used[j]:
            blocks.setdefault(labels[j], ([], []))[0].append(j)
    for i in range(m):
        if row_nnz[i]:
            blocks[labels[n + i]][1].append(i)
    loose = np.flatnonzero(~used)
    empty = np.flatnonzero(row_nnz == 0)
    return [(np.array(c), np.array(r)) for c, r in blocks.values()], loose, empty


def _submodel(model: MilpModel, cols, rows) -> MilpModel:
    sub = MilpModel(model.name, model.max_vars, model.max_rows)
    local = {int(j): k for k, j in enumerate(cols)}
    for j in cols:
        v = model.variables[j]
        sub.add_var(v.name, v.lower, v.upper, v.kind)
    for i in rows:
        r = model.rows[i]
        sub.add_row({local[j]: a for j, a in r.coeffs.items()}, r.sense, r.rhs, r.name)
    sub.set_objective({local[j]: a for j, a in model.objective.items() if j in local})
    return sub


def _empty_row_ok(row, tol) -> bool:
    if row.sense == LE:
        return row.rhs >= -tol.feasibility
    if row.sense == GE:
        return row.rhs <= tol.feasibility
    assert row.sense == EQ
    return abs(row.rhs) <= tol.feasibility


def solve_milp(model: MilpModel, options: MilpOptions | None = None, **kw) -> SolveResult:
    """Minimize ``model`` exactly up to the configured relative gap."""
    opts = options or MilpOptions(**kw)
    ints = model.integer_ids()
    lo, hi = model.bounds()
    if ints.size and not (np.all(np.isfinite(lo[ints])) and np.all(np.isfinite(hi[ints]))):
        raise ValidationError("integer variables need finite bounds for branch-and-bound")
    if not opts.decompose or model.n_vars == 0:
        return _solve_block(model, opts)
    blocks, loose, empty = _blocks(model)
    if len(blocks) == 1 and not loose.size and not empty.size:
        return _solve_block(model, opts)
    return _solve_split(model, opts, blocks, loose, empty)


def _solve_split(model, opts, blocks, loose, empty) -> SolveResult:
    t0 = time.perf_counter()
    tol = opts.tol
    if not all(_empty_row_ok(model.rows[i], tol) for i in empty):
        return SolveResult(Status.INFEASIBLE, time=time.perf_counter() - t0)

    # columns in no row sit at their cheapest bound
    c = model.cost_vector()
    lo, hi = model.bounds()
    ints = model.integer_ids()
    lo[ints] = np.ceil(lo[ints] - tol.integrality)
    hi[ints] = np.floor(hi[ints] + tol.integrality)
    if np.any(lo > hi):
        return SolveResult(Status.INFEASIBLE, time=time.perf_counter() - t0)
    x = np.zeros(model.n_vars)
    loose_obj = 0.0
    for j in loose:
        v = lo[j] if c[j] > 0 else hi[j] if c[j] < 0 else min(max(0.0, lo[j]), hi[j])
        if not math.isfinite(v):
            return SolveResult(Status.UNBOUNDED, time=time.perf_counter() - t0)
        x[j] = v
        loose_obj += c[j] * v

    subs = [_submodel(model, cols, rows) for cols, rows in blocks]
    k = max(len(subs), 1)
    nodes = iterations = 0
    events: list = []

    def run(sub, gap):
        nonlocal nodes, iterations
        left = None if opts.node_limit is None else max(opts.node_limit - nodes, 1)
        spent = time.perf_counter() - t0
        t_left = None if opts.time_limit is None else max(opts.time_limit - spent, 0.0)
        res = _solve_block(sub, replace(opts, gap=gap, abs_gap=opts.abs_gap / k, node_limit=left,
                                        time_limit=t_left))
        nodes += res.nodes
        iterations += res.iterations
        return res

    results = []
    for b, sub in enumerate(subs):
        res = run(sub, opts.gap)
        events.extend({**e, "block": b} for e in res.events)
        if res.status in (Status.INFEASIBLE, Status.UNBOUNDED):
            return SolveResult(res.status, nodes=nodes, time=time.perf_counter() - t0,
                               iterations=iterations, events=events)
        results.append(res)

    def combine():
        obj = sum(r.objective for r in results) + loose_obj + model.obj_constant
        bound = sum(r.bound for r in results) + loose_obj + model.obj_constant
        return obj, bound

    limit = next((r.status for r in results if r.status in (Status.NODE_LIMIT, Status.TIME_LIMIT)), None)
    if any(not r.ok for r in results):
        _, bound = combine()
        return SolveResult(limit or Status.INFEASIBLE, bound=bound, nodes=nodes,
                           time=time.perf_counter() - t0, iterations=iterations, events=events)
    obj, bound = combine()
    if limit is None and obj - bound > max(opts.abs_gap, opts.gap * abs(obj)):
        # per-block relative gaps can add up past the target; close them fully
        for b, sub in enumerate(subs):
            if results[b].objective - results[b].bound > 0:
                results[b] = run(sub, 0.0)
        obj, bound = combine()
    for (cols, _), r in zip(blocks, results):
        x[cols] = r.x
    if limit is None:
        bound = min(bound, obj)
    return SolveResult(limit or Status.OPTIMAL, x=x, objective=obj, bound=bound,
                       gap=relative_gap(obj, bound), nodes=nodes, time=time.perf_counter() - t0,
                       iterations=iterations, events=events)


def _solve_block(model: MilpModel, opts: MilpOptions) -> SolveResult:
    tol = opts.tol
    t0 = time.perf_counter()
    ints = model.integer_ids()
    lo, hi = model.bounds()
    lo[ints] = np.ceil(lo[ints] - tol.integrality)
    hi[ints] = np.floor(hi[ints] + tol.integrality)
    if np.any(lo > hi):
        return SolveResult(Status.INFEASIBLE, time=time.perf_counter() - t0)

    std = simplex.StandardForm(model)
    slack_lb = std.lb[std.n:]
    slack_ub = std.ub[std.n:]
    events: list = []
    status, root = simplex.cold_start(std, np.concatenate([lo, slack_lb]),
                                      np.concatenate([hi, slack_ub]), tol)
    if status is not Status.OPTIMAL:
        return SolveResult(status, time=time.perf_counter() - t0, nodes=1)

    incumbent = None
    inc_obj = math.inf
    heap: list = []
    seq = 0
    cached = 0
    nodes = 0
    iterations = 0
    global_bound = root.objective() + std.const
    stop_status = None

    def threshold():
        return max(opts.abs_gap, opts.gap * abs(inc_obj)) if math.isfinite(inc_obj) else 0.0

    def dive(state, node_lo, node_hi):
        nonlocal incumbent, inc_obj
        x = _dive(state, node_lo, node_hi, ints, tol, ints.size + 1)
        if x is None:
            return
        x = x.copy()
        x[ints] = np.round(x[ints])
        obj = float(std.c[: std.n] @ x) + std.const
        if obj < inc_obj:
            inc_obj, incumbent = obj, x

    def process(state, node_lo, node_hi, depth):
        nonlocal incumbent, inc_obj, seq, cached
        obj = state.objective() + std.const
        if opts.record_events:
            events.append({"node": nodes, "bound": obj, "incumbent": inc_obj})
        if obj >= inc_obj - threshold():
            return
        x = state.x[: std.n]
        xi = x[ints]
        if not np.any(np.abs(xi - np.round(xi)) > tol.integrality):
            if obj < inc_obj:
                inc_obj = obj
                incumbent = x.copy()
                incumbent[ints] = np.round(xi)
            return
        if opts.dive_every and (nodes - 1) % opts.dive_every == 0:
            dive(state, node_lo, node_hi)
            if obj >= inc_obj - threshold():
                return
        score = _fractional(x, ints, tol)
        k = int(np.argmax(score))
        j = int(ints[k])
        v = x[j]
        keep = cached + state.nbytes <= opts.cache_bytes
        if keep:
            cached += state.nbytes
        warm = _Warm(state, keep)
        down_hi = node_hi.copy()
        down_hi[j] = math.floor(v)
        up_lo = node_lo.copy()
        up_lo[j] = math.ceil(v)
        for clo, chi in ((node_lo, down_hi), (up_lo, node_hi)):
            heapq.heappush(heap, (obj, seq, _Node(obj, seq, clo, chi, warm, depth + 1)))
            seq += 1

    nodes = 1
    process(root, lo, hi, 0)
    while heap:
        bound, _, node = heap[0]
        global_bound = bound
        if math.isfinite(inc_obj) and inc_obj - bound <= threshold():
            break
        if opts.node_limit is not None and nodes >= opts.node_limit:
            stop_status = Status.NODE_LIMIT
            break
        if opts.time_limit is not None and time.perf_counter() - t0 >= opts.time_limit:
            stop_status = Status.TIME_LIMIT
            break
        heapq.heappop(heap)
        nodes += 1
        warm = node.warm
        if warm.state is not None:
            warm.refs -= 1
            last = warm.refs == 0
            parent = warm.state
            if last:
                cached -= parent.nbytes
                warm.state = None
        else:
            last = True
            parent = simplex.from_basis(root.M, root.b, root.c, std.n,
                                        np.concatenate([node.lower, slack_lb, root.lb[len(slack_lb) + std.n:]]),
                                        np.concatenate([node.upper, slack_ub, root.ub[len(slack_ub) + std.n:]]),
                                        warm.basis, warm.x)
        before = parent.pivots
        try:
            st, state = simplex.warm_start(parent, node.lower, node.upper, tol, copy=not last)
            iterations += state.pivots - before
        except NumericalFailure:
            st, state = simplex.cold_start(std, np.concatenate([node.lower, slack_lb]),
                                           np.concatenate([node.upper, slack_ub]), tol)
        if st is not Status.OPTIMAL:
            if opts.record_events:
                events.append({"node": nodes, "bound": math.inf, "incumbent": inc_obj})
            continue
        process(state, node.lower, node.upper, node.depth)
    else:
        global_bound = inc_obj

    dt = time.perf_counter() - t0
    if incumbent is None:
        st = stop_status or Status.INFEASIBLE
        return SolveResult(st, bound=global_bound, nodes=nodes, time=dt, iterations=iterations,
                           events=events)
    if stop_status is None:
        global_bound = min(global_bound, inc_obj)
    return SolveResult(stop_status or Status.OPTIMAL, x=incumbent, objective=inc_obj,
                       bound=global_bound, gap=relative_gap(inc_obj, global_bound), nodes=nodes,
                       time=dt, iterations=iterations + root.pivots, events=events)
