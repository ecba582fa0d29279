"""Brute-force evaluation of worst-case quantities for fixed numeric policies.

Nothing here touches the MILP machinery.  For a fixed policy the objective is
``f(z) = max_k d_k . z + r_k`` over the lifted support and the worst case over
a Wasserstein ball is

    min_{lam >= 0}  lam * theta + mean_s max_z [ f(z) - lam * |R z - xh_s|_1 ].

The inner maximum separates over components once the piece is fixed.  On each
segment the lifting is affine in the scalar disturbance, so the maximum over
that component is attained at a segment endpoint, at a left limit, or at the
anchor itself (where the transport penalty has its kink).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .ambiguity import EventWiseSet, MixedMomentSet, WassersteinSet
from .lifting import LiftingSpec, SegmentGeometry, lift_many, lift_scalar, segment_endpoints

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass
class OracleReport:
    value: float
    lam: float
    inner: np.ndarray  # per-sample inner maxima at lam
    argmax: np.ndarray  # per-sample maximizing disturbances
    method: dict = field(default_factory=dict)


class _Candidates:
    """Per-component candidate points for one anchor.

    ``a[k, b, c]`` is the piece-``k`` value of block ``b`` at candidate ``c`` and
    ``delta[b, c]`` the distance of that candidate from the anchor.  Blocks
    with fewer candidates are padded with ``-inf`` values.
    """

    def __init__(self, d: np.ndarray, geometry: SegmentGeometry, anchor: np.ndarray):
        spec = geometry.spec
        idx = spec.index
        nb = spec.horizon * spec.n_xi
        width = 2 * int(spec.segments.max()) + 1
        K = d.shape[0]
        self.a = np.full((K, nb, width), -np.inf)
        self.delta = np.zeros((nb, width))
        self.x = np.zeros((nb, width))
        self.anchor_col = np.zeros(nb, dtype=int)
        b = 0
        for t in range(spec.horizon):
            for i in range(spec.n_xi):
                xh = float(anchor[t * spec.n_xi + i])
                phi = geometry.endpoints(t, i)
                xs = geometry.endpoint_x(t, i)
                pts = np.vstack([phi, lift_scalar(xh, spec.w[t][i])])
                xs = np.concatenate([xs, [xh]])
                n = pts.shape[0]
                self.a[:, b, :n] = d[:, idx.block(t, i)] @ pts.T
                self.delta[b, :n] = np.abs(xs - xh)
                self.x[b, :n] = xs
                self.anchor_col[b] = n - 1
                b += 1

    def lam_max(self) -> float:
        """Beyond this value every block maximum sits at the anchor."""
        base = np.take_along_axis(self.a, self.anchor_col[None, :, None], axis=2)
        with np.errstate(invalid="ignore", divide="ignore"):
            ratio = np.where(self.delta[None] > 0, (self.a - base) / self.delta[None], 0.0)
        ratio = np.where(np.isfinite(ratio), ratio, 0.0)
        return float(max(ratio.max(initial=0.0), 0.0))

    def evaluate(self, r: np.ndarray, lam: float):
        """Value, left and right slopes in ``lam``, and the maximizing disturbance."""
        vals = self.a - lam * self.delta[None]  # (K, nb, c)
        best = vals.max(axis=2)
        tot = best.sum(axis=1) + r  # (K,)
        kstar = int(np.argmax(tot))
        top = tot[kstar]
        tol = 1e-12 * max(1.0, abs(top))
        right = -math.inf
        left = math.inf
        for k in np.flatnonzero(tot >= top - tol):
            act = vals[k] >= best[k][:, None] - 1e-12 * np.maximum(1.0, np.abs(best[k]))[:, None]
            dmin = np.where(act, self.delta, np.inf).min(axis=1)
            dmax = np.where(act, self.delta, -np.inf).max(axis=1)
            right = max(right, -dmin.sum())
            left = min(left, -dmax.sum())
        cols = np.argmax(vals[kstar], axis=1)
        xstar = self.x[np.arange(self.x.shape[0]), cols]
        return float(top), left, right, xstar


def _candidates(d, geometry, samples):
    return [_Candidates(d, geometry, xh) for xh in samples]


def inner_max(d, r, anchor, lam: float, geometry: SegmentGeometry):
    """``max_z f(z) - lam * |R z - anchor|_1`` and a maximizing disturbance."""
    d = np.atleast_2d(np.asarray(d, dtype=float))
    r = np.atleast_1d(np.asarray(r, dtype=float))
    c = _Candidates(d, geometry, np.asarray(anchor, dtype=float).reshape(-1))
    val, _, _, x = c.evaluate(r, lam)
    return val, x


def _h(cands, r, theta, lam):
    vals, lefts, rights, xs = [], [], [], []
    for c in cands:
        v, lo, hi, x = c.evaluate(r, lam)
        vals.append(v)
        lefts.append(lo)
        rights.append(hi)
        xs.append(x)
    n = len(cands)
    return (lam * theta + sum(vals) / n, theta + sum(lefts) / n, theta + sum(rights) / n,
            np.array(vals), np.array(xs))


def worst_case_expectation(d, r, ball: WassersteinSet, geometry: SegmentGeometry | LiftingSpec,
                           tol: float = 1e-10) -> OracleReport:
    """Worst-case expectation of ``max_k d_k . z + r_k`` over the ball."""
    if isinstance(geometry, LiftingSpec):
        geometry = segment_endpoints(geometry)
    d = np.atleast_2d(np.asarray(d, dtype=float))
    r = np.atleast_1d(np.asarray(r, dtype=float))
    theta = ball.theta
    cands = _candidates(d, geometry, ball.samples)
    hi = max(c.lam_max() for c in cands)
    evals = 0

    def h(lam):
        nonlocal evals
        evals += 1
        return _h(cands, r, theta, lam)

    # golden-section on [0, hi]
    a, b = 0.0, hi
    x1 = b - GOLDEN * (b - a)
    x2 = a + GOLDEN * (b - a)
    f1, f2 = h(x1)[0], h(x2)[0]
    while b - a > tol * max(1.0, hi):
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - GOLDEN * (b - a)
            f1 = h(x1)[0]
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + GOLDEN * (b - a)
            f2 = h(x2)[0]

    # locate the kink inside the bracket by intersecting the tangents at its ends
    best_val, lam_best = min((h(x)[0], x) for x in (0.0, a, b, hi))
    lo_pt, hi_pt = a, b
    for _ in range(60):
        fa, _, sa, *_ = h(lo_pt)
        fb, sb, _, *_ = h(hi_pt)
        if sa >= 0 or sb <= 0 or sa == sb:
            break
        lam = min(max((fb - fa + sa * lo_pt - sb * hi_pt) / (sa - sb), lo_pt), hi_pt)
        e = h(lam)
        if e[0] < best_val:
            best_val, lam_best = e[0], lam
        if e[0] <= fa + sa * (lam - lo_pt) + 1e-13 * max(1.0, abs(e[0])):
            break
        if e[2] < 0:
            lo_pt = lam
        elif e[1] > 0:
            hi_pt = lam
        else:
            break
    val, _, _, inner, xs = h(lam_best)
    return OracleReport(float(val), float(lam_best), inner, xs,
                        {"lam_max": hi, "evaluations": evals, "tol": tol})


def event_wise_worst_case(pieces: list, eset: EventWiseSet) -> float:
    """``sum_l p_l * worst-case expectation`` with per-scenario ``(d, r)`` pieces."""
    total = 0.0
    for (d, r), sc in zip(pieces, eset.scenarios):
        total += sc.prob * worst_case_expectation(d, r, sc.ball, sc.spec).value
    return total


def _tilt(d: np.ndarray, spec: LiftingSpec, delta: np.ndarray) -> np.ndarray:
    return d + delta @ spec.index.recovery


def check_mixed_moment(d, r, mset: MixedMomentSet, spec: LiftingSpec, lattice: int = 5,
                       sweeps: int = 8, tol: float = 1e-9) -> OracleReport:
    """Upper bound on the worst case over the mixed set.

    Dualizing the moment bounds with ``beta_lo, beta_hi >= 0`` only matters
    through ``delta = beta_lo - beta_hi``, whose cheapest split costs
    ``max(-delta * lower, -delta * upper)`` per component.  The outer problem
    in ``delta`` is convex; it is searched on a coarse lattice followed by
    coordinate-wise golden-section refinement.  Any ``delta`` gives a valid
    upper bound.
    """
    geometry = segment_endpoints(spec)
    d = np.atleast_2d(np.asarray(d, dtype=float))
    r = np.atleast_1d(np.asarray(r, dtype=float))
    lo, hi = mset.lower, mset.upper
    dim = lo.size

    def F(delta):
        pen = np.maximum(-delta * lo, -delta * hi).sum()
        return worst_case_expectation(_tilt(d, spec, delta), r, mset.ball, geometry).value + pen

    scale = float(np.abs(d @ spec.index.recovery.T).max(initial=0.0)) + 1.0
    bound = 2.0 * scale
    delta = np.zeros(dim)
    best = F(delta)
    grid = np.linspace(-bound, bound, 2 * lattice + 1)
    for c in range(dim):
        for g in grid:
            trial = delta.copy()
            trial[c] = g
            v = F(trial)
            if v < best - tol:
                best, delta = v, trial
    for _ in range(sweeps):
        improved = False
        for c in range(dim):
            a, b = delta[c] - bound, delta[c] + bound

            def fc(x):
                t = delta.copy()
                t[c] = x
                return F(t)

            x1 = b - GOLDEN * (b - a)
            x2 = a + GOLDEN * (b - a)
            f1, f2 = fc(x1), fc(x2)
            while b - a > 1e-9 * max(1.0, bound):
                if f1 <= f2:
                    b, x2, f2 = x2, x1, f1
                    x1 = b - GOLDEN * (b - a)
                    f1 = fc(x1)
                else:
                    a, x1, f1 = x1, x2, f2
                    x2 = a + GOLDEN * (b - a)
                    f2 = fc(x2)
            x = 0.5 * (a + b)
            v = fc(x)
            if v < best - tol:
                best = v
                delta = delta.copy()
                delta[c] = x
                improved = True
        if not improved:
            break
    rep = worst_case_expectation(_tilt(d, spec, delta), r, mset.ball, geometry)
    return OracleReport(float(best), rep.lam, rep.inner, rep.argmax,
                        {"upper_bound": True, "delta": delta, "lattice": lattice, "sweeps": sweeps})


@dataclass
class FeasibilityReport:
    max_residual: float  # exact sup over the lifted support, across rows
    row: int
    xi: np.ndarray  # a disturbance attaining (or approaching) the sup
    sampled_max: float
    violations: int  # sampled points with residual above the tolerance
    n_random: int


def check_robust_feasibility(E, m, spec: LiftingSpec, n_random: int = 100_000, seed: int = 0,
                             tol: float = 1e-7, batch: int = 20_000) -> FeasibilityReport:
    """Largest residual of ``E z <= m`` over the lifted support, plus random sampling."""
    E = np.atleast_2d(np.asarray(E, dtype=float))
    m = np.atleast_1d(np.asarray(m, dtype=float))
    geometry = segment_endpoints(spec)
    idx = spec.index
    n_rows = E.shape[0]
    worst, worst_row = -math.inf, -1
    worst_xi = np.zeros(spec.space.dim)
    for row in range(n_rows):
        total = -m[row]
        xi = np.zeros(spec.space.dim)
        for t in range(spec.horizon):
            for i in range(spec.n_xi):
                vals = geometry.endpoints(t, i) @ E[row, idx.block(t, i)]
                c = int(np.argmax(vals))
                total += vals[c]
                xi[t * spec.n_xi + i] = geometry.endpoint_x(t, i)[c]
        if total > worst:
            worst, worst_row, worst_xi = total, row, xi
    if n_rows == 0:
        worst = -math.inf
    rng = np.random.default_rng(seed)
    lo, hi = spec.space.flat_lower(), spec.space.flat_upper()
    sampled = -math.inf
    bad = 0
    done = 0
    while done < n_random and n_rows:
        n = min(batch, n_random - done)
        X = rng.uniform(lo, hi, size=(n, lo.size))
        res = lift_many(spec, X) @ E.T - m
        sampled = max(sampled, float(res.max()))
        bad += int(np.count_nonzero(res.max(axis=1) > tol))
        done += n
    return FeasibilityReport(float(worst), worst_row, worst_xi, sampled, bad, n_random)
