"""Exact MILP reformulations of the lifted worst-case problems.

Every worst-case expectation is dualized sample by sample.  For a piece
``g . z + h`` of the objective and a sample ``xh`` the inner maximum over the
lifted support splits into one term per component ``(t, i)``; each term is
bounded by rows at the two endpoints of every segment ``j``::

    eta_{t,i} >= g_{t,i} . phi - zeta_j * (R phi - xh_{t,i})      |zeta_j| <= lam
    eta       >= sum_{t,i} eta_{t,i} + h

The endpoint data ``phi`` and ``R phi - xh`` are numbers, so the rows stay
linear in the policy variables hidden inside ``g`` and ``h``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ambiguity import EventWiseSet, MixedMomentSet, WassersteinSet
from .lifting import SegmentGeometry, segment_endpoints
from .milp.model import CONTINUOUS, GE, INF, INTEGER, LE, MilpModel
from .system import CompiledProblem

ZERO_TOL = 0.0


def _coeffs(vec: np.ndarray, var_ids: np.ndarray, scale: float = 1.0) -> dict[int, float]:
    nz = np.flatnonzero(vec[1:])
    return {int(var_ids[j]): scale * float(vec[1 + j]) for j in nz}


def _merge(*parts: dict[int, float]) -> dict[int, float]:
    out: dict[int, float] = {}
    for p in parts:
        for k, v in p.items():
            out[k] = out.get(k, 0.0) + v
    return out


def endpoint_values(g: np.ndarray, geometry: SegmentGeometry) -> list:
    """``g_{t,i} . phi`` at every endpoint, as ``(2p, 1 + P)`` arrays per block.

    ``g`` has shape ``(L, 1 + P)``; blocks are listed stage-major.
    """
    spec = geometry.spec
    idx = spec.index
    out = []
    for t in range(spec.horizon):
        for i in range(spec.n_xi):
            phi = geometry.endpoints(t, i)
            out.append(phi @ g[idx.block(t, i)])
    return out


@dataclass
class Reformulation:
    """A built MILP plus the ids needed to read a policy back out of a solution."""

    model: MilpModel
    compiled: list
    policy_ids: list  # per scenario: model ids of the policy variables
    lam_ids: list
    eta_ids: list = field(default_factory=list)
    beta_ids: tuple | None = None
    aux_count: int = 0

    def policy(self, x, scenario: int = 0) -> np.ndarray:
        return np.asarray(x, dtype=float)[self.policy_ids[scenario]]

    def fix_policy(self, theta, scenario: int = 0) -> MilpModel:
        """Copy of the model with the policy variables pinned to ``theta``."""
        m = self.model.copy()
        for v, val in zip(self.policy_ids[scenario], np.asarray(theta, dtype=float)):
            m.set_bounds(int(v), float(val), float(val))
        return m

    def counts(self) -> dict:
        s = self.model.summary()
        s["policy"] = int(sum(len(p) for p in self.policy_ids))
        s["auxiliary"] = s["variables"] - s["policy"]
        return s


def add_policy_vars(model: MilpModel, compiled: CompiledProblem) -> np.ndarray:
    lay = compiled.layout
    ids = np.empty(lay.n_vars, dtype=int)
    b = lay.int_bound
    for j, name in enumerate(lay.names):
        if lay.is_integer(j):
            ids[j] = model.add_var(name, -b, b, INTEGER)
        else:
            ids[j] = model.add_var(name, -INF, INF, CONTINUOUS)
    return ids


class _SampleRows:
    """Emits the dual rows of one Wasserstein ball."""

    def __init__(self, model: MilpModel, geometry: SegmentGeometry, var_ids: np.ndarray,
                 lam: int, tag: str, tilt: tuple | None = None):
        self.model, self.geometry, self.var_ids, self.lam, self.tag = model, geometry, var_ids, lam, tag
        self.tilt = tilt  # (beta_lower ids, beta_upper ids), flat per component
        spec = geometry.spec
        self.blocks = [(t, i) for t in range(spec.horizon) for i in range(spec.n_xi)]
        self.xs = [geometry.endpoint_x(t, i) for t, i in self.blocks]

    def rows(self, s: int, k, values: list, h: np.ndarray, anchor: np.ndarray, eta: int) -> None:
        """Rows for sample ``s`` and piece ``k``; ``values`` from :func:`endpoint_values`."""
        m, tag = self.model, self.tag
        n_xi = self.geometry.spec.n_xi
        parts = []
        for b, (t, i) in enumerate(self.blocks):
            key = f"{tag}{s}_{k}_{t}_{i}"
            e = m.add_var(f"{tag}eta_{key}", -INF, INF)
            parts.append(e)
            vals = values[b]
            xs = self.xs[b]
            shift = xs - anchor[t * n_xi + i]
            p = vals.shape[0] // 2
            for j in range(p):
                z = m.add_var(f"{tag}zeta_{key}_{j}", -INF, INF)
                m.add_row({z: 1.0, self.lam: -1.0}, LE, 0.0, f"{tag}zu_{key}_{j}")
                m.add_row({z: 1.0, self.lam: 1.0}, GE, 0.0, f"{tag}zl_{key}_{j}")
                for end, side in ((2 * j, "lo"), (2 * j + 1, "hi")):
                    row = _merge({e: 1.0, z: float(shift[end])},
                                 _coeffs(vals[end], self.var_ids, -1.0))
                    if self.tilt is not None:
                        c = t * n_xi + i
                        row = _merge(row, {int(self.tilt[0][c]): -float(xs[end]),
                                           int(self.tilt[1][c]): float(xs[end])})
                    m.add_row(row, GE, float(vals[end][0]), f"{tag}ep_{key}_{j}_{side}")
        agg = _merge({eta: 1.0, **{e: -1.0 for e in parts}}, _coeffs(h, self.var_ids, -1.0))
        m.add_row(agg, GE, float(h[0]), f"{tag}agg_{s}_{k}")


def lemma1_rows(model: MilpModel, pieces, anchor, lam_id: int, eta_id: int,
                geometry: SegmentGeometry, var_ids=None, tag: str = "") -> None:
    """Rows forcing ``eta >= max_z (max_m g_m . z + h_m - lam * |R z - anchor|_1)``.

    ``pieces`` is a list of ``(g, h)`` with ``g`` of shape ``(L, 1 + P)`` and
    ``h`` of shape ``(1 + P,)``; coefficient ``j`` refers to ``var_ids[j]``.
    Numeric pieces can be passed as 1-D ``g`` and scalar ``h``.
    """
    var_ids = np.zeros(0, dtype=int) if var_ids is None else np.asarray(var_ids, dtype=int)
    anchor = np.asarray(anchor, dtype=float).reshape(-1)
    rows = _SampleRows(model, geometry, var_ids, lam_id, tag)
    for k, (g, h) in enumerate(pieces):
        g = np.asarray(g, dtype=float)
        if g.ndim == 1:
            g = g[:, None]
        h = np.atleast_1d(np.asarray(h, dtype=float))
        rows.rows(0, k, endpoint_values(g, geometry), h, anchor, eta_id)


def corollary2_rows(model: MilpModel, E: np.ndarray, m: np.ndarray, geometry: SegmentGeometry,
                    var_ids: np.ndarray, tag: str = "") -> None:
    """Robust rows ``E[r] . z <= m[r]`` for every lifted ``z`` via per-block endpoint maxima.

    Blocks with no policy dependence contribute their numeric maximum directly
    and structurally zero blocks are skipped.
    """
    spec = geometry.spec
    idx = spec.index
    for r in range(E.shape[0]):
        total: dict[int, float] = {}
        const = 0.0
        for t in range(spec.horizon):
            for i in range(spec.n_xi):
                blk = E[r][idx.block(t, i)]
                if not np.any(blk):
                    continue
                vals = geometry.endpoints(t, i) @ blk  # (2p, 1 + P)
                if not np.any(vals[:, 1:]):
                    const += float(vals[:, 0].max())
                    continue
                mv = model.add_var(f"{tag}m_{r}_{t}_{i}", -INF, INF)
                total[mv] = total.get(mv, 0.0) + 1.0
                for e in range(vals.shape[0]):
                    model.add_row(_merge({mv: 1.0}, _coeffs(vals[e], var_ids, -1.0)), GE,
                                  float(vals[e][0]), f"{tag}cep_{r}_{t}_{i}_{e}")
        # sum of block maxima <= m[r]
        row = _merge(total, _coeffs(m[r], var_ids, -1.0))
        model.add_row(row, LE, float(m[r][0]) - const, f"{tag}con_{r}")


def _ball(model: MilpModel, compiled: CompiledProblem, ball: WassersteinSet, var_ids: np.ndarray,
          weight: float, tag: str, tilt=None):
    """Dual rows and objective terms of one ball; returns (lam id, eta ids)."""
    geometry = segment_endpoints(compiled.spec)
    samples = ball.samples
    N = samples.shape[0]
    lam = model.add_var(f"{tag}lam", 0.0, INF)
    etas = [model.add_var(f"{tag}eta_{s}", -INF, INF) for s in range(N)]
    emitter = _SampleRows(model, geometry, var_ids, lam, tag, tilt)
    pieces = [(combo, endpoint_values(d, geometry), r) for combo, d, r in compiled.pieces()]
    for s in range(N):
        for k, (_, vals, r) in enumerate(pieces):
            emitter.rows(s, k, vals, r, samples[s], etas[s])
    obj = {lam: weight * ball.theta}
    for e in etas:
        obj[e] = weight / N
    model.add_objective(obj)
    corollary2_rows(model, compiled.E, compiled.m, geometry, var_ids, tag)
    return lam, etas


def _check_samples(compiled: CompiledProblem, ball: WassersteinSet) -> WassersteinSet:
    space = compiled.spec.space
    if ball.space is None:
        return WassersteinSet(ball.theta, ball.samples, space)
    return ball


def build_wasserstein(compiled: CompiledProblem, ball: WassersteinSet, name: str = "drlcp",
                      **caps) -> Reformulation:
    """MILP whose optimum is the best worst-case expected cost over the ball."""
    ball = _check_samples(compiled, ball)
    model = MilpModel(name, **caps)
    ids = add_policy_vars(model, compiled)
    lam, etas = _ball(model, compiled, ball, ids, 1.0, "")
    ref = Reformulation(model, [compiled], [ids], [lam], [etas])
    ref.aux_count = model.n_vars - len(ids)
    return ref


def build_mixed_moment(compiled: CompiledProblem, mset: MixedMomentSet, name: str = "drlcp",
                       **caps) -> Reformulation:
    """As :func:`build_wasserstein` with first-moment bounds dualized by ``beta >= 0``."""
    ball = _check_samples(compiled, mset.ball)
    model = MilpModel(name, **caps)
    ids = add_policy_vars(model, compiled)
    dim = ball.samples.shape[1]
    bl = np.array([model.add_var(f"beta_lo_{c}", 0.0, INF) for c in range(dim)])
    bu = np.array([model.add_var(f"beta_hi_{c}", 0.0, INF) for c in range(dim)])
    model.add_objective({int(b): -float(v) for b, v in zip(bl, mset.lower)})
    model.add_objective({int(b): float(v) for b, v in zip(bu, mset.upper)})
    lam, etas = _ball(model, compiled, ball, ids, 1.0, "", tilt=(bl, bu))
    ref = Reformulation(model, [compiled], [ids], [lam], [etas], beta_ids=(bl, bu))
    ref.aux_count = model.n_vars - len(ids)
    return ref


def build_event_wise(compiled: list, eset: EventWiseSet, name: str = "drlcp", **caps) -> Reformulation:
    """Block-diagonal assembly with one policy per scenario, weighted by its probability."""
    if len(compiled) != len(eset.scenarios):
        raise ValueError("need one compiled problem per scenario")
    model = MilpModel(name, **caps)
    all_ids, lams, etas = [], [], []
    for l, (cp, sc) in enumerate(zip(compiled, eset.scenarios)):
        if cp.spec != sc.spec:
            raise ValueError(f"scenario {l} lifting differs from its compiled problem")
        tag = f"l{l}_"
        ids = np.empty(cp.layout.n_vars, dtype=int)
        b = cp.layout.int_bound
        for j, nm in enumerate(cp.layout.names):
            kind = INTEGER if cp.layout.is_integer(j) else CONTINUOUS
            lo, hi = (-b, b) if kind == INTEGER else (-INF, INF)
            ids[j] = model.add_var(tag + nm, lo, hi, kind)
        lam, et = _ball(model, cp, _check_samples(cp, sc.ball), ids, float(sc.prob), tag)
        all_ids.append(ids)
        lams.append(lam)
        etas.append(et)
    ref = Reformulation(model, list(compiled), all_ids, lams, etas)
    ref.aux_count = model.n_vars - int(sum(len(i) for i in all_ids))
    return ref
