"""Uncertain linear systems, lifted policies and their compiled affine forms.

Stages are numbered ``s = 0..T-1``.  At stage ``s`` the controls ``u_s`` and
``gamma_s`` act together with the disturbance ``xi_s``::

    x_{s+1} = A_s x_s + B_s u_s + C_s gamma_s + D_s xi_s

and every quantity is charged at the post-decision state ``x_{s+1}``::

    sum_s (At_s x_{s+1} + Bt_s u_s + Ct_s gamma_s + Dt_s xi_s) <= q
    cost = sum_s alpha_s * max_tau (a_tau . x_{s+1} + b_tau . u_s + c_tau . gamma_s)

Controls are lifted policies: ``u_s = Y_s V + y0_s`` over the continuous
blocks and ``gamma_s = Z_s Q + z0_s`` over the indicator blocks of the stages
a channel may observe (stages ``<= s``, further restricted by masks).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import affine
from .errors import DimensionMismatch, PieceExplosion, ValidationError
from .lifting import LiftingSpec, lift

DEFAULT_INT_BOUND = 10.0
DEFAULT_PIECE_CAP = 100_000


@dataclass
class StageCost:
    """Convex piecewise-linear stage cost ``max_tau (a x + b u + c gamma)``."""

    a: np.ndarray  # (I, n_x)
    b: np.ndarray  # (I, n_u)
    c: np.ndarray  # (I, n_g)

    @property
    def pieces(self) -> int:
        return self.a.shape[0]


def _stack(mats, horizon, shape, name):
    """Broadcast one matrix to all stages, or stack a per-stage list."""
    if mats is None:
        return np.zeros((horizon,) + shape)
    arr = np.asarray(mats, dtype=float)
    if arr.ndim == len(shape) + 1:
        if arr.shape[0] != horizon:
            raise DimensionMismatch(f"{name} has {arr.shape[0]} stages, expected {horizon}")
        out = arr.copy()
    else:
        if arr.size != math.prod(shape):
            raise DimensionMismatch(f"{name} has shape {arr.shape}, expected {shape}")
        out = np.broadcast_to(arr.reshape(shape), (horizon,) + shape).copy()
    if out.shape[1:] != shape:
        raise DimensionMismatch(f"{name} has shape {out.shape[1:]}, expected {shape}")
    if not np.all(np.isfinite(out)):
        raise ValidationError(f"{name} has non-finite entries")
    return out


class SystemModel:
    """Stage matrices, robust constraint data, stage costs and information masks."""

    def __init__(self, horizon, n_x, n_u, n_g, n_xi, A=None, B=None, C=None, D=None, x0=None,
                 con_A=None, con_B=None, con_C=None, con_D=None, q=None, costs=None,
                 discount=None, u_mask=None, g_mask=None):
        if horizon < 1:
            raise ValidationError("horizon must be positive")
        T = self.horizon = int(horizon)
        self.n_x, self.n_u, self.n_g, self.n_xi = int(n_x), int(n_u), int(n_g), int(n_xi)
        self.A = _stack(A, T, (n_x, n_x), "A")
        self.B = _stack(B, T, (n_x, n_u), "B")
        self.C = _stack(C, T, (n_x, n_g), "C")
        self.D = _stack(D, T, (n_x, n_xi), "D")
        self.x0 = np.zeros(n_x) if x0 is None else np.asarray(x0, dtype=float).reshape(-1)
        if self.x0.shape != (n_x,):
            raise DimensionMismatch(f"x0 has {self.x0.size} entries, expected {n_x}")

        q = np.zeros(0) if q is None else np.asarray(q, dtype=float).reshape(-1)
        self.q = q
        nc = self.n_con = q.size
        self.con_A = _stack(con_A, T, (nc, n_x), "con_A")
        self.con_B = _stack(con_B, T, (nc, n_u), "con_B")
        self.con_C = _stack(con_C, T, (nc, n_g), "con_C")
        self.con_D = _stack(con_D, T, (nc, n_xi), "con_D")

        if costs is None:
            costs = [StageCost(np.zeros((1, n_x)), np.zeros((1, n_u)), np.zeros((1, n_g)))]
        if isinstance(costs, StageCost):
            costs = [costs]
        if len(costs) == 1:
            costs = list(costs) * T
        if len(costs) != T:
            raise DimensionMismatch(f"{len(costs)} stage costs for horizon {T}")
        self.costs = []
        for s, sc in enumerate(costs):
            a = np.atleast_2d(np.asarray(sc.a, dtype=float))
            b = np.atleast_2d(np.asarray(sc.b, dtype=float))
            c = np.atleast_2d(np.asarray(sc.c, dtype=float))
            if a.shape[1:] != (n_x,) or b.shape[1:] != (n_u,) or c.shape[1:] != (n_g,) \
                    or not a.shape[0] == b.shape[0] == c.shape[0] or a.shape[0] < 1:
                raise DimensionMismatch(f"stage {s} cost pieces have inconsistent shapes")
            self.costs.append(StageCost(a, b, c))

        alpha = np.ones(T) if discount is None else np.broadcast_to(
            np.asarray(discount, dtype=float), (T,)).copy()
        if np.any(alpha < 0) or np.any(alpha > 1):
            raise ValidationError("discount factors must lie in [0, 1]")
        self.discount = alpha

        causal = np.tril(np.ones((T, T), dtype=bool))  # [s, t'] with t' <= s
        self.u_mask = self._mask(u_mask, n_u, causal, "u_mask")
        self.g_mask = self._mask(g_mask, n_g, causal, "g_mask")

    def _mask(self, mask, n_ch, causal, name):
        T, n = self.horizon, self.n_xi
        full = np.broadcast_to(causal[:, None, :, None], (T, n_ch, T, n)).copy()
        if mask is None:
            return full
        m = np.asarray(mask, dtype=bool)
        if m.shape != full.shape:
            raise DimensionMismatch(f"{name} has shape {m.shape}, expected {full.shape}")
        if np.any(m & ~full):
            raise ValidationError(f"{name} lets a control observe future disturbances")
        return m

    def check_lifting(self, spec: LiftingSpec):
        if spec.horizon != self.horizon or spec.n_xi != self.n_xi:
            raise DimensionMismatch(
                f"lifting is {spec.horizon} x {spec.n_xi}, model is {self.horizon} x {self.n_xi}")

    def __repr__(self):
        return (f"SystemModel(T={self.horizon}, n_x={self.n_x}, n_u={self.n_u}, "
                f"n_g={self.n_g}, n_xi={self.n_xi}, constraints={self.n_con})")


# -- policies ------------------------------------------------------------------


@dataclass
class PolicyCoefficients:
    """Numeric lifted policy.

    ``Y[s]`` is ``(n_u, n_V(s))`` over every continuous coordinate of stages
    ``0..s`` in canonical order and ``Z[s]`` is ``(n_g, n_Q(s))`` likewise;
    masked columns must be zero.
    """

    Y: list
    y0: np.ndarray
    Z: list
    z0: np.ndarray


class PolicyLayout:
    """Allocates policy decision-variable ids: all Y (stage-major), then y0, Z, z0."""

    def __init__(self, model: SystemModel, spec: LiftingSpec, int_bound: float = DEFAULT_INT_BOUND,
                 prefix: str = ""):
        model.check_lifting(spec)
        self.model, self.spec, self.int_bound, self.prefix = model, spec, float(int_bound), prefix
        idx = spec.index
        T = model.horizon
        names: list[str] = []
        self.y_cols: list[list[np.ndarray]] = []  # positions within v_indices(s)
        self.y_ids: list[list[np.ndarray]] = []
        self.z_cols: list[list[np.ndarray]] = []
        self.z_ids: list[list[np.ndarray]] = []
        own = idx.owner
        n = spec.n_xi

        def allowed(mask_row, coords):
            o = own[coords]
            return np.flatnonzero(mask_row[o // n, o % n])

        for s in range(T):
            vi = idx.v_indices(s)
            cols_s, ids_s = [], []
            for c in range(model.n_u):
                cols = allowed(model.u_mask[s, c], vi)
                ids = np.arange(len(names), len(names) + cols.size)
                names += [f"{prefix}Y_{s}_{c}_{vi[k]}" for k in cols]
                cols_s.append(cols)
                ids_s.append(ids)
            self.y_cols.append(cols_s)
            self.y_ids.append(ids_s)
        self.y0_ids = np.arange(len(names), len(names) + T * model.n_u).reshape(T, model.n_u)
        names += [f"{prefix}y0_{s}_{c}" for s in range(T) for c in range(model.n_u)]
        self.n_continuous = len(names)
        for s in range(T):
            qi = idx.q_indices(s)
            cols_s, ids_s = [], []
            for c in range(model.n_g):
                cols = allowed(model.g_mask[s, c], qi)
                ids = np.arange(len(names), len(names) + cols.size)
                names += [f"{prefix}Z_{s}_{c}_{qi[k]}" for k in cols]
                cols_s.append(cols)
                ids_s.append(ids)
            self.z_cols.append(cols_s)
            self.z_ids.append(ids_s)
        self.z0_ids = np.arange(len(names), len(names) + T * model.n_g).reshape(T, model.n_g)
        names += [f"{prefix}z0_{s}_{c}" for s in range(T) for c in range(model.n_g)]
        self.names = names
        self.n_vars = len(names)

    @property
    def integer_ids(self) -> np.ndarray:
        return np.arange(self.n_continuous, self.n_vars)

    def is_integer(self, v: int) -> bool:
        return v >= self.n_continuous

    def unpack(self, theta) -> PolicyCoefficients:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_vars,):
            raise DimensionMismatch(f"policy vector has {theta.size} entries, expected {self.n_vars}")
        idx, m = self.spec.index, self.model
        Y, Z = [], []
        for s in range(m.horizon):
            Ys = np.zeros((m.n_u, idx.n_v(s)))
            for c in range(m.n_u):
                Ys[c, self.y_cols[s][c]] = theta[self.y_ids[s][c]]
            Zs = np.zeros((m.n_g, idx.n_q(s)))
            for c in range(m.n_g):
                Zs[c, self.z_cols[s][c]] = theta[self.z_ids[s][c]]
            Y.append(Ys)
            Z.append(Zs)
        return PolicyCoefficients(Y, theta[self.y0_ids].copy(), Z, theta[self.z0_ids].copy())

    def pack(self, policy: PolicyCoefficients) -> np.ndarray:
        self.validate(policy)
        theta = np.zeros(self.n_vars)
        m = self.model
        for s in range(m.horizon):
            for c in range(m.n_u):
                theta[self.y_ids[s][c]] = policy.Y[s][c, self.y_cols[s][c]]
            for c in range(m.n_g):
                theta[self.z_ids[s][c]] = policy.Z[s][c, self.z_cols[s][c]]
        theta[self.y0_ids] = policy.y0
        theta[self.z0_ids] = policy.z0
        return theta

    def validate(self, policy: PolicyCoefficients) -> None:
        """Shapes must match and masked-out columns must be zero."""
        idx, m = self.spec.index, self.model
        if len(policy.Y) != m.horizon or len(policy.Z) != m.horizon:
            raise DimensionMismatch("policy must have one Y and one Z block per stage")
        if np.shape(policy.y0) != (m.horizon, m.n_u) or np.shape(policy.z0) != (m.horizon, m.n_g):
            raise DimensionMismatch("offset arrays have the wrong shape")
        for s in range(m.horizon):
            Ys = np.asarray(policy.Y[s])
            Zs = np.asarray(policy.Z[s])
            if Ys.shape != (m.n_u, idx.n_v(s)) or Zs.shape != (m.n_g, idx.n_q(s)):
                raise DimensionMismatch(f"stage {s} gain blocks have the wrong shape")
            for mat, cols in ((Ys, self.y_cols[s]), (Zs, self.z_cols[s])):
                for c in range(mat.shape[0]):
                    off = np.ones(mat.shape[1], dtype=bool)
                    off[cols[c]] = False
                    if np.any(mat[c, off] != 0):
                        raise ValidationError(f"stage {s} channel {c} uses a masked-out column")

    def random(self, rng: np.random.Generator, scale: float = 1.0, int_range: int = 2) -> np.ndarray:
        """Random policy vector (integer part drawn from ``[-int_range, int_range]``)."""
        theta = rng.normal(scale=scale, size=self.n_vars)
        k = self.integer_ids
        theta[k] = rng.integers(-int_range, int_range + 1, size=k.size)
        return theta


# -- compilation -----------------------------------------------------------------


def policy_expressions(layout: PolicyLayout):
    """Lifted affine arrays of ``u_s`` and ``gamma_s`` for every stage."""
    m, idx = layout.model, layout.spec.index
    L, P = idx.size, layout.n_vars
    U, G = [], []
    for s in range(m.horizon):
        u = np.zeros((m.n_u, 1 + L, 1 + P))
        vi = idx.v_indices(s)
        for c in range(m.n_u):
            u[c, 1 + vi[layout.y_cols[s][c]], 1 + layout.y_ids[s][c]] = 1.0
            u[c, 0, 1 + layout.y0_ids[s, c]] = 1.0
        g = np.zeros((m.n_g, 1 + L, 1 + P))
        qi = idx.q_indices(s)
        for c in range(m.n_g):
            g[c, 1 + qi[layout.z_cols[s][c]], 1 + layout.z_ids[s][c]] = 1.0
            g[c, 0, 1 + layout.z0_ids[s, c]] = 1.0
        U.append(u)
        G.append(g)
    return U, G


def disturbance_expressions(layout: PolicyLayout):
    """``xi_s = R_s z`` as lifted affine arrays (numeric, no policy terms)."""
    m, idx = layout.model, layout.spec.index
    L, P = idx.size, layout.n_vars
    R = idx.recovery
    out = []
    for s in range(m.horizon):
        e = np.zeros((m.n_xi, 1 + L, 1 + P))
        e[:, 1:, 0] = R[s * m.n_xi:(s + 1) * m.n_xi]
        out.append(e)
    return out


def roll_out_state(layout: PolicyLayout, U=None, G=None, Xi=None):
    """Lifted affine arrays of ``x_0 .. x_T``."""
    m, idx = layout.model, layout.spec.index
    if U is None:
        U, G = policy_expressions(layout)
    if Xi is None:
        Xi = disturbance_expressions(layout)
    x = affine.constant(0.0, idx.size, layout.n_vars, (m.n_x,))
    x[:, 0, 0] = m.x0
    X = [x]
    for s in range(m.horizon):
        x = (np.tensordot(m.A[s], x, axes=1) + np.tensordot(m.B[s], U[s], axes=1)
             + np.tensordot(m.C[s], G[s], axes=1) + np.tensordot(m.D[s], Xi[s], axes=1))
        X.append(x)
    return X


@dataclass
class NumericProblem:
    """Compiled data with the policy substituted: ``E z <= m`` and ``max_k d_k z + r_k``."""

    E: np.ndarray  # (n_con, L)
    m: np.ndarray  # (n_con,)
    d: np.ndarray  # (K, L)
    r: np.ndarray  # (K,)

    def cost(self, z) -> float:
        return float(np.max(self.d @ z + self.r))

    def residuals(self, z) -> np.ndarray:
        return self.E @ z - self.m


@dataclass
class CompiledProblem:
    """Constraint data ``(E, m)`` and per-stage cost pieces as lifted affine arrays.

    ``E[r]`` is ``(L, 1 + P)`` and ``m[r]`` is ``(1 + P,)`` (a constant followed
    by policy coefficients); row ``r`` holds for ``z`` when ``E[r]ᵀ z <= m[r]``.
    The total cost is the max over ``K`` combined pieces, each the sum over
    stages of one (discounted) stage piece.
    """

    layout: PolicyLayout
    E: np.ndarray
    m: np.ndarray
    stage_pieces: list = field(default_factory=list)  # (I_s, 1 + L, 1 + P) per stage
    piece_cap: int = DEFAULT_PIECE_CAP

    @property
    def spec(self) -> LiftingSpec:
        return self.layout.spec

    @property
    def K(self) -> int:
        return math.prod(p.shape[0] for p in self.stage_pieces)

    def combos(self):
        """Piece indices per stage in lexicographic order."""
        return itertools.product(*(range(p.shape[0]) for p in self.stage_pieces))

    def pieces(self):
        """Yield ``(combo, d, r)`` with ``d`` of shape ``(L, 1 + P)`` and ``r`` of ``(1 + P,)``."""
        for combo in self.combos():
            a = sum(self.stage_pieces[s][k] for s, k in enumerate(combo))
            yield combo, a[1:], a[0]

    def numeric(self, theta) -> NumericProblem:
        theta = np.concatenate([[1.0], np.asarray(theta, dtype=float)])
        E = self.E @ theta
        m = self.m @ theta
        stage = [p @ theta for p in self.stage_pieces]  # (I_s, 1 + L)
        tot = np.zeros((1, stage[0].shape[1]))
        for sp in stage:
            tot = (tot[:, None, :] + sp[None, :, :]).reshape(-1, sp.shape[1])
        return NumericProblem(E, m, tot[:, 1:], tot[:, 0])


def compile_constraints(layout: PolicyLayout, X=None, U=None, G=None, Xi=None):
    """Robust constraint rows as ``(E, m)``; see :class:`CompiledProblem`."""
    md, idx = layout.model, layout.spec.index
    if U is None:
        U, G = policy_expressions(layout)
    if Xi is None:
        Xi = disturbance_expressions(layout)
    if X is None:
        X = roll_out_state(layout, U, G, Xi)
    g = affine.constant(0.0, idx.size, layout.n_vars, (md.n_con,))
    for s in range(md.horizon):
        g += (np.tensordot(md.con_A[s], X[s + 1], axes=1) + np.tensordot(md.con_B[s], U[s], axes=1)
              + np.tensordot(md.con_C[s], G[s], axes=1) + np.tensordot(md.con_D[s], Xi[s], axes=1))
    m = -g[:, 0, :]
    m[:, 0] += md.q
    return g[:, 1:, :], m


def _prune(pieces: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Drop pieces that another piece dominates on the lifted bounding box."""
    keep = list(range(pieces.shape[0]))
    changed = True
    while changed:
        changed = False
        for i in keep:
            for j in keep:
                if i == j:
                    continue
                diff = pieces[j] - pieces[i]
                if np.any(diff[:, 1:]):
                    continue
                coef = diff[1:, 0]
                low = diff[0, 0] + np.minimum(coef * lo, coef * hi).sum()
                if low >= 0:
                    keep.remove(i)
                    changed = True
                    break
            if changed:
                break
    return pieces[keep]


def lifted_box(spec: LiftingSpec) -> tuple[np.ndarray, np.ndarray]:
    """Componentwise bounds of the lifted support."""
    idx = spec.index
    lo = np.zeros(idx.size)
    hi = np.ones(idx.size)
    for t in range(spec.horizon):
        for i in range(spec.n_xi):
            w = spec.w[t][i]
            v = idx.v_slice(t, i)
            lo[v.start] = w[0]
            hi[v] = np.diff(w)
            hi[v.start] = w[1]
    return lo, hi


def compile_cost(layout: PolicyLayout, X=None, U=None, G=None, prune: bool = False,
                 piece_cap: int = DEFAULT_PIECE_CAP):
    """Discounted stage pieces; ``K`` is the product of their counts."""
    md = layout.model
    if U is None:
        U, G = policy_expressions(layout)
    if X is None:
        X = roll_out_state(layout, U, G)
    if prune:
        lo, hi = lifted_box(layout.spec)
    out = []
    for s, sc in enumerate(md.costs):
        p = md.discount[s] * (np.tensordot(sc.a, X[s + 1], axes=1) + np.tensordot(sc.b, U[s], axes=1)
                              + np.tensordot(sc.c, G[s], axes=1))
        if prune and p.shape[0] > 1:
            p = _prune(p, lo, hi)
        out.append(p)
    K = math.prod(p.shape[0] for p in out)
    if K > piece_cap:
        raise PieceExplosion(f"{K} combined cost pieces exceed the cap of {piece_cap}")
    return out


def compile_problem(model: SystemModel, spec: LiftingSpec, int_bound: float = DEFAULT_INT_BOUND,
                    prune: bool = False, piece_cap: int = DEFAULT_PIECE_CAP,
                    prefix: str = "") -> CompiledProblem:
    layout = PolicyLayout(model, spec, int_bound, prefix)
    U, G = policy_expressions(layout)
    Xi = disturbance_expressions(layout)
    X = roll_out_state(layout, U, G, Xi)
    E, m = compile_constraints(layout, X, U, G, Xi)
    pieces = compile_cost(layout, X, U, G, prune, piece_cap)
    return CompiledProblem(layout, E, m, pieces, piece_cap)


# -- direct simulation ----------------------------------------------------------


@dataclass
class Trajectory:
    x: np.ndarray  # (T + 1, n_x)
    u: np.ndarray  # (T, n_u)
    gamma: np.ndarray  # (T, n_g)
    stage_costs: np.ndarray  # (T,) discounted
    total: float
    residuals: np.ndarray  # (n_con,)

    @property
    def max_residual(self) -> float:
        return float(np.max(self.residuals, initial=-math.inf))


def evaluate_policy(model: SystemModel, spec: LiftingSpec, policy: PolicyCoefficients,
                    xi) -> Trajectory:
    """Simulate the closed system for one disturbance trajectory."""
    model.check_lifting(spec)
    z = lift(spec, xi)
    idx = spec.index
    T = model.horizon
    xis = spec.space.check(xi).reshape(T, model.n_xi)
    x = np.zeros((T + 1, model.n_x))
    x[0] = model.x0
    u = np.zeros((T, model.n_u))
    g = np.zeros((T, model.n_g))
    costs = np.zeros(T)
    lhs = np.zeros(model.n_con)
    for s in range(T):
        u[s] = np.asarray(policy.Y[s]) @ z[idx.v_indices(s)] + policy.y0[s]
        g[s] = np.asarray(policy.Z[s]) @ z[idx.q_indices(s)] + policy.z0[s]
        x[s + 1] = model.A[s] @ x[s] + model.B[s] @ u[s] + model.C[s] @ g[s] + model.D[s] @ xis[s]
        sc = model.costs[s]
        costs[s] = model.discount[s] * np.max(sc.a @ x[s + 1] + sc.b @ u[s] + sc.c @ g[s])
        lhs += (model.con_A[s] @ x[s + 1] + model.con_B[s] @ u[s] + model.con_C[s] @ g[s]
                + model.con_D[s] @ xis[s])
    return Trajectory(x, u, g, costs, float(costs.sum()), lhs - model.q)
