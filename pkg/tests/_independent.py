"""Reference formulations built without the reformulation module.

Policy-to-trajectory maps are recovered by probing direct simulation
(``evaluate_policy``), which is bilinear in (policy, disturbance) once the
lifting is fixed.  The MILPs below are then written from scratch.
"""

from __future__ import annotations

import itertools

import numpy as np

from drlcp.lifting import lift, lift_many, segment_endpoints
from drlcp.milp import CONTINUOUS, GE, INF, INTEGER, LE, MilpModel
from drlcp.system import PolicyLayout, evaluate_policy


def _trajectory_vector(model, spec, layout, theta, xi):
    tr = evaluate_policy(model, spec, layout.unpack(theta), xi)
    return np.concatenate([tr.x[1:].ravel(), tr.u.ravel(), tr.gamma.ravel()])


def probe_bilinear(model, spec, layout, base_xi, directions):
    """``M`` with ``traj(theta, base + D c) = [1, c] M [1, theta]`` (exact for bilinear maps)."""
    P = layout.n_vars
    thetas = [np.zeros(P)] + [np.eye(P)[j] for j in range(P)]
    xis = [base_xi] + [base_xi + d for d in directions]
    vals = np.array([[_trajectory_vector(model, spec, layout, th, xi) for th in thetas] for xi in xis])
    M = vals.copy()
    M[:, 1:] -= vals[:, :1]
    M[1:] -= M[:1]
    return M  # (1 + n_dir, 1 + P, n_traj)


def _split(model, traj):
    T, nx, nu, ng = model.horizon, model.n_x, model.n_u, model.n_g
    x = traj[..., : T * nx].reshape(traj.shape[:-1] + (T, nx))
    u = traj[..., T * nx: T * (nx + nu)].reshape(traj.shape[:-1] + (T, nu))
    g = traj[..., T * (nx + nu):].reshape(traj.shape[:-1] + (T, ng))
    return x, u, g


def cost_pieces(model, M):
    """Combined cost pieces ``(K, 1 + n_dir, 1 + P)`` from a probed trajectory map."""
    x, u, g = _split(model, M)
    stage = []
    for s in range(model.horizon):
        sc = model.costs[s]
        v = (np.einsum("ia,...a->...i", sc.a, x[..., s, :]) + np.einsum("ib,...b->...i", sc.b, u[..., s, :])
             + np.einsum("ic,...c->...i", sc.c, g[..., s, :])) * model.discount[s]
        stage.append(np.moveaxis(v, -1, 0))
    out = []
    for combo in itertools.product(*(range(p.shape[0]) for p in stage)):
        out.append(sum(stage[s][k] for s, k in enumerate(combo)))
    return np.array(out)


def constraint_rows(model, M, xi_coeff):
    """``lhs - q`` of the robust constraints as ``(n_con, 1 + n_dir, 1 + P)``."""
    x, u, g = _split(model, M)
    out = np.zeros((model.n_con,) + M.shape[:2])
    for s in range(model.horizon):
        out += (np.einsum("ra,...a->r...", model.con_A[s], x[..., s, :])
                + np.einsum("rb,...b->r...", model.con_B[s], u[..., s, :])
                + np.einsum("rc,...c->r...", model.con_C[s], g[..., s, :]))
        out += np.einsum("rx,xd->rd", model.con_D[s], xi_coeff[s])[:, :, None] * np.eye(1, M.shape[1])[0]
    out[:, 0, 0] -= model.q
    return out


def _policy_vars(milp, layout):
    ids = []
    for j in range(layout.n_vars):
        if layout.is_integer(j):
            ids.append(milp.add_var(f"p{j}", -layout.int_bound, layout.int_bound, INTEGER))
        else:
            ids.append(milp.add_var(f"p{j}", -INF, INF, CONTINUOUS))
    return np.array(ids)


def _affine(row, ids):
    """(coefficient dict, constant) of ``[1, theta] . row``."""
    return {int(ids[j]): float(v) for j, v in enumerate(row[1:]) if v != 0.0}, float(row[0])


def _add(milp, coeffs, const, extra, sense, rhs):
    row = dict(coeffs)
    for k, v in extra.items():
        row[k] = row.get(k, 0.0) + v
    milp.add_row(row, sense, rhs - const)


def acp_model(model, spec, ball, int_bound=10.0):
    """Affine-rule Wasserstein DRO over a box with the classic three-candidate dual.

    With one segment per component the lifted vector is the disturbance itself;
    ``max_x d x - lam |x - xhat|`` over ``[l, v]`` is attained at ``l``, ``v`` or
    ``xhat``.  Robust constraints use the box vertex bound ``sum max(e l, e v)``.
    """
    assert np.all(spec.segments == 1)
    layout = PolicyLayout(model, spec, int_bound)
    lo, hi = spec.space.flat_lower(), spec.space.flat_upper()
    n = lo.size
    M = probe_bilinear(model, spec, layout, lo.copy(), [np.eye(n)[c] * (hi[c] - lo[c]) for c in range(n)])
    # rescale directions to unit disturbance steps and shift the base to the origin
    scale = np.concatenate([[1.0], hi - lo])
    M = M / scale[:, None, None]
    M[0] -= np.tensordot(lo, M[1:], axes=1)
    xi_coeff = np.zeros((model.horizon, model.n_xi, 1 + n))
    for s in range(model.horizon):
        for i in range(model.n_xi):
            xi_coeff[s, i, 1 + s * model.n_xi + i] = 1.0
    pieces = cost_pieces(model, M)
    cons = constraint_rows(model, M, xi_coeff)

    milp = MilpModel("acp")
    ids = _policy_vars(milp, layout)
    lam = milp.add_var("lam", 0.0, INF)
    N = ball.n_samples
    obj = {lam: ball.theta}
    for s, xh in enumerate(ball.samples):
        eta = milp.add_var(f"eta{s}", -INF, INF)
        obj[eta] = 1.0 / N
        for k, pc in enumerate(pieces):
            parts = {}
            for c in range(n):
                e = milp.add_var(f"e{s}_{k}_{c}", -INF, INF)
                parts[e] = -1.0
                dc, _ = _affine(pc[1 + c], ids)
                for x in (lo[c], hi[c], xh[c]):
                    row = {e: 1.0, lam: abs(x - xh[c])}
                    for v, a in dc.items():
                        row[v] = row.get(v, 0.0) - a * x
                    milp.add_row(row, GE, pc[1 + c][0] * x)
            rc, r0 = _affine(pc[0], ids)
            _add(milp, {k_: -v for k_, v in rc.items()}, -r0, {eta: 1.0, **parts}, GE, 0.0)
    for r in range(cons.shape[0]):
        parts = {}
        for c in range(n):
            w = milp.add_var(f"w{r}_{c}", -INF, INF)
            parts[w] = 1.0
            ec, e0 = _affine(cons[r, 1 + c], ids)
            for x in (lo[c], hi[c]):
                row = {w: 1.0}
                for v, a in ec.items():
                    row[v] = row.get(v, 0.0) - a * x
                milp.add_row(row, GE, e0 * x)
        mc, m0 = _affine(cons[r, 0], ids)
        _add(milp, mc, m0, parts, LE, 0.0)
    milp.set_objective(obj)
    return milp


def saa_model(compiled, samples, max_vertices=20_000):
    """Sample-average MILP with robust constraints enforced at every lifted vertex.

    Vertices are all combinations of per-component segment endpoints (left
    limits included), enumerated explicitly.
    """
    spec = compiled.spec
    layout = compiled.layout
    blocks = []
    idx = spec.index
    geo = segment_endpoints(spec)
    for t in range(spec.horizon):
        for i in range(spec.n_xi):
            blocks.append((idx.block(t, i), geo.endpoints(t, i)))
    count = int(np.prod([b[1].shape[0] for b in blocks]))
    assert count <= max_vertices
    milp = MilpModel("saa")
    ids = _policy_vars(milp, layout)
    Z = lift_many(spec, samples)
    N = Z.shape[0]
    obj = {}
    pieces = list(compiled.pieces())
    for s in range(N):
        t_s = milp.add_var(f"t{s}", -INF, INF)
        obj[t_s] = 1.0 / N
        for _, d, r in pieces:
            row = r + Z[s] @ d
            coeffs, const = _affine(row, ids)
            _add(milp, {k: -v for k, v in coeffs.items()}, -const, {t_s: 1.0}, GE, 0.0)
    for combo in itertools.product(*(range(b[1].shape[0]) for b in blocks)):
        z = np.zeros(idx.size)
        for (sl, ends), j in zip(blocks, combo):
            z[sl] = ends[j]
        for r in range(compiled.E.shape[0]):
            row = z @ compiled.E[r] - compiled.m[r]
            if not np.any(row):
                continue
            coeffs, const = _affine(row, ids)
            _add(milp, coeffs, const, {}, LE, 0.0)
    milp.set_objective(obj)
    return milp, ids


def sample_average(compiled, theta, samples):
    nm = compiled.numeric(theta)
    Z = np.array([lift(compiled.spec, x) for x in samples])
    return float(np.mean(np.max(Z @ nm.d.T + nm.r, axis=1)))
