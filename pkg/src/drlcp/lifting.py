"""Piecewise-linear lifting of box-supported disturbances.

Each scalar disturbance component ``xi[t, i]`` on ``[l, v]`` with breakpoints
``l = w_0 < w_1 < ... < w_p = v`` is lifted to ``p`` continuous clamp values
``V`` and ``p - 1`` binary threshold indicators ``Q``::

    V_1 = min(xi, w_1)
    V_j = max(min(xi, w_j) - w_{j-1}, 0)        j = 2..p
    Q_j = 1 if xi >= w_j else 0                  j = 1..p-1

Summing the ``V`` entries recovers ``xi``.  The image of one component is a
union of ``p`` line segments whose endpoints (including the left limits at the
breakpoints, where ``Q`` has not yet switched) are available in closed form.

The stacked lifted vector is ordered stage-major, dimension-minor, with the
``V`` block before the ``Q`` block of every component.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import OutOfSupport, ShapeMismatch, ValidationError

SUPPORT_TOL = 1e-12


@dataclass(frozen=True)
class DisturbanceSpace:
    """Hyperrectangle ``lower <= xi <= upper`` of shape ``(T, n_xi)``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_2d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_2d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape:
            raise ShapeMismatch(f"support bounds have shapes {lo.shape} and {hi.shape}")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValidationError("support bounds must be finite")
        if np.any(lo > hi):
            raise ValidationError("support lower bound exceeds upper bound")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def box(cls, horizon: int, lower, upper, n_xi: int = 1) -> DisturbanceSpace:
        """Same interval for every (stage, dimension) unless arrays are given."""
        lo = np.broadcast_to(np.asarray(lower, dtype=float), (horizon, n_xi))
        hi = np.broadcast_to(np.asarray(upper, dtype=float), (horizon, n_xi))
        return cls(lo.copy(), hi.copy())

    @property
    def horizon(self) -> int:
        return self.lower.shape[0]

    @property
    def n_xi(self) -> int:
        return self.lower.shape[1]

    @property
    def dim(self) -> int:
        return self.horizon * self.n_xi

    def flat_lower(self) -> np.ndarray:
        return self.lower.reshape(-1)

    def flat_upper(self) -> np.ndarray:
        return self.upper.reshape(-1)

    def check(self, xi, tol: float = SUPPORT_TOL, row=None) -> np.ndarray:
        """Return ``xi`` as a flat stage-major vector, raising OutOfSupport if needed."""
        xi = np.asarray(xi, dtype=float).reshape(-1)
        if xi.size != self.dim:
            raise ShapeMismatch(f"disturbance has {xi.size} entries, expected {self.dim}")
        lo, hi = self.flat_lower(), self.flat_upper()
        bad = np.flatnonzero((xi < lo - tol) | (xi > hi + tol) | ~np.isfinite(xi))
        if bad.size:
            k = int(bad[0])
            where = f"row {row}, " if row is not None else ""
            raise OutOfSupport(f"value {xi[k]} at {where}column {k} outside [{lo[k]}, {hi[k]}]",
                               row=row, col=k)
        return np.clip(xi, lo, hi)

    def sub(self, stages) -> DisturbanceSpace:
        stages = list(stages)
        return DisturbanceSpace(self.lower[stages], self.upper[stages])


class LiftingSpec:
    """Breakpoint grids ``w[t][i]`` including both support endpoints."""

    def __init__(self, space: DisturbanceSpace, breakpoints):
        self.space = space
        T, n = space.horizon, space.n_xi
        if len(breakpoints) != T or any(len(row) != n for row in breakpoints):
            raise ShapeMismatch(f"breakpoints must be a {T} x {n} nested list")
        grids = []
        for t in range(T):
            row = []
            for i in range(n):
                w = np.asarray(breakpoints[t][i], dtype=float).reshape(-1)
                if w.size < 2:
                    raise ValidationError(f"breakpoint grid ({t}, {i}) needs both endpoints")
                if w[0] != space.lower[t, i] or w[-1] != space.upper[t, i]:
                    raise ValidationError(
                        f"breakpoint grid ({t}, {i}) must start at {space.lower[t, i]} "
                        f"and end at {space.upper[t, i]}")
                if np.any(np.diff(w) <= 0):
                    raise ValidationError(
                        f"breakpoint grid ({t}, {i}) is not strictly increasing "
                        "(zero-length segments are rejected)")
                w.setflags(write=False)
                row.append(w)
            grids.append(tuple(row))
        self.w = tuple(grids)

    @classmethod
    def equal_division(cls, space: DisturbanceSpace, segments) -> LiftingSpec:
        """``segments`` equal-width pieces per component (int or (T, n_xi) array)."""
        p = np.broadcast_to(np.asarray(segments, dtype=int), (space.horizon, space.n_xi))
        if np.any(p < 1):
            raise ValidationError("segment counts must be >= 1")
        bps = [[np.linspace(space.lower[t, i], space.upper[t, i], p[t, i] + 1)
                for i in range(space.n_xi)] for t in range(space.horizon)]
        for t in range(space.horizon):
            for i in range(space.n_xi):
                bps[t][i][0] = space.lower[t, i]
                bps[t][i][-1] = space.upper[t, i]
        return cls(space, bps)

    @classmethod
    def affine(cls, space: DisturbanceSpace) -> LiftingSpec:
        return cls.equal_division(space, 1)

    @property
    def horizon(self) -> int:
        return self.space.horizon

    @property
    def n_xi(self) -> int:
        return self.space.n_xi

    @cached_property
    def segments(self) -> np.ndarray:
        """Segment counts ``p[t, i]``."""
        return np.array([[len(w) - 1 for w in row] for row in self.w], dtype=int)

    @cached_property
    def index(self) -> BlockIndex:
        return BlockIndex(self.segments)

    def __eq__(self, other):
        if not isinstance(other, LiftingSpec) or self.segments.shape != other.segments.shape:
            return NotImplemented
        return all(np.array_equal(a, b) for ra, rb in zip(self.w, other.w) for a, b in zip(ra, rb))

    def __hash__(self):
        return hash(tuple(tuple(map(tuple, row)) for row in self.w))

    def __repr__(self):
        return f"LiftingSpec(segments={self.segments.tolist()})"


class BlockIndex:
    """Offsets of every (t, i) block inside the stacked lifted vector."""

    def __init__(self, segments: np.ndarray):
        self.p = np.asarray(segments, dtype=int)
        T, n = self.p.shape
        self.horizon, self.n_xi = T, n
        self.block_start = np.zeros((T, n), dtype=int)
        self.v_start = np.zeros((T, n), dtype=int)
        self.q_start = np.zeros((T, n), dtype=int)
        pos = 0
        for t in range(T):
            for i in range(n):
                self.block_start[t, i] = pos
                self.v_start[t, i] = pos
                self.q_start[t, i] = pos + self.p[t, i]
                pos += 2 * self.p[t, i] - 1
        self.size = pos

    def block(self, t: int, i: int) -> slice:
        s = self.block_start[t, i]
        return slice(s, s + 2 * self.p[t, i] - 1)

    def v_slice(self, t: int, i: int) -> slice:
        s = self.v_start[t, i]
        return slice(s, s + self.p[t, i])

    def q_slice(self, t: int, i: int) -> slice:
        s = self.q_start[t, i]
        return slice(s, s + self.p[t, i] - 1)

    def prefix(self, t: int) -> np.ndarray:
        """Lifted coordinates of stages ``0..t`` (the projection onto the past)."""
        if t < 0:
            return np.zeros(0, dtype=int)
        end = self.block_start[t, -1] + 2 * self.p[t, -1] - 1
        return np.arange(end)

    def v_indices(self, t: int, stages=None) -> np.ndarray:
        """Continuous-part coordinates of stages ``0..t`` in canonical order."""
        out = [np.arange(self.v_start[s, i], self.v_start[s, i] + self.p[s, i])
               for s in range(t + 1) for i in range(self.n_xi)
               if stages is None or s in stages]
        return np.concatenate(out) if out else np.zeros(0, dtype=int)

    def q_indices(self, t: int, stages=None) -> np.ndarray:
        out = [np.arange(self.q_start[s, i], self.q_start[s, i] + self.p[s, i] - 1)
               for s in range(t + 1) for i in range(self.n_xi)
               if stages is None or s in stages]
        return np.concatenate(out) if out else np.zeros(0, dtype=int)

    def n_v(self, t: int) -> int:
        return int(self.p[: t + 1].sum())

    def n_q(self, t: int) -> int:
        return int((self.p[: t + 1] - 1).sum())

    @cached_property
    def recovery(self) -> np.ndarray:
        """Matrix ``R`` with ``R @ lift(xi) == xi`` (rows stage-major)."""
        R = np.zeros((self.horizon * self.n_xi, self.size))
        for t in range(self.horizon):
            for i in range(self.n_xi):
                R[t * self.n_xi + i, self.v_slice(t, i)] = 1.0
        return R

    @cached_property
    def owner(self) -> np.ndarray:
        """Flat (t * n_xi + i) owner of every lifted coordinate."""
        own = np.zeros(self.size, dtype=int)
        for t in range(self.horizon):
            for i in range(self.n_xi):
                own[self.block(t, i)] = t * self.n_xi + i
        return own


def lift_scalar(x: float, w: np.ndarray) -> np.ndarray:
    """Lift one component; returns ``[V_1..V_p, Q_1..Q_{p-1}]``."""
    p = len(w) - 1
    out = np.empty(2 * p - 1)
    out[0] = min(x, w[1])
    for j in range(2, p + 1):
        out[j - 1] = max(min(x, w[j]) - w[j - 1], 0.0)
    for j in range(1, p):
        out[p + j - 1] = 1.0 if x >= w[j] else 0.0
    return out


def left_limit(w: np.ndarray, j: int) -> np.ndarray:
    """Limit of the lifting as ``xi`` increases to breakpoint ``w[j]`` (j >= 1)."""
    p = len(w) - 1
    out = lift_scalar(w[j], w)
    if j <= p - 1:
        out[p + j - 1] = 0.0
    return out


def lift(spec: LiftingSpec, xi, tol: float = SUPPORT_TOL) -> np.ndarray:
    """Stacked lifted vector of a full disturbance trajectory."""
    x = spec.space.check(xi, tol).reshape(spec.horizon, spec.n_xi)
    idx = spec.index
    z = np.empty(idx.size)
    for t in range(spec.horizon):
        for i in range(spec.n_xi):
            z[idx.block(t, i)] = lift_scalar(x[t, i], spec.w[t][i])
    return z


def lift_many(spec: LiftingSpec, xis) -> np.ndarray:
    """Vectorized :func:`lift` for an ``(N, T * n_xi)`` array (rows assumed in support)."""
    X = np.atleast_2d(np.asarray(xis, dtype=float))
    lo = spec.space.flat_lower()
    hi = spec.space.flat_upper()
    X = np.clip(X, lo, hi)
    idx = spec.index
    Z = np.empty((X.shape[0], idx.size))
    n = spec.n_xi
    for t in range(spec.horizon):
        for i in range(n):
            w = spec.w[t][i]
            p = len(w) - 1
            col = X[:, t * n + i]
            s = idx.block_start[t, i]
            Z[:, s] = np.minimum(col, w[1])
            for j in range(2, p + 1):
                Z[:, s + j - 1] = np.maximum(np.minimum(col, w[j]) - w[j - 1], 0.0)
            for j in range(1, p):
                Z[:, s + p + j - 1] = (col >= w[j]).astype(float)
    return Z


def recover(spec: LiftingSpec, zstar) -> np.ndarray:
    """Sum the continuous entries of every block; the integer entries are ignored."""
    z = np.asarray(zstar, dtype=float)
    if z.shape[-1] != spec.index.size:
        raise ShapeMismatch(f"lifted vector has {z.shape[-1]} entries, expected {spec.index.size}")
    return z @ spec.index.recovery.T


@dataclass(frozen=True)
class SegmentGeometry:
    """Per-component segment endpoints.

    ``lo[t][i]`` and ``hi[t][i]`` are ``(p, 2p - 1)`` arrays: row ``j - 1`` holds
    the lifted block at the left end ``w_{j-1}`` of segment ``j`` and the left
    limit at its right end ``w_j`` (the true value for the closed last segment).
    ``lo_x``/``hi_x`` hold the matching disturbance values.
    """

    spec: LiftingSpec
    lo: tuple
    hi: tuple
    lo_x: tuple
    hi_x: tuple

    def endpoints(self, t: int, i: int) -> np.ndarray:
        """All ``2p`` endpoint blocks stacked as (lo_1, hi_1, lo_2, hi_2, ...)."""
        lo, hi = self.lo[t][i], self.hi[t][i]
        out = np.empty((2 * lo.shape[0], lo.shape[1]))
        out[0::2] = lo
        out[1::2] = hi
        return out

    def endpoint_x(self, t: int, i: int) -> np.ndarray:
        lo, hi = self.lo_x[t][i], self.hi_x[t][i]
        out = np.empty(2 * lo.size)
        out[0::2] = lo
        out[1::2] = hi
        return out


def segment_endpoints(spec: LiftingSpec) -> SegmentGeometry:
    lo_all, hi_all, lox_all, hix_all = [], [], [], []
    for t in range(spec.horizon):
        lo_row, hi_row, lox_row, hix_row = [], [], [], []
        for i in range(spec.n_xi):
            w = spec.w[t][i]
            p = len(w) - 1
            lo = np.array([lift_scalar(w[j - 1], w) for j in range(1, p + 1)])
            hi = np.array([left_limit(w, j) for j in range(1, p + 1)])
            lo_row.append(lo)
            hi_row.append(hi)
            lox_row.append(np.asarray(w[:-1], dtype=float))
            hix_row.append(np.asarray(w[1:], dtype=float))
        lo_all.append(tuple(lo_row))
        hi_all.append(tuple(hi_row))
        lox_all.append(tuple(lox_row))
        hix_all.append(tuple(hix_row))
    return SegmentGeometry(spec, tuple(lo_all), tuple(hi_all), tuple(lox_all), tuple(hix_all))


def policy_degenerates_to_affine(spec: LiftingSpec) -> bool:
    """True when no component uses an interior breakpoint."""
    return bool(np.all(spec.segments == 1))
