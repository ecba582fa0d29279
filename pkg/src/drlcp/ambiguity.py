"""Wasserstein-type ambiguity sets, sample files and radius estimation."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, OutOfSupport, ParseError, ValidationError
from .lifting import DisturbanceSpace, LiftingSpec

# Beyond this many transport variables the built-in dense LP is not used.
LP_TRANSPORT_LIMIT = 2_500
ASSIGNMENT_LIMIT = 600


def _validate_samples(samples, space: DisturbanceSpace | None) -> np.ndarray:
    X = np.atleast_2d(np.asarray(samples, dtype=float))
    if X.shape[0] < 1 or X.size == 0:
        raise ValidationError("at least one sample is required")
    if space is not None:
        if X.shape[1] != space.dim:
            raise DimensionMismatch(f"samples have {X.shape[1]} columns, expected {space.dim}")
        X = np.vstack([space.check(row, row=r) for r, row in enumerate(X)])
    X.setflags(write=False)
    return X


@dataclass(frozen=True)
class WassersteinSet:
    """Ball of radius ``theta`` (1-norm ground metric) around the empirical distribution."""

    theta: float
    samples: np.ndarray
    space: DisturbanceSpace | None = None

    def __post_init__(self):
        theta = float(self.theta)
        if not math.isfinite(theta) or theta < 0:
            raise ValidationError("radius must be finite and nonnegative")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "samples", _validate_samples(self.samples, self.space))

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]


@dataclass(frozen=True)
class MixedMomentSet:
    """Wasserstein ball intersected with componentwise first-moment bounds."""

    ball: WassersteinSet
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        dim = self.ball.samples.shape[1]
        lo = np.asarray(self.lower, dtype=float).reshape(-1)
        hi = np.asarray(self.upper, dtype=float).reshape(-1)
        if lo.size != dim or hi.size != dim:
            raise DimensionMismatch(f"moment bounds need {dim} entries")
        if np.any(lo > hi):
            raise ValidationError("moment lower bound exceeds upper bound")
        sp = self.ball.space
        if sp is not None and (np.any(lo < sp.flat_lower()) or np.any(hi > sp.flat_upper())):
            raise ValidationError("moment bounds must lie inside the support")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def theta(self) -> float:
        return self.ball.theta

    @property
    def samples(self) -> np.ndarray:
        return self.ball.samples


@dataclass(frozen=True)
class Scenario:
    """One event realization: its weight, ball, support and lifting."""

    prob: float
    ball: WassersteinSet
    spec: LiftingSpec

    def __post_init__(self):
        if self.ball.space is None:
            object.__setattr__(self, "ball", WassersteinSet(self.ball.theta, self.ball.samples,
                                                            self.spec.space))
        elif self.ball.space is not self.spec.space:
            s, b = self.spec.space, self.ball.space
            if not (np.array_equal(s.lower, b.lower) and np.array_equal(s.upper, b.upper)):
                raise ValidationError("scenario lifting and samples use different supports")


@dataclass(frozen=True)
class EventWiseSet:
    scenarios: tuple

    def __post_init__(self):
        sc = tuple(self.scenarios)
        if not sc:
            raise ValidationError("at least one scenario is required")
        p = np.array([s.prob for s in sc], dtype=float)
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValidationError(f"scenario probabilities must be >= 0 and sum to 1 (got {p.sum()})")
        object.__setattr__(self, "scenarios", sc)

    @property
    def probs(self) -> np.ndarray:
        return np.array([s.prob for s in self.scenarios])


def load_samples(path, space: DisturbanceSpace | None = None) -> np.ndarray:
    """Read one sample per row (stage-major columns).

    Blank lines and ``#`` comments are skipped; a non-numeric first row is
    treated as a header.
    """
    path = Path(path)
    rows: list[list[float]] = []
    with path.open(newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or not "".join(rec).strip() or rec[0].lstrip().startswith("#"):
                continue
            try:
                vals = [float(v) for v in rec]
            except ValueError:
                if not rows and all(not _is_number(v) for v in rec):
                    continue
                raise ParseError(f"{path}:{lineno}: non-numeric value") from None
            if rows and len(vals) != len(rows[0]):
                raise ParseError(f"{path}:{lineno}: expected {len(rows[0])} columns, got {len(vals)}")
            rows.append(vals)
    if not rows:
        raise ParseError(f"{path}: no samples")
    X = np.array(rows, dtype=float)
    if space is not None:
        if X.shape[1] != space.dim:
            raise ParseError(f"{path}: expected {space.dim} columns, got {X.shape[1]}")
        for r, row in enumerate(X):
            try:
                space.check(row, row=r)
            except OutOfSupport as e:
                raise OutOfSupport(f"{path}: {e}", row=r, col=e.col) from None
    return X


def _is_number(v: str) -> bool:
    try:
        float(v)
    except ValueError:
        return False
    return True


def save_samples(path, samples) -> None:
    X = np.atleast_2d(np.asarray(samples, dtype=float))
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        for row in X:
            w.writerow([repr(float(v)) for v in row])


def truncated_gaussian(means, std, space: DisturbanceSpace, n: int, rng: np.random.Generator,
                       max_rounds: int = 10_000) -> np.ndarray:
    """``n`` independent draws of N(means, std^2) per entry, rejected outside the support."""
    mu = np.broadcast_to(np.asarray(means, dtype=float).reshape(-1), (space.dim,))
    sd = np.broadcast_to(np.asarray(std, dtype=float).reshape(-1), (space.dim,))
    lo, hi = space.flat_lower(), space.flat_upper()
    out = rng.normal(mu, sd, size=(n, space.dim))
    bad = (out < lo) | (out > hi)
    rounds = 0
    while bad.any():
        rounds += 1
        if rounds > max_rounds:
            raise ValidationError("rejection sampling failed; the support has negligible mass")
        r, c = np.nonzero(bad)
        out[r, c] = rng.normal(mu[c], sd[c])
        bad = (out < lo) | (out > hi)
    return out


# -- radius ---------------------------------------------------------------------


def _cost_matrix(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    return np.abs(X[:, None, :] - Y[None, :, :]).sum(axis=2)


def _transport_lp(C: np.ndarray) -> float:
    from .milp import EQ, MilpModel, Status, solve_lp

    N, M = C.shape
    model = MilpModel("transport")
    ids = np.array([[model.add_var(f"p_{i}_{j}") for j in range(M)] for i in range(N)])
    for i in range(N):
        model.add_row({int(ids[i, j]): 1.0 for j in range(M)}, EQ, 1.0 / N, f"src_{i}")
    for j in range(M):
        model.add_row({int(ids[i, j]): 1.0 for i in range(N)}, EQ, 1.0 / M, f"dst_{j}")
    model.set_objective({int(ids[i, j]): float(C[i, j]) for i in range(N) for j in range(M)})
    res = solve_lp(model)
    if res.status is not Status.OPTIMAL:
        raise ValidationError(f"transport LP ended with status {res.status}")
    return max(0.0, float(res.objective))


def _assignment(C: np.ndarray) -> float:
    from scipy.optimize import linear_sum_assignment

    N, M = C.shape
    n = math.lcm(N, M)
    big = np.repeat(np.repeat(C, n // N, axis=0), n // M, axis=1)
    r, c = linear_sum_assignment(big)
    return float(big[r, c].sum() / n)


def _transport_highs(C: np.ndarray) -> float:
    import scipy.sparse as sp
    from scipy.optimize import linprog

    N, M = C.shape
    rows = sp.vstack([sp.kron(sp.eye(N), np.ones((1, M))), sp.kron(np.ones((1, N)), sp.eye(M))])
    b = np.concatenate([np.full(N, 1.0 / N), np.full(M, 1.0 / M)])
    res = linprog(C.reshape(-1), A_eq=rows.tocsr(), b_eq=b, bounds=(0, None), method="highs")
    if res.status != 0:
        raise ValidationError(f"transport LP failed: {res.message}")
    return max(0.0, float(res.fun))


def estimate_radius(samples, reference, method: str = "auto") -> float:
    """Exact 1-Wasserstein distance between two empirical distributions (1-norm metric).

    ``method`` is ``"lp"`` (built-in simplex), ``"assignment"`` (optimal
    assignment between equal-mass replicas) or ``"highs"``; ``"auto"`` picks
    the built-in simplex when the transport problem is small.
    """
    X = np.atleast_2d(np.asarray(samples, dtype=float))
    Y = np.atleast_2d(np.asarray(reference, dtype=float))
    if X.size == 0 or Y.size == 0:
        raise ValidationError("both sample sets must be nonempty")
    if X.shape[1] != Y.shape[1]:
        raise DimensionMismatch(f"sample dimensions differ: {X.shape[1]} vs {Y.shape[1]}")
    C = _cost_matrix(X, Y)
    N, M = C.shape
    if method == "auto":
        if N * M <= LP_TRANSPORT_LIMIT:
            method = "lp"
        elif math.lcm(N, M) <= ASSIGNMENT_LIMIT:
            method = "assignment"
        else:
            method = "highs"
    if method == "lp":
        return _transport_lp(C)
    if method == "assignment":
        return _assignment(C)
    if method == "highs":
        return _transport_highs(C)
    raise ValidationError(f"unknown method {method!r}")


def sorted_pairing_distance(x, y) -> float:
    """Closed-form 1-D W1 between equal-size samples."""
    x = np.sort(np.asarray(x, dtype=float).reshape(-1))
    y = np.sort(np.asarray(y, dtype=float).reshape(-1))
    if x.size != y.size:
        raise DimensionMismatch("sorted pairing needs equal sample counts")
    return float(np.abs(x - y).mean())
