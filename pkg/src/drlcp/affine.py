"""Affine expressions in the policy decision variables.

Compilation works on dense "lifted affine" arrays of shape
``(..., 1 + L, 1 + P)``: axis ``-2`` indexes ``[1, z_1 .. z_L]`` (the lifted
disturbance, with a leading constant) and axis ``-1`` indexes
``[1, theta_1 .. theta_P]`` (the policy variables).  Entry ``[l, v]`` is the
coefficient of ``z_l * theta_v``, so the value of an expression is
``[1, z] @ a @ [1, theta]``.  Only numeric matrices ever multiply these arrays,
so everything built from them stays linear in ``theta``.

:class:`AffineExpr` is the sparse scalar form handed to the MILP builder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np


@dataclass
class AffineExpr:
    """``const + sum(coeffs[v] * theta_v)`` with no zero coefficients stored."""

    coeffs: dict[int, float] = field(default_factory=dict)
    const: float = 0.0

    def __post_init__(self):
        clean = {}
        for v, a in self.coeffs.items():
            a = float(a)
            if not math.isfinite(a):
                raise ValueError("non-finite coefficient")
            if a != 0.0:
                clean[int(v)] = a
        self.coeffs = clean
        self.const = float(self.const)

    @classmethod
    def from_vector(cls, vec: np.ndarray, ids: np.ndarray | None = None) -> AffineExpr:
        """``vec = [const, coef_0, ...]``; ``ids`` maps coefficient slots to variable ids."""
        vec = np.asarray(vec, dtype=float)
        nz = np.flatnonzero(vec[1:])
        if ids is None:
            coeffs = {int(j): float(vec[1 + j]) for j in nz}
        else:
            coeffs = {int(ids[j]): float(vec[1 + j]) for j in nz}
        return cls(coeffs, float(vec[0]))

    def __add__(self, other):
        if isinstance(other, AffineExpr):
            out = dict(self.coeffs)
            for v, a in other.coeffs.items():
                out[v] = out.get(v, 0.0) + a
            return AffineExpr(out, self.const + other.const)
        return AffineExpr(dict(self.coeffs), self.const + float(other))

    __radd__ = __add__

    def __neg__(self):
        return AffineExpr({v: -a for v, a in self.coeffs.items()}, -self.const)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, k):
        k = float(k)
        return AffineExpr({v: k * a for v, a in self.coeffs.items()}, k * self.const)

    __rmul__ = __mul__

    def value(self, theta: Mapping[int, float] | np.ndarray) -> float:
        return self.const + sum(a * float(theta[v]) for v, a in self.coeffs.items())

    @property
    def is_constant(self) -> bool:
        return not self.coeffs


def constant(value, lifted_size: int, n_vars: int, shape=()) -> np.ndarray:
    """Lifted affine array holding a numeric constant."""
    a = np.zeros(tuple(shape) + (1 + lifted_size, 1 + n_vars))
    a[..., 0, 0] = value
    return a


def numeric(a: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Substitute policy values; result has shape ``(..., 1 + L)``."""
    return a @ np.concatenate([[1.0], np.asarray(theta, dtype=float)])


def evaluate(a: np.ndarray, theta: np.ndarray, z: np.ndarray) -> np.ndarray:
    return numeric(a, theta) @ np.concatenate([[1.0], np.asarray(z, dtype=float)])


def structurally_zero(a: np.ndarray) -> bool:
    return not np.any(a)
