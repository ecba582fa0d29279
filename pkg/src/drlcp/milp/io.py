"""Free-format MPS and CPLEX-LP writers.

Rows and columns are written in id order and every number goes through
``repr``, so identical models always produce identical bytes.  The objective
constant is stored as minus the objective row's RHS, the usual convention.
"""

from __future__ import annotations

import math
from pathlib import Path

from .model import EQ, GE, INTEGER, LE, MilpModel

OBJ = "OBJ"
_SENSE = {LE: "L", GE: "G", EQ: "E"}


def _num(v: float) -> str:
    v = float(v)
    if v == 0.0:
        return "0"
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def _columns(model: MilpModel) -> list[list[tuple[str, float]]]:
    cols: list[list[tuple[str, float]]] = [[] for _ in range(model.n_vars)]
    for j, a in model.objective.items():
        cols[j].append((OBJ, a))
    for row in model.rows:
        for j in sorted(row.coeffs):
            cols[j].append((row.name, row.coeffs[j]))
    return cols


def mps_string(model: MilpModel) -> str:
    out = [f"NAME {model.name}", "ROWS", f" N  {OBJ}"]
    out += [f" {_SENSE[r.sense]}  {r.name}" for r in model.rows]
    out.append("COLUMNS")
    in_int = False
    marker = 0
    for var, entries in zip(model.variables, _columns(model)):
        is_int = var.kind == INTEGER
        if is_int != in_int:
            tag = "INTORG" if is_int else "INTEND"
            out.append(f"    MARKER{marker}  'MARKER'  '{tag}'")
            if not is_int:
                marker += 1
            in_int = is_int
        if not entries:
            entries = [(OBJ, 0.0)]
        for rname, a in entries:
            out.append(f"    {var.name}  {rname}  {_num(a)}")
    if in_int:
        out.append(f"    MARKER{marker}  'MARKER'  'INTEND'")
    out.append("RHS")
    if model.obj_constant != 0.0:
        out.append(f"    RHS  {OBJ}  {_num(-model.obj_constant)}")
    for r in model.rows:
        if r.rhs != 0.0:
            out.append(f"    RHS  {r.name}  {_num(r.rhs)}")
    out.append("BOUNDS")
    for v in model.variables:
        lo, hi = v.lower, v.upper
        if lo == hi:
            out.append(f" FX BND  {v.name}  {_num(lo)}")
            continue
        if math.isinf(lo) and math.isinf(hi):
            out.append(f" FR BND  {v.name}")
            continue
        if math.isinf(lo):
            out.append(f" MI BND  {v.name}")
        else:
            out.append(f" LO BND  {v.name}  {_num(lo)}")
        if not math.isinf(hi):
            out.append(f" UP BND  {v.name}  {_num(hi)}")
        elif v.kind == INTEGER:
            out.append(f" PL BND  {v.name}")
    out.append("ENDATA")
    return "\n".join(out) + "\n"


def write_mps(model: MilpModel, path) -> Path:
    path = Path(path)
    path.write_text(mps_string(model))
    return path


def _terms(coeffs: dict[int, float], model: MilpModel) -> str:
    parts = []
    for j in sorted(coeffs):
        a = coeffs[j]
        sign = "-" if a < 0 else "+"
        parts.append(f"{sign} {_num(abs(a))} {model.variables[j].name}")
    if not parts:
        return "0 " + model.variables[0].name if model.n_vars else "0"
    s = " ".join(parts)
    return s[2:] if s.startswith("+ ") else s


def lp_string(model: MilpModel) -> str:
    out = [f"\\ {model.name}", "Minimize"]
    obj = " obj: " + _terms(model.objective, model)
    if model.obj_constant != 0.0:
        c = model.obj_constant
        obj += f" {'-' if c < 0 else '+'} {_num(abs(c))}"
    out.append(obj)
    out.append("Subject To")
    for r in model.rows:
        op = {LE: "<=", GE: ">=", EQ: "="}[r.sense]
        out.append(f" {r.name}: {_terms(r.coeffs, model)} {op} {_num(r.rhs)}")
    out.append("Bounds")
    for v in model.variables:
        lo, hi = v.lower, v.upper
        if math.isinf(lo) and math.isinf(hi):
            out.append(f" {v.name} free")
        elif lo == hi:
            out.append(f" {v.name} = {_num(lo)}")
        else:
            lo_s = "-inf" if math.isinf(lo) else _num(lo)
            hi_s = "+inf" if math.isinf(hi) else _num(hi)
            out.append(f" {lo_s} <= {v.name} <= {hi_s}")
    ints = [v.name for v in model.variables if v.kind == INTEGER]
    if ints:
        out.append("General")
        out += [f" {n}" for n in ints]
    out.append("End")
    return "\n".join(out) + "\n"


def write_lp(model: MilpModel, path) -> Path:
    path = Path(path)
    path.write_text(lp_string(model))
    return path
