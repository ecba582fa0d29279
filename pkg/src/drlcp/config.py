"""YAML run configuration and the config-to-model pipeline.

Validation errors carry the offending key path and, when the value came from
a file, its line number.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from .ambiguity import (EventWiseSet, MixedMomentSet, Scenario, WassersteinSet, load_samples)
from .errors import ConfigError, DrlcpError
from .inventory import InventorySpec
from .inventory import build as build_inventory
from .lifting import DisturbanceSpace, LiftingSpec
from . import oracle
from .milp.backend import SolverOptions, solve
from .reformulation import Reformulation, build_event_wise, build_mixed_moment, build_wasserstein
from .system import DEFAULT_INT_BOUND, StageCost, SystemModel, compile_problem

KINDS = ("wasserstein", "mixed_moment", "event_wise")
_INVENTORY_KEYS = {f.name for f in fields(InventorySpec)}


def _lines(node, path=(), out=None):
    """Map key paths to 1-based line numbers from a composed YAML node tree."""
    out = {} if out is None else out
    out[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            _lines(v, path + (k.value,), out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _lines(v, path + (i,), out)
    return out


class Section:
    """Read-only view of a config mapping that reports errors with location."""

    def __init__(self, data, path=(), lines=None, source=None):
        self.data = data if data is not None else {}
        self.path, self.lines, self.source = path, lines or {}, source
        if not isinstance(self.data, dict):
            self.fail("expected a mapping")

    def where(self, key=None):
        path = self.path + ((key,) if key is not None else ())
        dotted = ".".join(str(p) for p in path) or "<root>"
        line = self.lines.get(path)
        while line is None and path:
            path = path[:-1]
            line = self.lines.get(path)
        return dotted, line

    def fail(self, msg, key=None):
        dotted, line = self.where(key)
        prefix = f"{self.source}: " if self.source else ""
        raise ConfigError(prefix + msg, path=dotted, line=line)

    def __contains__(self, key):
        return key in self.data

    def keys(self):
        return self.data.keys()

    def get(self, key, default=None, kind=None):
        if key not in self.data:
            return default
        val = self.data[key]
        if kind is not None and val is not None:
            try:
                val = kind(val)
            except (TypeError, ValueError):
                self.fail(f"expected {kind.__name__}, got {val!r}", key)
        return val

    def require(self, key, kind=None):
        if key not in self.data:
            self.fail("missing required key", key)
        return self.get(key, kind=kind)

    def sub(self, key, required=False):
        if key not in self.data:
            if required:
                self.fail("missing required section", key)
            return Section({}, self.path + (key,), self.lines, self.source)
        return Section(self.data[key], self.path + (key,), self.lines, self.source)

    def items(self, key):
        seq = self.data.get(key, [])
        if not isinstance(seq, list):
            self.fail("expected a list", key)
        return [Section(v, self.path + (key, i), self.lines, self.source) for i, v in enumerate(seq)]

    def array(self, key, default=None, required=False):
        if key not in self.data:
            if required:
                self.fail("missing required key", key)
            return default
        try:
            arr = np.asarray(self.data[key], dtype=float)
        except (TypeError, ValueError):
            self.fail("expected numeric literals", key)
        if not np.all(np.isfinite(arr)):
            self.fail("non-finite value", key)
        return arr

    def check_keys(self, allowed):
        for k in self.data:
            if k not in allowed:
                self.fail(f"unknown key (allowed: {', '.join(sorted(allowed))})", k)


@dataclass
class RunConfig:
    root: Section
    base_dir: Path
    solver: SolverOptions = field(default_factory=SolverOptions)
    output_dir: Path = Path(".")

    @property
    def is_preset(self) -> bool:
        return "preset" in self.root.sub("model")


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"{path}: {e.strerror}") from None
    return parse_config(text, source=str(path), base_dir=path.parent)


def parse_config(text: str, source: str | None = None, base_dir=None) -> RunConfig:
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        line = mark.line + 1 if mark else None
        raise ConfigError(f"{source or '<config>'}:{line}: {e}", line=line) from None
    lines = _lines(node) if node is not None else {}
    root = Section(data, (), lines, source)
    root.check_keys({"model", "lifting", "support", "ambiguity", "solver", "output"})
    model = root.sub("model", required=True)
    if "preset" in model and len(set(model.keys()) - {"preset", "inventory"}) > 0:
        model.fail("use either a preset or an explicit model, not both")
    sv = root.sub("solver")
    sv.check_keys({"backend", "gap", "abs_gap", "node_limit", "time_limit", "command"})
    try:
        solver = SolverOptions(backend=sv.get("backend", "builtin", str), gap=sv.get("gap", 1e-3, float),
                               abs_gap=sv.get("abs_gap", 1e-9, float),
                               node_limit=sv.get("node_limit", None, int),
                               time_limit=sv.get("time_limit", None, float),
                               command=sv.get("command", None, str))
    except DrlcpError as e:
        sv.fail(str(e))
    out = root.sub("output")
    out.check_keys({"dir"})
    base = Path(base_dir) if base_dir is not None else Path(".")
    odir = Path(out.get("dir", ".", str))
    return RunConfig(root, base, solver, odir if odir.is_absolute() else base / odir)


# -- pipeline -----------------------------------------------------------------------


@dataclass
class Problem:
    kind: str
    compiled: list
    ambiguity: object
    ref: Reformulation


def _inventory_spec(model: Section) -> InventorySpec:
    if model.get("preset") != "inventory":
        model.fail(f"unknown preset {model.get('preset')!r} (only 'inventory')", "preset")
    inv = model.sub("inventory")
    inv.check_keys(_INVENTORY_KEYS)
    kw = dict(inv.data)
    for k in ("c", "q", "means"):
        if k in kw and kw[k] is not None:
            kw[k] = tuple(float(v) for v in kw[k])
    try:
        return InventorySpec(**kw)
    except (DrlcpError, TypeError) as e:
        inv.fail(str(e))


def _space(sec: Section, horizon: int, n_xi: int) -> DisturbanceSpace:
    lo = sec.array("lower", required=True)
    hi = sec.array("upper", required=True)
    try:
        return DisturbanceSpace(np.broadcast_to(lo, (horizon, n_xi)).copy(),
                                np.broadcast_to(hi, (horizon, n_xi)).copy())
    except (ValueError, DrlcpError) as e:
        sec.fail(str(e))


def _lifting(sec: Section, space: DisturbanceSpace) -> LiftingSpec:
    sec.check_keys({"segments", "breakpoints"})
    try:
        if "breakpoints" in sec:
            return LiftingSpec(space, sec.data["breakpoints"])
        return LiftingSpec.equal_division(space, sec.get("segments", 1))
    except (ValueError, DrlcpError) as e:
        sec.fail(str(e))


def _system(sec: Section) -> SystemModel:
    allowed = {"horizon", "n_x", "n_u", "n_g", "n_xi", "A", "B", "C", "D", "x0", "con_A", "con_B",
               "con_C", "con_D", "q", "costs", "discount", "u_mask", "g_mask", "int_bound"}
    sec.check_keys(allowed)
    T = sec.require("horizon", int)
    dims = {k: sec.get(k, 0 if k in ("n_u", "n_g") else 1, int) for k in ("n_x", "n_u", "n_g", "n_xi")}
    costs = []
    for c in sec.items("costs"):
        c.check_keys({"a", "b", "c"})
        I = np.atleast_2d(c.array("a", np.zeros((1, dims["n_x"])))).shape[0]
        costs.append(StageCost(c.array("a", np.zeros((I, dims["n_x"]))),
                               c.array("b", np.zeros((I, dims["n_u"]))),
                               c.array("c", np.zeros((I, dims["n_g"])))))
    kw = {k: sec.array(k) for k in ("A", "B", "C", "D", "x0", "con_A", "con_B", "con_C", "con_D",
                                    "q", "discount")}
    for k in ("A", "B", "C", "D", "con_A", "con_B", "con_C", "con_D"):
        if kw[k] is not None and kw[k].size == 0:
            kw[k] = None
    masks = {k: (np.asarray(sec.data[k], dtype=bool) if k in sec else None) for k in ("u_mask", "g_mask")}
    try:
        return SystemModel(T, costs=costs or None, **dims, **kw, **masks)
    except DrlcpError as e:
        sec.fail(str(e))


def _samples(sec: Section, space: DisturbanceSpace, base: Path):
    val = sec.get("samples")
    if val is None:
        sec.fail("missing required key", "samples")
    try:
        if isinstance(val, str):
            p = Path(val)
            return load_samples(p if p.is_absolute() else base / p, space)
        return WassersteinSet(0.0, val, space).samples
    except DrlcpError as e:
        sec.fail(str(e), "samples")


def build_problem(cfg: RunConfig) -> Problem:
    root = cfg.root
    model_sec = root.sub("model")
    amb = root.sub("ambiguity")
    if cfg.is_preset:
        spec = _inventory_spec(model_sec)
        system, lifting, ball = build_inventory(spec)
        kind = amb.get("kind", "wasserstein")
        if kind != "wasserstein":
            amb.fail("the inventory preset supports only the wasserstein kind", "kind")
        compiled = compile_problem(system, lifting, int_bound=spec.int_bound)
        return Problem(kind, [compiled], ball, build_wasserstein(compiled, ball))

    system = _system(model_sec)
    kind = amb.require("kind", str)
    if kind not in KINDS:
        amb.fail(f"unknown kind {kind!r} (one of {', '.join(KINDS)})", "kind")
    int_bound = model_sec.get("int_bound", DEFAULT_INT_BOUND, float)
    if kind == "event_wise":
        amb.check_keys({"kind", "scenarios"})
        scen, compiled = [], []
        for sc in amb.items("scenarios"):
            sc.check_keys({"prob", "theta", "samples", "support", "lifting"})
            space = _space(sc.sub("support", required=True), system.horizon, system.n_xi)
            lifting = _lifting(sc.sub("lifting"), space)
            X = _samples(sc, space, cfg.base_dir)
            try:
                s = Scenario(sc.require("prob", float),
                             WassersteinSet(sc.require("theta", float), X, space), lifting)
            except DrlcpError as e:
                sc.fail(str(e))
            scen.append(s)
            compiled.append(compile_problem(system, lifting, int_bound=int_bound))
        if not scen:
            amb.fail("at least one scenario is required", "scenarios")
        try:
            eset = EventWiseSet(tuple(scen))
        except DrlcpError as e:
            amb.fail(str(e), "scenarios")
        return Problem(kind, compiled, eset, build_event_wise(compiled, eset))

    space = _space(root.sub("support", required=True), system.horizon, system.n_xi)
    lifting = _lifting(root.sub("lifting"), space)
    compiled = compile_problem(system, lifting, int_bound=int_bound)
    X = _samples(amb, space, cfg.base_dir)
    try:
        ball = WassersteinSet(amb.require("theta", float), X, space)
    except DrlcpError as e:
        amb.fail(str(e), "theta")
    if kind == "wasserstein":
        amb.check_keys({"kind", "theta", "samples"})
        return Problem(kind, [compiled], ball, build_wasserstein(compiled, ball))
    amb.check_keys({"kind", "theta", "samples", "moment_lower", "moment_upper"})
    try:
        mset = MixedMomentSet(ball, np.broadcast_to(amb.array("moment_lower", required=True),
                                                    (space.dim,)),
                              np.broadcast_to(amb.array("moment_upper", required=True), (space.dim,)))
    except DrlcpError as e:
        amb.fail(str(e))
    return Problem(kind, [compiled], mset, build_mixed_moment(compiled, mset))


@dataclass
class Certificate:
    milp_value: float
    oracle_value: float
    upper_bound: bool  # oracle value is an upper bound (mixed-moment search)
    robust_residual: float
    violations: int

    @property
    def difference(self) -> float:
        return self.milp_value - self.oracle_value


def policy_names(problem: Problem) -> list:
    names = [v.name for v in problem.ref.model.variables]
    return [[names[int(j)] for j in ids] for ids in problem.ref.policy_ids]


def certify_policy(problem: Problem, policies: list, solver: SolverOptions | None = None,
                   n_random: int = 10_000, seed: int = 0) -> Certificate:
    """MILP value over the auxiliaries with the policy pinned, next to the oracle value."""
    ref = problem.ref
    m = ref.model.copy()
    for ids, theta in zip(ref.policy_ids, policies):
        for v, val in zip(ids, np.asarray(theta, dtype=float)):
            m.set_bounds(int(v), float(val), float(val))
    res = solve(m, solver)
    milp_value = res.objective if res.ok else math.nan
    numerics = [c.numeric(th) for c, th in zip(problem.compiled, policies)]
    upper = False
    if problem.kind == "wasserstein":
        value = oracle.worst_case_expectation(numerics[0].d, numerics[0].r, problem.ambiguity,
                                              problem.compiled[0].spec).value
    elif problem.kind == "mixed_moment":
        value = oracle.check_mixed_moment(numerics[0].d, numerics[0].r, problem.ambiguity,
                                          problem.compiled[0].spec).value
        upper = True
    else:
        value = oracle.event_wise_worst_case([(n.d, n.r) for n in numerics], problem.ambiguity)
    resid, viol = 0.0, 0
    for c, n in zip(problem.compiled, numerics):
        feas = oracle.check_robust_feasibility(n.E, n.m, c.spec, n_random=n_random, seed=seed)
        resid, viol = max(resid, feas.max_residual), viol + feas.violations
    return Certificate(milp_value, value, upper, resid, viol)
