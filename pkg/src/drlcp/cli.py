"""Command-line driver: build, solve, certify, bench, radius.

Exit codes: 0 success, 2 config or input error, 3 infeasible or unbounded,
4 node or time limit hit.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .ambiguity import estimate_radius, load_samples
from .config import build_problem, certify_policy, load_config, policy_names
from .errors import DrlcpError
from .inventory import (InventorySpec, run_closed_loop, run_open_loop, summary_table, write_csv)
from .milp.backend import BACKENDS, SolverOptions, solve
from .milp.io import write_lp, write_mps
from .milp.model import Status

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_LIMIT = 0, 2, 3, 4
OUTPUT_ENV = "DRLCP_OUTPUT_DIR"


def status_code(status: Status) -> int:
    if status in (Status.INFEASIBLE, Status.UNBOUNDED):
        return EXIT_INFEASIBLE
    if status in (Status.NODE_LIMIT, Status.TIME_LIMIT):
        return EXIT_LIMIT
    return EXIT_OK


def _output_dir(cfg, flag):
    if flag:
        out = Path(flag)
    elif os.environ.get(OUTPUT_ENV):
        out = Path(os.environ[OUTPUT_ENV])
    else:
        out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    return out


def _print_result(res) -> None:
    print(f"status     {res.status}")
    print(f"objective  {res.objective!r}")
    print(f"bound      {res.bound!r}")
    print(f"gap        {res.gap!r}")
    print(f"nodes      {res.nodes}")
    print(f"time_s     {res.time:.3f}")


def cmd_build(args) -> int:
    cfg = load_config(args.config)
    problem = build_problem(cfg)
    out = Path(args.out)
    (write_lp if out.suffix.lower() == ".lp" else write_mps)(problem.ref.model, out)
    s = problem.ref.counts()
    print(f"wrote {out}: {s['variables']} variables ({s['integer']} integer), {s['rows']} rows")
    return EXIT_OK


def cmd_solve(args) -> int:
    cfg = load_config(args.config)
    problem = build_problem(cfg)
    res = solve(problem.ref.model, cfg.solver)
    _print_result(res)
    if res.x is not None and np.all(np.isfinite(res.x)):
        names = policy_names(problem)
        doc = {"kind": problem.kind, "status": str(res.status), "objective": res.objective,
               "bound": res.bound, "gap": res.gap,
               "policies": [dict(zip(nm, map(float, problem.ref.policy(res.x, l))))
                            for l, nm in enumerate(names)]}
        path = Path(args.policy) if args.policy else _output_dir(cfg, args.out_dir) / "policy.json"
        path.write_text(json.dumps(doc, indent=1) + "\n")
        print(f"policy     {path}")
    return status_code(res.status)


def _read_policy(path, problem):
    try:
        doc = json.loads(Path(path).read_text())
        tables = doc["policies"]
    except (OSError, ValueError, KeyError, TypeError) as e:
        raise DrlcpError(f"{path}: unreadable policy file ({e})") from None
    names = policy_names(problem)
    if len(tables) != len(names):
        raise DrlcpError(f"{path}: {len(tables)} policy tables, model expects {len(names)}")
    out = []
    for table, nm in zip(tables, names):
        missing = [n for n in nm if n not in table]
        if missing:
            raise DrlcpError(f"{path}: missing policy entries, first {missing[0]!r}")
        out.append(np.array([float(table[n]) for n in nm]))
    return out


def cmd_certify(args) -> int:
    cfg = load_config(args.config)
    problem = build_problem(cfg)
    policies = _read_policy(args.policy, problem)
    cert = certify_policy(problem, policies, cfg.solver, n_random=args.samples, seed=args.seed)
    tag = " (upper bound)" if cert.upper_bound else ""
    print(f"milp       {cert.milp_value!r}")
    print(f"oracle     {cert.oracle_value!r}{tag}")
    print(f"difference {cert.difference!r}")
    print(f"residual   {cert.robust_residual!r}")
    print(f"violations {cert.violations}")
    if math.isnan(cert.milp_value):
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.preset != "inventory":
        raise DrlcpError(f"unknown preset {args.preset!r}")
    solver = SolverOptions(backend=args.backend, gap=args.gap, time_limit=args.time_limit)
    out = Path(args.out_dir or os.environ.get(OUTPUT_ENV) or ".")
    out.mkdir(parents=True, exist_ok=True)
    base = InventorySpec(horizon=args.horizon, n_samples=args.samples, seed=args.seed,
                         x0=args.x0, theta=args.theta)
    reports, code = [], EXIT_OK
    for p in args.segments:
        spec = replace(base, segments=p)
        rep = run_open_loop(spec, solver, certify_policy=not args.no_certify, n_random=args.certify_samples)
        reports.append(rep)
        code = max(code, status_code(rep.status))
        line = f"open-loop T={rep.horizon} p={p}: objective {rep.objective:.4f} ({rep.status}, {rep.time_s:.2f}s)"
        if not math.isnan(rep.oracle_value):
            line += f" oracle {rep.oracle_value:.4f} residual {rep.robust_residual:.1e}"
        print(line)
        if args.closed_loop:
            cl = run_closed_loop(spec, args.sims, args.seed, solver, threads=args.threads)
            sub = out / f"p{p}"
            sub.mkdir(exist_ok=True)
            write_csv(sub / "closed_loop.csv", cl.rows())
            print(f"closed-loop T={spec.horizon} p={p}: mean {cl.mean:.4f} std {cl.std:.4f} "
                  f"over {int(np.isfinite(cl.totals).sum())}/{args.sims} sims ({cl.time_s:.1f}s)")
            for d in cl.diagnostics:
                print(f"  sim {d['sim_id']}: {d['error']}")
    write_csv(out / "open_loop.csv", [r.row() for r in reports])
    table = summary_table(reports)
    (out / "summary.txt").write_text(table)
    print(table, end="")
    return code


def cmd_radius(args) -> int:
    X = load_samples(args.samples)
    Y = load_samples(args.reference)
    print(repr(estimate_radius(X, Y, method=args.method)))
    return EXIT_OK


def parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="drlcp", description="Lifted control policies under Wasserstein ambiguity.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="build the MILP and export it without solving")
    p.add_argument("config")
    p.add_argument("--out", required=True, help="output path (.mps or .lp)")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("solve", help="build, solve, print the result and write the policy")
    p.add_argument("config")
    p.add_argument("--policy", help="policy file to write (default: <output dir>/policy.json)")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("certify", help="cross-check a policy against the oracle")
    p.add_argument("config")
    p.add_argument("policy")
    p.add_argument("--samples", type=int, default=10_000, help="random paths for the feasibility check")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("bench", help="run the inventory benchmark")
    p.add_argument("--preset", default="inventory")
    p.add_argument("--horizon", type=int, default=2)
    p.add_argument("--segments", type=int, nargs="+", default=[1, 2])
    p.add_argument("--samples", type=int, default=20, help="training sample count N")
    p.add_argument("--theta", type=float, default=None, help="radius (default: estimated)")
    p.add_argument("--x0", type=float, default=0.0)
    p.add_argument("--sims", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--closed-loop", action="store_true")
    p.add_argument("--threads", type=int, default=1, help="worker processes for closed-loop simulations")
    p.add_argument("--backend", choices=BACKENDS, default="builtin")
    p.add_argument("--gap", type=float, default=1e-3)
    p.add_argument("--time-limit", type=float, default=None)
    p.add_argument("--no-certify", action="store_true")
    p.add_argument("--certify-samples", type=int, default=100_000)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("radius", help="1-norm Wasserstein distance between two sample files")
    p.add_argument("samples")
    p.add_argument("reference")
    p.add_argument("--method", choices=("auto", "lp", "assignment", "highs"), default="auto")
    p.set_defaults(func=cmd_radius)
    return ap


def main(argv=None) -> int:
    args = parser().parse_args(argv)
    try:
        return args.func(args)
    except DrlcpError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
