"""Solve an MPS file with highspy and write ``name value`` lines.

Usage: ``python -m drlcp.milp.highs_runner model.mps solution.txt [--gap G]``
"""

from __future__ import annotations

import argparse
import sys


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="highs_runner")
    ap.add_argument("model")
    ap.add_argument("solution")
    ap.add_argument("--gap", type=float, default=1e-3)
    ap.add_argument("--time-limit", type=float, default=None)
    args = ap.parse_args(argv)
    try:
        import highspy
    except ImportError:
        print("highspy is not installed (pip install highspy)", file=sys.stderr)
        return 1
    h = highspy.Highs()
    h.setOptionValue("output_flag", False)
    h.setOptionValue("mip_rel_gap", args.gap)
    if args.time_limit is not None:
        h.setOptionValue("time_limit", args.time_limit)
    h.readModel(args.model)
    h.run()
    st = h.getModelStatus()
    ok = {highspy.HighsModelStatus.kOptimal: "Optimal",
          highspy.HighsModelStatus.kInfeasible: "Infeasible",
          highspy.HighsModelStatus.kUnbounded: "Unbounded",
          highspy.HighsModelStatus.kUnboundedOrInfeasible: "Infeasible",
          highspy.HighsModelStatus.kTimeLimit: "TimeLimit"}
    status = ok.get(st, "Infeasible")
    lines = [f"status {status}"]
    info = h.getInfo()
    sol = h.getSolution()
    if status in ("Optimal", "TimeLimit") and sol.value_valid:
        lines.append(f"objective {info.objective_function_value!r}")
        bound = getattr(info, "mip_dual_bound", None)
        if bound is not None and abs(bound) != float("inf"):
            lines.append(f"bound {bound!r}")
        names = h.getLp().col_names_
        for name, val in zip(names, sol.col_value):
            lines.append(f"{name} {float(val)!r}")
    with open(args.solution, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
