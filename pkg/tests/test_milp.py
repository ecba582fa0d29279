import subprocess
import sys

import numpy as np
import pytest

from drlcp.errors import ParseError, ValidationError
from drlcp.milp import (EQ, GE, INF, INTEGER, LE, MilpModel, MilpOptions, Status, solve_lp,
                        solve_milp)
from drlcp.milp.backend import SolverOptions, solve
from drlcp.milp.external import read_solution, solve_command, solve_highs
from drlcp.milp.io import lp_string, mps_string, write_mps

from _instances import enumerate_milp, random_milp


def knapsack():
    m = MilpModel("knap")
    a = m.add_var("a", 0, 1, INTEGER)
    b = m.add_var("b", 0, 1, INTEGER)
    m.add_row({a: 1, b: 1}, LE, 1, "cap")
    m.set_objective({a: -3, b: -2})
    return m


def test_lp_examples():
    m = MilpModel()
    x = m.add_var("x", 0, 1)
    m.set_objective({x: -1})
    res = solve_lp(m)
    assert res.status is Status.OPTIMAL and res.objective == pytest.approx(-1) and res.x[0] == pytest.approx(1)

    m = MilpModel()
    x, y = m.add_var("x"), m.add_var("y")
    m.add_row({x: 1, y: 1}, GE, 1)
    m.set_objective({x: 1, y: 1})
    assert solve_lp(m).objective == pytest.approx(1)


def test_transport_lp_example():
    # {0, 1} -> {0, 3}: moving half the mass a distance of 2 gives 1
    C = np.abs(np.array([0.0, 1.0])[:, None] - np.array([0.0, 3.0])[None, :])
    m = MilpModel()
    p = [[m.add_var(f"p{i}{j}") for j in range(2)] for i in range(2)]
    for i in range(2):
        m.add_row({p[i][0]: 1, p[i][1]: 1}, EQ, 0.5)
        m.add_row({p[0][i]: 1, p[1][i]: 1}, EQ, 0.5)
    m.set_objective({p[i][j]: C[i, j] for i in range(2) for j in range(2)})
    assert solve_lp(m).objective == pytest.approx(1.0)


def test_lp_status_detection():
    m = MilpModel()
    x = m.add_var("x", -INF, INF)
    m.set_objective({x: 1})
    assert solve_lp(m).status is Status.UNBOUNDED
    m = MilpModel()
    x = m.add_var("x", 0, 1)
    m.add_row({x: 1}, GE, 2)
    assert solve_lp(m).status is Status.INFEASIBLE
    assert solve_milp(m).status is Status.INFEASIBLE


def test_milp_examples():
    m = MilpModel()
    x = m.add_var("x", 0, 2.5, INTEGER)
    m.add_row({x: 1}, LE, 1.5)
    m.set_objective({x: -1})
    res = solve_milp(m)
    assert res.status is Status.OPTIMAL and res.x[0] == 1.0
    res = solve_milp(knapsack())
    assert res.objective == pytest.approx(-3) == enumerate_milp(knapsack())


def test_milp_requires_finite_integer_bounds():
    m = MilpModel()
    m.add_var("x", 0, INF, INTEGER)
    with pytest.raises(ValidationError):
        solve_milp(m)


def test_bnb_matches_enumeration():
    rng = np.random.default_rng(20)
    for _ in range(60):
        m = random_milp(rng)
        res = solve_milp(m, gap=0.0, abs_gap=1e-10)
        best = enumerate_milp(m)
        if best == np.inf:
            assert res.status is Status.INFEASIBLE
        else:
            assert res.objective == pytest.approx(best, abs=1e-7)


def test_bound_below_incumbent_and_determinism():
    rng = np.random.default_rng(4)
    m = random_milp(rng, 8, 6)
    while enumerate_milp(m) == np.inf:
        m = random_milp(rng, 8, 6)
    opts = MilpOptions(gap=0.0, record_events=True, dive_every=0)
    a, b = solve_milp(m, opts), solve_milp(m, opts)
    for ev in a.events:
        assert ev["bound"] <= ev["incumbent"] + 1e-9
    assert a.events == b.events
    np.testing.assert_array_equal(a.x, b.x)
    assert a.nodes == b.nodes


def test_fixed_integers_match_lp():
    rng = np.random.default_rng(8)
    m = random_milp(rng)
    while enumerate_milp(m) == np.inf:
        m = random_milp(rng)
    res = solve_milp(m, gap=0.0)
    fixed = m.copy()
    for j in m.integer_ids():
        fixed.set_bounds(int(j), res.x[j], res.x[j])
    assert solve_lp(fixed).objective == pytest.approx(res.objective, abs=1e-9)


def test_node_limit_status():
    rng = np.random.default_rng(1)
    m = MilpModel()
    ids = [m.add_var(f"z{j}", 0, 5, INTEGER) for j in range(8)]
    w = rng.uniform(1, 3, 8).round(3)
    m.add_row(dict(zip(ids, w)), LE, 7.31)
    m.set_objective(dict(zip(ids, -rng.uniform(1, 3, 8).round(3))))
    res = solve_milp(m, gap=0.0, node_limit=2, dive_every=0)
    assert res.status in (Status.NODE_LIMIT, Status.OPTIMAL)
    assert res.nodes <= 2


def test_mps_markers_and_determinism(tmp_path):
    m = knapsack()
    s = mps_string(m)
    assert s.count("'INTORG'") == 1 and s.count("'INTEND'") == 1
    assert s.splitlines()[0] == "NAME knap"
    for section in ("ROWS", "COLUMNS", "RHS", "BOUNDS", "ENDATA"):
        assert section in s.splitlines()
    p1, p2 = write_mps(m, tmp_path / "a.mps"), write_mps(m.copy(), tmp_path / "b.mps")
    assert p1.read_bytes() == p2.read_bytes()


def test_single_integer_marker_pair():
    m = MilpModel()
    x = m.add_var("x", 0, 4)
    z = m.add_var("z", 0, 3, INTEGER)
    y = m.add_var("y", 0, 4)
    m.add_row({x: 1, z: 1, y: 1}, LE, 5)
    s = mps_string(m)
    assert s.count("'INTORG'") == 1 and s.count("'INTEND'") == 1
    lines = s.splitlines()
    start = lines.index("    MARKER0  'MARKER'  'INTORG'")
    assert lines[start + 1].split()[0] == "z" and lines[start + 2] == "    MARKER0  'MARKER'  'INTEND'"


def test_lp_string_sections():
    s = lp_string(knapsack())
    lines = s.splitlines()
    assert lines[1] == "Minimize" and "Subject To" in lines and "General" in lines and lines[-1] == "End"
    assert " cap: 1 a + 1 b <= 1" in lines


def test_external_routes_solve_knapsack(tmp_path):
    m = knapsack()
    assert solve_highs(m, gap=0.0).objective == pytest.approx(-3)
    res = solve(m, SolverOptions(backend="command"))
    assert res.status is Status.OPTIMAL and res.objective == pytest.approx(-3)
    np.testing.assert_allclose(res.x, [1, 0])


def test_exported_mps_solved_by_highs_runner(tmp_path):
    path = write_mps(knapsack(), tmp_path / "k.mps")
    sol = tmp_path / "k.sol"
    subprocess.run([sys.executable, "-m", "drlcp.milp.highs_runner", str(path), str(sol)], check=True)
    res = read_solution(sol, knapsack())
    assert res.objective == pytest.approx(-3)


def test_command_adapter_contract(tmp_path):
    # a stand-in solver that only writes `name value` lines
    script = tmp_path / "fake.py"
    script.write_text("import sys\nopen(sys.argv[2], 'w').write('a 1\\nb 0\\n')\n")
    res = solve_command(knapsack(), f"{sys.executable} {script} {{model}} {{solution}}")
    assert res.objective == pytest.approx(-3)


def test_read_solution_errors(tmp_path):
    m = knapsack()
    bad = tmp_path / "bad.sol"
    bad.write_text("a one\n")
    with pytest.raises(ParseError):
        read_solution(bad, m)
    bad.write_text("c 1\n")
    with pytest.raises(ParseError):
        read_solution(bad, m)
    with pytest.raises(ParseError):
        read_solution(tmp_path / "missing.sol", m)
    ok = tmp_path / "inf.sol"
    ok.write_text("status Infeasible\n")
    assert read_solution(ok, m).status is Status.INFEASIBLE


def test_model_validation():
    m = MilpModel()
    m.add_var("x")
    with pytest.raises(ValidationError):
        m.add_var("x")
    with pytest.raises(ValidationError):
        m.add_var("y", 2, 1)
    with pytest.raises(ValidationError):
        m.add_row({0: float("nan")}, LE, 1)


def _block_model(rng, n_blocks):
    m = MilpModel("blocks")
    for b in range(n_blocks):
        sub = random_milp(rng, 4, 5)
        while enumerate_milp(sub) == np.inf:
            sub = random_milp(rng, 4, 5)
        off = m.n_vars
        for v in sub.variables:
            m.add_var(f"b{b}_{v.name}", v.lower, v.upper, v.kind)
        for r in sub.rows:
            m.add_row({off + j: a for j, a in r.coeffs.items()}, r.sense, r.rhs, f"b{b}_{r.name}")
        m.add_objective({off + j: a for j, a in sub.objective.items()})
    return m


def test_independent_blocks_match_joint_solve():
    rng = np.random.default_rng(12)
    for _ in range(10):
        m = _block_model(rng, 3)
        split = solve_milp(m, gap=0.0, abs_gap=1e-10)
        joint = solve_milp(m, MilpOptions(gap=0.0, abs_gap=1e-10, decompose=False))
        assert split.status is Status.OPTIMAL
        assert split.objective == pytest.approx(joint.objective, abs=1e-7)
        assert m.max_violation(split.x) <= 1e-7
        assert m.evaluate(split.x) == pytest.approx(split.objective, abs=1e-9)


def test_block_result_ignores_unrelated_blocks():
    rng = np.random.default_rng(13)
    m = _block_model(rng, 1)
    alone = solve_milp(m, gap=0.0)
    for seed in range(3):
        other = _block_model(np.random.default_rng(100 + seed), 1)
        both = m.copy()
        off = both.n_vars
        for v in other.variables:
            both.add_var("o_" + v.name, v.lower, v.upper, v.kind)
        for r in other.rows:
            both.add_row({off + j: a for j, a in r.coeffs.items()}, r.sense, r.rhs, "o_" + r.name)
        res = solve_milp(both, gap=0.0)
        assert res.objective == alone.objective
        np.testing.assert_array_equal(res.x[:off], alone.x)


def test_loose_columns_and_empty_rows():
    m = MilpModel()
    x = m.add_var("x", 0, 4)
    y = m.add_var("y", -2, 3, INTEGER)
    m.add_row({x: 1}, LE, 2.5)
    m.set_objective({x: -1, y: 1})
    res = solve_milp(m)
    assert res.objective == pytest.approx(-4.5) and res.x[1] == -2
    m.add_row({}, GE, 1.0, "never")
    assert solve_milp(m).status is Status.INFEASIBLE
    m = MilpModel()
    m.add_var("free", -INF, INF)
    m.add_var("x", 0, 1)
    m.add_row({1: 1}, LE, 1)
    m.set_objective({0: 1})
    assert solve_milp(m).status is Status.UNBOUNDED


def test_block_gaps_combine_within_target():
    # one block near +100, one near -100: per-block relative gaps would overshoot
    m = MilpModel()
    a = [m.add_var(f"a{j}", 0, 3, INTEGER) for j in range(3)]
    b = [m.add_var(f"b{j}", 0, 3, INTEGER) for j in range(3)]
    m.add_row({a[0]: 1.3, a[1]: 2.1, a[2]: 0.7}, GE, 40.1 / 13)
    m.add_row({b[0]: 1.7, b[1]: 0.9, b[2]: 2.3}, LE, 6.05)
    m.set_objective({**{v: 31.0 + j for j, v in enumerate(a)}, **{v: -29.0 - j for j, v in enumerate(b)}})
    res = solve_milp(m, gap=1e-3)
    assert res.status is Status.OPTIMAL and res.objective - res.bound <= 1e-3 * abs(res.objective) + 1e-9
    assert res.objective == pytest.approx(enumerate_milp(m), abs=1e-3 * abs(res.objective) + 1e-9)
