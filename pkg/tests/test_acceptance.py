"""Acceptance criteria 1-11; each test records one PASS/FAIL line."""

import subprocess
import sys
import time

import numpy as np
import pytest

from drlcp.ambiguity import EventWiseSet, MixedMomentSet, Scenario, WassersteinSet, estimate_radius
from drlcp.inventory import InventorySpec, run_closed_loop, run_open_loop
from drlcp.lifting import segment_endpoints
from drlcp.milp import INF, MilpModel, Status, solve_lp, solve_milp
from drlcp.milp.backend import SolverOptions
from drlcp.milp.external import read_solution
from drlcp.milp.io import write_mps
from drlcp.oracle import inner_max, worst_case_expectation
from drlcp.reformulation import build_event_wise, build_mixed_moment, build_wasserstein, lemma1_rows
from drlcp.system import compile_problem

from _independent import acp_model, saa_model
from _instances import (enumerate_milp, random_ball, random_lifting, random_milp, random_model, random_samples,
                        random_space)
from _report import record

HIGHS = SolverOptions("highs", gap=0.0)


def _exact(model):
    return solve_milp(model, gap=0.0, abs_gap=1e-10)


def _shape(rng, max_T=2, max_n=2, k4=True):
    T = int(rng.integers(1, max_T + 1))
    n = int(rng.integers(1, max_n + 1))
    K = int(rng.choice([1, 2, 4] if (T == 2 and k4) else [1, 2]))
    return T, n, K


def test_c01_fixed_policy_reformulation_equals_oracle():
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(50):
        T, n, K = _shape(rng)
        space = random_space(rng, T, n)
        spec = random_lifting(rng, space, max_p=3)
        cp = compile_problem(random_model(rng, T, n, K, constrained=False), spec)
        ball = random_ball(rng, space, n_max=5)
        theta = cp.layout.random(rng)
        res = solve_lp(build_wasserstein(cp, ball).fix_policy(theta))
        num = cp.numeric(theta)
        ref = worst_case_expectation(num.d, num.r, ball, spec).value
        assert res.status is Status.OPTIMAL
        worst = max(worst, abs(res.objective - ref))
    dt = time.perf_counter() - t0
    ok = record(1, worst <= 1e-6 and dt < 60, f"max |milp - oracle| = {worst:.2e} over 50 instances, {dt:.1f}s")
    assert ok


def test_c02_lemma1_rows_match_inner_max():
    rng = np.random.default_rng(202)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(1, 3))
        space = random_space(rng, 1, n)
        spec = random_lifting(rng, space, max_p=3)
        K = int(rng.integers(1, 4))
        d, r = rng.normal(size=(K, spec.index.size)), rng.normal(size=K)
        anchor = random_samples(rng, space, 1)[0]
        lam = float(rng.uniform(0, 3))
        geo = segment_endpoints(spec)
        m = MilpModel()
        lam_id = m.add_var("lam", lam, lam)
        eta = m.add_var("eta", -INF, INF)
        lemma1_rows(m, list(zip(d, r)), anchor, lam_id, eta, geo)
        m.set_objective({eta: 1.0})
        lp = solve_lp(m).objective
        worst = max(worst, abs(lp - inner_max(d, r, anchor, lam, geo)[0]))
    dt = time.perf_counter() - t0
    ok = record(2, worst <= 1e-6 and dt < 10, f"max |LP - inner max| = {worst:.2e} over 50 functions, {dt:.1f}s")
    assert ok


def test_c03_affine_lifting_equals_independent_acp():
    rng = np.random.default_rng(303)
    worst = 0.0
    for _ in range(10):
        T, n, K = _shape(rng)
        space = random_space(rng, T, n)
        spec = random_lifting(rng, space, p=np.ones((T, n), dtype=int))
        model = random_model(rng, T, n, K)
        ball = random_ball(rng, space)
        a = _exact(build_wasserstein(compile_problem(model, spec), ball).model)
        b = _exact(acp_model(model, spec, ball))
        assert a.status is Status.OPTIMAL and b.status is Status.OPTIMAL
        worst = max(worst, abs(a.objective - b.objective))
    ok = record(3, worst <= 1e-8, f"max |lifted(p=1) - ACP| = {worst:.2e} over 10 instances")
    assert ok


@pytest.fixture(scope="module")
def inventory_runs():
    runs = {}
    for seed in range(1, 6):
        for p in (1, 2, 4):
            spec = InventorySpec(horizon=2, n_samples=10, seed=seed, segments=p)
            runs[seed, p] = run_open_loop(spec, HIGHS, n_random=100_000)
    return runs


def test_c04_refinement_monotone(inventory_runs):
    ok, parts = True, []
    for seed in range(1, 6):
        r1, r2, r4 = (inventory_runs[seed, p] for p in (1, 2, 4))
        slack = 2 * max(r.gap * abs(r.objective) for r in (r1, r2, r4)) + 1e-7
        good = all(r.status is Status.OPTIMAL for r in (r1, r2, r4)) and \
            r4.objective <= r2.objective + slack and r2.objective <= r1.objective + slack
        ok &= good
        parts.append(f"s{seed}: {r1.objective:.2f}/{r2.objective:.2f}/{r4.objective:.2f}")
    record(4, ok, "objective p=1/2/4 " + "; ".join(parts))
    assert ok


def test_c05_zero_radius_is_sample_average():
    rng = np.random.default_rng(505)
    worst = 0.0
    for _ in range(10):
        T, n, K = _shape(rng, k4=False)
        space = random_space(rng, T, n)
        spec = random_lifting(rng, space, max_p=2)
        cp = compile_problem(random_model(rng, T, n, K), spec)
        samples = random_samples(rng, space, int(rng.integers(1, 6)))
        a = _exact(build_wasserstein(cp, WassersteinSet(0.0, samples, space)).model)
        b = _exact(saa_model(cp, samples)[0])
        worst = max(worst, abs(a.objective - b.objective))
    ok = record(5, worst <= 1e-7, f"max |theta=0 - SAA| = {worst:.2e} over 10 instances")
    assert ok


def test_c06_mixed_moment_subset():
    rng = np.random.default_rng(606)
    above, vac = -np.inf, 0.0
    for _ in range(10):
        T, n, K = _shape(rng, k4=False)
        space = random_space(rng, T, n)
        spec = random_lifting(rng, space, max_p=2)
        cp = compile_problem(random_model(rng, T, n, K), spec)
        ball = random_ball(rng, space)
        w = _exact(build_wasserstein(cp, ball).model).objective
        mu = ball.samples.mean(axis=0)
        lo = np.clip(mu - 0.05, space.flat_lower(), space.flat_upper())
        hi = np.clip(mu + 0.05, space.flat_lower(), space.flat_upper())
        mx = _exact(build_mixed_moment(cp, MixedMomentSet(ball, lo, hi)).model).objective
        mv = _exact(build_mixed_moment(cp, MixedMomentSet(ball, space.flat_lower(), space.flat_upper())).model)
        above = max(above, mx - w)
        vac = max(vac, abs(mv.objective - w))
    ok = record(6, above <= 1e-7 and vac <= 1e-6,
                f"max(mixed - wasserstein) = {above:.2e}, vacuous |diff| = {vac:.2e}")
    assert ok


def test_c07_event_wise_collapse():
    rng = np.random.default_rng(707)
    worst, invariant = 0.0, True
    for _ in range(10):
        T, n, K = _shape(rng, k4=False)
        space = random_space(rng, T, n)
        spec = random_lifting(rng, space, max_p=2)
        cp = compile_problem(random_model(rng, T, n, K), spec)
        ball = random_ball(rng, space)
        w = _exact(build_wasserstein(cp, ball).model).objective
        one = _exact(build_event_wise([cp], EventWiseSet((Scenario(1.0, ball, spec),))).model).objective
        worst = max(worst, abs(one - w))
        vals = []
        for _ in range(2):
            other = random_ball(rng, space)
            eset = EventWiseSet((Scenario(1.0, ball, spec), Scenario(0.0, other, spec)))
            vals.append(_exact(build_event_wise([cp, cp], eset).model).objective)
        invariant &= vals[0] == vals[1] == one
    ok = record(7, worst <= 1e-8 and invariant,
                f"max |L=1 - wasserstein| = {worst:.2e}, zero-weight invariance {'exact' if invariant else 'broken'}")
    assert ok


def test_c08_inventory_policies_robustly_feasible(inventory_runs):
    res = [r.robust_residual for r in inventory_runs.values()]
    bad = sum(r.sampled_violations for r in inventory_runs.values())
    agree = max(abs(r.oracle_value - r.objective) / max(1.0, abs(r.objective)) for r in inventory_runs.values())
    ok = record(8, max(res) <= 1e-7 and bad == 0,
                f"max residual {max(res):.2e}, {bad} violations over {len(res)} x 1e5 paths, "
                f"oracle rel. diff {agree:.1e}")
    assert ok


def test_c09_milp_solver(tmp_path):
    rng = np.random.default_rng(909)
    worst, checked = 0.0, 0
    statuses_ok = True
    for _ in range(100):
        m = random_milp(rng, feasible=True)
        res = solve_milp(m, gap=0.0, abs_gap=1e-10)
        best = enumerate_milp(m)
        if best == np.inf:
            statuses_ok &= res.status is Status.INFEASIBLE
        else:
            checked += 1
            worst = max(worst, abs(res.objective - best))
    a, b = write_mps(m, tmp_path / "a.mps"), write_mps(m, tmp_path / "b.mps")
    same = a.read_bytes() == b.read_bytes()
    sol = tmp_path / "a.sol"
    subprocess.run([sys.executable, "-m", "drlcp.milp.highs_runner", str(a), str(sol)], check=True)
    ext = read_solution(sol, m)
    ext_diff = abs(ext.objective - solve_milp(m, gap=0.0, abs_gap=1e-10).objective)
    ok = record(9, worst <= 1e-7 and statuses_ok and same and ext_diff <= 1e-7,
                f"max |B&B - enumeration| = {worst:.2e} ({checked} feasible of 100), "
                f"MPS identical {same}, external |diff| = {ext_diff:.2e}")
    assert ok


def test_c10_closed_loop():
    t0 = time.perf_counter()
    reps = {}
    for p in (1, 2):
        spec = InventorySpec(horizon=4, n_samples=20, segments=p, seed=0)
        reps[p] = run_closed_loop(spec, 100, seed=0, solver=HIGHS)
    dt = time.perf_counter() - t0
    done = all(not r.diagnostics and np.all(np.isfinite(r.totals)) for r in reps.values())
    m1, m2 = reps[1].mean, reps[2].mean
    sign = "p=2 <= p=1" if m2 <= m1 else "p=2 > p=1"
    ok = record(10, done and dt < 120,
                f"means p=1 {m1:.2f}, p=2 {m2:.2f} ({sign}, {100 * (m1 - m2) / m1:.1f}% lower); "
                f"training seed 0, demand seed 0, {dt:.0f}s with HiGHS")
    assert ok


def test_c11_radius_sorted_pairing():
    rng = np.random.default_rng(1111)
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(1, 60))
        x, y = rng.normal(size=(n, 1)), rng.normal(1.0, 2.0, size=(n, 1))
        closed = float(np.mean(np.abs(np.sort(x[:, 0]) - np.sort(y[:, 0]))))
        worst = max(worst, abs(estimate_radius(x, y) - closed))
    ok = record(11, worst <= 1e-8, f"max |W1 - sorted pairing| = {worst:.2e} over 20 pairs")
    assert ok
