import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drlcp.ambiguity import EventWiseSet, MixedMomentSet, Scenario, WassersteinSet
from drlcp.lifting import DisturbanceSpace, LiftingSpec, lift_many, segment_endpoints
from drlcp.oracle import (check_mixed_moment, check_robust_feasibility, event_wise_worst_case,
                          inner_max, worst_case_expectation)

from _instances import random_lifting, random_samples, random_space


@pytest.fixture
def unit():
    space = DisturbanceSpace.box(1, 0.0, 1.0)
    return LiftingSpec.affine(space)


def _f_identity():
    # f(z) = xi on the affine lifting
    return np.array([[1.0]]), np.array([0.0])


def test_inner_max_examples(unit):
    d, r = _f_identity()
    geo = segment_endpoints(unit)
    v, x = inner_max(d, r, [0.5], 0.5, geo)
    assert v == pytest.approx(0.75, abs=1e-12) and x[0] == pytest.approx(1.0)
    v, x = inner_max(d, r, [0.5], 100.0, geo)  # heavy penalty keeps the anchor
    assert v == pytest.approx(0.5, abs=1e-12) and x[0] == pytest.approx(0.5)
    v, x = inner_max(d, r, [0.5], 0.0, geo)  # no penalty gives the robust max
    assert v == pytest.approx(1.0, abs=1e-12)


def test_worst_case_examples(unit):
    d, r = _f_identity()
    space = unit.space
    samples = [[0.2], [0.6]]
    assert worst_case_expectation(d, r, WassersteinSet(0.0, samples, space), unit).value == pytest.approx(0.4, abs=1e-9)
    rep = worst_case_expectation(d, r, WassersteinSet(5.0, samples, space), unit)
    assert rep.value == pytest.approx(1.0, abs=1e-9) and rep.lam == pytest.approx(0.0, abs=1e-9)
    val = worst_case_expectation(d, r, WassersteinSet(0.25, [[0.5]], space), unit).value
    assert val == pytest.approx(0.75, abs=1e-9)


def test_worst_case_step_function():
    # f = Q (indicator of xi >= 1) on [0, 2]; from xi_hat = 0.5 moving 0.5 costs 0.5
    space = DisturbanceSpace.box(1, 0.0, 2.0)
    spec = LiftingSpec(space, [[[0.0, 1.0, 2.0]]])
    d, r = np.array([[0.0, 0.0, 1.0]]), np.array([0.0])
    for theta, want in [(0.0, 0.0), (0.25, 0.5), (0.5, 1.0), (2.0, 1.0)]:
        val = worst_case_expectation(d, r, WassersteinSet(theta, [[0.5]], space), spec).value
        assert val == pytest.approx(want, abs=1e-8)


def _grid(spec, n):
    axes = []
    for t in range(spec.horizon):
        for i in range(spec.n_xi):
            w = np.asarray(spec.w[t][i])
            axes.append(np.unique(np.concatenate([np.linspace(w[0], w[-1], n), w, w[1:] - 1e-11])))
    return axes


def _random_instance(rng, T, n_xi, K):
    space = random_space(rng, T, n_xi)
    spec = random_lifting(rng, space, max_p=3)
    d = rng.normal(size=(K, spec.index.size))
    r = rng.normal(size=K)
    return space, spec, d, r


@pytest.mark.parametrize("seed", range(6))
def test_inner_max_matches_dense_grid(seed):
    rng = np.random.default_rng(seed)
    n_xi = 1 + seed % 2
    space, spec, d, r = _random_instance(rng, 1, n_xi, int(rng.integers(1, 4)))
    anchor = random_samples(rng, space, 1)[0]
    lam = float(rng.uniform(0, 3))
    axes = _grid(spec, 10_000 if n_xi == 1 else 150)
    axes = [np.union1d(a, [anchor[k]]) for k, a in enumerate(axes)]
    X = np.array(list(itertools.product(*axes)))
    vals = (lift_many(spec, X) @ d.T + r).max(axis=1) - lam * np.abs(X - anchor).sum(axis=1)
    v, x = inner_max(d, r, anchor, lam, segment_endpoints(spec))
    assert v == pytest.approx(vals.max(), abs=1e-8)
    assert v >= vals.max() - 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_dual_objective_convex_and_minimized(seed):
    rng = np.random.default_rng(seed)
    space, spec, d, r = _random_instance(rng, int(rng.integers(1, 3)), 1, int(rng.integers(1, 3)))
    ball = WassersteinSet(float(rng.uniform(0, 1)), random_samples(rng, space, 3), space)
    geo = segment_endpoints(spec)

    def h(lam):
        return lam * ball.theta + np.mean([inner_max(d, r, xh, lam, geo)[0] for xh in ball.samples])

    a, b = rng.uniform(0, 5, 2)
    assert h(0.5 * (a + b)) <= 0.5 * (h(a) + h(b)) + 1e-9
    rep = worst_case_expectation(d, r, ball, geo)
    assert rep.value == pytest.approx(h(rep.lam), abs=1e-9)
    assert rep.value <= min(h(x) for x in np.linspace(0, 6, 121)) + 1e-9


def test_event_wise_identical_scenarios(unit):
    d, r = _f_identity()
    ball = WassersteinSet(0.1, [[0.3], [0.7]], unit.space)
    base = worst_case_expectation(d, r, ball, unit).value
    eset = EventWiseSet((Scenario(0.3, ball, unit), Scenario(0.7, ball, unit)))
    assert event_wise_worst_case([(d, r), (d, r)], eset) == pytest.approx(base, abs=1e-12)


def test_event_wise_weights(unit):
    d, r = _f_identity()
    b1 = WassersteinSet(0.0, [[0.2]], unit.space)
    b2 = WassersteinSet(0.0, [[0.8]], unit.space)
    eset = EventWiseSet((Scenario(0.25, b1, unit), Scenario(0.75, b2, unit)))
    assert event_wise_worst_case([(d, r), (d, r)], eset) == pytest.approx(0.25 * 0.2 + 0.75 * 0.8)


def test_mixed_moment_examples(unit):
    d, r = _f_identity()
    ball = WassersteinSet(1.0, [[0.5]], unit.space)
    loose = check_mixed_moment(d, r, MixedMomentSet(ball, [0.0], [1.0]), unit)
    assert loose.value == pytest.approx(1.0, abs=1e-6) and loose.method["upper_bound"]
    capped = check_mixed_moment(d, r, MixedMomentSet(ball, [0.0], [0.6]), unit)
    assert capped.value == pytest.approx(0.6, abs=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_mixed_moment_against_wasserstein(seed):
    rng = np.random.default_rng(100 + seed)
    space, spec, d, r = _random_instance(rng, 1, 2, 2)
    ball = WassersteinSet(float(rng.uniform(0, 0.5)), random_samples(rng, space, 3), space)
    w = worst_case_expectation(d, r, ball, spec).value
    vac = check_mixed_moment(d, r, MixedMomentSet(ball, space.flat_lower(), space.flat_upper()), spec)
    assert vac.value == pytest.approx(w, abs=1e-6)
    mu = ball.samples.mean(axis=0)
    tight = MixedMomentSet(ball, np.maximum(mu - 0.05, space.flat_lower()), np.minimum(mu + 0.05, space.flat_upper()))
    assert check_mixed_moment(d, r, tight, spec).value <= w + 1e-7


def test_robust_feasibility_examples(unit):
    rep = check_robust_feasibility([[0.0]], [1.0], unit, n_random=1000)
    assert rep.max_residual == pytest.approx(-1.0) and rep.violations == 0
    rep = check_robust_feasibility([[1.0]], [1.0], unit, n_random=1000)
    assert rep.max_residual == pytest.approx(0.0, abs=1e-12) and rep.violations == 0
    rep = check_robust_feasibility([[1.0]], [0.5], unit, n_random=1000)
    assert rep.max_residual == pytest.approx(0.5) and rep.xi[0] == pytest.approx(1.0)
    assert rep.violations > 0 and rep.sampled_max <= rep.max_residual + 1e-12


def test_robust_feasibility_step_row():
    space = DisturbanceSpace.box(1, 0.0, 2.0)
    spec = LiftingSpec(space, [[[0.0, 1.0, 2.0]]])
    rep = check_robust_feasibility([[0.0, 0.0, 1.0], [1.0, 1.0, -1.0]], [1.0, 1.0], spec, n_random=2000)
    # row 0 is the step itself; row 1 peaks just left of the breakpoint at 1 - 0 = 1
    assert rep.max_residual == pytest.approx(0.0, abs=1e-12)
    assert rep.violations == 0


@pytest.mark.parametrize("seed", range(4))
def test_robust_feasibility_exact_dominates_sampling(seed):
    rng = np.random.default_rng(seed)
    space, spec, E, _ = _random_instance(rng, 2, 1, 3)
    m = rng.normal(size=3)
    rep = check_robust_feasibility(E, m, spec, n_random=5000, seed=seed)
    assert rep.sampled_max <= rep.max_residual + 1e-12
