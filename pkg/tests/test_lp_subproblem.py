import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from uavfair.lp_subproblem import LpInstance, build_lp, lp_min_rate, solve_lp, to_lp_format
from uavfair.scenario import LinkMetrics, ScenarioConfig

HAND = LpInstance(np.array([[[2.0]], [[1.0]]]), 1.0)


def feasible(alpha, tol=1e-8):
    return (alpha.min() >= -tol and alpha.max() <= 1 + tol
            and np.all(alpha.sum(axis=0) <= 1 + tol) and np.all(alpha.sum(axis=1) <= 1 + tol))


def test_hand_example():
    sched, mu = solve_lp(HAND)
    assert mu == pytest.approx(2 / 3, abs=1e-8)
    np.testing.assert_allclose(sched.alpha.ravel(), [1 / 3, 2 / 3], atol=1e-8)


def test_counts():
    assert HAND.n_variables == 3
    assert HAND.row_counts == {"rate": 2, "uav_sum": 1, "gt_sum": 2}
    c, A, b, bounds = HAND.matrices()
    assert A.shape == (5, 3) and c.size == 3 and len(bounds) == 3


def test_build_from_metrics():
    cfg = ScenarioConfig(M=2, N=3, gt_positions=np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]))
    r = np.random.default_rng(0).uniform(0, 5, (3, 2, 4))
    inst = build_lp(LinkMetrics(h=np.ones_like(r), gamma=2**r - 1, slot_rate=r), cfg)
    assert inst.shape == (3, 2, 4) and inst.scale == pytest.approx(1 / 3)
    assert inst.n_variables == 3 * 2 * 4 + 1


def test_zero_rates():
    _, mu = solve_lp(LpInstance(np.zeros((3, 2, 4)), 0.25))
    assert mu == 0.0


def test_single_user():
    sched, mu = solve_lp(LpInstance(np.array([[[5.0]]]), 1.0))
    assert mu == pytest.approx(5.0) and sched.alpha[0, 0, 0] == pytest.approx(1.0)


def test_rejects_bad_coefficients():
    with pytest.raises(ValueError):
        LpInstance(np.array([[[-1.0]]]), 1.0)
    with pytest.raises(ValueError):
        LpInstance(np.array([[[np.nan]]]), 1.0)


rates = arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 3), st.integers(1, 4)),
               elements=st.floats(0, 10))


@settings(max_examples=40, deadline=None)
@given(rates)
def test_solution_feasible_and_consistent(r):
    sched, mu = solve_lp(LpInstance(r, 0.5))
    assert feasible(sched.alpha)
    assert mu == pytest.approx(lp_min_rate(LpInstance(r, 0.5), sched.alpha), abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(rates, st.floats(0.1, 10))
def test_scaling(r, s):
    base, mu = solve_lp(LpInstance(r, 1.0))
    _, mu_s = solve_lp(LpInstance(s * r, 1.0))
    assert mu_s == pytest.approx(s * mu, rel=1e-7, abs=1e-9)
    # the unscaled argmax is still optimal for the scaled instance
    assert lp_min_rate(LpInstance(s * r, 1.0), base.alpha) == pytest.approx(mu_s, rel=1e-7, abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(rates, st.data())
def test_monotone_in_each_coefficient(r, data):
    idx = tuple(data.draw(st.integers(0, n - 1)) for n in r.shape)
    bumped = r.copy()
    bumped[idx] += data.draw(st.floats(0.0, 5.0))
    assert solve_lp(LpInstance(bumped, 1.0))[1] >= solve_lp(LpInstance(r, 1.0))[1] - 1e-9


def test_deterministic():
    r = np.random.default_rng(4).uniform(0, 5, (4, 2, 6))
    a, _ = solve_lp(LpInstance(r, 0.2))
    b, _ = solve_lp(LpInstance(r, 0.2))
    np.testing.assert_array_equal(a.alpha, b.alpha)


def test_lp_text_format():
    text = to_lp_format(HAND)
    assert text.startswith("\\") and "Maximize" in text and text.rstrip().endswith("End")
    assert " rate_0: mu - 2 a_0_0_0 <= 0" in text
    assert " uav_0_0: a_0_0_0 + a_1_0_0 <= 1" in text


def test_matches_cvxpy():
    cp = pytest.importorskip("cvxpy")
    r = np.random.default_rng(8).uniform(0, 8, (3, 2, 5))
    _, mu = solve_lp(LpInstance(r, 0.25))
    a = cp.Variable((3, 10), nonneg=True)
    t = cp.Variable()
    R = r.reshape(3, 10)
    cons = [a <= 1, 0.25 * cp.sum(cp.multiply(R, a), axis=1) >= t]
    for m in range(2):
        for n in range(5):
            cons.append(cp.sum(a[:, m * 5 + n]) <= 1)
    for n in range(5):
        cons.append(a[:, n] + a[:, 5 + n] <= 1)
    cp.Problem(cp.Maximize(t), cons).solve()
    assert mu == pytest.approx(t.value, rel=1e-6)
