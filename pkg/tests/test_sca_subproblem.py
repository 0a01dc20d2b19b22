import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from uavfair.bcd import bspace_min_rate
from uavfair.initializer import initialize
from uavfair.lp_subproblem import build_lp, solve_lp
from uavfair.oracle import finite_difference_gradient
from uavfair.scenario import (AuxGains, ScenarioConfig, audit_feasibility, aux_link_metrics, default_config,
                              energies, gain_tensor)
from uavfair.sca_subproblem import (LOG2E, ROW_MARGIN, DegenerateLinearization, Reference, bmax, bmax_surrogate, build_p4,
                                    collision_linearization, rbar, rbar_upper, solve_p4, surrogate_coefficients,
                                    taylor_sq_lower)

vec = st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=2).map(np.array)


class TestTaylor:
    def test_tight(self):
        x0 = np.array([3.0, -4.0])
        assert taylor_sq_lower(x0, x0) == 25.0

    def test_zero_expansion_point(self):
        assert taylor_sq_lower(np.array([7.0, 1.0]), np.zeros(2)) == 0.0

    @given(vec, vec)
    def test_lower_bound(self, x, x0):
        assert taylor_sq_lower(x, x0) <= np.sum(x * x) + 1e-12 * max(1.0, np.sum(x * x))


class TestRbar:
    def test_tight(self):
        cfg = default_config()
        B = np.random.default_rng(0).uniform(1e-12, 1e-10, (1, 3, 1))
        assert rbar_upper(B, B, 0, 1, 0, cfg) == pytest.approx(np.log2(B[0, 0, 0] + B[0, 2, 0] + cfg.sigma0_sq), rel=1e-14)

    def test_noise_only_reference(self):
        cfg = ScenarioConfig(M=2, N=1, gt_positions=np.zeros((1, 2)), sigma0_sq=1.0)
        B_ref = np.zeros((1, 2, 1))
        B = np.zeros((1, 2, 1))
        B[0, 1, 0] = 0.25
        # slope log2(e), intercept 0
        assert rbar_upper(B, B_ref, 0, 0, 0, cfg) == pytest.approx(LOG2E * 0.25, rel=1e-14)
        assert rbar_upper(B_ref, B_ref, 0, 0, 0, cfg) == 0.0

    @settings(max_examples=200)
    @given(st.lists(st.floats(-16, -8), min_size=6, max_size=6), st.integers(0, 2))
    def test_upper_bound(self, logs, m):
        cfg = default_config()
        v = 10.0 ** np.array(logs)
        B, B_ref = v[:3].reshape(1, 3, 1), v[3:].reshape(1, 3, 1)
        assert rbar_upper(B, B_ref, 0, m, 0, cfg) >= rbar(B, 0, m, 0, cfg) - 1e-12


class TestBmax:
    cfg = default_config()
    w = np.array([250.0, 250.0])

    def test_tight(self):
        q = np.array([400.0, 120.0])
        assert bmax_surrogate(q, q, self.w, self.cfg) == pytest.approx(bmax(q, self.w, self.cfg), rel=1e-12)

    def test_gradient(self):
        q0 = np.array([310.0, 190.0])
        x = q0 - self.w
        true = -2 * self.cfg.p_max * self.cfg.beta0 * x / (self.cfg.H**2 + x @ x) ** 2
        fd = finite_difference_gradient(lambda q: bmax_surrogate(q, q0, self.w, self.cfg), q0)
        np.testing.assert_allclose(fd, true, rtol=1e-6)

    def test_bound_in_km_box(self):
        rng = np.random.default_rng(1)
        q, q0 = rng.uniform(-250, 750, (1000, 2)), rng.uniform(-250, 750, (1000, 2))
        assert np.all(bmax_surrogate(q, q0, self.w, self.cfg) <= bmax(q, self.w, self.cfg) + 1e-15)

    def test_coefficients(self):
        init = initialize(default_config(2, N=20))
        coef = surrogate_coefficients(init.plan, init.aux, default_config(2, N=20))
        assert np.all(coef.A > 0) and np.all(coef.D >= 0)
        assert all(np.all(np.isfinite(c)) for c in (coef.A, coef.C, coef.D, coef.F))


class TestCollision:
    def test_tight(self):
        a, b = np.array([0.0, 0.0]), np.array([3.0, 4.0])
        assert collision_linearization(a, b, a, b) == 25.0

    def test_at_minimum_separation(self):
        cfg = default_config()
        a, b = np.array([0.0, 0.0]), np.array([cfg.d_min, 0.0])
        assert collision_linearization(a, b, a, b, cfg) == pytest.approx(cfg.d_min**2)

    @given(vec, vec, vec, vec)
    def test_lower_bound(self, qm, qj, rm, rj):
        assume(np.sum((rm - rj) ** 2) > 0)
        d = qm - qj
        assert collision_linearization(qm, qj, rm, rj) <= d @ d + 1e-12 * max(1.0, d @ d)

    def test_degenerate(self):
        with pytest.raises(DegenerateLinearization):
            collision_linearization(np.zeros(2), np.ones(2), np.ones(2), np.ones(2))


@pytest.fixture(scope="module")
def program():
    cfg = default_config(0, K=4, N=12)
    init = initialize(cfg)
    sched, _ = solve_lp(build_lp(aux_link_metrics(init.aux, init.plan, cfg), cfg))
    return cfg, sched, init, build_p4(sched, Reference(init.plan, init.aux), cfg)


@pytest.fixture(scope="module")
def solution(program):
    return solve_p4(program[3])


def test_counts(program):
    cfg, _, _, p4 = program
    K, M, N = cfg.K, cfg.M, cfg.N
    v = p4.variable_counts()
    assert v["total"] == K * M * (N + 1) + 7 * M * N + 5 * M + 1
    assert v["B"] == K * M * (N + 1) and v["A"] == 2 * M * N and v["mu"] == 1
    assert v["reduced"] == 2 * M * (N + 2) + v["free_B"] + M * (N + 1) + 1
    c = p4.constraint_counts()
    assert c["rate"] == K and c["b_upper"] == K * M * (N + 1) and c["energy"] == M
    assert c["collision"] == N + 1 and c["speed"] == M * (N + 1) and c["accel"] == M * N
    assert c["kinematics_velocity"] == c["kinematics_position"] == M * N
    assert c["solver_rows"] == sum(hi - lo for lo, hi in p4.blocks.values())


def test_reference_is_feasible(program):
    p4 = program[3]
    y = p4.reference_point()
    assert p4.in_domain(y)
    g, _ = p4.evaluate(y)
    # rows carry a safety margin, so tight rows sit exactly at that margin
    assert np.max(g) <= ROW_MARGIN + 1e-12


def test_tightness_at_reference(program):
    cfg, sched, init, p4 = program
    masked = AuxGains(np.where(p4.sig, init.aux.B, 0.0))
    assert p4.reference_point()[-1] == pytest.approx(bspace_min_rate(sched, masked, init.plan, cfg), rel=1e-8, abs=1e-8)


def test_solution_improves_and_is_feasible(program, solution):
    cfg, sched, init, p4 = program
    assert solution.mu_lb >= p4.reference_point()[-1] - 1e-8
    assert audit_feasibility(solution.plan, sched, None, cfg) == []
    # inner approximation: the surrogate rates never exceed the true rates
    true = aux_link_metrics(solution.aux, solution.plan, cfg)
    from uavfair.scenario import rates
    assert np.all(rates(sched, true, cfg) >= solution.surrogate_rates - 1e-9)
    # received powers within the true cap, so recovered powers respect p_max
    h = gain_tensor(solution.plan.positions, cfg)
    assert np.all(solution.aux.B <= cfg.p_max * h * (1 + 1e-9))
    assert np.all(energies(solution.plan, cfg) <= cfg.e_max + 1e-6)


def test_slack_speed_at_bound(program, solution):
    p4 = program[3]
    v = solution.plan.velocities
    lin = 2 * np.sum(p4.Vr * v, -1) - np.sum(p4.Vr**2, -1)
    np.testing.assert_allclose(solution.slack_speeds, np.sqrt(lin), rtol=1e-5)


def test_single_uav_improves_on_perturbed_reference():
    cfg = ScenarioConfig(M=1, N=10, gt_positions=np.array([[0.0, 0.0], [150.0, 40.0]]), initial_speeds=(3.0,))
    init = initialize(cfg)
    sched, _ = solve_lp(build_lp(aux_link_metrics(init.aux, init.plan, cfg), cfg))
    weak = AuxGains(0.5 * np.asarray(init.aux.B))  # half power everywhere: strictly suboptimal
    p4 = build_p4(sched, Reference(init.plan, weak), cfg)
    sol = solve_p4(p4)
    assert sol.mu_lb > p4.reference_point()[-1] + 1e-3
    assert p4.constraint_counts()["collision"] == 0


def test_cvxpy_agrees_on_fixed_trajectory(program, solution):
    """With the trajectory fixed at the solution, the best B from cvxpy matches ours."""
    cp = pytest.importorskip("cvxpy")
    cfg, sched, _, p4 = program
    Q = solution.plan.positions
    cap = p4.unit * np.maximum(0.0, -np.sum((Q[None] - cfg.gt_positions[:, None, None]) ** 2, -1) / cfg.H**4
                               + p4.coef.D * np.sum((Q[None] - cfg.gt_positions[:, None, None]) * p4.x0, -1)
                               + p4.coef.F) * cfg.H**2
    idx = np.argwhere(p4.sig)
    b = cp.Variable(len(idx), nonneg=True)
    t = cp.Variable()
    caps = np.array([cap[tuple(i)] / p4.unit for i in idx])
    cons = [b <= caps]
    for k in range(cfg.K):
        expr = 0
        for n in range(cfg.N + 1):
            sel = [i for i, (kk, m, nn) in enumerate(idx) if kk == k and nn == n]
            if not sel or p4.W[k, n] <= 0:
                continue
            T = cp.sum(b[sel])
            expr += p4.W[k, n] * cp.log(1 + p4.snr * T) / np.log(2)
            for i in sel:
                m = idx[i][1]
                expr -= p4.alpha[k, m, n] * (p4.slope[k, m, n] * (T - b[i]) + p4.intercept[k, m, n])
        cons.append(cfg.rate_scale * expr >= t)
    cp.Problem(cp.Maximize(t), cons).solve()
    assert t.value == pytest.approx(solution.mu_lb, rel=1e-4)
