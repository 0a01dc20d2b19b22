import numpy as np
import pytest

from uavfair.lp_subproblem import LpInstance, build_lp, solve_lp
from uavfair.oracle import (InstanceTooLarge, check_bmax_surrogate, enumerate_schedules, finite_difference_gradient,
                            gain_gradient, lp_dominance, random_tiny_instance, slot_matchings, surrogate_suite)
from uavfair.scenario import LinkMetrics, ScenarioConfig, default_config
from uavfair import sca_subproblem


def metrics(r):
    r = np.asarray(r, dtype=float)
    return LinkMetrics(h=np.ones_like(r), gamma=2**r - 1, slot_rate=r)


def cfg_for(K, M, N):
    return ScenarioConfig(M=M, N=N, gt_positions=np.column_stack([np.arange(K), np.zeros(K)]))


def test_matching_count():
    # K=3, M=2: empty, 6 singles, 6 ordered pairs
    assert len(slot_matchings(3, 2)) == 13
    for a in slot_matchings(3, 2):
        assert a.sum(axis=0).max() <= 1 and a.sum(axis=1).max() <= 1


def test_single_link():
    assert enumerate_schedules(metrics([[[5.0, 0.0]]]), cfg_for(1, 1, 1)) == 5.0


def test_two_gts_one_uav_one_slot():
    # a binary schedule serves only one of the two GTs, so its min is 0
    r = np.zeros((2, 1, 2))
    r[:, 0, 0] = [2.0, 1.0]
    assert enumerate_schedules(metrics(r), cfg_for(2, 1, 1)) == 0.0
    assert solve_lp(build_lp(metrics(r), cfg_for(2, 1, 1)))[1] == pytest.approx(2 / 3)


def test_symmetric_tie():
    r = np.full((2, 2, 2), 3.0)
    mu, alpha = enumerate_schedules(metrics(r), cfg_for(2, 2, 1), return_schedule=True)
    assert mu == 6.0
    assert alpha.sum() == 4


def test_agrees_when_lp_is_integral():
    r = np.zeros((2, 2, 2))
    r[0, 0, :] = 4.0
    r[1, 1, :] = 4.0
    m, cfg = metrics(r), cfg_for(2, 2, 1)
    assert enumerate_schedules(m, cfg) == pytest.approx(solve_lp(build_lp(m, cfg))[1], abs=1e-8)


def test_size_limit():
    with pytest.raises(InstanceTooLarge):
        enumerate_schedules(metrics(np.ones((4, 3, 12))), cfg_for(4, 3, 11))


def test_dominance_suite():
    assert lp_dominance(50, seed=3).passed()


def test_fd_quadratic():
    np.testing.assert_allclose(finite_difference_gradient(lambda x: x @ x, np.array([1.0, 2.0])), [2.0, 4.0],
                               atol=1e-8)


def test_gain_stationary_overhead():
    cfg = default_config()
    w = cfg.gt_positions[0]
    assert np.max(np.abs(gain_gradient(w, w, cfg))) < 1e-20


def test_surrogate_suite_passes():
    for check in surrogate_suite(default_config(), samples=300, seed=1):
        assert check.passed(), check.line()


def test_sign_flip_in_D_is_caught(monkeypatch):
    real = sca_subproblem._dF

    def flipped(d2, H):
        D, F = real(d2, H)
        return -D, F

    monkeypatch.setattr(sca_subproblem, "_dF", flipped)
    check = check_bmax_surrogate(default_config(), samples=200)
    assert not check.passed()
    assert "counterexample" in check.line()
    assert "q_ref" in check.counterexample["value_error"]


def test_tiny_instances_are_small():
    rng = np.random.default_rng(0)
    for _ in range(20):
        m, cfg = random_tiny_instance(rng)
        K, M, S = m.slot_rate.shape
        assert K <= 3 and M <= 2 and S <= 3 and cfg.N == S - 1
