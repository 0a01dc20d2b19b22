"""Brute-force and numerical reference checks used by the test-suite and ``validate``."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .scenario import LinkMetrics, ScenarioConfig, channel_gain
from .sca_subproblem import (bmax, bmax_surrogate, collision_linearization, rbar, rbar_upper,
                             taylor_sq_lower)

MAX_CANDIDATES = 10**7


class InstanceTooLarge(ValueError):
    pass


# --------------------------------------------------------------------------- enumeration


def slot_matchings(K: int, M: int) -> list[np.ndarray]:
    """Every binary ``(K, M)`` matrix with at most one 1 per row and per column."""
    out = []
    for size in range(min(K, M) + 1):
        for gts in itertools.combinations(range(K), size):
            for uavs in itertools.permutations(range(M), size):
                a = np.zeros((K, M))
                a[list(gts), list(uavs)] = 1.0
                out.append(a)
    return out


def enumerate_schedules(metrics: LinkMetrics, cfg: ScenarioConfig, return_schedule: bool = False):
    """Exact max-min rate over binary schedules by exhaustive search.

    Slots are independent apart from the min over GTs, so the search runs over
    the Cartesian product of per-slot matchings.
    """
    r = np.asarray(metrics.slot_rate)
    K, M, S = r.shape
    choices = slot_matchings(K, M)
    total = len(choices) ** S
    if total > MAX_CANDIDATES:
        raise InstanceTooLarge(f"{total} binary schedules exceed the limit of {MAX_CANDIDATES}")
    # per-slot contribution of each matching to every GT's rate
    gains = [np.array([np.sum(a * r[:, :, n], axis=1) for a in choices]) for n in range(S)]
    acc = np.zeros((1, K))
    for g in gains:
        acc = (acc[:, None, :] + g[None, :, :]).reshape(-1, K)
    mins = cfg.rate_scale * acc.min(axis=1)
    best = int(np.argmax(mins))
    if not return_schedule:
        return float(mins[best])
    picks = np.unravel_index(best, (len(choices),) * S) if S else ()
    alpha = np.stack([choices[i] for i in picks], axis=-1)
    return float(mins[best]), alpha


# --------------------------------------------------------------------------- calculus


def finite_difference_gradient(f, x, step: float = 1e-4) -> np.ndarray:
    """Central differences of a scalar function, one coordinate at a time."""
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[i] = step
        grad[i] = (f(x + e) - f(x - e)) / (2.0 * step)
    return grad


def relative_error(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), np.finfo(float).tiny))


# --------------------------------------------------------------------------- surrogate checks


@dataclass
class SurrogateCheck:
    """Outcome of the three-part surrogate test for one function family."""

    name: str
    samples: int
    value_error: float = 0.0      # worst relative mismatch at the reference
    gradient_error: float = 0.0   # worst relative gradient mismatch at the reference
    bound_violation: float = 0.0  # worst violation of the one-sided bound
    worst_points: dict = field(default_factory=dict)  # where each worst case occurred

    TOLERANCES = {"value_error": 1e-8, "gradient_error": 1e-6, "bound_violation": 1e-12}

    def failures(self) -> list[str]:
        return [k for k, tol in self.TOLERANCES.items() if getattr(self, k) > tol]

    def passed(self) -> bool:
        return not self.failures()

    @property
    def counterexample(self) -> dict:
        return {k: self.worst_points[k] for k in self.failures() if k in self.worst_points}

    def line(self) -> str:
        status = "PASS" if self.passed() else "FAIL"
        text = (f"{status} {self.name}: {self.samples} samples, value err {self.value_error:.1e}, "
                f"gradient err {self.gradient_error:.1e}, bound violation {self.bound_violation:.1e}")
        if not self.passed():
            text += f"; counterexample {self.counterexample}"
        return text


def sampling_box(cfg: ScenarioConfig):
    """GT bounding box inflated to twice its size around its centre."""
    lo, hi = cfg.gt_positions.min(axis=0), cfg.gt_positions.max(axis=0)
    centre, half = (lo + hi) / 2.0, np.maximum((hi - lo) / 2.0, 1.0)
    return centre - 2.0 * half, centre + 2.0 * half


def _log_uniform(rng, lo, hi, size):
    return 10.0 ** rng.uniform(np.log10(lo), np.log10(hi), size=size)


def _record(check: SurrogateCheck, attr: str, error: float, **where):
    """Keep the worst ``error`` seen for ``attr`` and the sample that produced it."""
    if error > getattr(check, attr) or attr not in check.worst_points:
        setattr(check, attr, max(float(error), getattr(check, attr)))
        check.worst_points[attr] = {k: np.round(np.asarray(v, dtype=float), 6).tolist() for k, v in where.items()}


def check_taylor_sq_lower(samples: int = 1000, seed: int = 0, scale: float = 50.0) -> SurrogateCheck:
    rng = np.random.default_rng(seed)
    out = SurrogateCheck("taylor_sq_lower", samples)
    for _ in range(samples):
        x, x0 = rng.normal(0.0, scale, 2), rng.normal(0.0, scale, 2)
        _record(out, "bound_violation", (taylor_sq_lower(x, x0) - np.sum(x * x)) / max(1.0, np.sum(x * x)), x=x, x0=x0)
        _record(out, "value_error", relative_error(taylor_sq_lower(x0, x0), np.sum(x0 * x0)), x0=x0)
        fd = finite_difference_gradient(lambda z: taylor_sq_lower(z, x0), x0)
        _record(out, "gradient_error", relative_error(fd, 2.0 * x0), x0=x0)
    return out


def check_rbar_upper(cfg: ScenarioConfig, samples: int = 1000, seed: int = 0) -> SurrogateCheck:
    """Bits-valued tangent of the interference log; B sampled log-uniform on [1e-16, 1e-8] W."""
    rng = np.random.default_rng(seed)
    out = SurrogateCheck("rbar_upper", samples)
    M = max(cfg.M, 2)
    for _ in range(samples):
        B = _log_uniform(rng, 1e-16, 1e-8, (1, M, 1))
        B_ref = _log_uniform(rng, 1e-16, 1e-8, (1, M, 1))
        m = int(rng.integers(M))
        true = rbar(B, 0, m, 0, cfg)
        _record(out, "bound_violation", true - rbar_upper(B, B_ref, 0, m, 0, cfg), B=B.ravel(), B_ref=B_ref.ravel(), m=m)
        _record(out, "value_error",
                relative_error(rbar_upper(B_ref, B_ref, 0, m, 0, cfg), rbar(B_ref, 0, m, 0, cfg)), B_ref=B_ref.ravel(), m=m)
        # differentiate in units of the reference interference-plus-noise, where slopes are O(1)
        base = float(np.delete(B_ref[0, :, 0], m).sum()) + cfg.sigma0_sq
        z0 = B_ref.ravel() / base
        g_true = finite_difference_gradient(lambda z: rbar(z.reshape(B.shape) * base, 0, m, 0, cfg), z0)
        g_bound = finite_difference_gradient(lambda z: rbar_upper(z.reshape(B.shape) * base, B_ref, 0, m, 0, cfg), z0)
        _record(out, "gradient_error", relative_error(g_bound, g_true), B_ref=B_ref.ravel(), m=m)
    return out


def check_bmax_surrogate(cfg: ScenarioConfig, samples: int = 1000, seed: int = 0) -> SurrogateCheck:
    rng = np.random.default_rng(seed)
    lo, hi = sampling_box(cfg)
    out = SurrogateCheck("bmax_surrogate", samples)
    peak = cfg.p_max * cfg.beta0 / cfg.H**2
    for _ in range(samples):
        w = cfg.gt_positions[int(rng.integers(cfg.K))]
        q, q_ref = rng.uniform(lo, hi), rng.uniform(lo, hi)
        excess = (bmax_surrogate(q, q_ref, w, cfg) - bmax(q, w, cfg)) / peak
        _record(out, "bound_violation", excess, q=q, q_ref=q_ref, w=w)
        _record(out, "value_error", relative_error(bmax_surrogate(q_ref, q_ref, w, cfg), bmax(q_ref, w, cfg)),
                q_ref=q_ref, w=w)
        g_s = finite_difference_gradient(lambda z: bmax_surrogate(z, q_ref, w, cfg) / peak, q_ref)
        g_f = finite_difference_gradient(lambda z: bmax(z, w, cfg) / peak, q_ref)
        # the true slope vanishes above the GT, so errors are measured against the steepest slope 1/H
        _record(out, "gradient_error",
                float(np.max(np.abs(g_s - g_f))) / max(float(np.max(np.abs(g_f))), 1.0 / cfg.H), q_ref=q_ref, w=w)
    return out


def check_collision_linearization(cfg: ScenarioConfig, samples: int = 1000, seed: int = 0) -> SurrogateCheck:
    rng = np.random.default_rng(seed)
    lo, hi = sampling_box(cfg)
    out = SurrogateCheck("collision_linearization", samples)
    for _ in range(samples):
        qm, qj, qm_r, qj_r = (rng.uniform(lo, hi) for _ in range(4))
        d, dr = qm - qj, qm_r - qj_r
        true = np.sum(d * d)
        bound = collision_linearization(qm, qj, qm_r, qj_r, cfg)
        _record(out, "bound_violation", (bound - true) / max(true, 1.0), q_m=qm, q_j=qj, q_m_ref=qm_r, q_j_ref=qj_r)
        _record(out, "value_error", relative_error(collision_linearization(qm_r, qj_r, qm_r, qj_r, cfg), np.sum(dr * dr)),
                q_m_ref=qm_r, q_j_ref=qj_r)
        g = finite_difference_gradient(lambda z: collision_linearization(z, qj_r, qm_r, qj_r, cfg), qm_r, step=1e-3)
        _record(out, "gradient_error", relative_error(g, 2.0 * dr), q_m_ref=qm_r, q_j_ref=qj_r)
    return out


def surrogate_suite(cfg: ScenarioConfig, samples: int = 1000, seed: int = 0) -> list[SurrogateCheck]:
    return [
        check_taylor_sq_lower(samples, seed),
        check_rbar_upper(cfg, samples, seed),
        check_bmax_surrogate(cfg, samples, seed),
        check_collision_linearization(cfg, samples, seed),
    ]


def gain_gradient(q, w_k, cfg: ScenarioConfig) -> np.ndarray:
    return finite_difference_gradient(lambda z: channel_gain(z, w_k, cfg), q)


# --------------------------------------------------------------------------- LP dominance


@dataclass
class DominanceCheck:
    """LP optimum against the exact binary optimum on random tiny instances."""

    instances: int
    worst_gap: float = 0.0   # most negative lp - binary (should be >= -tol)
    counterexample: dict = field(default_factory=dict)

    def passed(self, tol: float = 1e-8) -> bool:
        return self.worst_gap >= -tol

    def line(self) -> str:
        status = "PASS" if self.passed() else "FAIL"
        text = f"{status} lp_dominance: {self.instances} instances, worst lp - binary {self.worst_gap:.1e}"
        if not self.passed():
            text += f"; counterexample {self.counterexample}"
        return text


def random_tiny_instance(rng) -> tuple[LinkMetrics, ScenarioConfig]:
    K, M, N = int(rng.integers(1, 4)), int(rng.integers(1, 3)), int(rng.integers(1, 3))
    cfg = ScenarioConfig(M=M, N=N, gt_positions=np.column_stack([np.arange(K) * 10.0, np.zeros(K)]))
    r = rng.uniform(0.0, 10.0, size=(K, M, N + 1))
    r[rng.random(r.shape) < 0.2] = 0.0  # some dead links
    return LinkMetrics(h=np.ones_like(r), gamma=2.0**r - 1.0, slot_rate=r), cfg


def lp_dominance(instances: int = 200, seed: int = 0) -> DominanceCheck:
    from .lp_subproblem import build_lp, solve_lp

    rng = np.random.default_rng(seed)
    out = DominanceCheck(instances, worst_gap=np.inf)
    for _ in range(instances):
        metrics, cfg = random_tiny_instance(rng)
        _, lp_mu = solve_lp(build_lp(metrics, cfg))
        gap = lp_mu - enumerate_schedules(metrics, cfg)
        if gap < out.worst_gap:
            out.worst_gap = float(gap)
            out.counterexample = {"rates": np.round(metrics.slot_rate, 6).tolist(), "N": cfg.N}
    return out
