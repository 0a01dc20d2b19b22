"""Outer loop: alternate the scheduling LP and the convexified trajectory block."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .initializer import InitializationError, initialize
from .lp_subproblem import build_lp, solve_lp
from .sca_subproblem import P4SolveError, Reference, build_p4, solve_p4
from .scenario import (AuxGains, FlightPlan, LinkMetrics, PerformanceReport, PowerPlan, Schedule,
                       ScenarioConfig, Violation, audit_feasibility, aux_link_metrics, gain_tensor,
                       link_metrics, performance, rates, sinr_tensor)

log = logging.getLogger(__name__)

CONVERGED, MAX_ITERS, INFEASIBLE = "converged", "max_iters", "infeasible"


class SubproblemFailure(RuntimeError):
    def __init__(self, iteration: int, phase: str, cause: Exception):
        super().__init__(f"iteration {iteration}: {phase} failed: {cause}")
        self.iteration = iteration
        self.phase = phase


@dataclass(frozen=True)
class SolveReport:
    status: str
    mu_trace: tuple
    iterations: int
    plan: FlightPlan | None = None
    schedule: Schedule | None = None
    aux: AuxGains | None = None
    powers: PowerPlan | None = None
    rounded_schedule: Schedule | None = None
    performance: PerformanceReport | None = None
    physical_performance: PerformanceReport | None = None
    rounded_performance: PerformanceReport | None = None
    violations: tuple = ()
    lp_seconds: tuple = ()
    p4_seconds: tuple = ()
    message: str = ""
    p4_iterations: tuple = field(default=())

    @property
    def delta_mu_trace(self) -> tuple:
        return tuple(np.diff(self.mu_trace)) if len(self.mu_trace) > 1 else ()

    @property
    def min_rate(self) -> float:
        return self.performance.min_rate if self.performance else float("nan")

    @property
    def iteration_seconds(self) -> tuple:
        return tuple(a + b for a, b in zip(self.lp_seconds, self.p4_seconds))


def recover_powers(schedule: Schedule, aux: AuxGains, plan: FlightPlan, cfg: ScenarioConfig) -> PowerPlan:
    """Transmit power ``p_m(n) = sum_k alpha * B / h`` from the auxiliary received powers."""
    h = gain_tensor(plan.positions, cfg)
    return PowerPlan(np.sum(schedule.alpha * np.asarray(aux.B) / h, axis=0))


def round_schedule(schedule: Schedule, tol: float = 1e-9) -> Schedule:
    """Per-slot maximum-weight one-to-one matching of UAVs to GTs weighted by ``alpha``."""
    alpha = np.asarray(schedule.alpha)
    out = np.zeros_like(alpha)
    for n in range(alpha.shape[2]):
        w = alpha[:, :, n]
        rows, cols = linear_sum_assignment(w, maximize=True)
        keep = w[rows, cols] > tol
        out[rows[keep], cols[keep], n] = 1.0
    return Schedule(out)


def bspace_min_rate(schedule: Schedule, aux: AuxGains, plan: FlightPlan, cfg: ScenarioConfig) -> float:
    return float(np.min(rates(schedule, aux_link_metrics(aux, plan, cfg), cfg)))


def refresh_unserved(aux: AuxGains, schedule: Schedule, plan: FlightPlan, cfg: ScenarioConfig) -> AuxGains:
    """Reset ``B[k, :, n]`` to full-power values wherever GT k is not served in slot n.

    Those entries carry no weight in any rate row, so the reset leaves the
    objective untouched; it only gives the next scheduling step meaningful rates.
    """
    idle = schedule.alpha.sum(axis=1) <= 1e-9  # (K, N+1)
    B = np.array(aux.B)
    full = cfg.p_max * gain_tensor(plan.positions, cfg)
    B[np.broadcast_to(idle[:, None, :], B.shape)] = full[np.broadcast_to(idle[:, None, :], B.shape)]
    return AuxGains(B)


def _reports(cfg, plan, schedule, aux, powers, rounded):
    bspace = aux_link_metrics(aux, plan, cfg)
    physical = link_metrics(plan, powers, cfg)
    return (performance(plan, schedule, bspace, cfg, connection_schedule=rounded),
            performance(plan, schedule, physical, cfg, connection_schedule=rounded),
            performance(plan, rounded, physical, cfg))


def solve(cfg: ScenarioConfig, initial_speeds=None, progress=None) -> SolveReport:
    """Block coordinate descent from the circular initialization.

    Each iteration re-solves the scheduling LP for the current trajectory and
    auxiliary powers, then the convexified trajectory block around them. The
    loop stops once the relative increase of the worst rate drops below
    ``cfg.epsilon``; the transmit powers are recovered at the end.
    """
    try:
        init = initialize(cfg, initial_speeds)
    except InitializationError as exc:
        return SolveReport(status=INFEASIBLE, mu_trace=(), iterations=0, message=str(exc))
    bad = audit_feasibility(init.plan, init.schedule, None, cfg)
    if bad:
        budget = sorted({v.constraint for v in bad})
        return SolveReport(status=INFEASIBLE, mu_trace=(), iterations=0, plan=init.plan,
                           violations=tuple(bad),
                           message="initial plan violates " + ", ".join(budget))

    plan, schedule, aux = init.plan, init.schedule, init.aux
    mu = bspace_min_rate(schedule, aux, plan, cfg)
    trace = [mu]
    lp_t, p4_t, p4_its = [], [], []
    status = MAX_ITERS
    for r in range(cfg.max_iters):
        t0 = time.perf_counter()
        schedule, _ = solve_lp(build_lp(aux_link_metrics(aux, plan, cfg), cfg))
        t1 = time.perf_counter()
        try:
            sol = solve_p4(build_p4(schedule, Reference(plan, aux), cfg))
        except P4SolveError as exc:
            raise SubproblemFailure(r + 1, "trajectory block", exc) from exc
        t2 = time.perf_counter()
        plan = sol.plan
        aux = refresh_unserved(sol.aux, schedule, plan, cfg)
        mu_new = bspace_min_rate(schedule, aux, plan, cfg)
        lp_t.append(t1 - t0)
        p4_t.append(t2 - t1)
        p4_its.append(sol.iterations)
        trace.append(mu_new)
        gain = (mu_new - mu) / max(mu, 1e-12)
        log.info("iteration %d: mu=%.6f (+%.3g) lp %.2fs p4 %.2fs", r + 1, mu_new, mu_new - mu, t1 - t0, t2 - t1)
        if progress is not None:
            progress(r + 1, mu_new)
        mu = mu_new
        if gain < cfg.epsilon:
            status = CONVERGED
            break

    powers = recover_powers(schedule, aux, plan, cfg)
    rounded = round_schedule(schedule)
    perf, phys, rperf = _reports(cfg, plan, schedule, aux, powers, rounded)
    return SolveReport(
        status=status, mu_trace=tuple(trace), iterations=len(trace) - 1, plan=plan, schedule=schedule,
        aux=aux, powers=powers, rounded_schedule=rounded, performance=perf, physical_performance=phys,
        rounded_performance=rperf, violations=tuple(audit_feasibility(plan, schedule, powers, cfg)),
        lp_seconds=tuple(lp_t), p4_seconds=tuple(p4_t), p4_iterations=tuple(p4_its),
    )


# --------------------------------------------------------------------------- baselines


@dataclass(frozen=True)
class BaselineReport:
    name: str
    performance: PerformanceReport
    schedule: Schedule
    positions: np.ndarray

    @property
    def min_rate(self) -> float:
        return self.performance.min_rate


def static_ap(cfg: ScenarioConfig) -> BaselineReport:
    """One full-power transmitter hovering over the GT centroid, scheduled by the LP."""
    center = cfg.gt_positions.mean(axis=0)
    positions = np.broadcast_to(center, (1, cfg.N + 1, 2))
    h = gain_tensor(positions, cfg)
    gamma = sinr_tensor(cfg.p_max * h, cfg)
    metrics = LinkMetrics(h=h, gamma=gamma, slot_rate=np.log2(1.0 + gamma))
    schedule, _ = solve_lp(build_lp(metrics, cfg))
    r = rates(schedule, metrics, cfg)
    perf = PerformanceReport(rate_per_gt=r, energy_per_uav=np.array([np.nan]),
                             connection_time_per_gt=cfg.delta_t * round_schedule(schedule).alpha.sum(axis=(1, 2)),
                             slot_average_rate_per_gt=r * max(cfg.N, 1) / (cfg.N + 1))
    return BaselineReport("static_ap", perf, schedule, np.array(positions))


def initial_circular(cfg: ScenarioConfig, initial_speeds=None) -> BaselineReport:
    """The initialization evaluated as is: circles, nearest-GT schedule, full power."""
    init = initialize(cfg, initial_speeds)
    powers = PowerPlan(np.full((cfg.M, cfg.N + 1), cfg.p_max))
    metrics = link_metrics(init.plan, powers, cfg)
    return BaselineReport("initial_circular", performance(init.plan, init.schedule, metrics, cfg),
                          init.schedule, np.array(init.plan.positions))


def run_baselines(cfg: ScenarioConfig, initial_speeds=None) -> dict[str, BaselineReport]:
    return {"static_ap": static_ap(cfg), "initial_circular": initial_circular(cfg, initial_speeds)}


# --------------------------------------------------------------------------- energy sweep


@dataclass(frozen=True)
class SweepPoint:
    fraction: float
    e_max: float
    report: SolveReport


def reference_energy(report: SolveReport) -> float:
    """Per-UAV budget ``E_m`` of a finished run: the largest UAV consumption."""
    return float(np.max(report.performance.energy_per_uav))


def sweep_energy(cfg: ScenarioConfig, fractions=(0.9, 0.6, 0.3), baseline: SolveReport | None = None):
    """Re-solve with ``e_max`` set to fractions of the unconstrained run's consumption."""
    baseline = baseline if baseline is not None else solve(cfg)
    if baseline.status == INFEASIBLE:
        raise ValueError("the unconstrained run is infeasible; no reference consumption")
    e_ref = reference_energy(baseline)
    points = []
    for f in fractions:
        sub = cfg.with_(e_max=float(f) * e_ref)
        points.append(SweepPoint(float(f), sub.e_max, solve(sub)))
    return baseline, e_ref, points
