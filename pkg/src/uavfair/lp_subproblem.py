"""Scheduling block: max-min average rate over the relaxed association tensor.

For fixed trajectories and powers every slot rate ``r[k, m, n] = log2(1 + gamma)``
is a constant, so the block is the linear program

    max mu  s.t.  scale * sum_{m,n} r[k,m,n] alpha[k,m,n] >= mu      (each k)
                  sum_k alpha[k,m,n] <= 1,  sum_m alpha[k,m,n] <= 1
                  0 <= alpha <= 1
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .scenario import LinkMetrics, Schedule, ScenarioConfig

FEAS_TOL = 1e-10


class LpSolveError(RuntimeError):
    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


@dataclass(frozen=True)
class LpInstance:
    rate_coefficients: np.ndarray  # (K, M, S) with S = N + 1 samples
    scale: float                   # the 1/N normalization

    def __post_init__(self):
        r = np.asarray(self.rate_coefficients, dtype=float)
        if r.ndim != 3:
            raise ValueError("rate_coefficients must be (K, M, slots)")
        if not np.all(np.isfinite(r)) or np.any(r < 0):
            raise ValueError("rate coefficients must be finite and non-negative")
        object.__setattr__(self, "rate_coefficients", r)

    @property
    def shape(self):
        return self.rate_coefficients.shape

    @property
    def n_variables(self) -> int:
        return self.rate_coefficients.size + 1

    @property
    def row_counts(self) -> dict:
        K, M, S = self.shape
        return {"rate": K, "uav_sum": M * S, "gt_sum": K * S}

    def matrices(self):
        """``(c, A_ub, b_ub, bounds)`` in linprog's minimization form; mu is the last variable."""
        K, M, S = self.shape
        nv = K * M * S
        idx = np.arange(nv).reshape(K, M, S)
        rows, cols, vals = [], [], []
        # rate rows: mu - scale * sum r alpha <= 0
        for k in range(K):
            rows += [k] * (M * S + 1)
            cols += list(idx[k].ravel()) + [nv]
            vals += list(-self.scale * self.rate_coefficients[k].ravel()) + [1.0]
        row = K
        for m in range(M):
            for n in range(S):
                rows += [row] * K
                cols += list(idx[:, m, n])
                vals += [1.0] * K
                row += 1
        for k in range(K):
            for n in range(S):
                rows += [row] * M
                cols += list(idx[k, :, n])
                vals += [1.0] * M
                row += 1
        A = sparse.csr_matrix((vals, (rows, cols)), shape=(row, nv + 1))
        b = np.concatenate([np.zeros(K), np.ones(row - K)])
        c = np.zeros(nv + 1)
        c[-1] = -1.0
        bounds = [(0.0, 1.0)] * nv + [(None, None)]
        return c, A, b, bounds


def build_lp(metrics: LinkMetrics, cfg: ScenarioConfig) -> LpInstance:
    return LpInstance(metrics.slot_rate, cfg.rate_scale)


def lp_min_rate(instance: LpInstance, alpha: np.ndarray) -> float:
    return float(np.min(instance.scale * np.einsum("kmn,kmn->k", alpha, instance.rate_coefficients)))


def solve_lp(instance: LpInstance) -> tuple[Schedule, float]:
    """Solve with HiGHS dual simplex; returns the schedule and its min rate."""
    c, A, b, bounds = instance.matrices()
    res = linprog(c, A_ub=A, b_ub=b, bounds=bounds, method="highs-ds",
                  options={"primal_feasibility_tolerance": FEAS_TOL,
                           "dual_feasibility_tolerance": FEAS_TOL})
    if res.status != 0:
        raise LpSolveError(f"scheduling LP failed: {res.message}", res)
    alpha = np.clip(res.x[:-1], 0.0, 1.0).reshape(instance.shape)
    # the clip only removes solver round-off; rescale the rare slot whose sums overshoot
    over_m = np.maximum(alpha.sum(axis=0, keepdims=True), 1.0)
    alpha = alpha / over_m
    over_k = np.maximum(alpha.sum(axis=1, keepdims=True), 1.0)
    alpha = alpha / over_k
    return Schedule(alpha), lp_min_rate(instance, alpha)


def to_lp_format(instance: LpInstance) -> str:
    """The program in CPLEX LP text format (variables ``a_k_m_n`` and ``mu``)."""
    K, M, S = instance.shape
    name = lambda k, m, n: f"a_{k}_{m}_{n}"  # noqa: E731
    lines = ["\\ max-min scheduling LP", "Maximize", " obj: mu", "Subject To"]
    for k in range(K):
        terms = " ".join(f"- {instance.scale * instance.rate_coefficients[k, m, n]:.17g} {name(k, m, n)}"
                         for m in range(M) for n in range(S))
        lines.append(f" rate_{k}: mu {terms} <= 0")
    for m in range(M):
        for n in range(S):
            lines.append(f" uav_{m}_{n}: " + " + ".join(name(k, m, n) for k in range(K)) + " <= 1")
    for k in range(K):
        for n in range(S):
            lines.append(f" gt_{k}_{n}: " + " + ".join(name(k, m, n) for m in range(M)) + " <= 1")
    lines.append("Bounds")
    lines.append(" mu free")
    lines += [f" 0 <= {name(k, m, n)} <= 1" for k in range(K) for m in range(M) for n in range(S)]
    lines.append("End")
    return "\n".join(lines) + "\n"
