"""Dense primal-dual interior-point method for smooth convex programs.

Solves ``min c^T y  s.t.  g(y) <= 0`` where every ``g_i`` is convex and twice
differentiable on an open domain. Slacks ``s = -g(y)`` make infeasible starts
legal; each iteration takes a damped Newton step on the perturbed KKT system

    c + J^T z = 0,   g(y) + s = 0,   s * z = tau

with ``tau`` and a second-order corrector taken from a Mehrotra predictor
step. A backtracking line search on the residual norm keeps ``y`` inside the
domain of ``g``; when curved rows overshoot the linear model, a second-order
correction re-solves with the residual seen at the trial point first.
The reduced Newton matrix ``H + J^T diag(z/s) J`` is factored densely.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import logging

import numpy as np
import scipy.linalg
from scipy import sparse

log = logging.getLogger(__name__)


class SmoothConvexProgram(Protocol):
    c: np.ndarray

    def evaluate(self, y: np.ndarray) -> tuple[np.ndarray, sparse.spmatrix]: ...

    def lagrangian_hessian(self, y: np.ndarray, z: np.ndarray) -> np.ndarray: ...

    def in_domain(self, y: np.ndarray) -> bool: ...


class IpmError(RuntimeError):
    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


@dataclass
class IpmResult:
    y: np.ndarray
    s: np.ndarray
    z: np.ndarray
    status: str
    iterations: int
    primal_residual: float
    dual_residual: float
    gap: float
    objective: float


def _step_to_boundary(v, dv):
    neg = dv < 0
    if not np.any(neg):
        return np.inf
    return float(np.min(-v[neg] / dv[neg]))


def solve(program: SmoothConvexProgram, y0: np.ndarray, *, feas_tol: float = 1e-9,
          gap_tol: float = 1e-10, max_iter: int = 200, slack_floor: float = 1e-2,
          acceptable_tol: float = 1e-6, raise_on_failure: bool = True, soc_steps: int = 3) -> IpmResult:
    """Run the method from ``y0``.

    Stops with status ``optimal`` once primal and scaled dual residuals are
    below ``feas_tol`` and the average complementarity below ``gap_tol``.
    When round-off stalls the line search first, the point is still returned
    as ``acceptable`` if primal infeasibility and complementarity are within
    ``acceptable_tol**1.5`` and the dual residual within ``acceptable_tol``.
    """
    c = program.c
    y = np.array(y0, dtype=float)
    if not program.in_domain(y):
        raise IpmError("starting point is outside the domain of the constraints")
    g, J = program.evaluate(y)
    p = g.size
    s = np.maximum(-g, slack_floor)
    z = np.full(p, 1.0) / s * slack_floor
    c_scale = 1.0 + np.max(np.abs(c))

    def residuals(y_, s_, z_, g_, J_, tau):
        return c + J_.T @ z_, g_ + s_, s_ * z_ - tau

    status = "max_iter"
    for it in range(1, max_iter + 1):
        r_d, r_p, _ = residuals(y, s, z, g, J, 0.0)
        mu = float(s @ z) / p
        res_p = float(np.max(np.abs(r_p)))
        res_d = float(np.max(np.abs(r_d))) / (c_scale + float(np.max(z)))
        log.debug("ipm %3d  primal %.2e  dual %.2e  mu %.2e", it, res_p, res_d, mu)
        if res_p <= feas_tol and res_d <= feas_tol and mu <= gap_tol:
            status = "optimal"
            break

        H = program.lagrangian_hessian(y, z)
        d = z / s
        Jd = J.multiply(d[:, None]).tocsr() if sparse.issparse(J) else J * d[:, None]
        K = H + (J.T @ Jd)
        K = K.toarray() if sparse.issparse(K) else np.asarray(K)
        # symmetric Jacobi scaling before the factorization
        dk = 1.0 / np.sqrt(np.maximum(np.diag(K), 1e-300))
        Ks = K * dk[:, None] * dk[None, :]
        reg = 1e-14
        for _ in range(8):
            try:
                factor = scipy.linalg.cho_factor(Ks + reg * np.eye(K.shape[0]), lower=True,
                                                 check_finite=False)
                break
            except np.linalg.LinAlgError:
                reg *= 100.0
        else:
            status = "singular"
            break

        def ksolve(rhs):
            return dk * scipy.linalg.cho_solve(factor, dk * rhs, check_finite=False)

        def direction(r_c, r_p_=r_p):
            rhs = -r_d - J.T @ (d * r_p_ - r_c / s)
            dy = ksolve(rhs)
            for _ in range(2):  # iterative refinement against the unregularized matrix
                dy += ksolve(rhs - K @ dy)
            dz = d * (J @ dy + r_p_) - r_c / s
            ds = -(r_c + s * dz) / z
            return dy, ds, dz

        def max_step(ds_, dz_):
            return min(1.0, 0.99 * _step_to_boundary(s, ds_), 0.99 * _step_to_boundary(z, dz_))

        def trial(alpha_, dy_, ds_, dz_):
            y_new = y + alpha_ * dy_
            if not program.in_domain(y_new):
                return None
            g_new, J_new = program.evaluate(y_new)
            s_new, z_new = s + alpha_ * ds_, z + alpha_ * dz_
            # slack reset: strictly satisfied rows take their true slack, shrinking by at most 10x
            s_new = np.where(g_new < 0, np.maximum(-g_new, 0.1 * s_new), s_new)
            rd, rp, rc = residuals(y_new, s_new, z_new, g_new, J_new, tau)
            merit = np.sqrt(np.sum(rd**2) + np.sum(rp**2) + np.sum(rc**2))
            return merit, (y_new, s_new, z_new, g_new, J_new), g_new + s + alpha_ * ds_

        # predictor: pure Newton towards tau = 0 sets the centering weight
        _, ds_a, dz_a = direction(s * z)
        a_aff = min(1.0, _step_to_boundary(s, ds_a), _step_to_boundary(z, dz_a))
        mu_aff = float((s + a_aff * ds_a) @ (z + a_aff * dz_a)) / p
        sigma = min(1.0, (mu_aff / mu) ** 3) if mu > 0 else 0.0
        if res_p > mu:  # keep centering while infeasibility dominates complementarity
            sigma = max(sigma, 0.3)
        tau = max(sigma * mu, 0.1 * min(mu, gap_tol))
        r_c = s * z - tau + ds_a * dz_a  # Mehrotra's second-order term
        dy, ds, dz = direction(r_c)

        alpha = max_step(ds, dz)
        merit0 = np.sqrt(np.sum(r_d**2) + np.sum(r_p**2) + np.sum((s * z - tau) ** 2))
        accepted = None
        first = trial(alpha, dy, ds, dz)
        if first is not None and np.isfinite(first[0]) and first[0] <= (1.0 - 0.01 * alpha) * merit0:
            accepted = first[1]
        elif first is not None:
            # second-order correction: curved rows overshoot the linear model, so
            # re-solve with the residual seen at the trial point folded in
            c_soc, a_full = alpha * r_p + first[2], alpha
            for _ in range(soc_steps):
                dy_c, ds_c, dz_c = direction(r_c, c_soc)
                a_c = max_step(ds_c, dz_c)
                out = trial(a_c, dy_c, ds_c, dz_c)
                if out is None or not np.isfinite(out[0]):
                    break
                if out[0] <= (1.0 - 0.01 * a_c) * merit0:
                    accepted, alpha = out[1], a_c
                    break
                c_soc = a_c * c_soc + out[2]
            alpha = a_full if accepted is None else alpha
        if accepted is None:
            alpha *= 0.5
            for _ in range(60):
                out = trial(alpha, dy, ds, dz)
                if out is not None and np.isfinite(out[0]) and out[0] <= (1.0 - 0.01 * alpha) * merit0:
                    accepted = out[1]
                    break
                alpha *= 0.5
        if accepted is None or alpha < 1e-10:
            ok = res_p <= acceptable_tol**1.5 and mu <= acceptable_tol**1.5 and res_d <= acceptable_tol
            status = "acceptable" if ok else "line_search"
            break
        y_new, s_new, z_new, g_new, J_new = accepted
        y, s, z, g, J = y_new, s_new, z_new, g_new, J_new
    else:
        it = max_iter
        if res_p <= acceptable_tol**1.5 and mu <= acceptable_tol**1.5 and res_d <= acceptable_tol:
            status = "acceptable"

    r_d, r_p, _ = residuals(y, s, z, g, J, 0.0)
    result = IpmResult(
        y=y, s=s, z=z, status=status, iterations=it,
        primal_residual=float(np.max(np.maximum(g, 0.0))),
        dual_residual=float(np.max(np.abs(r_d))) / (c_scale + float(np.max(z))),
        gap=float(s @ z), objective=float(c @ y),
    )
    if status not in ("optimal", "acceptable") and raise_on_failure:
        raise IpmError(f"interior-point method stopped ({status}) after {it} iterations; "
                       f"primal {result.primal_residual:.2e}, dual {result.dual_residual:.2e}, "
                       f"gap {result.gap:.2e}", result)
    return result
