"""Trajectory/power block: the convexified subproblem around a reference point.

For a fixed schedule the block maximizes the worst average rate over
trajectories ``(q, v, a)``, auxiliary received powers ``B`` and slack speeds
``lambda``. Every nonconvex constraint is replaced by a convex inner
approximation that is tight at the reference ``(q^r, v^r, B^r)``:

* the interference log term is bounded above by its tangent at ``B^r``;
* the received-power cap ``p_max beta0 / (H^2 + |q - w|^2)`` is bounded
  below by a concave quadratic surrogate;
* ``|v|^2`` and the squared UAV separation are bounded below by tangents;
* the concave kinetic term ``-(w/2)|v(0)|^2`` is bounded above by its tangent.

Internally ``B`` is measured in units of ``p_max beta0 / H^2`` so that the
received power below a full-power UAV is 1 and the rate reads
``log2(1 + snr_ref * B)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from . import ipm
from .scenario import AuxGains, FlightPlan, Schedule, ScenarioConfig, others_sum

LOG2E = 1.0 / np.log(2.0)
WEIGHT_TOL = 1e-9
ROW_MARGIN = 1e-9
ENERGY_MARGIN = 1e-9


class P4SolveError(RuntimeError):
    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class DegenerateLinearization(ValueError):
    pass


# --------------------------------------------------------------------------- surrogates


def taylor_sq_lower(x, x0):
    """Tangent of ``|x|^2`` at ``x0``: ``|x0|^2 + 2 x0.(x - x0)`` (a global lower bound)."""
    x, x0 = np.asarray(x, dtype=float), np.asarray(x0, dtype=float)
    return np.sum(x0 * x0, axis=-1) + 2.0 * np.sum(x0 * (x - x0), axis=-1)


def rbar(B, k: int, m: int, n: int, cfg: ScenarioConfig) -> float:
    """``log2`` of interference plus noise at GT k while UAV m serves it."""
    col = np.asarray(B, dtype=float)[k, :, n]
    # sum the others directly; total minus own cancels when the own signal dominates
    return float(np.log2(col[np.arange(col.size) != m].sum() + cfg.sigma0_sq))


def rbar_upper(B, B_ref, k: int, m: int, n: int, cfg: ScenarioConfig) -> float:
    """Tangent upper bound of :func:`rbar` at ``B_ref`` (log2 is concave)."""
    B = np.asarray(B, dtype=float)[k, :, n]
    B_ref = np.asarray(B_ref, dtype=float)[k, :, n]
    others = np.arange(B.size) != m
    base = B_ref[others].sum() + cfg.sigma0_sq
    slope = LOG2E / base
    return float(slope * np.sum(B[others] - B_ref[others]) + np.log2(base))


def bmax(q, w_k, cfg: ScenarioConfig):
    """Received power of a full-power UAV at ``q``: ``p_max beta0 / (H^2 + |q - w|^2)``."""
    d = np.asarray(q, dtype=float) - np.asarray(w_k, dtype=float)
    return cfg.p_max * cfg.beta0 / (cfg.H**2 + np.sum(d * d, axis=-1))


def _dF(dist_sq_ref, H):
    base = dist_sq_ref + H**2
    D = 2.0 * (1.0 / H**4 - 1.0 / base**2)
    F = 1.0 / base + 2.0 * dist_sq_ref / base**2 - dist_sq_ref / H**4
    return D, F


def bmax_surrogate(q, q_ref, w_k, cfg: ScenarioConfig):
    """Concave quadratic minorant of :func:`bmax`, tight (value and gradient) at ``q_ref``.

    ``p_max beta0 (-|x|^2/H^4 + D x.x0 + F)`` with ``x = q - w``, ``x0 = q_ref - w``.
    """
    x = np.asarray(q, dtype=float) - np.asarray(w_k, dtype=float)
    x0 = np.asarray(q_ref, dtype=float) - np.asarray(w_k, dtype=float)
    D, F = _dF(np.sum(x0 * x0, axis=-1), cfg.H)
    quad = -np.sum(x * x, axis=-1) / cfg.H**4 + D * np.sum(x * x0, axis=-1) + F
    return cfg.p_max * cfg.beta0 * quad


def collision_linearization(q_m, q_j, q_m_ref, q_j_ref, cfg: ScenarioConfig | None = None):
    """Tangent lower bound of ``|q_m - q_j|^2`` at the reference pair."""
    delta_ref = np.asarray(q_m_ref, dtype=float) - np.asarray(q_j_ref, dtype=float)
    if np.any(np.sum(delta_ref * delta_ref, axis=-1) == 0.0):
        raise DegenerateLinearization("reference positions coincide; separation tangent undefined")
    delta = np.asarray(q_m, dtype=float) - np.asarray(q_j, dtype=float)
    return taylor_sq_lower(delta, delta_ref)


@dataclass(frozen=True)
class SurrogateCoefficients:
    """Tangent and surrogate constants at a reference, all shaped ``(K, M, N+1)``.

    ``A`` is the slope of the interference tangent (bits per watt), ``C`` its
    intercept, ``D`` and ``F`` the received-power surrogate constants.
    """

    A: np.ndarray
    C: np.ndarray
    D: np.ndarray
    F: np.ndarray


def surrogate_coefficients(plan_ref: FlightPlan, aux_ref: AuxGains, cfg: ScenarioConfig) -> SurrogateCoefficients:
    B = np.asarray(aux_ref.B)
    interference = others_sum(B, axis=1) + cfg.sigma0_sq
    x0 = plan_ref.positions[None, :, :, :] - cfg.gt_positions[:, None, None, :]
    D, F = _dF(np.sum(x0 * x0, axis=-1), cfg.H)
    return SurrogateCoefficients(A=LOG2E / interference, C=np.log2(interference), D=D, F=F)


# --------------------------------------------------------------------------- program


def kinematic_maps(N: int, dt: float):
    """Matrices taking ``[q0, v0, a_0..a_{N-1}]`` (one axis) to ``q(0..N)``, ``v(0..N)``, ``a``."""
    Tq = np.zeros((N + 1, N + 2))
    Tv = np.zeros((N + 1, N + 2))
    Tq[:, 0] = 1.0
    Tq[:, 1] = dt * np.arange(N + 1)
    Tv[:, 1] = 1.0
    for n in range(1, N + 1):
        i = np.arange(n)
        Tq[n, 2 + i] = dt**2 * (n - i - 0.5)
        Tv[n, 2 + i] = dt
    Ta = np.zeros((N, N + 2))
    Ta[np.arange(N), 2 + np.arange(N)] = 1.0
    return Tq, Tv, Ta


@dataclass(frozen=True)
class Reference:
    plan: FlightPlan
    aux: AuxGains


class P4Program:
    """The convex subproblem in the form expected by :func:`uavfair.ipm.solve`.

    Decision vector ``y = [traj, B, lam, mu]`` where ``traj`` holds, per UAV and
    axis, ``(q0, v0, a_0..a_{N-1})``; positions and velocities follow from the
    kinematic recursion, which therefore holds exactly for every iterate.
    """

    def __init__(self, schedule: Schedule, reference: Reference, cfg: ScenarioConfig):
        self.cfg = cfg
        M, N, K = cfg.M, cfg.N, cfg.K
        S = N + 1
        self.M, self.N, self.K, self.S = M, N, K, S
        self.alpha = np.where(schedule.alpha > WEIGHT_TOL, schedule.alpha, 0.0)
        self.reference = reference
        self.coef = surrogate_coefficients(reference.plan, reference.aux, cfg)
        self.unit = cfg.p_max * cfg.beta0 / cfg.H**2
        self.snr = cfg.snr_ref
        self.Qr = np.asarray(reference.plan.positions)
        self.Vr = np.asarray(reference.plan.velocities)
        # Only scheduled links keep a free received power. The others are held at
        # zero: they would only add interference, and their cap 0 <= P h holds for
        # every trajectory, so no surrogate row is needed for them.
        self.sig = self.alpha > 0.0
        self.nB = int(self.sig.sum())
        self.bidx = np.full(self.sig.shape, -1)
        self.bidx[self.sig] = np.arange(self.nB)
        self.Br = np.where(self.sig, np.asarray(reference.aux.B) / self.unit, 0.0)
        if cfg.M > 1 and cfg.d_min > 0:
            for m in range(M):
                for j in range(m + 1, M):
                    if np.any(np.all(self.Qr[m] == self.Qr[j], axis=-1)):
                        raise DegenerateLinearization(f"UAVs {m} and {j} coincide in the reference")

        # ---- layout of the natural vector x = [Q, V, A, B, lam, mu]
        self.nQ = M * S * 2
        self.oQ, self.oV = 0, self.nQ
        self.oA = 2 * self.nQ
        self.oB = self.oA + M * N * 2
        self.oL = self.oB + self.nB
        self.oMu = self.oL + M * S
        self.nx = self.oMu + 1
        self.nZ = M * 2 * (N + 2)
        self.ny = self.nZ + self.nB + M * S + 1
        self._build_map()

        # ---- constants of the rate rows
        self.W = self.alpha.sum(axis=1)                       # (K, S)
        self.active = self.W > WEIGHT_TOL
        I_ref = others_sum(self.Br, axis=1)  # (K, M, S)
        self.slope = LOG2E * self.snr / (1.0 + self.snr * I_ref)
        self.intercept = -self.slope * I_ref + np.log2(1.0 + self.snr * I_ref)
        self.scale = cfg.rate_scale
        # ---- surrogate constants in normalized units
        self.x0 = self.Qr[None] - cfg.gt_positions[:, None, None, :]  # (K, M, S, 2)
        self.Dn = cfg.H**2 * self.coef.D
        self.Fn = cfg.H**2 * self.coef.F
        self.curv = np.full(self.Dn.shape, 1.0 / cfg.H**2)  # the surrogate's fixed curvature
        self.vlin_scale = np.maximum(np.sum(self.Vr**2, axis=-1), cfg.v_min**2)  # (M, S)
        self.pairs = [(m, j) for m in range(M) for j in range(m + 1, M)] if cfg.d_min > 0 else []

        self.c = np.zeros(self.ny)
        self.c[-1] = -1.0
        self._structure()

    # -- kinematic elimination
    def _build_map(self):
        M, N, S = self.M, self.N, self.S
        Tq, Tv, Ta = kinematic_maps(N, self.cfg.delta_t)
        rows, cols, vals = [], [], []
        for m in range(M):
            for ax in range(2):
                zcol = (m * 2 + ax) * (N + 2)
                for T, base, length in ((Tq, self.oQ, S), (Tv, self.oV, S), (Ta, self.oA, N)):
                    r, cc = np.nonzero(T)
                    rows.append(base + (m * length + r) * 2 + ax)
                    cols.append(zcol + cc)
                    vals.append(T[r, cc])
        rows, cols, vals = map(np.concatenate, (rows, cols, vals))
        ntraj = self.oB
        P_traj = sparse.csr_matrix((vals, (rows, cols)), shape=(ntraj, self.nZ))
        rest = self.nx - ntraj
        self.P = sparse.block_diag([P_traj, sparse.identity(rest, format="csr")], format="csr")

    # -- index helpers on the natural vector
    def iQ(self, m, n, ax):
        return self.oQ + (m * self.S + n) * 2 + ax

    def iV(self, m, n, ax):
        return self.oV + (m * self.S + n) * 2 + ax

    def iA(self, m, n, ax):
        return self.oA + (m * self.N + n) * 2 + ax

    def iB(self, k, m, n):
        return self.oB + self.bidx[k, m, n]

    def iL(self, m, n):
        return self.oL + m * self.S + n

    def natural(self, y):
        x = self.P @ y
        M, N, K, S = self.M, self.N, self.K, self.S
        Q = x[self.oQ:self.oV].reshape(M, S, 2)
        V = x[self.oV:self.oA].reshape(M, S, 2)
        A = x[self.oA:self.oB].reshape(M, N, 2)
        B = np.zeros((K, M, S))
        B[self.sig] = x[self.oB:self.oL]
        L = x[self.oL:self.oMu].reshape(M, S)
        return Q, V, A, B, L, x[self.oMu]

    def _structure(self):
        """Fixed sparsity pattern of the natural Jacobian; values are filled per call."""
        M, N, K, S = self.M, self.N, self.K, self.S
        kk, mm, nn = np.nonzero(self.sig)
        nB = self.nB
        mS, nS = np.meshgrid(np.arange(M), np.arange(S), indexing="ij")
        mN, nN = np.meshgrid(np.arange(M), np.arange(N), indexing="ij")
        rows, cols = [], []
        blocks = {}
        r0 = 0

        def block(name, count):
            nonlocal r0
            blocks[name] = (r0, r0 + count)
            r0 += count
            return blocks[name][0]

        # rate rows: every B entry of GT k plus mu
        b = block("rate", K)
        rows += [b + kk, b + np.arange(K)]
        cols += [self.iB(kk, mm, nn), np.full(K, self.oMu)]
        # B upper: B, q_x, q_y
        b = block("b_upper", nB)
        r = b + np.arange(nB)
        rows += [r, r, r]
        cols += [self.iB(kk, mm, nn), self.iQ(mm, nn, 0), self.iQ(mm, nn, 1)]
        b = block("b_lower", nB)
        rows += [b + np.arange(nB)]
        cols += [self.iB(kk, mm, nn)]
        b = block("speed", M * S)
        r = b + np.arange(M * S)
        rows += [r, r]
        cols += [self.iV(mS, nS, 0).ravel(), self.iV(mS, nS, 1).ravel()]
        b = block("accel", M * N)
        r = b + np.arange(M * N)
        rows += [r, r]
        cols += [self.iA(mN, nN, 0).ravel(), self.iA(mN, nN, 1).ravel()]
        b = block("lam_min", M * S)
        rows += [b + np.arange(M * S)]
        cols += [self.iL(mS, nS).ravel()]
        b = block("lam_lin", M * S)
        r = b + np.arange(M * S)
        rows += [r, r, r]
        cols += [self.iL(mS, nS).ravel(), self.iV(mS, nS, 0).ravel(), self.iV(mS, nS, 1).ravel()]
        b = block("energy", M)
        for m in range(M):
            c_e = np.concatenate([self.iV(m, np.arange(S), 0), self.iV(m, np.arange(S), 1),
                                  self.iA(m, np.arange(N), 0), self.iA(m, np.arange(N), 1),
                                  self.iL(m, np.arange(N))])
            rows.append(np.full(c_e.size, b + m))
            cols.append(c_e)
        P = len(self.pairs)
        b = block("collision", P * S)
        for pi, (m, j) in enumerate(self.pairs):
            r = b + pi * S + np.arange(S)
            for uav in (m, j):
                for ax in (0, 1):
                    rows.append(r)
                    cols.append(self.iQ(uav, np.arange(S), ax))
        self.blocks = blocks
        self.p = r0
        self._rows = np.concatenate(rows)
        self._cols = np.concatenate(cols)

    # -- counts
    def variable_counts(self) -> dict:
        """Variables of the formulation; ``free_B`` and ``reduced`` describe what the solver sees."""
        M, N, K, S = self.M, self.N, self.K, self.S
        out = {"B": K * M * S, "Q": 2 * M * S, "V": 2 * M * S, "A": 2 * M * N, "lambda": M * S, "mu": 1}
        out["total"] = sum(out.values())
        out["free_B"] = self.nB
        out["reduced"] = self.ny
        return out

    def constraint_counts(self) -> dict:
        """Rows of the formulation per family; ``solver_rows`` is the count actually passed on."""
        M, N, K, S = self.M, self.N, self.K, self.S
        out = {"rate": K, "b_upper": K * M * S, "b_lower": K * M * S, "speed": M * S, "accel": M * N,
               "lam_min": M * S, "lam_lin": M * S, "energy": M, "collision": len(self.pairs) * S,
               "kinematics_velocity": M * N, "kinematics_position": M * N}
        out["solver_rows"] = self.p
        return out

    # -- evaluation
    def in_domain(self, y) -> bool:
        Q, V, A, B, L, mu = self.natural(y)
        if np.any(L <= 0) or not np.all(np.isfinite(y)):
            return False
        T = B.sum(axis=1)
        return bool(np.all(1.0 + self.snr * T[self.active] > 0))

    def _rate_terms(self, B):
        T = B.sum(axis=1)  # (K, S)
        arg = 1.0 + self.snr * T
        logt = np.zeros_like(T)
        logt[self.active] = np.log2(arg[self.active])
        lin = np.sum(self.alpha * (self.slope * (T[:, None, :] - B) + self.intercept), axis=1)
        return T, arg, logt, lin

    def row_rates(self, y) -> np.ndarray:
        """Surrogate average rate of every GT at ``y`` (bits/s/Hz)."""
        Q, V, A, B, L, mu = self.natural(y)
        _, _, logt, lin = self._rate_terms(B)
        return self.scale * np.sum(self.W * logt - lin, axis=1)

    def _values_and_grads(self, y):
        cfg = self.cfg
        M, N, K, S = self.M, self.N, self.K, self.S
        Q, V, A, B, L, mu = self.natural(y)
        g, vals = [], []

        # rate rows
        T, arg, logt, lin = self._rate_terms(B)
        g.append(mu - self.scale * np.sum(self.W * logt - lin, axis=1))
        dlog = np.where(self.active, self.W * LOG2E * self.snr / arg, 0.0)          # (K, S)
        aslope = self.alpha * self.slope                                           # (K, M, S)
        grad_B = -self.scale * (dlog[:, None, :] - (aslope.sum(axis=1, keepdims=True) - aslope))
        vals += [grad_B[self.sig], np.ones(K)]

        # B upper: B + |x|^2/H^2 - H^2 D x.x0 - H^2 F <= 0
        H2 = cfg.H**2
        x = Q[None] - cfg.gt_positions[:, None, None, :]
        sig = self.sig
        g.append((B + self.curv * np.sum(x * x, -1) - self.Dn * np.sum(x * self.x0, -1) - self.Fn)[sig] + ROW_MARGIN)
        gq = 2.0 * self.curv[..., None] * x - self.Dn[..., None] * self.x0
        vals += [np.ones(self.nB), gq[..., 0][sig], gq[..., 1][sig]]
        g.append(-B[sig])
        vals.append(-np.ones(self.nB))

        # speed / acceleration caps
        vmax2, amax2 = cfg.v_max**2, cfg.a_max**2
        g.append((np.sum(V * V, -1) / vmax2 - 1.0).ravel() + ROW_MARGIN)
        vals += [(2 * V[..., 0] / vmax2).ravel(), (2 * V[..., 1] / vmax2).ravel()]
        g.append((np.sum(A * A, -1) / amax2 - 1.0).ravel() + ROW_MARGIN)
        vals += [(2 * A[..., 0] / amax2).ravel(), (2 * A[..., 1] / amax2).ravel()]

        # slack speed
        g.append(((cfg.v_min - L) / cfg.v_min).ravel() + ROW_MARGIN)
        vals.append(np.full(M * S, -1.0 / cfg.v_min))
        sc = self.vlin_scale
        lin_v = 2.0 * np.sum(self.Vr * V, -1) - np.sum(self.Vr**2, -1)
        g.append(((L**2 - lin_v) / sc).ravel() + ROW_MARGIN)
        vals += [(2 * L / sc).ravel(), (-2 * self.Vr[..., 0] / sc).ravel(), (-2 * self.Vr[..., 1] / sc).ravel()]

        # energy
        c1, c2, grav, w, E = cfg.c1, cfg.c2, cfg.gravity, cfg.mass, cfg.e_max
        speed = np.linalg.norm(V, axis=-1)
        acc2 = np.sum(A * A, -1)
        Ls = L[:, :N]
        e_val = (np.sum(c1 * speed[:, :N] ** 3 + c2 / Ls + c2 / grav * acc2 / Ls, axis=1)
                 + 0.5 * w * np.sum(V[:, N] ** 2, -1)
                 - 0.5 * w * (2 * np.sum(self.Vr[:, 0] * V[:, 0], -1) - np.sum(self.Vr[:, 0] ** 2, -1)))
        g.append(e_val / E - 1.0 + ENERGY_MARGIN)
        for m in range(M):
            gv = np.zeros((S, 2))
            gv[:N] = 3 * c1 * speed[m, :N, None] * V[m, :N]
            gv[N] += w * V[m, N]
            gv[0] -= w * self.Vr[m, 0]
            ga = 2 * c2 / grav * A[m] / Ls[m, :, None]
            gl = -c2 / Ls[m] ** 2 - c2 / grav * acc2[m] / Ls[m] ** 2
            vals.append(np.concatenate([gv[:, 0], gv[:, 1], ga[:, 0], ga[:, 1], gl]) / E)

        # separation
        if self.pairs:
            d2 = cfg.d_min**2
            for m, j in self.pairs:
                dr = self.Qr[m] - self.Qr[j]
                lin_sep = 2 * np.sum(dr * (Q[m] - Q[j]), -1) - np.sum(dr * dr, -1)
                g.append((d2 - lin_sep) / d2 + ROW_MARGIN)
                vals += [-2 * dr[:, 0] / d2, -2 * dr[:, 1] / d2, 2 * dr[:, 0] / d2, 2 * dr[:, 1] / d2]
        return np.concatenate(g), np.concatenate(vals)

    def evaluate_natural(self, y):
        g, vals = self._values_and_grads(y)
        J = sparse.csr_matrix((vals, (self._rows, self._cols)), shape=(self.p, self.nx))
        return g, J

    def evaluate(self, y):
        g, Jx = self.evaluate_natural(y)
        return g, (Jx @ self.P).tocsr()

    def natural_hessian(self, y, z):
        cfg = self.cfg
        M, N, K, S = self.M, self.N, self.K, self.S
        Q, V, A, B, L, mu = self.natural(y)
        rows, cols, vals = [], [], []

        def add(r, c, v):
            rows.append(np.ravel(r))
            cols.append(np.ravel(c))
            vals.append(np.ravel(v))

        lo = {name: bounds[0] for name, bounds in self.blocks.items()}
        hi = {name: bounds[1] for name, bounds in self.blocks.items()}
        zb = {name: z[lo[name]:hi[name]] for name in self.blocks}

        # rate rows: W log2e snr^2 / arg^2 on the B_{k,.,n} block
        T = B.sum(axis=1)
        arg = 1.0 + self.snr * T
        curv = np.where(self.active, self.scale * self.W * LOG2E * self.snr**2 / arg**2, 0.0)
        curv = curv * zb["rate"][:, None]
        for m in range(M):
            for j in range(M):
                kk, nn = np.nonzero((curv != 0) & self.sig[:, m, :] & self.sig[:, j, :])
                add(self.iB(kk, m, nn), self.iB(kk, j, nn), curv[kk, nn])

        # B upper: 2/H^2 on q(m, n) summed over k
        zu = np.zeros((K, M, S))
        zu[self.sig] = zb["b_upper"]
        wq = 2.0 * (self.curv * zu).sum(axis=0)
        mS, nS = np.meshgrid(np.arange(M), np.arange(S), indexing="ij")
        for ax in (0, 1):
            add(self.iQ(mS, nS, ax), self.iQ(mS, nS, ax), wq)
            add(self.iV(mS, nS, ax), self.iV(mS, nS, ax), 2.0 / cfg.v_max**2 * zb["speed"].reshape(M, S))
        mN, nN = np.meshgrid(np.arange(M), np.arange(N), indexing="ij")
        for ax in (0, 1):
            add(self.iA(mN, nN, ax), self.iA(mN, nN, ax), 2.0 / cfg.a_max**2 * zb["accel"].reshape(M, N))
        add(self.iL(mS, nS), self.iL(mS, nS), 2.0 / self.vlin_scale * zb["lam_lin"].reshape(M, S))

        # energy
        c1, c2, grav, w, E = cfg.c1, cfg.c2, cfg.gravity, cfg.mass, cfg.e_max
        for m in range(M):
            ze = zb["energy"][m] / E
            if ze == 0.0:
                continue
            n = np.arange(N)
            v = V[m, :N]
            sp = np.maximum(np.linalg.norm(v, axis=-1), 1e-12)
            lam = L[m, :N]
            a = A[m]
            for i in (0, 1):
                for j in (0, 1):
                    hv = 3 * c1 * ((sp if i == j else 0.0) + v[:, i] * v[:, j] / sp)
                    add(self.iV(m, n, i), self.iV(m, n, j), ze * hv)
                add(self.iA(m, n, i), self.iA(m, n, i), ze * 2 * c2 / grav / lam)
                cross = -2 * c2 / grav * a[:, i] / lam**2
                add(self.iA(m, n, i), self.iL(m, n), ze * cross)
                add(self.iL(m, n), self.iA(m, n, i), ze * cross)
                add(self.iV(m, N, i), self.iV(m, N, i), ze * w)
            add(self.iL(m, n), self.iL(m, n), ze * (2 * c2 / lam**3 + 2 * c2 / grav * np.sum(a * a, -1) / lam**3))
        Hx = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                               shape=(self.nx, self.nx))
        return Hx

    def lagrangian_hessian(self, y, z):
        Hx = self.natural_hessian(y, z)
        return (self.P.T @ Hx @ self.P).toarray()

    # -- points
    def pack(self, plan: FlightPlan, B_norm: np.ndarray, lam: np.ndarray, mu: float) -> np.ndarray:
        M, N = self.M, self.N
        traj = np.empty((M, 2, N + 2))
        traj[:, :, 0] = plan.positions[:, 0, :]
        traj[:, :, 1] = plan.velocities[:, 0, :]
        traj[:, :, 2:] = np.transpose(plan.accelerations, (0, 2, 1))
        return np.concatenate([traj.ravel(), np.asarray(B_norm)[self.sig], np.ravel(lam), [mu]])

    def reference_point(self) -> np.ndarray:
        """The reference itself, with ``lam = |v^r|`` and ``mu`` the worst surrogate rate."""
        lam = np.maximum(np.linalg.norm(self.Vr, axis=-1), self.cfg.v_min)
        y = self.pack(self.reference.plan, self.Br, lam, 0.0)
        y[-1] = float(np.min(self.row_rates(y)))
        return y

    def unpack(self, y):
        Q, V, A, B, L, mu = self.natural(y)
        return FlightPlan(Q.copy(), V.copy(), A.copy()), B * self.unit, L.copy(), float(mu)

    def describe(self) -> str:
        """Structured text dump of the program for diagnostics."""
        y = self.reference_point()
        g, J = self.evaluate_natural(y)
        rows = {name: {"first": lo, "count": hi - lo,
                       "max_value_at_reference": float(np.max(g[lo:hi])) if hi > lo else None}
                for name, (lo, hi) in self.blocks.items()}
        doc = {
            "dimensions": {"K": self.K, "M": self.M, "N": self.N},
            "variables": self.variable_counts(),
            "rows": rows,
            "received_power_unit_watts": self.unit,
            "snr_ref": self.snr,
            "coefficients": {
                "A": self.coef.A.tolist(), "C": self.coef.C.tolist(),
                "D": self.coef.D.tolist(), "F": self.coef.F.tolist(),
            },
            "jacobian_nnz": int(J.nnz),
        }
        return json.dumps(doc, indent=1)


def build_p4(schedule: Schedule, reference: Reference, cfg: ScenarioConfig) -> P4Program:
    return P4Program(schedule, reference, cfg)


@dataclass(frozen=True)
class P4Solution:
    plan: FlightPlan
    aux: AuxGains
    mu_lb: float
    slack_speeds: np.ndarray
    surrogate_rates: np.ndarray
    iterations: int
    gap: float


def solve_p4(program: P4Program, start: np.ndarray | None = None, **ipm_options) -> P4Solution:
    """Solve the convex subproblem from the reference point (or ``start``).

    The slack speeds are returned at their upper limit ``sqrt(2 v^r.v - |v^r|^2)``;
    raising them keeps every row feasible and leaves the objective unchanged.
    """
    y0 = program.reference_point() if start is None else start
    try:
        res = ipm.solve(program, y0, **ipm_options)
    except ipm.IpmError as exc:
        raise P4SolveError(str(exc), exc.result) from exc
    y = res.y
    plan, B, lam, _ = program.unpack(y)
    lin_v = 2.0 * np.sum(program.Vr * plan.velocities, -1) - np.sum(program.Vr**2, -1)
    lam = np.maximum(np.sqrt(np.maximum(lin_v, 0.0)), lam)
    B = np.maximum(B, 0.0)
    row_rates = program.row_rates(y)
    return P4Solution(plan=plan, aux=AuxGains(B), mu_lb=float(np.min(row_rates)), slack_speeds=lam,
                      surrogate_rates=row_rates, iterations=res.iterations, gap=res.gap)
