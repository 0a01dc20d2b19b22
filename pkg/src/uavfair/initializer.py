"""Feasible starting point: k-means clusters of ground stations flown as circles."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenario import (AuxGains, ConfigError, FlightPlan, Schedule, ScenarioConfig,
                       gain_tensor)


class InitializationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Clustering:
    centroids: np.ndarray       # (M, 2)
    assignment: np.ndarray      # (K,) cluster index per GT
    radii: np.ndarray           # (M,) mean GT distance to centroid
    objective_trace: tuple = ()  # within-cluster sum of squares after each sweep
    iterations: int = 0

    def members(self, m: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == m)


def _assign(points, centroids):
    d2 = np.sum((points[:, None, :] - centroids[None, :, :]) ** 2, axis=-1)
    return np.argmin(d2, axis=1), d2  # argmin keeps the lowest index on ties


def kmeans(gt_positions, M: int, seed: int = 0, initial_centroids=None, max_sweeps: int = 1000) -> Clustering:
    """Lloyd's algorithm seeded with M distinct ground stations drawn with ``seed``.

    Empty clusters are re-seeded at the point farthest from its nearest centroid.
    """
    pts = np.asarray(gt_positions, dtype=float)
    K = pts.shape[0]
    if M > K:
        raise ConfigError("M", f"cannot form {M} clusters from {K} ground stations")
    if initial_centroids is None:
        rng = np.random.default_rng(seed)
        centroids = pts[np.sort(rng.choice(K, size=M, replace=False))].copy()
    else:
        centroids = np.array(initial_centroids, dtype=float)
    assignment = None
    trace = []
    for sweep in range(1, max_sweeps + 1):
        new_assignment, d2 = _assign(pts, centroids)
        if assignment is not None and np.array_equal(new_assignment, assignment):
            break
        assignment = new_assignment
        for m in range(M):
            members = assignment == m
            if not members.any():
                nearest = d2[np.arange(K), assignment]
                far = int(np.argmax(nearest))
                centroids[m] = pts[far]
                assignment[far] = m
                d2 = np.sum((pts[:, None, :] - centroids[None, :, :]) ** 2, axis=-1)
        for m in range(M):
            centroids[m] = pts[assignment == m].mean(axis=0)
        trace.append(float(np.sum((pts - centroids[assignment]) ** 2)))
    else:
        raise InitializationError(f"k-means did not settle within {max_sweeps} sweeps")
    radii = np.array([np.mean(np.linalg.norm(pts[assignment == m] - centroids[m], axis=1)) for m in range(M)])
    return Clustering(centroids=centroids, assignment=assignment, radii=radii,
                      objective_trace=tuple(trace), iterations=sweep)


def flight_radius(clustering: Clustering, cfg: ScenarioConfig) -> np.ndarray:
    """Circle radius per UAV; zero radii (singleton clusters) become ``max(d_min, 5 m)``."""
    r = clustering.radii.copy()
    r[r < 1e-9] = max(cfg.d_min, 5.0)
    return r


def _circle(center, radius, speed, phase, cfg: ScenarioConfig):
    """Discrete CCW circle whose samples satisfy the double-integrator recursion exactly.

    With tangential velocity magnitude ``u = (2r/dt) tan(w dt/2)`` the update
    ``v(n+1) + v(n) = 2 (q(n+1) - q(n)) / dt`` holds on the circle, so we pick
    the angular rate ``w`` that makes ``u`` equal to the requested speed.
    """
    dt = cfg.delta_t
    omega = 2.0 / dt * np.arctan(speed * dt / (2.0 * radius))
    theta = phase + omega * dt * np.arange(cfg.N + 1)
    radial = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    tangent = np.stack([-np.sin(theta), np.cos(theta)], axis=-1)
    q = center + radius * radial
    v = speed * tangent
    a = (v[1:] - v[:-1]) / dt
    return q, v, a


def _min_separation(q_a, q_b):
    return float(np.min(np.linalg.norm(q_a - q_b, axis=-1)))


def circular_plan(clustering: Clustering, cfg: ScenarioConfig, initial_speeds=None,
                  phase_candidates: int = 72) -> FlightPlan:
    """Constant-speed circles around the cluster centroids.

    UAV m starts at angle ``2*pi*m/M``. When two circles bring UAVs closer than
    ``d_min`` the later UAV's phase is shifted over a grid of offsets.
    """
    speeds = cfg.speeds() if initial_speeds is None else np.asarray(initial_speeds, dtype=float)
    if speeds.shape != (cfg.M,):
        raise ConfigError("initial_speeds", f"need {cfg.M} speeds, got {speeds.shape}")
    radii = flight_radius(clustering, cfg)
    for m, s in enumerate(speeds):
        if not (cfg.v_min <= s <= cfg.v_max):
            raise InitializationError(f"UAV {m}: initial speed {s} outside [v_min, v_max]")
        half = np.arctan(s * cfg.delta_t / (2.0 * radii[m]))
        acc = 2.0 * s * np.sin(half) / cfg.delta_t
        if acc > cfg.a_max:
            raise InitializationError(
                f"UAV {m}: circle of radius {radii[m]:.3g} m at {s} m/s needs {acc:.3g} m/s^2 > a_max")

    qs, vs, accs = [], [], []
    for m in range(cfg.M):
        base = 2.0 * np.pi * m / cfg.M
        for i in range(phase_candidates):
            offset = 2.0 * np.pi * ((i + 1) // 2) / phase_candidates * (1 if i % 2 else -1)
            q, v, a = _circle(clustering.centroids[m], radii[m], speeds[m], base + offset, cfg)
            if all(_min_separation(q, other) >= cfg.d_min for other in qs):
                break
        else:
            raise InitializationError(f"UAV {m}: no phase offset keeps {cfg.d_min} m separation")
        qs.append(q)
        vs.append(v)
        accs.append(a)
    return FlightPlan(np.array(qs), np.array(vs), np.array(accs))


def initial_schedule(clustering: Clustering, plan: FlightPlan, cfg: ScenarioConfig) -> Schedule:
    """Each UAV serves the nearest ground station of its own cluster in every slot."""
    alpha = np.zeros((cfg.K, cfg.M, cfg.N + 1))
    w = cfg.gt_positions
    for m in range(cfg.M):
        members = clustering.members(m)
        if members.size == 0:
            continue
        d2 = np.sum((plan.positions[m][:, None, :] - w[members][None, :, :]) ** 2, axis=-1)
        nearest = members[np.argmin(d2, axis=1)]  # members are sorted, so ties go to the lower index
        alpha[nearest, m, np.arange(cfg.N + 1)] = 1.0
    return Schedule(alpha)


def initial_aux_gains(plan: FlightPlan, cfg: ScenarioConfig) -> AuxGains:
    return AuxGains(cfg.p_max * gain_tensor(plan.positions, cfg))


@dataclass(frozen=True)
class InitialPoint:
    clustering: Clustering
    plan: FlightPlan
    schedule: Schedule
    aux: AuxGains


def initialize(cfg: ScenarioConfig, initial_speeds=None) -> InitialPoint:
    clustering = kmeans(cfg.gt_positions, cfg.M, seed=cfg.seed)
    plan = circular_plan(clustering, cfg, initial_speeds)
    return InitialPoint(clustering, plan, initial_schedule(clustering, plan, cfg), initial_aux_gains(plan, cfg))
