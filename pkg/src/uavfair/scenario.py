"""Physical model of the multi-UAV downlink: data records, channel, rates, energy.

Array conventions used throughout the package:

* positions / velocities: ``(M, N + 1, 2)``
* accelerations: ``(M, N, 2)``
* schedule ``alpha`` and per-link tensors ``h``, ``gamma``, ``B``: ``(K, M, N + 1)``
* transmit powers: ``(M, N + 1)``
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib


class ConfigError(ValueError):
    """Invalid or incomplete scenario configuration; ``field`` names the culprit."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class EnergyModelError(ValueError):
    pass


# tolerances shared by the audit and the tests
KINEMATIC_TOL = 1e-9
BOUND_TOL = 1e-6
SCHEDULE_TOL = 1e-9
POWER_TOL = 1e-9
ENERGY_TOL = 1e-6


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class ScenarioConfig:
    """All physical and algorithmic constants of one scenario (SI units)."""

    M: int
    N: int
    gt_positions: np.ndarray
    delta_t: float = 1.0
    H: float = 100.0
    beta0: float = 1e-6
    sigma0_sq: float = 1e-14
    p_max: float = 0.1
    v_min: float = 1.5
    v_max: float = 50.0
    a_max: float = 5.0
    d_min: float = 10.0
    e_max: float = 2e5
    c1: float = 9.26e-4
    c2: float = 2250.0
    mass: float = 2.0
    gravity: float = 9.81
    epsilon: float = 1e-3
    max_iters: int = 50
    seed: int = 0
    initial_speeds: tuple[float, ...] = (3.0, 4.0)

    def __post_init__(self):
        gt = np.array(self.gt_positions, dtype=float)
        if gt.ndim != 2 or gt.shape[1] != 2 or gt.shape[0] < 1:
            raise ConfigError("gt_positions", "expected a non-empty list of [x, y] pairs")
        gt.setflags(write=False)
        object.__setattr__(self, "gt_positions", gt)
        object.__setattr__(self, "initial_speeds", tuple(float(s) for s in self.initial_speeds))
        self._validate()

    def _validate(self):
        for name in ("M", "N", "max_iters"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(name, "must be >= 1")
        for name in ("delta_t", "H", "a_max", "p_max", "e_max", "sigma0_sq", "beta0",
                     "epsilon", "c1", "c2", "mass", "gravity"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ConfigError(name, f"must be finite and > 0, got {value!r}")
        if not (0 < self.v_min < self.v_max):
            raise ConfigError("v_min", "need 0 < v_min < v_max")
        if not (self.d_min >= 0):
            raise ConfigError("d_min", "must be >= 0")
        if not np.all(np.isfinite(self.gt_positions)):
            raise ConfigError("gt_positions", "coordinates must be finite")
        diff = self.gt_positions[:, None, :] - self.gt_positions[None, :, :]
        dist = np.hypot(diff[..., 0], diff[..., 1])
        np.fill_diagonal(dist, np.inf)
        if np.any(dist == 0):
            raise ConfigError("gt_positions", "ground stations must be pairwise distinct")
        if not self.initial_speeds:
            raise ConfigError("initial_speeds", "need at least one speed")

    @property
    def K(self) -> int:
        return self.gt_positions.shape[0]

    @property
    def snr_ref(self) -> float:
        """Receive SNR directly below a full-power UAV, ``p_max*beta0/(H^2*sigma0^2)``."""
        return self.p_max * self.beta0 / (self.H**2 * self.sigma0_sq)

    @property
    def rate_scale(self) -> float:
        """The ``1/N`` factor of the average rate (``1/max(N, 1)``)."""
        return 1.0 / max(self.N, 1)

    def speeds(self) -> np.ndarray:
        """Initial cruise speed per UAV, cycling through ``initial_speeds``."""
        s = self.initial_speeds
        return np.array([s[m % len(s)] for m in range(self.M)])

    def with_(self, **changes) -> "ScenarioConfig":
        return replace(self, **changes)

    def __eq__(self, other):
        if not isinstance(other, ScenarioConfig):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, f.name), getattr(other, f.name))
            if f.name == "gt_positions"
            else getattr(self, f.name) == getattr(other, f.name)
            for f in fields(self)
        )

    __hash__ = None


def random_gt_positions(count: int, side: float, seed: int) -> np.ndarray:
    """Ground stations uniform in a ``side x side`` square, reproducible from ``seed``."""
    rng = np.random.default_rng(seed)
    return rng.uniform(0.0, side, size=(count, 2))


def default_config(seed: int = 0, **overrides) -> ScenarioConfig:
    """Two UAVs, six ground stations in a 500 m square, 100 one-second slots."""
    base = dict(M=2, N=100, gt_positions=random_gt_positions(6, 500.0, seed), seed=seed)
    if "K" in overrides:
        base["gt_positions"] = random_gt_positions(overrides.pop("K"), 500.0, seed)
    base.update(overrides)
    return ScenarioConfig(**base)


_FLOAT_KEYS = {f.name for f in fields(ScenarioConfig)} - {"M", "N", "max_iters", "seed",
                                                         "gt_positions", "initial_speeds"}


def config_from_mapping(data: Mapping[str, Any]) -> ScenarioConfig:
    """Build a config from a parsed key/value document.

    dB quantities may be given as ``beta0_db`` and ``sigma0_sq_dbm``. Ground
    stations come either from ``gt_positions`` or from a ``[random_gts]``
    table with ``count`` and ``side`` (placed with ``seed``).
    """
    data = dict(data)
    kwargs: dict[str, Any] = {}
    known = {f.name for f in fields(ScenarioConfig)} | {"beta0_db", "sigma0_sq_dbm", "random_gts", "K"}
    for key in data:
        if key not in known:
            raise ConfigError(key, "unknown configuration key")
    if "beta0_db" in data:
        if "beta0" in data:
            raise ConfigError("beta0_db", "give either beta0 or beta0_db, not both")
        kwargs["beta0"] = db_to_linear(float(data.pop("beta0_db")))
    if "sigma0_sq_dbm" in data:
        if "sigma0_sq" in data:
            raise ConfigError("sigma0_sq_dbm", "give either sigma0_sq or sigma0_sq_dbm, not both")
        kwargs["sigma0_sq"] = dbm_to_watts(float(data.pop("sigma0_sq_dbm")))
    for key in ("M", "N"):
        if key not in data:
            raise ConfigError(key, "required field missing")
    seed = int(data.pop("seed", 0))
    kwargs["seed"] = seed
    if "gt_positions" in data:
        kwargs["gt_positions"] = data.pop("gt_positions")
    elif "random_gts" in data:
        spec = data.pop("random_gts")
        try:
            count, side = int(spec["count"]), float(spec["side"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError("random_gts", "needs integer 'count' and numeric 'side'") from exc
        kwargs["gt_positions"] = random_gt_positions(count, side, seed)
    else:
        raise ConfigError("gt_positions", "required field missing (or give [random_gts])")
    declared_k = data.pop("K", None)
    for key, value in data.items():
        try:
            if key in ("M", "N", "max_iters"):
                kwargs[key] = int(value)
            elif key == "initial_speeds":
                kwargs[key] = tuple(float(v) for v in value)
            elif key in _FLOAT_KEYS:
                kwargs[key] = float(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(key, f"cannot parse {value!r}") from exc
    cfg = ScenarioConfig(**kwargs)
    if declared_k is not None and int(declared_k) != cfg.K:
        raise ConfigError("K", f"declares {declared_k} but gt_positions has {cfg.K}")
    return cfg


def load_config(path: str | Path) -> ScenarioConfig:
    with open(path, "rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(str(path), f"malformed TOML: {exc}") from exc
    return config_from_mapping(data)


def bundled_config_path() -> Path:
    return Path(__file__).with_name("data") / "default.toml"


# --------------------------------------------------------------------------- records


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class FlightPlan:
    positions: np.ndarray
    velocities: np.ndarray
    accelerations: np.ndarray

    def __post_init__(self):
        for name in ("positions", "velocities", "accelerations"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        M, n1, _ = self.positions.shape
        if self.velocities.shape != (M, n1, 2) or self.accelerations.shape != (M, n1 - 1, 2):
            raise ValueError("inconsistent FlightPlan shapes")

    @property
    def M(self) -> int:
        return self.positions.shape[0]

    @property
    def N(self) -> int:
        return self.accelerations.shape[1]

    def speeds(self) -> np.ndarray:
        return np.linalg.norm(self.velocities, axis=-1)


@dataclass(frozen=True)
class Schedule:
    alpha: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "alpha", _frozen(self.alpha))


@dataclass(frozen=True)
class PowerPlan:
    p: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p", _frozen(self.p))


@dataclass(frozen=True)
class AuxGains:
    """Auxiliary received powers ``B[k, m, n]`` in watts."""

    B: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "B", _frozen(self.B))


@dataclass(frozen=True)
class LinkMetrics:
    h: np.ndarray
    gamma: np.ndarray
    slot_rate: np.ndarray


@dataclass(frozen=True)
class PerformanceReport:
    rate_per_gt: np.ndarray
    energy_per_uav: np.ndarray
    connection_time_per_gt: np.ndarray
    slot_average_rate_per_gt: np.ndarray = field(default=None)

    @property
    def min_rate(self) -> float:
        return float(np.min(self.rate_per_gt))

    def to_dict(self) -> dict:
        return {
            "min_rate": self.min_rate,
            "rate_per_gt": self.rate_per_gt.tolist(),
            "slot_average_rate_per_gt": None if self.slot_average_rate_per_gt is None
            else self.slot_average_rate_per_gt.tolist(),
            "connection_time_per_gt": self.connection_time_per_gt.tolist(),
            "energy_per_uav": self.energy_per_uav.tolist(),
        }


# --------------------------------------------------------------------------- physics


def channel_gain(q, w_k, cfg: ScenarioConfig):
    """Free-space LoS gain ``beta0 / (H^2 + |q - w_k|^2)``; broadcasts over leading axes."""
    d = np.asarray(q, dtype=float) - np.asarray(w_k, dtype=float)
    return cfg.beta0 / (cfg.H**2 + np.sum(d * d, axis=-1))


def gain_tensor(positions: np.ndarray, cfg: ScenarioConfig) -> np.ndarray:
    """``h[k, m, n]`` for UAV positions of shape ``(M, N+1, 2)``."""
    return channel_gain(positions[None, :, :, :], cfg.gt_positions[:, None, None, :], cfg)


def others_sum(x: np.ndarray, axis: int = 1) -> np.ndarray:
    """For every entry, the sum of the other entries along ``axis``.

    Summed directly rather than as total minus self, which cancels badly
    when one entry dominates.
    """
    x = np.moveaxis(np.asarray(x, dtype=float), axis, 0)
    out = np.empty_like(x)
    for i in range(x.shape[0]):
        out[i] = np.delete(x, i, axis=0).sum(axis=0)
    return np.moveaxis(out, 0, axis)


def sinr_tensor(received: np.ndarray, cfg: ScenarioConfig) -> np.ndarray:
    """SINR from received powers ``S[k, m, n]`` (signal from UAV m at GT k).

    Interference at GT k is the received power from every other UAV.
    """
    return received / (others_sum(received, axis=1) + cfg.sigma0_sq)


def sinr(k: int, m: int, n: int, powers: PowerPlan, gains: np.ndarray, cfg: ScenarioConfig) -> float:
    received = powers.p[:, n] * gains[k, :, n]
    interference = np.delete(received, m).sum()
    return float(received[m] / (interference + cfg.sigma0_sq))


def link_metrics(plan: FlightPlan, powers: PowerPlan, cfg: ScenarioConfig) -> LinkMetrics:
    h = gain_tensor(plan.positions, cfg)
    gamma = sinr_tensor(h * powers.p[None, :, :], cfg)
    return LinkMetrics(h=h, gamma=gamma, slot_rate=np.log2(1.0 + gamma))


def aux_link_metrics(aux: AuxGains, plan: FlightPlan, cfg: ScenarioConfig) -> LinkMetrics:
    """Link metrics where the auxiliary powers ``B`` stand in for ``p * h``."""
    h = gain_tensor(plan.positions, cfg)
    gamma = sinr_tensor(np.asarray(aux.B), cfg)
    return LinkMetrics(h=h, gamma=gamma, slot_rate=np.log2(1.0 + gamma))


def rates(schedule: Schedule, metrics: LinkMetrics, cfg: ScenarioConfig) -> np.ndarray:
    """Average rate of every GT: ``(1/N) sum_n sum_m alpha * log2(1 + gamma)``.

    The sum covers the N + 1 samples ``n = 0..N``.
    """
    return cfg.rate_scale * np.einsum("kmn,kmn->k", schedule.alpha, metrics.slot_rate)


def average_rate(k: int, schedule: Schedule, metrics: LinkMetrics, cfg: ScenarioConfig) -> float:
    return float(rates(schedule, metrics, cfg)[k])


def min_rate(schedule: Schedule, metrics: LinkMetrics, cfg: ScenarioConfig) -> float:
    return float(np.min(rates(schedule, metrics, cfg)))


def propulsion_energy(m: int, plan: FlightPlan, cfg: ScenarioConfig) -> float:
    """Propulsion energy of UAV ``m`` over the N slots, plus the kinetic boundary term."""
    v = plan.velocities[m]
    a = plan.accelerations[m]
    speed = np.linalg.norm(v[:-1], axis=-1)
    if np.any(speed == 0):
        n = int(np.flatnonzero(speed == 0)[0])
        raise EnergyModelError(f"UAV {m} has zero speed at n={n}; the c2/|v| term is undefined")
    acc_sq = np.sum(a * a, axis=-1)
    flight = np.sum(cfg.c1 * speed**3 + cfg.c2 / speed * (1.0 + acc_sq / cfg.gravity))
    kinetic = 0.5 * cfg.mass * (v[-1] @ v[-1] - v[0] @ v[0])
    return float(flight + kinetic)


def energies(plan: FlightPlan, cfg: ScenarioConfig) -> np.ndarray:
    return np.array([propulsion_energy(m, plan, cfg) for m in range(plan.M)])


def hover_cost(speed, cfg: ScenarioConfig):
    """Per-slot energy ``c1 s^3 + c2 / s`` of straight flight at constant speed."""
    speed = np.asarray(speed, dtype=float)
    return cfg.c1 * speed**3 + cfg.c2 / speed


def energy_optimal_speed(cfg: ScenarioConfig) -> float:
    """Minimizer of ``c1 s^3 + c2/s`` clipped to ``[v_min, v_max]``."""
    s = (cfg.c2 / (3.0 * cfg.c1)) ** 0.25
    return float(min(max(s, cfg.v_min), cfg.v_max))


def integrate(q0, v0, accelerations, delta_t: float):
    """Roll the discrete double integrator forward from ``(q0, v0)``."""
    a = np.asarray(accelerations, dtype=float)
    n = a.shape[0]
    q = np.empty((n + 1, 2))
    v = np.empty((n + 1, 2))
    q[0], v[0] = q0, v0
    for i in range(n):
        v[i + 1] = v[i] + a[i] * delta_t
        q[i + 1] = q[i] + v[i] * delta_t + 0.5 * a[i] * delta_t**2
    return q, v


def connection_times(schedule: Schedule, cfg: ScenarioConfig) -> np.ndarray:
    return cfg.delta_t * schedule.alpha.sum(axis=(1, 2))


def performance(plan: FlightPlan, schedule: Schedule, metrics: LinkMetrics, cfg: ScenarioConfig,
                connection_schedule: Schedule | None = None) -> PerformanceReport:
    r = rates(schedule, metrics, cfg)
    return PerformanceReport(
        rate_per_gt=r,
        energy_per_uav=energies(plan, cfg),
        connection_time_per_gt=connection_times(connection_schedule or schedule, cfg),
        slot_average_rate_per_gt=r * max(cfg.N, 1) / (cfg.N + 1),
    )


# --------------------------------------------------------------------------- audit


@dataclass(frozen=True)
class Violation:
    constraint: str
    location: tuple
    magnitude: float

    def __str__(self):
        return f"{self.constraint} at {self.location}: excess {self.magnitude:.3g}"


def _collect(kind: str, excess: np.ndarray, tol: float, out: list, offset: tuple = ()):
    for idx in zip(*np.nonzero(excess > tol)):
        out.append(Violation(kind, offset + tuple(int(i) for i in idx), float(excess[idx])))


def audit_feasibility(plan: FlightPlan, schedule: Schedule | None, powers: PowerPlan | None,
                      cfg: ScenarioConfig) -> list[Violation]:
    """List every violated constraint; empty means the triple is feasible.

    Locations are ``(m, n)`` for per-UAV constraints, ``(m, j, n)`` for
    separation, ``(m, n)`` / ``(k, n)`` for the two schedule sums and
    ``(k, m, n)`` for box violations of ``alpha``.
    """
    out: list[Violation] = []
    q, v, a = plan.positions, plan.velocities, plan.accelerations
    dt = cfg.delta_t
    _collect("kinematics_velocity", np.abs(v[:, 1:] - v[:, :-1] - a * dt).max(axis=-1), KINEMATIC_TOL, out)
    q_next = q[:, :-1] + v[:, :-1] * dt + 0.5 * a * dt**2
    _collect("kinematics_position", np.abs(q[:, 1:] - q_next).max(axis=-1), KINEMATIC_TOL, out)
    speed = np.linalg.norm(v, axis=-1)
    _collect("speed_max", speed - cfg.v_max, BOUND_TOL, out)
    _collect("speed_min", cfg.v_min - speed, BOUND_TOL, out)
    _collect("acceleration_max", np.linalg.norm(a, axis=-1) - cfg.a_max, BOUND_TOL, out)
    for m in range(plan.M):
        for j in range(m + 1, plan.M):
            sep = np.linalg.norm(q[m] - q[j], axis=-1)
            _collect("separation", cfg.d_min - sep, BOUND_TOL, out, offset=(m, j))
    if np.all(speed[:, :-1] > 0):
        _collect("energy", energies(plan, cfg) - cfg.e_max, ENERGY_TOL, out)
    else:
        out.append(Violation("energy", (), math.inf))
    if schedule is not None:
        al = schedule.alpha
        _collect("alpha_box", np.maximum(-al, al - 1.0), SCHEDULE_TOL, out)
        _collect("uav_serves_one", al.sum(axis=0) - 1.0, SCHEDULE_TOL, out)
        _collect("gt_served_once", al.sum(axis=1) - 1.0, SCHEDULE_TOL, out)
    if powers is not None:
        _collect("power_box", np.maximum(-powers.p, powers.p - cfg.p_max), POWER_TOL, out)
    return out


def check_shapes(cfg: ScenarioConfig, plan: FlightPlan | None = None, schedule: Schedule | None = None,
                 powers: PowerPlan | None = None, aux: AuxGains | None = None) -> None:
    M, N, K = cfg.M, cfg.N, cfg.K
    expect: Sequence = [
        (plan, "positions", (M, N + 1, 2)),
        (schedule, "alpha", (K, M, N + 1)),
        (powers, "p", (M, N + 1)),
        (aux, "B", (K, M, N + 1)),
    ]
    for obj, attr, shape in expect:
        if obj is not None and getattr(obj, attr).shape != shape:
            raise ValueError(f"{type(obj).__name__}.{attr} has shape {getattr(obj, attr).shape}, expected {shape}")
