"""Walk through one solve on a small scenario.

Run with ``python3 demos/walkthrough.py``. Takes a few seconds.
"""
import numpy as np

from uavfair import default_config, solve
from uavfair.bcd import run_baselines
from uavfair.initializer import initialize

cfg = default_config(seed=1, K=5, N=30)
print(f"{cfg.M} UAVs, {cfg.K} ground stations, {cfg.N} slots of {cfg.delta_t:g} s")

# %% Starting point: one circle per k-means cluster
init = initialize(cfg)
for m in range(cfg.M):
    members = init.clustering.members(m)
    c = init.clustering.centroids[m]
    print(f"UAV {m}: circle at ({c[0]:.1f}, {c[1]:.1f}), radius {init.clustering.radii[m]:.1f} m, serves {members.tolist()}")

# %% Baselines
for name, b in run_baselines(cfg).items():
    print(f"{name:>16}: min rate {b.min_rate:.3f}")

# %% Alternate scheduling and trajectory/power updates
report = solve(cfg, progress=lambda it, mu: print(f"  iteration {it:2d}  mu {mu:.4f}"))
print(report.status, "after", report.iterations, "iterations")

perf = report.performance
print("rate per GT     ", np.round(perf.rate_per_gt, 3))
print("connection time ", perf.connection_time_per_gt)
print("energy per UAV  ", np.round(perf.energy_per_uav), "J of", cfg.e_max)
print("physical rates  ", np.round(report.physical_performance.rate_per_gt, 3))
print("rounded schedule", np.round(report.rounded_performance.rate_per_gt, 3))

speeds = np.linalg.norm(report.plan.velocities, axis=-1)
print(f"speed range {speeds.min():.2f} to {speeds.max():.2f} m/s")
