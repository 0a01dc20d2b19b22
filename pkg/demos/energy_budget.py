"""How the energy budget trades off against the fair rate.

Solves once without a binding budget, then again with the per-UAV budget cut
to fractions of what the first run used.
"""
from uavfair import default_config
from uavfair.bcd import sweep_energy

cfg = default_config(seed=0, N=40)
base, e_ref, points = sweep_energy(cfg, fractions=(0.95, 0.8, 0.6, 0.4, 0.3))

print(f"unconstrained: {base.min_rate:.4f} using at most {e_ref:.0f} J per UAV")
for p in points:
    r = p.report
    line = f"{p.fraction:5.2f} x E_m = {p.e_max:8.0f} J: {r.status}"
    if r.performance is not None:
        line += f", min rate {r.min_rate:.4f} ({r.min_rate / base.min_rate:.1%})"
    else:
        line += f" ({r.message})"
    print(line)
