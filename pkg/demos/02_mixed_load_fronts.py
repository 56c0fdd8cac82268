# %% [markdown]
# H2/NOx fronts of the three hybrids on the bundled mixed urban/rural/motorway cycle,
# normalized by the engine-only vehicle. Takes a few minutes on one core.

# %%
import time

import numpy as np

from h2ems import BatterySpec, DpConfig, compute_baseline, extract_calibrations, make_architecture, mixed_load_cycle
from h2ems import operating_point_stats, sweep_pareto, synthetic_map_set

maps = synthetic_map_set()
battery = BatterySpec()
mission = mixed_load_cycle()
print(f"{mission.name}: {mission.duration:.0f} s, {mission.distance() / 1000:.1f} km")

base = compute_baseline(maps, battery, mission)
print(f"engine-only vehicle: {base.h2_kg:.3f} kg H2, {base.nox_mg:.0f} mg NOx")

# %%
fronts = {}
for arch in ("parallel", "series", "mixed"):
    t0 = time.perf_counter()
    fronts[arch] = sweep_pareto(make_architecture(arch), maps, battery, mission, DpConfig())
    print(f"{arch:8s} solved in {time.perf_counter() - t0:.0f} s")

# %%
print("\nnormalized fronts (NOx/NOx0 -> H2/H2_0)")
for arch, front in fronts.items():
    pts = [f"{x / base.nox_mg:.3f}->{h / base.h2_kg:.3f}" for x, h in zip(front.nox[::4], front.h2[::4])]
    print(f"  {arch:8s} " + "  ".join(pts))

# %%
for arch, front in fronts.items():
    k = extract_calibrations(front, base)
    saving = 1 - k.target.h2_kg / base.h2_kg
    print(f"{arch:8s} H2 saving at NOx0 {100 * saving:5.1f}%   NOx reduction at saturation {100 * k.fx_reduction:5.1f}%"
          f"   extra H2 for -90% NOx {100 * k.dh2_add:5.1f}%")

# %%
mixed = fronts["mixed"]
for label, point in (("H2-optimal", mixed.star), ("NOx-optimal", mixed.square)):
    s = operating_point_stats(point.trajectory, maps.engine)
    share = ", ".join(f"mode {m}: {100 * v:.0f}%" for m, v in s.mode_share.items())
    print(f"{label:12s} {share}; above isoline {100 * s.isoline_exceedance:.0f}% of engine time;"
          f" EV energy {s.ev_energy_mj:.1f} MJ")

nox = base.trajectory.mdot_nox
print(f"\nbase-vehicle NOx spikes (>10x median): {int(np.sum(nox > 10 * np.median(nox)))} samples")
