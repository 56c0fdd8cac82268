# %% [markdown]
# Two hard missions for the mixed hybrid: a long mountain climb, which still offers
# braking energy in the hairpins, and a constant 142 km/h cruise, which offers none.

# %%
from h2ems import BatterySpec, DpConfig, compute_baseline, extract_calibrations, make_architecture
from h2ems import make_highway_cycle, make_mountain_cycle, operating_point_stats, sweep_pareto, synthetic_map_set

maps = synthetic_map_set()
battery = BatterySpec()
spec = make_architecture("mixed")

# %%
for mission in (make_mountain_cycle(), make_highway_cycle()):
    base = compute_baseline(maps, battery, mission)
    front = sweep_pareto(spec, maps, battery, mission, DpConfig())
    k = extract_calibrations(front, base)
    print(f"\n{mission.name}: {mission.duration:.0f} s, base {base.h2_kg:.3f} kg H2 / {base.nox_mg:.0f} mg NOx")
    if k.s_triangle_reachable:
        print(f"  -90% NOx reachable; costs {100 * k.dh2_add:.1f}% H2 over the H2 optimum")
    else:
        print(f"  -90% NOx not reachable; floor is {100 * k.fx:.1f}% of the base NOx")
        print(f"  reaching it costs {100 * k.dh2_add:.1f}% H2 over the H2 optimum")
    for p in front.points[::6]:
        s = operating_point_stats(p.trajectory, maps.engine)
        print(f"  mu {p.mu:8.1e}  H2 {p.h2_kg / base.h2_kg:5.3f}  NOx {p.nox_mg / base.nox_mg:5.3f}"
              f"  series {100 * s.mode_share[1]:3.0f}%  parallel {100 * s.mode_share[2]:3.0f}%")
