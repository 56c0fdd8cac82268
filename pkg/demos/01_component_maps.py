# %% [markdown]
# Synthetic component maps: where the engine is efficient and where it stops burning ultra-lean.

# %%
import numpy as np

from h2ems.maps import LHV_H2, synthetic_map_set

maps = synthetic_map_set()
eng = maps.engine
speeds = np.array([120.0, 200.0, 300.0, 400.0, 500.0])
torques = np.array([20.0, 45.0, 80.0, 120.0, 160.0, 220.0])

# %%
print("brake efficiency [%] (rows: torque N*m, columns: speed rad/s)")
print("        " + "".join(f"{w:8.0f}" for w in speeds))
for t in torques:
    row = []
    for w in speeds:
        fuel = maps.fuel.interp(w, t)
        row.append(np.nan if t > eng.torque_max(w) else 100 * t * w / (fuel * LHV_H2))
    print(f"{t:6.0f}  " + "".join(f"{x:8.1f}" for x in row))

# %%
print("\nengine-out NOx [mg/s] just below and above the ultra-lean isoline")
for w in speeds:
    iso = float(eng.isoline(w))
    below, above = maps.nox.interp(w, iso - 5), maps.nox.interp(w, iso + 15)
    print(f"  {w:5.0f} rad/s  isoline {iso:6.1f} N*m   {below:6.2f} -> {above:6.2f}")

# %%
w = np.linspace(0, 1100, 6)
t = 100.0
print("\nmotor loss at 100 N*m [W]:", np.round(maps.motor_loss.interp(w, t)).astype(int))
