"""Gridded component characteristics: engine fuel/NOx maps and machine loss maps.

All maps are speed x torque lookups evaluated by bilinear interpolation.
Queries outside the grid's bounding box are reported as out of range
(``nan`` for the vectorized path) instead of being clamped, so that an
optimizer treats them as infeasible controls.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

#: Lower heating value of hydrogen [J/kg].
LHV_H2 = 120e6


class OutOfRange(ValueError):
    """Raised when a map is queried outside its bounding box."""


class InvalidCalibration(ValueError):
    """Raised when synthetic-map parameters are mutually inconsistent."""


class MapKind(str, enum.Enum):
    ENGINE_FUEL = "EngineFuel"
    ENGINE_NOX = "EngineNOx"
    MOTOR_LOSS = "MotorLoss"
    GENERATOR_LOSS = "GeneratorLoss"


@dataclass(frozen=True, eq=False)
class ComponentMap2D:
    """Speed x torque lookup table.

    ``values[j, i]`` is the value at ``torque_axis[j]`` and ``speed_axis[i]``,
    i.e. one row per torque, matching the on-disk layout.
    Units: fuel kg/s, NOx mg/s, losses W.
    """

    speed_axis: np.ndarray
    torque_axis: np.ndarray
    values: np.ndarray
    kind: MapKind

    def __post_init__(self):
        speed = np.asarray(self.speed_axis, dtype=float)
        torque = np.asarray(self.torque_axis, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if speed.ndim != 1 or torque.ndim != 1 or speed.size < 2 or torque.size < 2:
            raise ValueError("axes must be 1-D with at least two nodes")
        if np.any(np.diff(speed) <= 0) or np.any(np.diff(torque) <= 0):
            raise ValueError("axes must be strictly increasing")
        if values.shape != (torque.size, speed.size):
            raise ValueError(
                f"values shape {values.shape} does not match axes "
                f"({torque.size}, {speed.size})"
            )
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ValueError("map values must be finite and non-negative")
        for arr in (speed, torque, values):
            arr.setflags(write=False)
        object.__setattr__(self, "speed_axis", speed)
        object.__setattr__(self, "torque_axis", torque)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "kind", MapKind(self.kind))

    def interp(self, omega, torque) -> np.ndarray:
        """Vectorized bilinear interpolation; ``nan`` outside the grid."""
        return bilinear(self.speed_axis, self.torque_axis, self.values, omega, torque)

    def lookup(self, omega: float, torque: float) -> float:
        value = float(self.interp(omega, torque))
        if np.isnan(value):
            raise OutOfRange(
                f"{self.kind.value}: ({omega:g} rad/s, {torque:g} N*m) outside "
                f"[{self.speed_axis[0]:g}, {self.speed_axis[-1]:g}] x "
                f"[{self.torque_axis[0]:g}, {self.torque_axis[-1]:g}]"
            )
        return value

    def contains(self, omega, torque) -> np.ndarray:
        omega = np.asarray(omega, dtype=float)
        torque = np.asarray(torque, dtype=float)
        return (
            (omega >= self.speed_axis[0])
            & (omega <= self.speed_axis[-1])
            & (torque >= self.torque_axis[0])
            & (torque <= self.torque_axis[-1])
        )


def _locate(axis: np.ndarray, x: np.ndarray):
    # cell index and fractional position; the last node maps onto the last cell
    idx = np.searchsorted(axis, x, side="right") - 1
    idx = np.clip(idx, 0, axis.size - 2)
    lo = axis[idx]
    frac = (x - lo) / (axis[idx + 1] - lo)
    return idx, frac


def bilinear(speed_axis, torque_axis, values, omega, torque) -> np.ndarray:
    omega, torque = np.broadcast_arrays(
        np.asarray(omega, dtype=float), np.asarray(torque, dtype=float)
    )
    inside = (
        (omega >= speed_axis[0])
        & (omega <= speed_axis[-1])
        & (torque >= torque_axis[0])
        & (torque <= torque_axis[-1])
    )
    w_safe = np.where(inside, omega, speed_axis[0])
    t_safe = np.where(inside, torque, torque_axis[0])
    i, fx = _locate(speed_axis, w_safe)
    j, fy = _locate(torque_axis, t_safe)
    v00 = values[j, i]
    v01 = values[j, i + 1]
    v10 = values[j + 1, i]
    v11 = values[j + 1, i + 1]
    out = (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11)
    # exact node values regardless of floating-point blending
    out = np.where((fx == 0) & (fy == 0), v00, out)
    out = np.where(inside, out, np.nan)
    return out if out.ndim else out[()]


@dataclass(frozen=True)
class EngineLimits:
    """Speed range and per-speed torque curves of the combustion engine."""

    omega_min: float
    omega_max: float
    speed_axis: np.ndarray
    torque_max_curve: np.ndarray
    ultra_lean_isoline: np.ndarray

    def __post_init__(self):
        if not self.omega_min < self.omega_max:
            raise ValueError("omega_min must be below omega_max")
        if np.any(np.asarray(self.ultra_lean_isoline) > np.asarray(self.torque_max_curve)):
            raise ValueError("ultra-lean isoline exceeds the full-load curve")

    def torque_max(self, omega):
        return np.interp(omega, self.speed_axis, self.torque_max_curve)

    def isoline(self, omega):
        return np.interp(omega, self.speed_axis, self.ultra_lean_isoline)


@dataclass(frozen=True)
class MachineLimits:
    """Torque envelope of an electric machine: constant torque, then constant power."""

    rated_power: float
    peak_torque: float
    omega_max: float

    def torque_max(self, omega):
        omega = np.abs(np.asarray(omega, dtype=float))
        with np.errstate(divide="ignore"):
            t = np.where(omega > 0, self.rated_power / np.maximum(omega, 1e-300), np.inf)
        return np.minimum(self.peak_torque, t)


@dataclass(frozen=True)
class EngineCalibration:
    """Parameters of the synthetic H2 engine maps.

    None of these are measured values; they are tuned to reproduce the
    published anchors (163 kW rating, <2 mg/s NOx in the ultra-lean region,
    efficiency droop above ~230 rad/s, poor efficiency at low load).
    """

    rated_power: float = 163e3
    peak_torque: float = 340.0
    low_speed_torque: float = 220.0
    omega_min: float = 100.0
    omega_max: float = 600.0
    omega_full_torque: float = 250.0
    # fuel map
    peak_indicated_efficiency: float = 0.49
    friction_torque: tuple[float, float] = (24.0, 0.05)  # N*m, N*m per rad/s
    low_speed_penalty: float = 0.10
    low_speed_knee: float = 180.0
    droop_speed: float = 230.0
    droop_at_max_speed: float = 0.15
    high_load_knee: float = 220.0
    high_load_penalty: float = 0.06
    # NOx map
    isoline_at_idle: float = 112.0
    isoline_at_max_speed: float = 80.0
    # ultra-lean NOx scales with the fuel burnt [mg NOx per kg H2]
    nox_per_fuel: float = 1000.0
    nox_step: float = 30.0
    nox_step_width: float = 8.0
    nox_quadratic: float = 0.005
    # grid
    speed_step: float = 10.0
    torque_step: float = 1.0

    def torque_max(self, omega):
        omega = np.asarray(omega, dtype=float)
        ramp = self.low_speed_torque + (self.peak_torque - self.low_speed_torque) * np.clip(
            (omega - self.omega_min) / (self.omega_full_torque - self.omega_min), 0.0, 1.0
        )
        return np.minimum(ramp, self.rated_power / omega)

    def isoline(self, omega):
        frac = (np.asarray(omega, dtype=float) - self.omega_min) / (self.omega_max - self.omega_min)
        return self.isoline_at_idle + (self.isoline_at_max_speed - self.isoline_at_idle) * frac

    def indicated_efficiency(self, omega, torque):
        omega = np.asarray(omega, dtype=float)
        torque = np.asarray(torque, dtype=float)
        low = np.clip((self.low_speed_knee - omega) / self.low_speed_knee, 0.0, None)
        high = np.clip(
            (omega - self.droop_speed) / (self.omega_max - self.droop_speed), 0.0, None
        )
        load = np.clip(
            (torque - self.high_load_knee) / (self.peak_torque - self.high_load_knee), 0.0, None
        )
        return (
            self.peak_indicated_efficiency
            * (1 - self.low_speed_penalty * low**2)
            * (1 - self.droop_at_max_speed * high)
            * (1 - self.high_load_penalty * load**2)
        )

    def fuel_rate(self, omega, torque):
        """Willans-type fuel rate [kg/s]: (T + T_friction) * omega / (eta_ind * LHV)."""
        omega = np.asarray(omega, dtype=float)
        t_fric = self.friction_torque[0] + self.friction_torque[1] * omega
        return (torque + t_fric) * omega / (self.indicated_efficiency(omega, torque) * LHV_H2)

    def nox_rate(self, omega, torque):
        """Engine-out NOx [mg/s]; steep rise once torque leaves the ultra-lean region."""
        torque = np.asarray(torque, dtype=float)
        iso = self.isoline(omega)
        lean = self.nox_per_fuel * self.fuel_rate(omega, torque)
        excess = np.clip(torque - iso, 0.0, None)
        rich = self.nox_step * (1 - np.exp(-excess / self.nox_step_width)) + self.nox_quadratic * excess**2
        return lean + rich


def synthesize_engine_maps(params: EngineCalibration | None = None):
    """Build (fuel map, NOx map, engine limits) from a calibration."""
    p = params or EngineCalibration()
    if p.peak_torque * p.omega_max < p.rated_power * (1 - 1e-9):
        raise InvalidCalibration(
            f"rated power {p.rated_power:g} W unreachable: peak torque x max speed = "
            f"{p.peak_torque * p.omega_max:g} W"
        )
    if p.omega_full_torque * p.peak_torque > p.rated_power:
        raise InvalidCalibration("full-load curve exceeds rated power before full torque is reached")
    if p.low_speed_torque > p.peak_torque or p.low_speed_torque <= 0:
        raise InvalidCalibration("low-speed torque must lie in (0, peak torque]")

    speed = np.arange(p.omega_min, p.omega_max + 0.5 * p.speed_step, p.speed_step)
    speed[-1] = p.omega_max
    torque = np.arange(0.0, p.peak_torque + 0.5 * p.torque_step, p.torque_step)
    torque[-1] = p.peak_torque
    W, T = np.meshgrid(speed, torque)

    fuel = ComponentMap2D(speed, torque, p.fuel_rate(W, T), MapKind.ENGINE_FUEL)
    nox = ComponentMap2D(speed, torque, p.nox_rate(W, T), MapKind.ENGINE_NOX)
    tmax = p.torque_max(speed)
    iso = np.minimum(p.isoline(speed), tmax)
    limits = EngineLimits(p.omega_min, p.omega_max, speed.copy(), tmax, iso)
    return fuel, nox, limits


@dataclass(frozen=True)
class MachineCalibration:
    rated_power: float = 173e3
    peak_torque: float = 380.0
    omega_max: float = 1100.0
    copper: float = 0.09  # W per (N*m)^2
    friction: float = 0.2  # W per rad/s
    iron: float = 0.0005  # W per (rad/s)^2
    speed_step: float = 10.0
    torque_step: float = 4.0

    def loss(self, omega, torque):
        omega = np.abs(np.asarray(omega, dtype=float))
        torque = np.asarray(torque, dtype=float)
        return self.copper * torque**2 + self.friction * omega + self.iron * omega**2


def synthesize_machine_maps(rated_power: float = 173e3, params: MachineCalibration | None = None):
    """Loss maps for motor and generator; both are the same machine, so the maps are identical."""
    p = params or MachineCalibration(rated_power=rated_power)
    if params is not None and rated_power != p.rated_power:
        p = MachineCalibration(**{**p.__dict__, "rated_power": rated_power})
    speed = np.arange(0.0, p.omega_max + 0.5 * p.speed_step, p.speed_step)
    speed[-1] = p.omega_max
    n_t = int(round(p.peak_torque / p.torque_step))
    torque = np.linspace(-p.peak_torque, p.peak_torque, 2 * n_t + 1)
    W, T = np.meshgrid(speed, torque)
    values = p.loss(W, T)
    motor = ComponentMap2D(speed, torque, values, MapKind.MOTOR_LOSS)
    generator = ComponentMap2D(speed, torque, values.copy(), MapKind.GENERATOR_LOSS)
    return motor, generator


def machine_limits(rated_power: float = 173e3, params: MachineCalibration | None = None) -> MachineLimits:
    p = params or MachineCalibration(rated_power=rated_power)
    return MachineLimits(rated_power, p.peak_torque, p.omega_max)


@dataclass(frozen=True)
class MapSet:
    """Everything the drivetrain model needs from component characteristics."""

    fuel: ComponentMap2D
    nox: ComponentMap2D
    engine: EngineLimits
    motor_loss: ComponentMap2D
    generator_loss: ComponentMap2D
    motor: MachineLimits = field(default_factory=machine_limits)
    generator: MachineLimits = field(default_factory=machine_limits)


def synthetic_map_set(
    engine: EngineCalibration | None = None, machine: MachineCalibration | None = None
) -> MapSet:
    fuel, nox, limits = synthesize_engine_maps(engine)
    mcal = machine or MachineCalibration()
    motor_loss, gen_loss = synthesize_machine_maps(mcal.rated_power, mcal)
    lim = machine_limits(mcal.rated_power, mcal)
    return MapSet(fuel, nox, limits, motor_loss, gen_loss, lim, lim)


# --- file I/O ---------------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_map(path, cmap: ComponentMap2D) -> None:
    """Write a map as CSV: three ``#`` header rows, then one value row per torque node."""
    lines = [
        f"# kind: {cmap.kind.value}",
        "# speed_axis: " + ",".join(_fmt(x) for x in cmap.speed_axis),
        "# torque_axis: " + ",".join(_fmt(x) for x in cmap.torque_axis),
    ]
    lines += [",".join(_fmt(x) for x in row) for row in cmap.values]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_map(path) -> ComponentMap2D:
    header = {}
    rows = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, val = line[1:].partition(":")
            header[key.strip()] = val.strip()
            continue
        try:
            rows.append([float(x) for x in line.split(",")])
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
    missing = {"kind", "speed_axis", "torque_axis"} - header.keys()
    if missing:
        raise ValueError(f"{path}: missing header rows {sorted(missing)}")
    speed = np.array([float(x) for x in header["speed_axis"].split(",")])
    torque = np.array([float(x) for x in header["torque_axis"].split(",")])
    return ComponentMap2D(speed, torque, np.array(rows), MapKind(header["kind"]))


_MAP_FILES = {
    "fuel": "engine_fuel.csv",
    "nox": "engine_nox.csv",
    "motor_loss": "motor_loss.csv",
    "generator_loss": "generator_loss.csv",
}


def save_map_set(directory, maps: MapSet) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for attr, name in _MAP_FILES.items():
        write_map(d / name, getattr(maps, attr))
    e = maps.engine
    rows = ["omega_rad_s,torque_max_nm,isoline_nm"]
    rows += [f"{_fmt(w)},{_fmt(t)},{_fmt(i)}" for w, t, i in zip(e.speed_axis, e.torque_max_curve, e.ultra_lean_isoline)]
    (d / "engine_limits.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    m = []
    for name, lim in (("motor", maps.motor), ("generator", maps.generator)):
        m.append(f"{name},{_fmt(lim.rated_power)},{_fmt(lim.peak_torque)},{_fmt(lim.omega_max)}")
    (d / "machine_limits.csv").write_text(
        "machine,rated_power_w,peak_torque_nm,omega_max_rad_s\n" + "\n".join(m) + "\n", encoding="utf-8"
    )


def load_map_set(directory) -> MapSet:
    d = Path(directory)
    loaded = {attr: read_map(d / name) for attr, name in _MAP_FILES.items()}
    lim = np.loadtxt(d / "engine_limits.csv", delimiter=",", skiprows=1, ndmin=2)
    engine = EngineLimits(float(lim[0, 0]), float(lim[-1, 0]), lim[:, 0], lim[:, 1], lim[:, 2])
    machines = {}
    ml = d / "machine_limits.csv"
    if ml.exists():
        for line in ml.read_text(encoding="utf-8").splitlines()[1:]:
            name, p, t, w = line.split(",")
            machines[name] = MachineLimits(float(p), float(t), float(w))
    default = machine_limits()
    return MapSet(
        engine=engine,
        motor=machines.get("motor", default),
        generator=machines.get("generator", default),
        **loaded,
    )
