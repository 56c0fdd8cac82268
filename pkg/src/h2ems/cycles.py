"""Driving missions: CSV ingestion, resampling and synthetic worst-case cycles."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

KMH = 1 / 3.6


class ParseError(ValueError):
    pass


class NonMonotonicTime(ParseError):
    pass


class NegativeSpeed(ParseError):
    pass


@dataclass(frozen=True, eq=False)
class DrivingMission:
    """Uniformly sampled speed/grade profile.

    ``a[k]`` is the forward difference ``(v[k+1] - v[k]) / dt``; the last
    sample repeats the previous acceleration so all arrays share a length.
    """

    name: str
    dt: float
    v: np.ndarray
    grade: np.ndarray
    a: np.ndarray
    altitude: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.v, dtype=float)
        grade = np.asarray(self.grade, dtype=float)
        a = np.asarray(self.a, dtype=float)
        if v.ndim != 1 or v.size < 2:
            raise ValueError("a mission needs at least two samples")
        if grade.shape != v.shape or a.shape != v.shape:
            raise ValueError("speed, grade and acceleration must have equal length")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if np.any(v < 0):
            raise NegativeSpeed("speeds must be non-negative")
        if np.any(np.abs(a[:-1] - np.diff(v) / self.dt) >= 1e-9):
            raise ValueError("acceleration is not the forward difference of speed")
        arrays = [v, grade, a]
        if self.altitude is not None:
            alt = np.asarray(self.altitude, dtype=float)
            object.__setattr__(self, "altitude", alt)
            arrays.append(alt)
        for arr in arrays:
            arr.setflags(write=False)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "grade", grade)
        object.__setattr__(self, "a", a)

    def __len__(self):
        return self.v.size

    @property
    def n_steps(self) -> int:
        """Number of control intervals (samples minus one)."""
        return self.v.size - 1

    @property
    def duration(self) -> float:
        return self.n_steps * self.dt

    @property
    def time(self) -> np.ndarray:
        return np.arange(self.v.size) * self.dt

    def distance(self) -> float:
        return float(np.trapezoid(self.v, dx=self.dt))

    def stage_points(self):
        """Per-interval (speed, acceleration, grade) used by the drivetrain model.

        Speed and grade are interval means; the acceleration is the forward
        difference, so the speed trace is followed exactly.
        """
        v = 0.5 * (self.v[:-1] + self.v[1:])
        grade = 0.5 * (self.grade[:-1] + self.grade[1:])
        return v, self.a[:-1].copy(), grade


def from_speed_trace(name, dt, v, grade=None, altitude=None) -> DrivingMission:
    v = np.asarray(v, dtype=float)
    a = np.empty_like(v)
    a[:-1] = np.diff(v) / dt
    a[-1] = a[-2] if v.size > 1 else 0.0
    if grade is None:
        grade = np.zeros_like(v)
    return DrivingMission(name, dt, v, np.asarray(grade, dtype=float), a, altitude)


def _column(header, rows, names, path):
    for name in names:
        if name in header:
            idx = header.index(name)
            try:
                return name, np.array([float(r[idx]) for r in rows])
            except (ValueError, IndexError) as exc:
                raise ParseError(f"{path}: bad value in column {name!r}: {exc}") from None
    return None, None


def _grade_from_altitude(distance, altitude):
    # central difference over distance; one-sided at the ends
    if np.any(np.diff(distance) <= 0):
        # standstill samples: fall back to difference over the sample index
        slope = np.gradient(altitude) / np.maximum(np.gradient(distance), 1e-9)
        slope = np.where(np.gradient(distance) > 1e-9, slope, 0.0)
    else:
        slope = np.gradient(altitude, distance)
    return np.arctan(slope)


def load_mission(path, resample_dt: float = 1.0, name: str | None = None) -> DrivingMission:
    """Read a mission CSV and resample it to a uniform time step.

    Columns: ``time_s``; ``speed_mps`` or ``speed_kmh``; optionally
    ``grade_rad``, ``grade_percent`` or ``altitude_m``.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read mission file {path}: {exc.strerror or exc}") from None
    reader = csv.reader(line for line in text.splitlines() if line.strip() and not line.startswith("#"))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise ParseError(f"{path}: empty file") from None
    rows = [r for r in reader]
    if len(rows) < 2:
        raise ParseError(f"{path}: need at least two data rows")

    _, t = _column(header, rows, ["time_s"], path)
    if t is None:
        raise ParseError(f"{path}: missing time_s column")
    unit, speed = _column(header, rows, ["speed_mps", "speed_kmh"], path)
    if speed is None:
        raise ParseError(f"{path}: missing speed_mps or speed_kmh column")
    if unit == "speed_kmh":
        speed = speed * KMH
    if not np.all(np.isfinite(t)) or not np.all(np.isfinite(speed)):
        raise ParseError(f"{path}: non-finite values")
    if np.any(np.diff(t) <= 0):
        k = int(np.argmax(np.diff(t) <= 0)) + 1
        raise NonMonotonicTime(f"{path}: time not strictly increasing at row {k + 1}")
    if np.any(speed < 0):
        k = int(np.argmax(speed < 0))
        raise NegativeSpeed(f"{path}: negative speed at row {k + 1}")
    if resample_dt <= 0:
        raise ValueError("resample_dt must be positive")

    n = int(np.floor((t[-1] - t[0]) / resample_dt + 1e-9)) + 1
    tq = t[0] + resample_dt * np.arange(n)
    v = np.interp(tq, t, speed)

    gname, gval = _column(header, rows, ["grade_rad", "grade_percent", "altitude_m"], path)
    altitude = None
    if gname == "grade_rad":
        grade = np.interp(tq, t, gval)
    elif gname == "grade_percent":
        grade = np.arctan(np.interp(tq, t, gval) / 100.0)
    elif gname == "altitude_m":
        altitude = np.interp(tq, t, gval)
        dist = np.concatenate([[0.0], np.cumsum(0.5 * (v[1:] + v[:-1]) * resample_dt)])
        grade = _grade_from_altitude(dist, altitude)
    else:
        grade = np.zeros(n)
    if n < 2:
        raise ParseError(f"{path}: mission shorter than one resampling step")
    return from_speed_trace(name or path.stem, resample_dt, v, grade, altitude)


def make_highway_cycle(accel_duration: float = 40.0, cruise_duration: float = 600.0, dt: float = 1.0,
                       speed_kmh: float = 142.0) -> DrivingMission:
    """Linear launch to a constant cruise speed on a flat road."""
    if accel_duration <= 0 or cruise_duration <= 0:
        raise ValueError("durations must be positive")
    total = accel_duration + cruise_duration
    t = np.arange(int(round(total / dt)) + 1) * dt
    v_cruise = speed_kmh * KMH
    v = np.where(t < accel_duration, v_cruise * t / accel_duration, v_cruise)
    return from_speed_trace("highway", dt, v)


def make_mountain_cycle(climb_m: float = 1270.0, cruise_kmh: float = 70.0, hairpin_slowdowns: int = 12,
                        grade_percent: float = 7.5, hairpin_kmh: float = 30.0, hairpin_duration: float = 40.0,
                        ramp_duration: float = 30.0, dt: float = 1.0) -> DrivingMission:
    """Continuous climb at constant speed, interrupted by evenly spaced hairpin slowdowns.

    Each hairpin is a symmetric dip to ``hairpin_kmh`` lasting
    ``hairpin_duration`` seconds. The climb ends once ``climb_m`` is reached.
    """
    if climb_m <= 0:
        raise ValueError("climb_m must be positive")
    slope = grade_percent / 100.0
    grade_rad = float(np.arctan(slope))
    v_c = cruise_kmh * KMH
    climb_distance = climb_m / np.sin(grade_rad)
    t_end = climb_distance / v_c + hairpin_slowdowns * hairpin_duration + ramp_duration
    n = int(np.ceil(1.5 * t_end / dt)) + 1
    t = np.arange(n) * dt
    # spread the hairpins over the actual climb time; converges in a couple of passes
    for _ in range(20):
        v = np.minimum(t / ramp_duration, 1.0) * v_c
        spacing = (t_end - ramp_duration) / max(hairpin_slowdowns, 1)
        for i in range(hairpin_slowdowns):
            phase = np.abs(t - (ramp_duration + (i + 0.5) * spacing)) / (0.5 * hairpin_duration)
            dip = np.where(phase < 1, 0.5 * (1 + np.cos(np.pi * phase)), 0.0)
            v = v - dip * (v_c - hairpin_kmh * KMH)
        v = np.maximum(v, 0.0)
        dist = np.concatenate([[0.0], np.cumsum(0.5 * (v[1:] + v[:-1]) * dt)])
        altitude = dist * np.sin(grade_rad)
        end = min(int(np.searchsorted(altitude, climb_m)) + 1, n)
        if abs(t[end - 1] - t_end) <= dt:
            break
        t_end = float(t[end - 1])
    return from_speed_trace("mountain", dt, v[:end], np.full(end, grade_rad), altitude[:end])


def mixed_load_cycle(dt: float = 1.0) -> DrivingMission:
    """Bundled ~30 min mixed urban/rural/motorway cycle (a WLTC stand-in, not WLTC data)."""
    ref = resources.files("h2ems") / "data" / "mixed_load.csv"
    with resources.as_file(ref) as p:
        return load_mission(p, dt, name="mixed-load")


BUILTIN = {
    "highway": make_highway_cycle,
    "mountain": make_mountain_cycle,
    "mixed-load": mixed_load_cycle,
}


def resolve_mission(name_or_path, dt: float = 1.0) -> DrivingMission:
    """Return a builtin cycle by name, else load the CSV at that path."""
    key = str(name_or_path)
    if key in BUILTIN:
        fn = BUILTIN[key]
        return fn(dt=dt)
    return load_mission(key, dt)
