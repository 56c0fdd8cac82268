"""Base-vehicle normalization, KPIs, named calibrations and operating-point statistics."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .cycles import DrivingMission
from .maps import EngineLimits, MapSet
from .optimizer import FrontPoint, Infeasible, ParetoFront, Trajectory
from .powertrain import Architecture, ArchitectureSpec, BatterySpec, Reason, evaluate_controls, make_architecture

UNDEFINED = float("nan")


@dataclass(frozen=True, eq=False)
class Baseline:
    h2_kg: float
    nox_mg: float
    trajectory: Trajectory

    @property
    def defined(self) -> bool:
        return self.h2_kg > 0 and self.nox_mg > 0


def compute_baseline(maps: MapSet, battery: BatterySpec, mission: DrivingMission,
                     spec: ArchitectureSpec | None = None) -> Baseline:
    """Simulate the engine-only vehicle; gears follow the vehicle speed, so there is nothing to optimize."""
    spec = spec or make_architecture(Architecture.BASE)
    if spec.kind is not Architecture.BASE:
        raise ValueError("baseline needs the base architecture")
    v, a, grade = mission.stage_points()
    batch = evaluate_controls(spec, maps, v, a, grade, 2, 0.0, 0.0, 0.0)
    bad = np.flatnonzero(~batch.feasible)
    if bad.size:
        k = int(bad[0])
        why = Reason(int(batch.reason[k])).name.lower().replace("_", " ")
        raise Infeasible(
            f"base vehicle cannot follow {mission.name} at step {k} (t = {k * mission.dt:g} s, "
            f"v = {v[k]:.2f} m/s, T_req = {batch.t_req[k]:.1f} N*m): {why}",
            step=k,
        )
    n = v.size
    traj = Trajectory(
        architecture=spec.kind, mission=mission.name, mu=0.0, dt=mission.dt,
        soc=np.full(n + 1, np.nan), t_e_req=batch.t_e_req, q=np.zeros(n), mode=batch.mode, gear=batch.gear,
        t_req=batch.t_req, omega_e=batch.omega_e, t_e=batch.t_e, omega_mot=batch.omega_mot, t_mot=batch.t_mot,
        omega_gen=batch.omega_gen, t_gen=batch.t_gen, t_brake=batch.t_brake, mdot_fuel=batch.mdot_fuel,
        mdot_nox=batch.mdot_nox, p_b=batch.p_b, cost=float(np.sum(batch.mdot_fuel) * mission.dt),
        band=(math.nan, math.nan),
    )
    return Baseline(traj.h2_kg, traj.nox_mg, traj)


# --- front interpolation and KPIs ---------------------------------------------------------

def h2_at_nox(h2, nox, level: float) -> float | None:
    """H2 on a weight-ordered front where NOx first drops to ``level``, by linear interpolation.

    Returns the first point's H2 if it is already at or below ``level`` and
    ``None`` if the front never reaches it.
    """
    h2 = np.asarray(h2, dtype=float)
    nox = np.asarray(nox, dtype=float)
    hit = np.flatnonzero(nox <= level)
    if hit.size == 0:
        return None
    i = int(hit[0])
    if i == 0:
        return float(h2[0])
    x0, x1 = nox[i - 1], nox[i]
    t = (x0 - level) / (x0 - x1)
    return float(h2[i - 1] + t * (h2[i] - h2[i - 1]))


@dataclass(frozen=True)
class Calibration:
    name: str
    h2_kg: float
    nox_mg: float
    mu: float | None = None  # None for interpolated points


@dataclass(frozen=True)
class KpiReport:
    """Signed KPI fractions.

    ``dh2_add = 1 - H2(star) / H2(triangle)``, ``dh2 = 1 - H2(triangle) / H2_0``
    and ``fx = NOx(square) / NOx_0`` (reported as ``fx_reduction = 1 - fx``).
    When the 90 % target is unreachable both H2 KPIs use the saturated point
    instead and ``s_triangle_reachable`` is False. NaN marks undefined values
    on a zero baseline.
    """

    dh2_add: float
    dh2: float
    fx: float
    fx_reduction: float
    s_triangle_reachable: bool
    star: Calibration
    square: Calibration
    triangle: Calibration | None
    target: Calibration | None
    nox_target_fraction: float
    reference_nox_fraction: float
    saturated: bool = True

    def as_dict(self) -> dict:
        return {
            "dh2_add": self.dh2_add,
            "dh2": self.dh2,
            "fx_reduction": self.fx_reduction,
            "s_triangle_reachable": self.s_triangle_reachable,
        }


def _ratio(a, b):
    return a / b if b > 0 else UNDEFINED


def extract_calibrations(front: ParetoFront, base: Baseline, nox_target_fraction: float = 0.10,
                         reference_nox_fraction: float = 1.0) -> KpiReport:
    if len(front) == 0:
        raise ValueError("empty front")
    h2, nox = front.h2, front.nox
    star = Calibration("star", float(h2[0]), float(nox[0]), front.points[0].mu)
    sq = front.square
    square = Calibration("square", sq.h2_kg, sq.nox_mg, sq.mu)

    triangle = target = None
    if base.nox_mg > 0:
        level = nox_target_fraction * base.nox_mg
        h = h2_at_nox(h2, nox, level)
        if h is not None:
            triangle = Calibration("triangle", h, min(level, float(nox[0])))
        ref = reference_nox_fraction * base.nox_mg
        h = h2_at_nox(h2, nox, ref)
        if h is not None:
            target = Calibration("target", h, min(ref, float(nox[0])))

    chosen = triangle or square
    dh2_add = 1 - _ratio(star.h2_kg, chosen.h2_kg) if chosen.h2_kg > 0 else UNDEFINED
    dh2 = 1 - _ratio(chosen.h2_kg, base.h2_kg)
    fx = _ratio(square.nox_mg, base.nox_mg)
    return KpiReport(
        dh2_add=float(dh2_add), dh2=float(dh2), fx=float(fx), fx_reduction=float(1 - fx),
        s_triangle_reachable=triangle is not None, star=star, square=square, triangle=triangle, target=target,
        nox_target_fraction=nox_target_fraction, reference_nox_fraction=reference_nox_fraction,
        saturated=front.saturated,
    )


def normalized_front(front: ParetoFront, base: Baseline) -> tuple[np.ndarray, np.ndarray]:
    return front.h2 / base.h2_kg if base.h2_kg > 0 else front.h2 * UNDEFINED, (
        front.nox / base.nox_mg if base.nox_mg > 0 else front.nox * UNDEFINED
    )


# --- operating points -----------------------------------------------------------------------

@dataclass(frozen=True)
class OperatingStats:
    mode_counts: dict
    mode_share: dict
    engine_points: list  # [(omega_e, t_e, count)], engine-on samples only
    ev_energy_mj: float
    isoline_exceedance: float

    def as_dict(self) -> dict:
        return {
            "mode_share": {str(k): v for k, v in self.mode_share.items()},
            "ev_energy_mj": self.ev_energy_mj,
            "isoline_exceedance": self.isoline_exceedance,
        }


def operating_point_stats(traj: Trajectory, engine: EngineLimits | None = None) -> OperatingStats:
    """Mode occupancy, occurrence-weighted engine points, EV electric energy and isoline exceedance.

    A sample counts as engine-on when the engine runs (positive speed); base
    vehicle samples with the engine off are reported under mode 3.
    """
    on = traj.omega_e > 0
    mode = np.where(on, traj.mode, 3)
    n = max(mode.size, 1)
    counts = {m: int(np.sum(mode == m)) for m in (1, 2, 3)}
    share = {m: c / n for m, c in counts.items()}
    pts, cnt = (np.unique(np.stack([traj.omega_e[on], traj.t_e[on]], axis=1), axis=0, return_counts=True)
                if on.any() else (np.empty((0, 2)), np.empty(0, dtype=int)))
    engine_points = [(float(w), float(t), int(c)) for (w, t), c in zip(pts, cnt)]
    ev = mode == 3
    ev_energy = float(np.sum(np.clip(np.nan_to_num(traj.p_b[ev]), 0.0, None)) * traj.dt / 1e6)
    if engine is not None and on.any():
        above = traj.t_e[on] > engine.isoline(traj.omega_e[on]) + 1e-9
        exceed = float(np.mean(above))
    else:
        exceed = 0.0
    return OperatingStats(counts, share, engine_points, ev_energy, exceed)


# --- report files ------------------------------------------------------------------------------

FRONT_COLUMNS = ("mu", "h2_kg", "nox_mg", "h2_norm", "nox_norm")
TRACE_COLUMNS = (
    "step", "time_s", "soc", "mode", "gear", "t_req", "omega_e", "t_e", "omega_mot", "t_mot", "omega_gen", "t_gen",
    "t_brake", "mdot_fuel", "mdot_nox", "p_b",
)


def _num(x):
    x = float(x)
    return None if math.isnan(x) else x


def front_rows(front: ParetoFront, base: Baseline) -> list[dict]:
    hn, xn = normalized_front(front, base)
    return [
        {"mu": p.mu, "h2_kg": p.h2_kg, "nox_mg": p.nox_mg, "h2_norm": _num(h), "nox_norm": _num(x)}
        for p, h, x in zip(front.points, hn, xn)
    ]


def report_dict(front: ParetoFront, base: Baseline, kpis: KpiReport, stats: OperatingStats) -> dict:
    return {
        "mission": front.mission,
        "architecture": front.architecture.value,
        "baseline": {"h2_kg": base.h2_kg, "nox_mg": base.nox_mg},
        "front": front_rows(front, base),
        "kpis": {k: (_num(v) if isinstance(v, float) else v) for k, v in kpis.as_dict().items()},
        "stats": stats.as_dict(),
    }


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return "" if math.isnan(x) else format(x, ".12g")


def csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    return buf.getvalue()


def front_csv(front: ParetoFront, base: Baseline) -> str:
    return csv_text(FRONT_COLUMNS, front_rows(front, base))


def trace_rows(traj: Trajectory) -> list[dict]:
    rows = []
    for k in range(traj.n_steps):
        row = {name: getattr(traj, name)[k] for name in TRACE_COLUMNS[3:]}
        row.update(step=k, time_s=k * traj.dt, soc=traj.soc[k])
        rows.append(row)
    return rows


def trace_csv(traj: Trajectory) -> str:
    return csv_text(TRACE_COLUMNS, trace_rows(traj))


def json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=False, allow_nan=False) + "\n"
