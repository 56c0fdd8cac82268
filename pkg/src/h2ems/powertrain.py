"""Quasi-static drivetrain model for the base, parallel, series and mixed vehicles.

Sign conventions used throughout:

* motor torque > 0 is motoring (draws electric power);
* generator torque is <= 0, it only absorbs engine torque;
* battery power ``p_b`` > 0 is discharging;
* friction-brake torque at the wheel is <= 0.

Engine-side torques (``t_e_req``, ``t_e``) are referred to the engine shaft.
The vectorized core (:func:`evaluate_controls`) is what the optimizer uses;
the scalar functions wrap it and raise on violated limits.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .maps import MapSet

GRAVITY = 9.81


class Architecture(str, enum.Enum):
    BASE = "base"
    PARALLEL = "parallel"
    SERIES = "series"
    MIXED = "mixed"


class Mode(enum.IntEnum):
    SERIES = 1
    PARALLEL = 2
    EV = 3


ALLOWED_MODES = {
    Architecture.BASE: frozenset({2}),
    Architecture.PARALLEL: frozenset({2, 3}),
    Architecture.SERIES: frozenset({1, 3}),
    Architecture.MIXED: frozenset({1, 2, 3}),
}
ELECTRIC_MASS = {
    Architecture.BASE: 0.0,
    Architecture.PARALLEL: 160.0,
    Architecture.SERIES: 200.0,
    Architecture.MIXED: 200.0,
}


class InfeasibleControl(ValueError):
    """A control violates a component or battery limit."""


class EngineSpeedRange(InfeasibleControl):
    pass


class ComponentLimit(InfeasibleControl):
    pass


class BatteryPowerLimit(InfeasibleControl):
    pass


class Reason(enum.IntEnum):
    OK = 0
    MODE = 1
    ENGINE_SPEED = 2
    ENGINE_TORQUE = 3
    MOTOR_LIMIT = 4
    GENERATOR_LIMIT = 5
    MAP_RANGE = 6
    BATTERY = 7
    CONTROL = 8


@dataclass(frozen=True)
class ArchitectureSpec:
    """Vehicle and drivetrain parameters.

    Default ratios, wheel radius and drag are calibrated so that steady
    142 km/h needs 372 N*m at the wheel and puts the mixed vehicle's engine at
    352 rad/s (153 N*m) in parallel mode.
    """

    kind: Architecture
    m_base: float = 1300.0
    m_elec: float = 0.0
    gamma_fd: float = 3.2
    gamma_mot: float = 1.9
    gamma_gen: float = 1.8
    gamma_e_mix: float = 0.8
    gamma_e_gears: tuple[float, ...] = (4.2, 2.8, 1.95, 1.45, 1.12, 0.9, 0.75)
    # vehicle speed [m/s] at which gears 2..7 are engaged
    gear_upshift_speeds: tuple[float, ...] = (5.12, 7.36, 9.89, 12.81, 15.94, 19.13)
    eta_fd: float = 0.95
    eta_gb_mot: float = 0.97
    eta_gb_gen: float = 0.97
    r_w: float = 0.2869
    c0: float = 160.0
    c1: float = 0.0
    c2: float = 0.7305
    allowed_modes: frozenset = frozenset()

    def __post_init__(self):
        kind = Architecture(self.kind)
        object.__setattr__(self, "kind", kind)
        modes = frozenset(int(m) for m in (self.allowed_modes or ALLOWED_MODES[kind]))
        if not modes <= ALLOWED_MODES[kind]:
            raise ValueError(f"modes {sorted(modes)} not available on a {kind.value} drivetrain")
        object.__setattr__(self, "allowed_modes", modes)
        if len(self.gear_upshift_speeds) != len(self.gamma_e_gears) - 1:
            raise ValueError("need one upshift speed per gear above first")
        for name in ("eta_fd", "eta_gb_mot", "eta_gb_gen"):
            if not 0 < getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in (0, 1]")

    @property
    def m_tot(self) -> float:
        return self.m_base + self.m_elec

    @property
    def has_motor(self) -> bool:
        return self.kind is not Architecture.BASE

    @property
    def has_generator(self) -> bool:
        return self.kind in (Architecture.SERIES, Architecture.MIXED)

    @property
    def has_gearbox(self) -> bool:
        return self.kind in (Architecture.BASE, Architecture.PARALLEL)

    def gear(self, v):
        """Speed-encoded gear index (1-based)."""
        return 1 + np.searchsorted(self.gear_upshift_speeds, np.asarray(v, dtype=float), side="right")

    def engine_ratio(self, v):
        if self.has_gearbox:
            return np.asarray(self.gamma_e_gears)[self.gear(v) - 1]
        return np.full(np.shape(v), self.gamma_e_mix)


def make_architecture(kind, **overrides) -> ArchitectureSpec:
    kind = Architecture(kind)
    return ArchitectureSpec(kind=kind, **{"m_elec": ELECTRIC_MASS[kind], **overrides})


@dataclass(frozen=True)
class BatterySpec:
    """Thevenin battery: open-circuit voltage linear in SoC, constant resistance."""

    q_max: float = 11e3 * 3600 / 230  # C, from 11 kWh at 230 V
    r_i: float = 0.05
    alpha_bat: float = 40.0
    beta_bat: float = 206.0
    p_aux: float = 300.0
    soc_min: float = 0.3
    soc_max: float = 0.9

    def __post_init__(self):
        if self.q_max <= 0 or self.r_i <= 0:
            raise ValueError("q_max and r_i must be positive")
        if min(self.v_oc(self.soc_min), self.v_oc(self.soc_max)) <= 0:
            raise ValueError("open-circuit voltage must stay positive on the SoC range")

    def v_oc(self, soc):
        return self.alpha_bat * np.asarray(soc, dtype=float) + self.beta_bat


@dataclass(frozen=True)
class ControlDecision:
    """One realization of the control vector (generator torque, generator speed, split, mode)."""

    mode: int
    q: float = 1.0
    t_gen: float = 0.0
    omega_gen: float = 0.0
    gear: int | None = None
    # engine-shaft torque request; overrides q in mode 2 (q is undefined at zero request)
    t_e_req: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "mode", int(self.mode))


@dataclass(frozen=True)
class StageOutcome:
    feasible: bool
    mdot_fuel: float = float("nan")
    mdot_nox: float = float("nan")
    soc_rate: float = float("nan")
    omega_e: float = float("nan")
    t_e: float = float("nan")
    omega_mot: float = float("nan")
    t_mot: float = float("nan")
    t_brake: float = float("nan")
    omega_gen: float = float("nan")
    t_gen: float = float("nan")
    p_b: float = float("nan")
    i_b: float = float("nan")
    t_req: float = float("nan")
    mode: int = 0
    gear: int = 0
    reason: Reason = Reason.OK


# --- torque request and speeds ---------------------------------------------------

def torque_request(spec: ArchitectureSpec, v, a, grade):
    """Wheel torque [N*m] to follow speed ``v`` with acceleration ``a`` on road angle ``grade``.

    Rolling resistance ``c0`` only acts on a moving vehicle.
    """
    v = np.asarray(v, dtype=float)
    f_drag = np.where(v > 0, spec.c0, 0.0) + spec.c1 * v + spec.c2 * v**2
    f = f_drag + spec.m_tot * GRAVITY * np.sin(grade) + spec.m_tot * np.asarray(a, dtype=float)
    out = f * spec.r_w
    return out if out.ndim else float(out)


def _fd_torque(spec, t_req):
    t_req = np.asarray(t_req, dtype=float)
    base = t_req / spec.gamma_fd
    return np.where(t_req >= 0, base / spec.eta_fd, base * spec.eta_fd)


def _wheel_from_fd(spec, t_fd):
    base = t_fd * spec.gamma_fd
    return np.where(t_fd >= 0, base * spec.eta_fd, base / spec.eta_fd)


def _speeds(spec: ArchitectureSpec, v, mode, omega_gen, engine_min):
    v = np.asarray(v, dtype=float)
    mode = np.asarray(mode)
    omega_w = v / spec.r_w
    omega_mot = omega_w * spec.gamma_fd * spec.gamma_mot
    gamma_e = spec.engine_ratio(v)
    coupled = omega_w * spec.gamma_fd * gamma_e
    if spec.has_gearbox:
        # launch clutch slips below idle
        coupled = np.maximum(coupled, engine_min)
    omega_gen = np.asarray(omega_gen, dtype=float)
    omega_e = np.where(mode == 2, coupled, np.where(mode == 1, omega_gen / spec.gamma_gen, 0.0))
    gen_parallel = spec.gamma_gen * coupled if spec.has_generator else 0.0
    omega_gen_out = np.where(mode == 2, gen_parallel, np.where(mode == 1, omega_gen, 0.0))
    return omega_w, omega_mot, omega_e, omega_gen_out, gamma_e


def rotational_speeds(spec: ArchitectureSpec, v: float, u: ControlDecision, engine_limits=None):
    """Return (wheel, motor, engine, generator) speeds in rad/s.

    Raises :class:`EngineSpeedRange` when the engine runs outside its speed
    range (only checked if ``engine_limits`` is given).
    """
    lo = engine_limits.omega_min if engine_limits is not None else 0.0
    w_w, w_mot, w_e, w_gen, _ = _speeds(spec, v, u.mode, u.omega_gen, lo)
    w_w, w_mot, w_e, w_gen = (float(x) for x in (w_w, w_mot, w_e, w_gen))
    if engine_limits is not None and u.mode in (1, 2):
        if not engine_limits.omega_min <= w_e <= engine_limits.omega_max:
            raise EngineSpeedRange(f"engine speed {w_e:.1f} rad/s outside [{engine_limits.omega_min}, {engine_limits.omega_max}]")
    return w_w, w_mot, w_e, w_gen


def _motor_shaft(spec, t_mot_req):
    base = t_mot_req / spec.gamma_mot
    return np.where(t_mot_req >= 0, base / spec.eta_gb_mot, base * spec.eta_gb_mot)


def _motor_fd(spec, t_mot):
    base = t_mot * spec.gamma_mot
    return np.where(t_mot >= 0, base * spec.eta_gb_mot, base / spec.eta_gb_mot)


def split_torque(spec: ArchitectureSpec, t_req: float, v: float, u: ControlDecision, maps: MapSet | None = None):
    """Return (motor torque, engine torque request, engine torque, generator torque).

    The engine request is ``(1 - q)`` of the torque before the final drive,
    referred to the engine shaft. With ``maps`` given, component torque
    limits are checked and :class:`ComponentLimit` raised.
    """
    t_fd = float(_fd_torque(spec, t_req))
    gamma_e = float(spec.engine_ratio(v))
    q = u.q
    if u.mode in (1, 3) and q != 1:
        raise ComponentLimit(f"mode {u.mode} requires q = 1")
    t_gen = 0.0 if u.mode == 3 else u.t_gen
    t_mot_req = t_fd * q
    t_e_req = t_fd * (1 - q) / gamma_e
    t_mot = float(_motor_shaft(spec, t_mot_req))
    t_e = t_e_req - t_gen * spec.gamma_gen / spec.eta_gb_gen if u.mode != 3 else 0.0
    if maps is not None:
        w_w, w_mot, w_e, w_gen = rotational_speeds(spec, v, u, maps.engine)
        if abs(t_mot) > float(maps.motor.torque_max(w_mot)) and not (t_req < 0 and t_mot < 0):
            raise ComponentLimit(f"motor torque {t_mot:.1f} N*m beyond limit at {w_mot:.0f} rad/s")
        if u.mode != 3 and not 0 <= t_e <= float(maps.engine.torque_max(w_e)):
            raise ComponentLimit(f"engine torque {t_e:.1f} N*m outside [0, T_max] at {w_e:.0f} rad/s")
        if t_gen > 0 or -t_gen > float(maps.generator.torque_max(w_gen)):
            raise ComponentLimit(f"generator torque {t_gen:.1f} N*m outside its envelope")
    return t_mot, t_e_req, t_e, t_gen


# --- electric path ----------------------------------------------------------------

def battery_response(battery: BatterySpec, soc, p_b):
    """Thevenin battery: current, internal-source power and SoC rate for terminal power ``p_b``.

    Returns ``(i_b, p_sb, soc_rate, ok)``; ``ok`` is False where the demanded
    power exceeds what the battery can deliver.
    """
    v_oc = battery.v_oc(soc)
    p_b = np.asarray(p_b, dtype=float)
    disc = v_oc**2 - 4 * battery.r_i * p_b
    ok = disc >= 0
    root = np.sqrt(np.where(ok, disc, 0.0))
    # rationalized form of (V - sqrt(V^2 - 4 R P)) / (2 R); no cancellation near P = 0
    i_b = np.where(ok, 2 * p_b / (v_oc + root), np.nan)
    p_sb = p_b + battery.r_i * i_b**2
    soc_rate = -p_sb / (battery.q_max * v_oc)
    return i_b, p_sb, soc_rate, ok


def source_powers(maps: MapSet, t_mot, omega_mot, t_gen, omega_gen):
    """Electric power drawn by motor and generator (mechanical power plus loss)."""
    p_mot = t_mot * omega_mot + maps.motor_loss.interp(omega_mot, t_mot)
    p_gen = t_gen * omega_gen + maps.generator_loss.interp(omega_gen, t_gen)
    return p_mot, p_gen


def electric_path(maps: MapSet, battery: BatterySpec, soc, t_mot, omega_mot, t_gen, omega_gen):
    """Return (battery power, battery current, SoC rate)."""
    p_mot, p_gen = source_powers(maps, t_mot, omega_mot, t_gen, omega_gen)
    if np.isnan(p_mot) or np.isnan(p_gen):
        raise ComponentLimit("machine operating point outside its loss map")
    p_b = float(p_mot + p_gen + battery.p_aux)
    i_b, _, soc_rate, ok = battery_response(battery, soc, p_b)
    if not ok:
        raise BatteryPowerLimit(f"battery cannot deliver {p_b:.0f} W at SoC {soc:.3f}")
    return p_b, float(i_b), float(soc_rate)


# --- vectorized stage evaluation --------------------------------------------------

@dataclass
class DriveBatch:
    """SoC-independent evaluation of a batch of controls at one mission point."""

    feasible: np.ndarray
    reason: np.ndarray
    mode: np.ndarray
    gear: np.ndarray
    t_req: np.ndarray
    omega_w: np.ndarray
    omega_mot: np.ndarray
    t_mot: np.ndarray
    omega_e: np.ndarray
    t_e_req: np.ndarray
    t_e: np.ndarray
    omega_gen: np.ndarray
    t_gen: np.ndarray
    t_brake: np.ndarray
    mdot_fuel: np.ndarray
    mdot_nox: np.ndarray
    p_b: np.ndarray
    extra: dict = field(default_factory=dict)

    def take(self, idx) -> "DriveBatch":
        out = {}
        for name in self.__dataclass_fields__:
            val = getattr(self, name)
            out[name] = val if name == "extra" else np.asarray(val)[idx]
        return DriveBatch(**out)

    def __len__(self):
        return int(np.size(self.feasible))


def evaluate_controls(
    spec: ArchitectureSpec, maps: MapSet, v, a, grade, mode, t_e_req, t_gen, omega_gen, p_aux: float = 0.0
) -> DriveBatch:
    """Evaluate controls given as engine-shaft torque request, generator torque/speed and mode.

    All arguments broadcast against each other, so one call can cover many
    controls, many mission points, or a grid of both. For the base vehicle the engine
    torque is dictated by the request and ``t_e_req`` is ignored. ``p_b`` in
    the result is the battery terminal power including ``p_aux`` (hybrids only).
    """
    v, a, grade, mode, t_e_req, t_gen, omega_gen = np.broadcast_arrays(
        np.asarray(v, dtype=float),
        np.asarray(a, dtype=float),
        np.asarray(grade, dtype=float),
        np.asarray(mode, dtype=np.int64),
        np.asarray(t_e_req, dtype=float),
        np.asarray(t_gen, dtype=float),
        np.asarray(omega_gen, dtype=float),
    )
    shape = mode.shape
    eng = maps.engine
    t_req = np.asarray(torque_request(spec, v, a, grade), dtype=float)
    t_fd = _fd_torque(spec, t_req)
    omega_w, omega_mot, omega_e, omega_gen_eff, gamma_e = _speeds(spec, v, mode, omega_gen, eng.omega_min)
    # absorb round-off from omega_gen / gamma_gen at the ends of the speed range
    for edge in (eng.omega_min, eng.omega_max):
        omega_e = np.where(np.abs(omega_e - edge) <= 1e-9 * edge, edge, omega_e)
    if not spec.has_motor:
        omega_mot = np.zeros(shape)
    gear = np.where((mode == 2) & spec.has_gearbox, spec.gear(v), 0)

    mode_ok = np.isin(mode, list(spec.allowed_modes))
    engine_on = mode != 3
    control_ok = (mode == 2) | (t_e_req == 0)
    t_e_req = np.where(mode == 2, t_e_req, 0.0)
    if spec.kind is Architecture.BASE:
        engine_on = engine_on & (t_req > 0)
        t_e_req = np.where(engine_on, t_fd / gamma_e, 0.0)
        omega_e = np.where(engine_on, omega_e, 0.0)
    if not spec.has_generator:
        control_ok &= t_gen == 0
    control_ok &= (mode != 3) | (t_gen == 0)
    t_gen = np.where(engine_on, t_gen, 0.0)
    omega_gen_eff = np.where(engine_on | (mode == 2), omega_gen_eff, 0.0)

    t_e = np.where(engine_on, t_e_req - t_gen * spec.gamma_gen / spec.eta_gb_gen, 0.0)
    speed_ok = ~engine_on | ((omega_e >= eng.omega_min) & (omega_e <= eng.omega_max))
    torque_ok = ~engine_on | ((t_e >= 0) & (t_e <= eng.torque_max(omega_e) + 1e-9))

    # motor carries the remainder; friction brakes only absorb a negative request
    t_mot_req = t_fd - t_e_req * gamma_e
    t_mot = _motor_shaft(spec, t_mot_req) if spec.has_motor else np.zeros(shape)
    t_brake = np.zeros(shape)
    if spec.has_motor:
        t_lim = maps.motor.torque_max(omega_mot)
        below = t_mot < -t_lim
        clamp = below & (t_req < 0)
        t_mot = np.where(clamp, -t_lim, t_mot)
        delivered = _wheel_from_fd(spec, t_e_req * gamma_e + _motor_fd(spec, t_mot))
        t_brake = np.where(clamp, t_req - delivered, 0.0)
        motor_ok = (t_mot <= t_lim) & ~(below & ~clamp) & (omega_mot <= maps.motor.omega_max)
    else:
        motor_ok = np.ones(shape, dtype=bool)
        t_brake = np.where(engine_on, 0.0, t_req)

    if spec.has_generator:
        g_lim = maps.generator.torque_max(omega_gen_eff)
        gen_ok = (t_gen <= 0) & (-t_gen <= g_lim) & (omega_gen_eff <= maps.generator.omega_max)
    else:
        gen_ok = np.ones(shape, dtype=bool)

    fuel = np.where(engine_on, maps.fuel.interp(omega_e, t_e), 0.0)
    nox = np.where(engine_on, maps.nox.interp(omega_e, t_e), 0.0)
    if spec.has_motor:
        p_mot, p_gen = source_powers(maps, t_mot, omega_mot, t_gen, omega_gen_eff)
        if not spec.has_generator:
            p_gen = np.zeros(shape)
        p_b = p_mot + p_gen + p_aux
    else:
        p_b = np.zeros(shape)
    map_ok = np.isfinite(fuel) & np.isfinite(nox) & np.isfinite(p_b)

    checks = [
        (mode_ok, Reason.MODE),
        (control_ok, Reason.CONTROL),
        (speed_ok, Reason.ENGINE_SPEED),
        (torque_ok, Reason.ENGINE_TORQUE),
        (motor_ok, Reason.MOTOR_LIMIT),
        (gen_ok, Reason.GENERATOR_LIMIT),
        (map_ok, Reason.MAP_RANGE),
    ]
    feasible = np.ones(shape, dtype=bool)
    reason = np.zeros(shape, dtype=np.int8)
    for ok, code in checks:
        reason = np.where(feasible & ~ok, int(code), reason)
        feasible &= ok
    return DriveBatch(
        feasible=feasible,
        reason=reason,
        mode=mode,
        gear=gear,
        t_req=t_req,
        omega_w=omega_w,
        omega_mot=omega_mot,
        t_mot=t_mot,
        omega_e=omega_e,
        t_e_req=t_e_req,
        t_e=t_e,
        omega_gen=omega_gen_eff,
        t_gen=t_gen,
        t_brake=t_brake,
        mdot_fuel=np.where(feasible, fuel, np.nan),
        mdot_nox=np.where(feasible, nox, np.nan),
        p_b=np.where(feasible, p_b, np.nan),
    )


def evaluate_stage(
    spec: ArchitectureSpec,
    maps: MapSet,
    battery: BatterySpec,
    soc: float,
    v: float,
    a: float,
    grade: float,
    u: ControlDecision,
) -> StageOutcome:
    """Evaluate one (state, control) pair; infeasibility is reported, not raised."""
    t_req = torque_request(spec, v, a, grade)
    gamma_e = float(spec.engine_ratio(v))
    if u.mode == 2 and u.t_e_req is not None:
        t_e_req = u.t_e_req
    elif u.mode == 2:
        t_e_req = float(_fd_torque(spec, t_req)) * (1 - u.q) / gamma_e
    else:
        t_e_req = 0.0 if u.q == 1 else np.nan
    if u.gear is not None and spec.has_gearbox and u.mode == 2 and u.gear != int(spec.gear(v)):
        return StageOutcome(False, reason=Reason.CONTROL, mode=u.mode, t_req=t_req)
    batch = evaluate_controls(spec, maps, v, a, grade, u.mode, t_e_req, u.t_gen, u.omega_gen, battery.p_aux)
    b = {k: (getattr(batch, k)).item() for k in batch.__dataclass_fields__ if k != "extra"}
    common = dict(
        omega_e=b["omega_e"], t_e=b["t_e"], omega_mot=b["omega_mot"], t_mot=b["t_mot"],
        t_brake=b["t_brake"], omega_gen=b["omega_gen"], t_gen=b["t_gen"], t_req=t_req,
        mode=u.mode, gear=int(b["gear"]),
    )
    if not b["feasible"]:
        return StageOutcome(False, reason=Reason(b["reason"]), **common)
    p_b = b["p_b"]
    if spec.has_motor:
        i_b, _, soc_rate, ok = battery_response(battery, soc, p_b)
        if not ok:
            return StageOutcome(False, reason=Reason.BATTERY, p_b=p_b, **common)
        i_b, soc_rate = float(i_b), float(soc_rate)
    else:
        i_b, soc_rate = 0.0, 0.0
    return StageOutcome(
        True,
        mdot_fuel=b["mdot_fuel"],
        mdot_nox=b["mdot_nox"],
        soc_rate=soc_rate,
        p_b=p_b,
        i_b=i_b,
        **common,
    )


def with_mass(spec: ArchitectureSpec, m_elec: float) -> ArchitectureSpec:
    return replace(spec, m_elec=m_elec)
