"""Backward dynamic programming over battery SoC with a NOx-weighted stage cost.

The stage cost is ``(mdot_fuel + mu * mdot_nox) * dt``. One backward pass
handles every weight of a sweep at once: SoC transitions depend only on the
control and the SoC node, so they are computed once and shared by all
weights. The value table is stored for all stages, and the forward pass
re-optimizes the control at the continuous SoC.

Infeasible states carry an infinite cost-to-go. Linear interpolation between
SoC nodes then yields infinity whenever an infinite node has non-zero weight.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .cycles import DrivingMission
from .maps import MapSet
from .powertrain import (
    Architecture,
    ArchitectureSpec,
    BatterySpec,
    ControlDecision,
    StageOutcome,
    _fd_torque,
    evaluate_controls,
)


class Infeasible(RuntimeError):
    """No control sequence satisfies the constraints.

    ``step`` is the mission interval where feasibility is lost.
    """

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class TooLarge(ValueError):
    """Exhaustive enumeration would exceed the configured bound."""


def default_mu(count: int = 25, lo: float = 1e-7, hi: float = 1e-2) -> tuple[float, ...]:
    """Zero followed by ``count - 1`` log-spaced weights [kg H2 per mg NOx]."""
    if count < 1:
        raise ValueError("need at least one weight")
    if count == 1:
        return (0.0,)
    return (0.0,) + tuple(float(x) for x in np.logspace(np.log10(lo), np.log10(hi), count - 1))


@dataclass(frozen=True)
class DpConfig:
    soc_points: int = 201
    soc_min: float = 0.3
    soc_max: float = 0.9
    soc_target: float = 0.7
    band_cells: float = 1.0
    torque_step: float = 2.0  # N*m, engine torque grid
    engine_torques: tuple[float, ...] | None = None
    generator_speed_count: int = 16
    generator_speeds: tuple[float, ...] | None = None  # rad/s at the generator shaft
    mu: tuple[float, ...] = field(default_factory=default_mu)
    round_to_grid: bool = False
    max_enumeration: int = 10**6

    def __post_init__(self):
        if self.soc_points < 2:
            raise ValueError("soc_points must be at least 2")
        if not self.soc_min <= self.soc_target <= self.soc_max:
            raise ValueError("terminal SoC target must lie within the SoC bounds")
        if self.band_cells < 0:
            raise ValueError("band_cells must be non-negative")
        if self.torque_step <= 0:
            raise ValueError("torque_step must be positive")
        if self.engine_torques is not None and len(self.engine_torques) == 0:
            raise ValueError("engine torque grid is empty")
        if self.generator_speeds is not None and len(self.generator_speeds) == 0:
            raise ValueError("generator speed grid is empty")
        if self.generator_speeds is None and self.generator_speed_count < 1:
            raise ValueError("generator_speed_count must be positive")
        mu = tuple(float(m) for m in self.mu)
        if not mu:
            raise ValueError("mu list is empty")
        if any(m < 0 for m in mu) or any(b < a for a, b in zip(mu, mu[1:])):
            raise ValueError("mu values must be non-negative and sorted")
        object.__setattr__(self, "mu", mu)

    @property
    def soc_grid(self) -> np.ndarray:
        return np.linspace(self.soc_min, self.soc_max, self.soc_points)

    @property
    def cell(self) -> float:
        return (self.soc_max - self.soc_min) / (self.soc_points - 1)

    @property
    def band(self) -> tuple[float, float]:
        return self.soc_target, self.soc_target + self.band_cells * self.cell


# --- control sets and per-stage candidates ----------------------------------------

@dataclass(frozen=True, eq=False)
class ControlTable:
    """Gridded controls shared by all stages: mode, engine torque request, generator torque/speed."""

    mode: np.ndarray
    t_e_req: np.ndarray
    t_gen: np.ndarray
    omega_gen: np.ndarray

    def __len__(self):
        return self.mode.size


def control_table(spec: ArchitectureSpec, maps: MapSet, cfg: DpConfig) -> ControlTable:
    """Enumerate the control grid of an architecture.

    Parallel mode varies the engine torque (the motor takes the rest); series
    mode varies generator speed and engine torque, with the generator absorbing
    all engine torque; EV mode has a single control.
    """
    eng = maps.engine
    if cfg.engine_torques is not None:
        torques = np.asarray(cfg.engine_torques, dtype=float)
    else:
        t_top = float(np.max(eng.torque_max_curve))
        torques = np.arange(0.0, t_top + 0.5 * cfg.torque_step, cfg.torque_step)
    if cfg.generator_speeds is not None:
        gen_speeds = np.asarray(cfg.generator_speeds, dtype=float)
    else:
        gen_speeds = spec.gamma_gen * np.linspace(eng.omega_min, eng.omega_max, cfg.generator_speed_count)

    cols = {"mode": [], "t_e_req": [], "t_gen": [], "omega_gen": []}

    def add(mode, t_e_req, t_gen, omega_gen):
        n = np.size(t_e_req)
        cols["mode"].append(np.full(n, mode))
        cols["t_e_req"].append(np.broadcast_to(t_e_req, n).astype(float))
        cols["t_gen"].append(np.broadcast_to(t_gen, n).astype(float))
        cols["omega_gen"].append(np.broadcast_to(omega_gen, n).astype(float))

    modes = spec.allowed_modes
    if spec.kind is Architecture.BASE:
        add(2, 0.0, 0.0, 0.0)
    elif 2 in modes:
        add(2, torques, 0.0, 0.0)
    if 1 in modes:
        w, t = np.meshgrid(gen_speeds, torques, indexing="ij")
        add(1, 0.0 * t.ravel(), -t.ravel() * spec.eta_gb_gen / spec.gamma_gen, w.ravel())
    if 3 in modes:
        add(3, 0.0, 0.0, 0.0)
    return ControlTable(**{k: np.concatenate(v) for k, v in cols.items()})


@dataclass(frozen=True, eq=False)
class Candidates:
    """Feasible controls per stage in compressed-row layout.

    Stage ``k`` owns entries ``offsets[k]:offsets[k + 1]``, sorted by
    (NOx, |generator torque|, mode) so that the first minimum wins ties.
    """

    offsets: np.ndarray
    ctrl: np.ndarray
    fuel_dt: np.ndarray  # kg per step
    nox_dt: np.ndarray  # mg per step
    p_b: np.ndarray  # W
    table: ControlTable

    @property
    def n_steps(self) -> int:
        return self.offsets.size - 1

    def stage(self, k) -> slice:
        return slice(int(self.offsets[k]), int(self.offsets[k + 1]))


def build_candidates(
    spec: ArchitectureSpec, maps: MapSet, battery: BatterySpec, mission: DrivingMission, cfg: DpConfig,
    chunk: int = 64,
) -> Candidates:
    table = control_table(spec, maps, cfg)
    v, a, grade = mission.stage_points()
    p_aux = battery.p_aux if spec.has_motor else 0.0
    offsets = [0]
    parts = {"ctrl": [], "fuel_dt": [], "nox_dt": [], "p_b": []}
    abs_gen = np.abs(table.t_gen)
    for start in range(0, v.size, chunk):
        sl = slice(start, start + chunk)
        batch = evaluate_controls(
            spec, maps, v[sl, None], a[sl, None], grade[sl, None],
            table.mode[None, :], table.t_e_req[None, :], table.t_gen[None, :], table.omega_gen[None, :], p_aux,
        )
        for r in range(batch.feasible.shape[0]):
            idx = np.flatnonzero(batch.feasible[r])
            nox = batch.mdot_nox[r, idx]
            order = np.lexsort((idx, table.mode[idx], abs_gen[idx], nox))
            idx = idx[order]
            parts["ctrl"].append(idx.astype(np.int32))
            parts["fuel_dt"].append(batch.mdot_fuel[r, idx] * mission.dt)
            parts["nox_dt"].append(batch.mdot_nox[r, idx] * mission.dt)
            parts["p_b"].append(batch.p_b[r, idx])
            offsets.append(offsets[-1] + idx.size)
    out = {k: np.concatenate(p) if p else np.empty(0) for k, p in parts.items()}
    cand = Candidates(np.asarray(offsets, dtype=np.int64), out["ctrl"].astype(np.int32), out["fuel_dt"],
                      out["nox_dt"], out["p_b"], table)
    empty = np.flatnonzero(np.diff(cand.offsets) == 0)
    if empty.size:
        k = int(empty[0])
        raise Infeasible(
            f"no admissible control at step {k} (t = {k * mission.dt:g} s, v = {v[k]:.2f} m/s)", step=k
        )
    return cand


# --- numerical kernels ----------------------------------------------------------------

_TOL = 1e-12


@numba.njit(cache=True)
def next_soc(soc, p_b, dt, q_max, r_i, alpha, beta):
    """Forward-Euler SoC step for battery terminal power ``p_b``; nan if the battery cannot deliver it."""
    v_oc = alpha * soc + beta
    disc = v_oc * v_oc - 4.0 * r_i * p_b
    if disc < 0.0:
        return np.nan
    i_b = 2.0 * p_b / (v_oc + math.sqrt(disc))
    p_sb = p_b + r_i * i_b * i_b
    return soc - dt * p_sb / (q_max * v_oc)


@numba.njit(cache=True)
def _locate(s, soc_min, cell, n, round_mode):
    """Return (node, weight) for SoC ``s``; node = -1 when ``s`` lies outside the grid."""
    x = (s - soc_min) / cell
    if round_mode:
        j = int(math.floor(x + 0.5))
        if j < 0 or j > n - 1:
            return -1, 0.0
        return j, 0.0
    if not (x >= -_TOL and x <= n - 1 + _TOL):
        return -1, 0.0
    j = int(math.floor(x))
    if j < 0:
        j = 0
    if j >= n - 1:
        return n - 1, 0.0
    w = x - j
    if w < 0.0:
        w = 0.0
    return j, w


@numba.njit(cache=True)
def _terminal_ok(s, band_lo, band_hi):
    return s >= band_lo - _TOL and s <= band_hi + _TOL


@numba.njit(cache=True)
def _preimage(target, p_b, lo, hi, upper, dt, q_max, r_i, alpha, beta):
    # next_soc is increasing in soc: bisect for next_soc(soc, p_b) == target,
    # returning the bracket end on the feasible side
    a, b = lo, hi
    for _ in range(200):
        mid = 0.5 * (a + b)
        if mid == a or mid == b:
            break
        s = next_soc(mid, p_b, dt, q_max, r_i, alpha, beta)
        if s < target:
            a = mid
        else:
            b = mid
    return b if upper else a


@numba.njit(cache=True)
def _reach_bounds(offsets, p_b, soc_min, soc_max, band_lo, band_hi, dt, q_max, r_i, alpha, beta, lo, hi,
                  c_lo, c_hi):
    """Backward interval of SoC values from which the terminal band stays reachable.

    The lower edge follows the strongest charging control of each step, the
    upper edge the strongest discharging one (``c_lo``/``c_hi`` record them).
    Returns the last step with an empty interval, or -1.
    """
    n_steps = offsets.size - 1
    lo[n_steps] = band_lo
    hi[n_steps] = band_hi
    v_low = alpha * soc_min + beta
    for k in range(n_steps - 1, -1, -1):
        p_min = np.inf
        p_max = -np.inf
        for c in range(offsets[k], offsets[k + 1]):
            p = p_b[c]
            if p < p_min:
                p_min = p
                c_lo[k] = c
            # discharge capability is lowest at the bottom of the SoC range
            if p > p_max and v_low * v_low - 4.0 * r_i * p >= 0.0:
                p_max = p
                c_hi[k] = c
        if p_max == -np.inf:
            return k
        a = _preimage(lo[k + 1], p_min, soc_min - 1.0, soc_max + 1.0, True, dt, q_max, r_i, alpha, beta)
        b = _preimage(hi[k + 1], p_max, soc_min - 1.0, soc_max + 1.0, False, dt, q_max, r_i, alpha, beta)
        lo[k] = max(a, soc_min)
        hi[k] = min(b, soc_max)
        if lo[k] > hi[k]:
            return k
    return -1


@numba.njit(cache=True)
def _bracket(value, vlo, vhi, lo, hi, soc_grid, k, s, j, w):
    """Interpolation stencil for the cost-to-go at SoC ``s`` of step ``k``.

    Returns (left row, right row, weight of right). Inside the reachable
    interval a node without a finite value is replaced by the interval edge,
    whose cost-to-go is tracked separately along the edge trajectory.
    """
    left = value[k, j]
    if w == 0.0 and left[0] < np.inf:
        return left, left, 0.0
    jr = j + 1 if j + 1 < soc_grid.size else j
    right = value[k, jr]
    left_ok = left[0] < np.inf
    right_ok = right[0] < np.inf and w > 0.0
    if left_ok and right_ok:
        return left, right, w
    x0 = soc_grid[j] if left_ok else lo[k]
    x1 = soc_grid[jr] if right_ok else hi[k]
    row0 = left if left_ok else vlo[k]
    row1 = right if right_ok else vhi[k]
    span = x1 - x0
    t = (s - x0) / span if span > 0.0 else 0.0
    if t <= 0.0:
        return row0, row0, 0.0
    if t >= 1.0:
        return row1, row1, 0.0
    return row0, row1, t


@numba.njit(cache=True)
def _stage_into(best, offsets, fuel_dt, nox_dt, p_b, mus, k, soc, dt, q_max, r_i, alpha, beta, lo, hi, soc_grid,
                round_mode, value, vlo, vhi, only):
    """Minimize stage cost plus cost-to-go over the candidates of step ``k`` for every weight."""
    n_soc = soc_grid.size
    soc_min = soc_grid[0]
    cell = (soc_grid[-1] - soc_grid[0]) / (n_soc - 1)
    c0 = offsets[k] if only < 0 else only
    c1 = offsets[k + 1] if only < 0 else only + 1
    for c in range(c0, c1):
        s = next_soc(soc, p_b[c], dt, q_max, r_i, alpha, beta)
        if not (s >= lo[k + 1] - _TOL and s <= hi[k + 1] + _TOL):
            continue
        j, w = _locate(s, soc_min, cell, n_soc, round_mode)
        if j < 0:
            continue
        f = fuel_dt[c]
        x = nox_dt[c]
        left_ok = value[k + 1, j, 0] < np.inf
        if round_mode or (w == 0.0 and left_ok):
            if left_ok:
                for m in range(mus.size):
                    best[m] = min(best[m], f + mus[m] * x + value[k + 1, j, m])
            continue
        if left_ok and j + 1 < n_soc and value[k + 1, j + 1, 0] < np.inf:
            for m in range(mus.size):
                best[m] = min(best[m], f + mus[m] * x + ((1.0 - w) * value[k + 1, j, m] + w * value[k + 1, j + 1, m]))
            continue
        row0, row1, t = _bracket(value, vlo, vhi, lo, hi, soc_grid, k + 1, s, j, w)
        if not row0[0] < np.inf or (t > 0.0 and not row1[0] < np.inf):
            continue
        if t == 0.0:
            for m in range(mus.size):
                best[m] = min(best[m], f + mus[m] * x + row0[m])
        else:
            for m in range(mus.size):
                best[m] = min(best[m], f + mus[m] * x + ((1.0 - t) * row0[m] + t * row1[m]))


@numba.njit(cache=True, parallel=True)
def _backward(offsets, fuel_dt, nox_dt, p_b, mus, soc_grid, dt, q_max, r_i, alpha, beta, band_lo, band_hi,
              lo, hi, c_lo, c_hi, round_mode, value, vlo, vhi):
    n_steps = offsets.size - 1
    n_soc = soc_grid.size
    n_mu = mus.size
    for i in range(n_soc):
        for m in range(n_mu):
            value[n_steps, i, m] = 0.0 if _terminal_ok(soc_grid[i], band_lo, band_hi) else np.inf
    vlo[n_steps, :] = 0.0
    vhi[n_steps, :] = 0.0
    for k in range(n_steps - 1, -1, -1):
        for i in numba.prange(n_soc):
            best = np.full(n_mu, np.inf)
            _stage_into(best, offsets, fuel_dt, nox_dt, p_b, mus, k, soc_grid[i], dt, q_max, r_i, alpha, beta,
                        lo, hi, soc_grid, round_mode, value, vlo, vhi, -1)
            value[k, i, :] = best
        if round_mode:
            continue
        # edge trajectories: an edge clipped to the SoC limit sits on a node
        if lo[k] <= soc_grid[0]:
            vlo[k, :] = value[k, 0, :]
        else:
            best = np.full(n_mu, np.inf)
            _stage_into(best, offsets, fuel_dt, nox_dt, p_b, mus, k, lo[k], dt, q_max, r_i, alpha, beta,
                        lo, hi, soc_grid, round_mode, value, vlo, vhi, c_lo[k])
            vlo[k, :] = best
        if hi[k] >= soc_grid[-1]:
            vhi[k, :] = value[k, n_soc - 1, :]
        else:
            best = np.full(n_mu, np.inf)
            _stage_into(best, offsets, fuel_dt, nox_dt, p_b, mus, k, hi[k], dt, q_max, r_i, alpha, beta,
                        lo, hi, soc_grid, round_mode, value, vlo, vhi, c_hi[k])
            vhi[k, :] = best


@numba.njit(cache=True)
def _value_at(value, vlo, vhi, lo, hi, soc_grid, k, s, m, round_mode):
    n_soc = soc_grid.size
    cell = (soc_grid[-1] - soc_grid[0]) / (n_soc - 1)
    if not (s >= lo[k] - _TOL and s <= hi[k] + _TOL):
        return np.inf
    j, w = _locate(s, soc_grid[0], cell, n_soc, round_mode)
    if j < 0:
        return np.inf
    if round_mode:
        return value[k, j, m]
    a = value[k, j, m]
    if a < np.inf:
        if w == 0.0:
            return a
        b = value[k, j + 1, m]
        if b < np.inf:
            return (1.0 - w) * a + w * b
    row0, row1, t = _bracket(value, vlo, vhi, lo, hi, soc_grid, k, s, j, w)
    if t == 0.0:
        return row0[m]
    return (1.0 - t) * row0[m] + t * row1[m]


@numba.njit(cache=True)
def _forward(offsets, fuel_dt, nox_dt, p_b, mu, m, soc0, soc_grid, dt, q_max, r_i, alpha, beta, lo, hi,
             round_mode, value, vlo, vhi, choice, socs):
    """Re-optimize each step against the stored cost-to-go; returns the failing step or -1."""
    n_steps = offsets.size - 1
    n_soc = soc_grid.size
    soc_min = soc_grid[0]
    cell = (soc_grid[-1] - soc_grid[0]) / (n_soc - 1)
    soc = soc0
    if round_mode:
        j0, _ = _locate(soc0, soc_min, cell, n_soc, True)
        soc = soc_grid[j0]
    socs[0] = soc
    for k in range(n_steps):
        best = np.inf
        best_c = -1
        best_s = np.nan
        for c in range(offsets[k], offsets[k + 1]):
            s = next_soc(soc, p_b[c], dt, q_max, r_i, alpha, beta)
            if not s == s:
                continue
            if round_mode:
                j, _ = _locate(s, soc_min, cell, n_soc, True)
                if j < 0:
                    continue
                s = soc_grid[j]
            tail = _value_at(value, vlo, vhi, lo, hi, soc_grid, k + 1, s, m, round_mode)
            cost = fuel_dt[c] + mu * nox_dt[c] + tail
            if cost < best:
                best = cost
                best_c = c
                best_s = s
        if best_c < 0:
            return k
        choice[k] = best_c
        soc = best_s
        socs[k + 1] = soc
    return -1


# --- trajectories -----------------------------------------------------------------------

_TRACE_FIELDS = (
    "mode", "gear", "t_req", "omega_e", "t_e", "omega_mot", "t_mot", "omega_gen", "t_gen", "t_brake",
    "mdot_fuel", "mdot_nox", "p_b",
)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """An optimal control sequence with its per-step drivetrain state.

    Per-step arrays have one entry per mission interval; ``soc`` has one
    more. ``t_e_req`` is the engine-shaft torque request of each control and
    ``q`` the motor share of the torque before the final drive (nan where
    that torque is zero).
    """

    architecture: Architecture
    mission: str
    mu: float
    dt: float
    soc: np.ndarray
    t_e_req: np.ndarray
    q: np.ndarray
    mode: np.ndarray
    gear: np.ndarray
    t_req: np.ndarray
    omega_e: np.ndarray
    t_e: np.ndarray
    omega_mot: np.ndarray
    t_mot: np.ndarray
    omega_gen: np.ndarray
    t_gen: np.ndarray
    t_brake: np.ndarray
    mdot_fuel: np.ndarray
    mdot_nox: np.ndarray
    p_b: np.ndarray
    cost: float
    band: tuple[float, float]

    @property
    def n_steps(self) -> int:
        return self.mode.size

    @property
    def h2_kg(self) -> float:
        return float(np.sum(self.mdot_fuel * self.dt))

    @property
    def nox_mg(self) -> float:
        return float(np.sum(self.mdot_nox * self.dt))

    def controls(self) -> list[ControlDecision]:
        out = []
        for k in range(self.n_steps):
            mode = int(self.mode[k])
            if mode == 2:
                out.append(ControlDecision(2, q=float(self.q[k]), gear=int(self.gear[k]) or None,
                                           t_e_req=float(self.t_e_req[k])))
            else:
                out.append(ControlDecision(mode, t_gen=float(self.t_gen[k]), omega_gen=float(self.omega_gen[k])))
        return out

    def outcomes(self) -> list[StageOutcome]:
        return [
            StageOutcome(
                True,
                mdot_fuel=float(self.mdot_fuel[k]), mdot_nox=float(self.mdot_nox[k]),
                soc_rate=float((self.soc[k + 1] - self.soc[k]) / self.dt),
                omega_e=float(self.omega_e[k]), t_e=float(self.t_e[k]),
                omega_mot=float(self.omega_mot[k]), t_mot=float(self.t_mot[k]), t_brake=float(self.t_brake[k]),
                omega_gen=float(self.omega_gen[k]), t_gen=float(self.t_gen[k]), p_b=float(self.p_b[k]),
                t_req=float(self.t_req[k]), mode=int(self.mode[k]), gear=int(self.gear[k]),
            )
            for k in range(self.n_steps)
        ]


def _trajectory(spec, maps, battery, mission, cand: Candidates, choice, socs, mu, cost, band) -> Trajectory:
    ctrl = cand.ctrl[choice]
    tab = cand.table
    v, a, grade = mission.stage_points()
    p_aux = battery.p_aux if spec.has_motor else 0.0
    batch = evaluate_controls(spec, maps, v, a, grade, tab.mode[ctrl], tab.t_e_req[ctrl], tab.t_gen[ctrl],
                              tab.omega_gen[ctrl], p_aux)
    t_fd = _fd_torque(spec, batch.t_req)
    t_e_fd = batch.t_e_req * spec.engine_ratio(v)
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(batch.mode == 2, np.where(t_fd != 0, 1 - t_e_fd / t_fd, np.nan), 1.0)
    return Trajectory(
        architecture=spec.kind, mission=mission.name, mu=float(mu), dt=mission.dt, soc=np.asarray(socs, float).copy(),
        t_e_req=batch.t_e_req, q=q, cost=float(cost), band=band,
        **{name: getattr(batch, name) for name in _TRACE_FIELDS},
    )


# --- solvers -------------------------------------------------------------------------------

@dataclass(eq=False)
class DpSolution:
    """Backward-pass result shared by all weights of a sweep.

    ``lo``/``hi`` bound the SoC from which the terminal band is still
    reachable at each step; with grid rounding they are left open.
    """

    spec: ArchitectureSpec
    maps: MapSet
    battery: BatterySpec
    mission: DrivingMission
    cfg: DpConfig
    candidates: Candidates
    mus: np.ndarray
    value: np.ndarray  # (steps + 1, soc nodes, weights)
    lo: np.ndarray
    hi: np.ndarray
    value_lo: np.ndarray  # cost-to-go along the interval edges, (steps + 1, weights)
    value_hi: np.ndarray
    empty_step: int = -1

    def _args(self):
        b = self.battery
        return (self.mission.dt, b.q_max, b.r_i, b.alpha_bat, b.beta_bat)

    def start_value(self, m: int) -> float:
        """Optimal cost-to-go at the initial SoC (interpolated, or the snapped node)."""
        cfg = self.cfg
        s0 = cfg.soc_target
        if cfg.round_to_grid:
            s0 = float(cfg.soc_grid[int(np.floor((s0 - cfg.soc_min) / cfg.cell + 0.5))])
        return float(_value_at(self.value, self.value_lo, self.value_hi, self.lo, self.hi, cfg.soc_grid, 0, s0, m,
                               cfg.round_to_grid))

    def trajectory(self, m: int) -> Trajectory:
        cand = self.candidates
        cfg = self.cfg
        n = cand.n_steps
        if not np.isfinite(self.start_value(m)):
            raise Infeasible(self._infeasible_message(), step=self._failing_step())
        choice = np.zeros(n, dtype=np.int64)
        socs = np.zeros(n + 1)
        k_fail = _forward(cand.offsets, cand.fuel_dt, cand.nox_dt, cand.p_b, float(self.mus[m]), m, cfg.soc_target,
                          cfg.soc_grid, *self._args(), self.lo, self.hi, cfg.round_to_grid, self.value, self.value_lo, self.value_hi, choice, socs)
        if k_fail >= 0:
            raise Infeasible(self._infeasible_message(k_fail), step=k_fail)
        return _trajectory(self.spec, self.maps, self.battery, self.mission, cand, choice, socs, self.mus[m],
                           self.start_value(m), cfg.band)

    def _failing_step(self) -> int:
        if self.empty_step >= 0:
            return self.empty_step
        empty = np.flatnonzero(np.all(np.isinf(self.value[:-1, :, 0]), axis=1))
        return int(empty[-1]) if empty.size else 0

    def _infeasible_message(self, k=None):
        step = self._failing_step() if k is None else k
        band = self.cfg.band
        return (
            f"{self.spec.kind.value} on {self.mission.name}: no control sequence reaches the terminal SoC band "
            f"{band[0]:.4f}..{band[1]:.4f} (fails at step {step}, t = {step * self.mission.dt:g} s)"
        )


def backward_pass(spec, maps, battery, mission, cfg: DpConfig, mus=None, candidates=None) -> DpSolution:
    mus = np.asarray(cfg.mu if mus is None else mus, dtype=float)
    cand = candidates if candidates is not None else build_candidates(spec, maps, battery, mission, cfg)
    grid = cfg.soc_grid
    n = cand.n_steps
    b = battery
    band = cfg.band
    args = (mission.dt, b.q_max, b.r_i, b.alpha_bat, b.beta_bat)
    lo = np.full(n + 1, -np.inf)
    hi = np.full(n + 1, np.inf)
    c_lo = np.zeros(n, dtype=np.int64)
    c_hi = np.zeros(n, dtype=np.int64)
    empty = -1
    if not cfg.round_to_grid:
        empty = _reach_bounds(cand.offsets, cand.p_b, cfg.soc_min, cfg.soc_max, band[0], band[1], *args, lo, hi,
                              c_lo, c_hi)
    value = np.empty((n + 1, grid.size, mus.size))
    value_lo = np.full((n + 1, mus.size), np.inf)
    value_hi = np.full((n + 1, mus.size), np.inf)
    sol = DpSolution(spec, maps, battery, mission, cfg, cand, mus, value, lo, hi, value_lo, value_hi, int(empty))
    if empty >= 0:
        raise Infeasible(sol._infeasible_message(), step=int(empty))
    _backward(cand.offsets, cand.fuel_dt, cand.nox_dt, cand.p_b, mus, grid, *args, band[0], band[1], lo, hi,
              c_lo, c_hi, cfg.round_to_grid, value, value_lo, value_hi)
    return sol


def solve_dp(spec, maps, battery, mission, mu: float, cfg: DpConfig | None = None, candidates=None) -> Trajectory:
    """Minimize total H2 + mu * NOx subject to the SoC bounds and terminal band."""
    cfg = cfg or DpConfig()
    sol = backward_pass(spec, maps, battery, mission, cfg, mus=[mu], candidates=candidates)
    return sol.trajectory(0)


def brute_force_oracle(spec, maps, battery, mission, mu: float, cfg: DpConfig | None = None,
                       candidates=None) -> Trajectory:
    """Enumerate every control sequence under SoC dynamics rounded to the DP grid.

    Costs are accumulated from the last stage backwards so the arithmetic
    matches the DP recursion term for term.
    """
    cfg = cfg or DpConfig()
    cand = candidates if candidates is not None else build_candidates(spec, maps, battery, mission, cfg)
    sizes = np.diff(cand.offsets)
    total = 1
    for s in sizes:
        total *= int(s)
        if total > cfg.max_enumeration:
            raise TooLarge(f"{total}+ control sequences exceed the bound {cfg.max_enumeration}")
    grid = cfg.soc_grid
    n = grid.size
    cell = cfg.cell
    b = battery
    band = cfg.band
    dt = mission.dt
    j0 = int(np.floor((cfg.soc_target - cfg.soc_min) / cell + 0.5))

    best_cost = np.inf
    best_seq = None
    best_socs = None
    ranges = [range(int(cand.offsets[k]), int(cand.offsets[k + 1])) for k in range(cand.n_steps)]
    for seq in itertools.product(*ranges):
        socs = [float(grid[j0])]
        ok = True
        for k, c in enumerate(seq):
            s = next_soc(socs[-1], cand.p_b[c], dt, b.q_max, b.r_i, b.alpha_bat, b.beta_bat)
            if not s == s:
                ok = False
                break
            j, _ = _locate(s, cfg.soc_min, cell, n, True)
            if j < 0:
                ok = False
                break
            socs.append(float(grid[j]))
        if not ok or not _terminal_ok(socs[-1], band[0], band[1]):
            continue
        cost = 0.0
        for c in reversed(seq):
            cost = cand.fuel_dt[c] + mu * cand.nox_dt[c] + cost
        if cost < best_cost:
            best_cost, best_seq, best_socs = cost, seq, socs
    if best_seq is None:
        raise Infeasible("no control sequence reaches the terminal SoC band", step=None)
    return _trajectory(spec, maps, battery, mission, cand, np.asarray(best_seq), np.asarray(best_socs), mu,
                       best_cost, band)


# --- Pareto sweep -------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FrontPoint:
    mu: float
    h2_kg: float
    nox_mg: float
    trajectory: Trajectory
    dominated: bool = False


@dataclass(frozen=True, eq=False)
class ParetoFront:
    """Sweep result for one architecture on one mission, ordered by weight."""

    architecture: Architecture
    mission: str
    points: tuple[FrontPoint, ...]
    saturation_index: int
    saturated: bool
    failed_mu: tuple[float, ...] = ()

    def __len__(self):
        return len(self.points)

    @property
    def mu(self) -> np.ndarray:
        return np.array([p.mu for p in self.points])

    @property
    def h2(self) -> np.ndarray:
        return np.array([p.h2_kg for p in self.points])

    @property
    def nox(self) -> np.ndarray:
        return np.array([p.nox_mg for p in self.points])

    @property
    def star(self) -> FrontPoint:
        """Lowest-weight point (the H2-optimal calibration when the sweep starts at 0)."""
        return self.points[0]

    @property
    def square(self) -> FrontPoint:
        """NOx-saturated calibration."""
        return self.points[self.saturation_index]


def saturation_index(nox, rel_tol: float = 1e-3) -> tuple[int, bool]:
    """Highest index whose NOx differs from its predecessor by less than ``rel_tol``.

    Falls back to the NOx minimum (flagged unsaturated) when no step is that small.
    """
    nox = np.asarray(nox, dtype=float)
    for i in range(nox.size - 1, 0, -1):
        prev = nox[i - 1]
        if abs(nox[i] - prev) <= rel_tol * abs(prev) or (prev == 0 and nox[i] == 0):
            return i, True
    return int(np.argmin(nox)), nox.size == 1


def _flag_dominated(h2, nox):
    flags = []
    for i in range(h2.size):
        others = np.arange(h2.size) != i
        dom = others & (h2 <= h2[i]) & (nox <= nox[i]) & ((h2 < h2[i]) | (nox < nox[i]))
        flags.append(bool(np.any(dom)))
    return flags


def sweep_pareto(spec, maps, battery, mission, cfg: DpConfig | None = None, candidates=None) -> ParetoFront:
    """Solve for every weight in ``cfg.mu`` and assemble the front.

    Dominated points (interpolation noise) are flagged, not removed.
    """
    cfg = cfg or DpConfig()
    sol = backward_pass(spec, maps, battery, mission, cfg, candidates=candidates)
    trajs, failed = [], []
    first_error = None
    for m, mu in enumerate(sol.mus):
        try:
            trajs.append(sol.trajectory(m))
        except Infeasible as exc:
            failed.append(float(mu))
            first_error = first_error or exc
    if not trajs:
        raise first_error
    h2 = np.array([t.h2_kg for t in trajs])
    nox = np.array([t.nox_mg for t in trajs])
    flags = _flag_dominated(h2, nox)
    points = tuple(FrontPoint(t.mu, t.h2_kg, t.nox_mg, t, f) for t, f in zip(trajs, flags))
    idx, saturated = saturation_index(nox)
    return ParetoFront(spec.kind, mission.name, points, idx, saturated, tuple(failed))
