"""One test per acceptance criterion; each prints a PASS/FAIL line with its measured value."""
import time

import numpy as np
import pytest
from conftest import ARCHITECTURES, record_criterion, toy_instance

from h2ems import cli
from h2ems.analysis import compute_baseline, extract_calibrations, h2_at_nox, operating_point_stats, report_dict
from h2ems.cycles import make_highway_cycle, make_mountain_cycle, mixed_load_cycle
from h2ems.optimizer import Infeasible, brute_force_oracle, build_candidates, solve_dp
from h2ems.powertrain import ControlDecision, evaluate_controls, make_architecture, rotational_speeds, torque_request


def test_c01_oracle_equivalence(maps):
    t0 = time.perf_counter()
    solved, mismatches, seed = 0, [], 0
    while solved < 25 and seed < 200:
        spec, battery, mission, cfg = toy_instance(seed)
        seed += 1
        try:
            cand = build_candidates(spec, maps, battery, mission, cfg)
        except Infeasible:
            continue
        assert mission.n_steps <= 6 and cfg.soc_points <= 5 and len(cand.table) <= 4
        finite = False
        for mu in cfg.mu:
            try:
                bf = brute_force_oracle(spec, maps, battery, mission, mu, cfg, candidates=cand)
            except Infeasible:
                bf = None
            try:
                dp = solve_dp(spec, maps, battery, mission, mu, cfg, candidates=cand)
            except Infeasible:
                dp = None
            if (bf is None) != (dp is None) or (bf is not None and bf.cost != dp.cost):
                mismatches.append((seed - 1, mu))
            finite |= bf is not None
        solved += finite
    elapsed = time.perf_counter() - t0
    ok = solved >= 25 and not mismatches and elapsed < 10
    record_criterion(1, ok, f"{solved} toy instances x 3 weights, {len(mismatches)} mismatches, {elapsed:.1f} s")
    assert ok, mismatches


def _all_trajectories(mixed_load_study, highway_study):
    for front in mixed_load_study["fronts"].values():
        if front.architecture.value != "base":
            for p in front.points:
                yield mixed_load_study["cfg"], p.trajectory
    for p in highway_study["front"].points:
        yield highway_study["cfg"], p.trajectory


def test_c02_charge_sustaining_and_bounds(mixed_load_study, highway_study):
    count, bad = 0, []
    for cfg, traj in _all_trajectories(mixed_load_study, highway_study):
        count += 1
        lo, hi = cfg.band
        if not (lo <= traj.soc[-1] <= hi) or traj.soc.min() < 0.3 or traj.soc.max() > 0.9:
            bad.append((traj.architecture.value, traj.mission, traj.mu))
    ok = count > 0 and not bad
    record_criterion(2, ok, f"{count} trajectories, {len(bad)} leave [0.3, 0.9] or the terminal band")
    assert ok, bad


def test_c03_driveability(maps, battery):
    checked, worst = 0, 0.0
    for arch in ARCHITECTURES:
        spec = make_architecture(arch)
        rng = np.random.default_rng(len(arch))
        n = 60_000
        modes = rng.choice(sorted(spec.allowed_modes), n)
        v = rng.uniform(0.0, 45.0, n)
        a = rng.uniform(-3.0, 3.0, n)
        grade = rng.uniform(-0.1, 0.1, n)
        t_e_req = np.where(modes == 2, rng.uniform(0.0, 300.0, n), 0.0)
        t_gen = np.where(modes == 1, -rng.uniform(0.0, 150.0, n), 0.0) if spec.has_generator else np.zeros(n)
        w_gen = np.where(modes == 1, spec.gamma_gen * rng.uniform(100.0, 600.0, n), 0.0)
        b = evaluate_controls(spec, maps, v, a, grade, modes, t_e_req, t_gen, w_gen, battery.p_aux)
        f = b.feasible
        gamma_e = spec.engine_ratio(v)
        t_m = b.t_mot * spec.gamma_mot * np.where(b.t_mot >= 0, spec.eta_gb_mot, 1 / spec.eta_gb_mot)
        t_fd = b.t_e_req * gamma_e + t_m
        wheel = t_fd * spec.gamma_fd * np.where(t_fd >= 0, spec.eta_fd, 1 / spec.eta_fd) + b.t_brake
        err = np.abs(wheel[f] - b.t_req[f]) / np.maximum(np.abs(b.t_req[f]), 1.0)
        checked += int(f.sum())
        worst = max(worst, float(err.max()))
    ok = checked >= 100_000 and worst <= 1e-9
    record_criterion(3, ok, f"{checked} feasible stage evaluations, worst relative imbalance {worst:.1e}")
    assert ok


def test_c04_pareto_monotonicity(mixed_load_study):
    worst = {}
    for arch, front in mixed_load_study["fronts"].items():
        nox_up = np.max(np.diff(front.nox) / front.nox[:-1], initial=0.0)
        h2_down = np.max(-np.diff(front.h2) / front.h2[:-1], initial=0.0)
        worst[arch] = max(nox_up, h2_down)
    ok = all(w <= 0.005 for w in worst.values())
    detail = ", ".join(f"{a} {100 * w:.3f}%" for a, w in worst.items())
    record_criterion(4, ok, f"worst step against monotonicity: {detail} (limit 0.5%)")
    assert ok


def test_c05_mixed_dominates_series(mixed_load_study):
    mixed, series = mixed_load_study["fronts"]["mixed"], mixed_load_study["fronts"]["series"]
    assert make_architecture("mixed").m_tot == make_architecture("series").m_tot
    worst = -np.inf
    for h2_s, nox_s in zip(series.h2, series.nox):
        h2_m = h2_at_nox(mixed.h2, mixed.nox, nox_s)
        assert h2_m is not None, f"mixed front never reaches NOx {nox_s:.1f} mg"
        worst = max(worst, h2_m / h2_s - 1)
    ok = worst <= 0.005
    record_criterion(5, ok, f"mixed H2 minus series H2 at matched NOx, worst {100 * worst:+.2f}% (limit +0.5%)")
    assert ok


def test_c06_directional_wltc_like(mixed_load_study):
    base = mixed_load_study["base"]
    k = extract_calibrations(mixed_load_study["fronts"]["mixed"], base)
    saving = 1 - k.target.h2_kg / base.h2_kg
    fx = k.fx
    ok_a = saving >= 0.10
    ok_b = fx <= 0.10
    record_criterion("6a", ok_a, f"mixed H2 at NOx = NOx0 is {100 * saving:.1f}% below H2_0 (need >= 10%)")
    record_criterion("6b", ok_b, f"NOx(S-square) / NOx0 = {fx:.3f} (need <= 0.10)")
    assert ok_a and ok_b


def test_c07_highway_worst_case(maps, highway_study):
    front, base = highway_study["front"], highway_study["base"]
    k = extract_calibrations(front, base)
    stats = operating_point_stats(front.square.trajectory, maps.engine)
    doc = report_dict(front, base, k, stats)
    ok_a = not k.s_triangle_reachable and doc["kpis"]["s_triangle_reachable"] is False
    series_share = stats.mode_share[1]
    ok_b = series_share >= 0.9
    spec = make_architecture("mixed")
    v = 142 / 3.6
    t_wheel = torque_request(spec, v, 0.0, 0.0)
    w_e = rotational_speeds(spec, v, ControlDecision(mode=2))[2]
    ok_c = abs(t_wheel / 372 - 1) <= 0.02 and abs(w_e / 352 - 1) <= 0.01
    record_criterion(
        "7a", ok_a, f"90% target unreachable, fallback flagged (NOx floor {100 * k.fx:.1f}% of NOx0)"
    )
    record_criterion("7b", ok_b, f"S-square series-mode share {100 * series_share:.1f}% (need >= 90%)")
    record_criterion("7c", ok_c, f"cruise wheel torque {t_wheel:.1f} N*m, parallel engine speed {w_e:.1f} rad/s")
    assert ok_a and ok_b and ok_c


def test_c08_base_vehicle(maps, battery, mixed_load_study):
    idle_violations = 0
    missions = [mixed_load_cycle(), make_highway_cycle(), make_mountain_cycle()]
    for mission in missions:
        t = compute_baseline(maps, battery, mission).trajectory
        coast = t.t_req <= 0
        idle_violations += int(np.sum((t.mdot_fuel[coast] != 0) | (t.mdot_nox[coast] != 0)))
    nox = mixed_load_study["base"].trajectory.mdot_nox
    spikes = int(np.sum(nox > 10 * np.median(nox)))
    ok = idle_violations == 0 and spikes >= 5
    record_criterion(
        8, ok, f"{idle_violations} fuelled samples with T_req <= 0; {spikes} NOx samples above 10x median (need >= 5)"
    )
    assert ok


def _pareto_files(out):
    cfg = cli.build_run_config(cli.make_parser().parse_args(
        ["pareto", "--arch", "parallel", "--arch", "base", "--mission", "mixed-load", "--out", str(out), "-q"]))
    assert cli.cmd_pareto(cfg) == 0
    return {p.name: p.read_bytes() for p in sorted(out.iterdir()) if p.name != "run_meta.json"}


def test_c09_determinism(tmp_path):
    first = _pareto_files(tmp_path / "one")
    second = _pareto_files(tmp_path / "two")
    same = first.keys() == second.keys() and all(first[k] == second[k] for k in first)
    ok = same and len(first) >= 6
    record_criterion(9, ok, f"{len(first)} CSV/JSON files from two cmd_pareto runs, bit-identical: {same}")
    assert ok


def test_c10_performance(mixed_load_study):
    elapsed = mixed_load_study["elapsed"]
    steps = mixed_load_study["mission"].n_steps
    mus = len(mixed_load_study["cfg"].mu)
    ok = elapsed < 600 and steps == 1800 and mus == 25
    record_criterion(10, ok, f"4 architectures x {mus} weights on {steps} steps in {elapsed:.0f} s (limit 600 s)")
    assert ok
