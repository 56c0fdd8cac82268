"""Command-line front end: ``h2ems baseline | pareto | compare``.

Exit codes: 0 success, 1 usage or input error, 2 infeasible problem,
3 internal error or violated invariant.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import multiprocessing
import os
import platform
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .analysis import (
    FRONT_COLUMNS,
    Baseline,
    compute_baseline,
    csv_text,
    extract_calibrations,
    front_csv,
    json_text,
    operating_point_stats,
    report_dict,
    trace_csv,
)
from .cycles import BUILTIN, ParseError, resolve_mission
from .maps import load_map_set, synthetic_map_set
from .optimizer import DpConfig, Infeasible, default_mu, sweep_pareto
from .powertrain import Architecture, ArchitectureSpec, BatterySpec, make_architecture

log = logging.getLogger("h2ems")

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class InvariantViolation(Exception):
    pass


@dataclasses.dataclass
class RunConfig:
    architectures: list = dataclasses.field(default_factory=lambda: ["mixed"])
    mission: str = "mixed-load"
    maps: str = "synthetic"
    out: str = "h2ems-out"
    nox_target: float = 0.10
    reference_nox: float = 1.0
    threads: int = 1
    dt: float = 1.0
    mu_count: int = 25
    mu_min: float = 1e-7
    mu_max: float = 1e-2
    dp: dict = dataclasses.field(default_factory=dict)
    battery: dict = dataclasses.field(default_factory=dict)
    vehicle: dict = dataclasses.field(default_factory=dict)

    def dp_config(self) -> DpConfig:
        return DpConfig(mu=default_mu(self.mu_count, self.mu_min, self.mu_max), **self.dp)

    def battery_spec(self) -> BatterySpec:
        return BatterySpec(**self.battery)

    def spec(self, kind) -> ArchitectureSpec:
        return make_architecture(kind, **self.vehicle)


_DP_FIELDS = {f.name: f for f in dataclasses.fields(DpConfig) if f.name not in ("mu",)}
_BATTERY_FIELDS = {f.name for f in dataclasses.fields(BatterySpec)}
_VEHICLE_FIELDS = {f.name for f in dataclasses.fields(ArchitectureSpec)} - {"kind", "allowed_modes"}


def _check_section(name, values, allowed):
    if not isinstance(values, dict):
        raise UsageError(f"config section {name!r} must be a mapping")
    unknown = set(values) - set(allowed)
    if unknown:
        raise UsageError(f"unknown keys in {name!r}: {', '.join(sorted(unknown))}")
    out = {}
    for key, val in values.items():
        if isinstance(val, list):
            val = tuple(val)
        if isinstance(val, bool) or not isinstance(val, (int, float, tuple, type(None))):
            if not (name == "dp" and key == "round_to_grid" and isinstance(val, bool)):
                raise UsageError(f"{name}.{key} must be numeric, got {val!r}")
        out[key] = val
    return out


def load_config(path) -> dict:
    try:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror or exc}") from None
    except yaml.YAMLError as exc:
        raise UsageError(f"cannot parse config {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise UsageError(f"config {path} must be a mapping")
    return raw


def build_run_config(args) -> RunConfig:
    cfg = RunConfig()
    fields = {f.name for f in dataclasses.fields(RunConfig)}
    if args.config:
        raw = load_config(args.config)
        unknown = set(raw) - fields
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        for key, val in raw.items():
            setattr(cfg, key, val)
    # command-line flags take precedence
    flag_map = {
        "arch": "architectures", "mission": "mission", "maps": "maps", "out": "out",
        "nox_target": "nox_target", "threads": "threads", "mu_count": "mu_count", "dt": "dt",
    }
    for flag, key in flag_map.items():
        val = getattr(args, flag, None)
        if val is not None:
            setattr(cfg, key, val)
    if getattr(args, "soc_points", None) is not None:
        cfg.dp = {**cfg.dp, "soc_points": args.soc_points}

    if isinstance(cfg.architectures, str):
        cfg.architectures = [cfg.architectures]
    try:
        cfg.architectures = [Architecture(a).value for a in cfg.architectures]
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    cfg.architectures = list(dict.fromkeys(cfg.architectures))
    cfg.dp = _check_section("dp", cfg.dp, _DP_FIELDS)
    cfg.battery = _check_section("battery", cfg.battery, _BATTERY_FIELDS)
    cfg.vehicle = _check_section("vehicle", cfg.vehicle, _VEHICLE_FIELDS)
    for key, typ in (("nox_target", float), ("reference_nox", float), ("dt", float), ("mu_min", float),
                     ("mu_max", float), ("threads", int), ("mu_count", int)):
        val = getattr(cfg, key)
        if isinstance(val, bool) or not isinstance(val, (int, float)) or (typ is int and int(val) != val):
            raise UsageError(f"{key} must be {typ.__name__}, got {val!r}")
        setattr(cfg, key, typ(val))
    if not 0 < cfg.nox_target <= 1:
        raise UsageError("nox_target must lie in (0, 1]")
    if cfg.threads < 1 or cfg.mu_count < 1 or cfg.dt <= 0:
        raise UsageError("threads and mu_count must be positive, dt > 0")
    if cfg.mission not in BUILTIN and not Path(cfg.mission).is_file():
        raise UsageError(f"mission {cfg.mission!r} is neither a builtin ({', '.join(BUILTIN)}) nor a file")
    if cfg.maps != "synthetic" and not Path(cfg.maps).is_dir():
        raise UsageError(f"map directory {cfg.maps!r} not found")
    # construct once so bad overrides fail before any solve
    try:
        cfg.dp_config()
        cfg.battery_spec()
        for a in cfg.architectures:
            cfg.spec(a)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid parameter: {exc}") from None
    return cfg


# --- execution ---------------------------------------------------------------------------

def _load_inputs(cfg: RunConfig):
    maps = synthetic_map_set() if cfg.maps == "synthetic" else load_map_set(cfg.maps)
    mission = resolve_mission(cfg.mission, cfg.dt)
    return maps, mission


def _check_trajectory(traj, cfg: RunConfig):
    dp = cfg.dp_config()
    lo, hi = dp.band
    soc = traj.soc
    if not (lo - 1e-9 <= soc[-1] <= hi + 1e-9):
        raise InvariantViolation(f"{traj.architecture.value} mu={traj.mu:g}: final SoC {soc[-1]:.6f} outside band")
    if np.any(soc < dp.soc_min - 1e-9) or np.any(soc > dp.soc_max + 1e-9):
        raise InvariantViolation(f"{traj.architecture.value} mu={traj.mu:g}: SoC leaves [{dp.soc_min}, {dp.soc_max}]")


def _solve_front(cfg: RunConfig, arch: str):
    maps, mission = _load_inputs(cfg)
    t0 = time.perf_counter()
    front = sweep_pareto(cfg.spec(arch), maps, cfg.battery_spec(), mission, cfg.dp_config())
    return front, time.perf_counter() - t0


def _solve_all(cfg: RunConfig, archs):
    parallel = cfg.threads > 1 and len(archs) > 1 and os.environ.get("H2EMS_NO_PARALLEL") != "1"
    if parallel:
        # spawn, not fork: the numba OpenMP runtime may already be live in this process
        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(max_workers=min(cfg.threads, len(archs)), mp_context=ctx) as pool:
            futures = {a: pool.submit(_solve_front, cfg, a) for a in archs}
            results = {a: futures[a].result() for a in archs}
    else:
        if cfg.threads > 1 and os.environ.get("H2EMS_NO_PARALLEL") != "1":
            import numba

            numba.set_num_threads(min(cfg.threads, numba.config.NUMBA_NUM_THREADS))
        results = {a: _solve_front(cfg, a) for a in archs}
    for a in archs:
        log.info("%s: %d weights in %.1f s", a, len(results[a][0]), results[a][1])
    return {a: results[a][0] for a in archs}


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _write_meta(out: Path, cmd: str, cfg: RunConfig, started: float):
    meta = {
        "command": cmd,
        "argv": sys.argv[1:],
        "config": dataclasses.asdict(cfg),
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "started_unix": started,
        "elapsed_s": time.time() - started,
    }
    _write(out / "run_meta.json", json.dumps(meta, indent=2, default=str) + "\n")


def cmd_baseline(cfg: RunConfig) -> int:
    started = time.time()
    maps, mission = _load_inputs(cfg)
    base = compute_baseline(maps, cfg.battery_spec(), mission, cfg.spec("base"))
    out = Path(cfg.out)
    doc = {"mission": mission.name, "architecture": "base",
           "baseline": {"h2_kg": base.h2_kg, "nox_mg": base.nox_mg}}
    _write(out / "baseline.json", json_text(doc))
    _write(out / "baseline_trace.csv", trace_csv(base.trajectory))
    _write_meta(out, "baseline", cfg, started)
    print(f"baseline {mission.name}: H2 {base.h2_kg:.4f} kg, NOx {base.nox_mg:.1f} mg -> {out}")
    return EXIT_OK


def _triangle_trace(front, kpis):
    # nearest solved point on the reachable side of the interpolated target
    if kpis.triangle is None:
        return None
    for p in front.points:
        if p.nox_mg <= kpis.triangle.nox_mg + 1e-12:
            return p.trajectory
    return None


def cmd_pareto(cfg: RunConfig) -> int:
    started = time.time()
    maps, mission = _load_inputs(cfg)
    base = compute_baseline(maps, cfg.battery_spec(), mission, cfg.spec("base"))
    fronts = _solve_all(cfg, cfg.architectures)
    out = Path(cfg.out)
    for arch, front in fronts.items():
        for p in front.points:
            _check_trajectory(p.trajectory, cfg) if arch != "base" else None
        kpis = extract_calibrations(front, base, cfg.nox_target, cfg.reference_nox)
        stats = operating_point_stats(front.square.trajectory, maps.engine)
        doc = report_dict(front, base, kpis, stats)
        doc["calibrations"] = {
            name: (dataclasses.asdict(c) if c is not None else None)
            for name, c in (("star", kpis.star), ("triangle", kpis.triangle), ("square", kpis.square),
                            ("target", kpis.target))
        }
        doc["saturated"] = kpis.saturated
        doc["terminal_band"] = list(cfg.dp_config().band)
        _write(out / f"{arch}_report.json", json_text(doc))
        _write(out / f"{arch}_front.csv", front_csv(front, base))
        traces = {"star": front.star.trajectory, "square": front.square.trajectory,
                  "triangle": _triangle_trace(front, kpis)}
        for name, traj in traces.items():
            if traj is not None:
                _write(out / f"{arch}_trace_{name}.csv", trace_csv(traj))
        reach = "reachable" if kpis.s_triangle_reachable else "unreachable, fallback to saturated point"
        print(f"{arch:8s} {mission.name}: {len(front)} points, NOx reduction {kpis.fx_reduction:.1%}, "
              f"dH2 {kpis.dh2:+.1%}, 90% target {reach}")
    _write_meta(out, "pareto", cfg, started)
    return EXIT_OK


def _merge_reports(paths):
    docs = []
    for p in paths:
        try:
            docs.append(json.loads(Path(p).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read report {p}: {exc}") from None
    missions = {d.get("mission") for d in docs}
    if len(missions) != 1:
        raise UsageError(f"reports cover different missions: {', '.join(sorted(map(str, missions)))}")
    baselines = {json.dumps(d.get("baseline"), sort_keys=True) for d in docs}
    if len(baselines) != 1:
        raise UsageError("reports were normalized with different baselines")
    return docs


def cmd_compare(cfg: RunConfig, reports=()) -> int:
    started = time.time()
    out = Path(cfg.out)
    if reports:
        docs = _merge_reports(reports)
    else:
        maps, mission = _load_inputs(cfg)
        base = compute_baseline(maps, cfg.battery_spec(), mission, cfg.spec("base"))
        fronts = _solve_all(cfg, cfg.architectures)
        docs = []
        for arch, front in fronts.items():
            kpis = extract_calibrations(front, base, cfg.nox_target, cfg.reference_nox)
            stats = operating_point_stats(front.square.trajectory, maps.engine)
            docs.append(report_dict(front, base, kpis, stats))
    rows = []
    for d in docs:
        for r in d["front"]:
            rows.append({"architecture": d["architecture"], **r})
    _write(out / "comparison.csv", csv_text(("architecture",) + FRONT_COLUMNS, rows))
    _write_meta(out, "compare", cfg, started)
    print(f"compared {len(docs)} fronts on {docs[0]['mission']} -> {out / 'comparison.csv'}")
    return EXIT_OK


# --- argument parsing ----------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_common(p):
    p.add_argument("--config", help="YAML run configuration; flags override its values")
    p.add_argument("--arch", action="append", choices=[a.value for a in Architecture],
                   help="architecture to solve (repeatable)")
    p.add_argument("--mission", help=f"mission CSV path or builtin ({', '.join(BUILTIN)})")
    p.add_argument("--maps", help="map directory or 'synthetic'")
    p.add_argument("--mu-count", type=int, help="number of NOx weights including zero")
    p.add_argument("--soc-points", type=int, help="SoC grid size")
    p.add_argument("--out", help="output directory")
    p.add_argument("--nox-target", type=float, help="NOx fraction of the base vehicle for the target calibration")
    p.add_argument("--threads", type=int, help="worker count")
    p.add_argument("--dt", type=float, help="mission resampling step [s]")
    p.add_argument("-q", "--quiet", action="store_true", help="suppress progress messages")


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="h2ems", description="Optimal H2/NOx trade-offs of hybrid H2 powertrains.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    _add_common(sub.add_parser("baseline", help="simulate the base vehicle"))
    _add_common(sub.add_parser("pareto", help="sweep NOx weights and write fronts, KPIs and traces"))
    cmp_ = sub.add_parser("compare", help="merge fronts into one normalized CSV")
    _add_common(cmp_)
    cmp_.add_argument("reports", nargs="*", help="existing *_report.json files; solve afresh when omitted")
    return parser


def main(argv=None) -> int:
    # numba warns at import time on hosts with an old TBB; it falls back on its own
    warnings.filterwarnings("ignore", message="The TBB threading layer requires TBB version")
    parser = make_parser()
    args = parser.parse_args(argv)
    command = args.command or "pareto"
    if args.command is None:
        args = parser.parse_args(["pareto", *(argv if argv is not None else sys.argv[1:])])
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(name)s: %(message)s",
                        stream=sys.stderr)
    try:
        cfg = build_run_config(args)
        if command == "baseline":
            return cmd_baseline(cfg)
        if command == "pareto":
            return cmd_pareto(cfg)
        return cmd_compare(cfg, args.reports)
    except (UsageError, ParseError) as exc:
        print(f"h2ems: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Infeasible as exc:
        print(f"h2ems: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except InvariantViolation as exc:
        print(f"h2ems: invariant violated: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001 - last-resort exit code
        print(f"h2ems: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
