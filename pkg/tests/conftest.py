import numpy as np
import pytest

from h2ems.cycles import from_speed_trace
from h2ems.maps import synthetic_map_set
from h2ems.optimizer import DpConfig
from h2ems.powertrain import BatterySpec, make_architecture


@pytest.fixture(scope="session")
def maps():
    return synthetic_map_set()


@pytest.fixture(scope="session")
def battery():
    return BatterySpec()


def toy_instance(seed):
    """Random problem small enough for exhaustive enumeration.

    Five SoC nodes over [0.5, 0.9] and a small battery, so one step moves the
    state by about one cell; at most four controls per stage.
    """
    rng = np.random.default_rng(seed)
    steps = int(rng.integers(3, 7))
    arch = ["parallel", "series", "mixed"][seed % 3]
    v = rng.uniform(13, 18) + np.cumsum(np.concatenate([[0.0], rng.uniform(-1.0, 1.0, steps)]))
    mission = from_speed_trace(f"toy{seed}", 1.0, v, np.full(steps + 1, rng.uniform(-0.01, 0.02)))
    battery = BatterySpec(q_max=rng.uniform(600, 1500), r_i=0.05, p_aux=300.0)
    if arch == "parallel":
        torques = tuple(sorted(rng.choice(np.arange(20, 160, 10.0), 3, replace=False)))
        cfg_extra = dict(engine_torques=torques)
    elif arch == "series":
        torques = tuple(sorted(rng.choice(np.arange(20, 160, 10.0), 3, replace=False)))
        cfg_extra = dict(engine_torques=torques, generator_speeds=(float(rng.uniform(300, 700)),))
    else:
        torques = tuple(sorted(rng.choice(np.arange(20, 160, 10.0), 1, replace=False)))
        cfg_extra = dict(engine_torques=torques, generator_speeds=(float(rng.uniform(300, 700)),))
    cfg = DpConfig(soc_points=5, soc_min=0.5, soc_max=0.9, soc_target=0.7, round_to_grid=True,
                   mu=(0.0, 1e-5, 1e-2), **cfg_extra)
    return make_architecture(arch), battery, mission, cfg


# --- shared full-size sweeps -------------------------------------------------------------

ARCHITECTURES = ("base", "parallel", "series", "mixed")


@pytest.fixture(scope="session")
def mixed_load_study(maps, battery):
    """Baseline plus default-grid fronts of all four architectures on the bundled mixed-load cycle."""
    import time

    from h2ems.analysis import compute_baseline
    from h2ems.cycles import mixed_load_cycle
    from h2ems.optimizer import sweep_pareto

    mission = mixed_load_cycle()
    cfg = DpConfig()
    t0 = time.perf_counter()
    base = compute_baseline(maps, battery, mission)
    fronts = {a: sweep_pareto(make_architecture(a), maps, battery, mission, cfg) for a in ARCHITECTURES}
    elapsed = time.perf_counter() - t0
    return {"mission": mission, "cfg": cfg, "base": base, "fronts": fronts, "elapsed": elapsed}


@pytest.fixture(scope="session")
def highway_study(maps, battery):
    from h2ems.analysis import compute_baseline
    from h2ems.cycles import make_highway_cycle
    from h2ems.optimizer import sweep_pareto

    mission = make_highway_cycle()
    cfg = DpConfig()
    base = compute_baseline(maps, battery, mission)
    front = sweep_pareto(make_architecture("mixed"), maps, battery, mission, cfg)
    return {"mission": mission, "cfg": cfg, "base": base, "front": front}


# --- acceptance summary ----------------------------------------------------------------------

ACCEPTANCE_LINES = {}


def record_criterion(number, passed, detail):
    line = f"{'PASS' if passed else 'FAIL'} criterion {number:>2}: {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES, key=lambda k: (int(str(k).rstrip("abc")), str(k))):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
