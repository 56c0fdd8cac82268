import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from h2ems.cycles import (
    DrivingMission,
    NegativeSpeed,
    NonMonotonicTime,
    ParseError,
    from_speed_trace,
    load_mission,
    make_highway_cycle,
    make_mountain_cycle,
    mixed_load_cycle,
    resolve_mission,
)


def write(tmp_path, text, name="m.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_kmh_and_resampling(tmp_path):
    p = write(tmp_path, "# comment\ntime_s,speed_kmh\n0,0\n2,36\n4,36\n")
    m = load_mission(p, resample_dt=0.5)
    assert m.dt == 0.5 and len(m) == 9
    assert np.allclose(m.v, [0, 2.5, 5, 7.5, 10, 10, 10, 10, 10])
    assert np.allclose(m.a[:4], 5.0)
    assert m.name == "m"


def test_grade_columns(tmp_path):
    m = load_mission(write(tmp_path, "time_s,speed_mps,grade_percent\n0,10,5\n1,10,5\n"))
    assert np.allclose(m.grade, np.arctan(0.05))
    # constant 10 m/s over 100 m of climb per 10 s -> 10 % slope
    m = load_mission(write(tmp_path, "time_s,speed_mps,altitude_m\n0,10,0\n10,10,10\n20,10,20\n", "alt.csv"))
    assert np.allclose(m.grade, np.arctan(0.1))
    assert m.altitude is not None


@pytest.mark.parametrize(
    "text, exc",
    [
        ("time_s,speed_mps\n0,1\n0,2\n", NonMonotonicTime),
        ("time_s,speed_mps\n0,1\n1,-2\n", NegativeSpeed),
        ("time_s,speed\n0,1\n1,2\n", ParseError),
        ("speed_mps\n1\n2\n", ParseError),
        ("time_s,speed_mps\n0,1\n1,abc\n", ParseError),
        ("time_s,speed_mps\n0,1\n", ParseError),
        ("", ParseError),
    ],
)
def test_parse_errors(tmp_path, text, exc):
    with pytest.raises(exc):
        load_mission(write(tmp_path, text))


def test_missing_file():
    with pytest.raises(ParseError):
        load_mission("/nonexistent/cycle.csv")


def test_mission_invariants_enforced():
    v = np.array([0.0, 1.0, 2.0])
    with pytest.raises(ValueError):
        DrivingMission("x", 1.0, v, np.zeros(3), np.zeros(3))
    with pytest.raises(NegativeSpeed):
        from_speed_trace("x", 1.0, [0.0, -1.0])


@settings(max_examples=50)
@given(st.lists(st.floats(0, 50), min_size=2, max_size=40), st.sampled_from([0.5, 1.0, 2.0]))
def test_forward_difference(speeds, dt):
    m = from_speed_trace("p", dt, speeds)
    assert np.allclose(m.v[:-1] + m.a[:-1] * dt, m.v[1:], atol=1e-9)
    v, a, g = m.stage_points()
    assert v.size == m.n_steps and np.all(v >= 0)


def test_highway_cycle():
    m = make_highway_cycle()
    assert m.v[0] == 0.0
    assert m.v[-1] == pytest.approx(142 / 3.6)
    assert np.all(m.grade == 0)
    assert np.count_nonzero(m.a[:-1]) == 40


def test_mountain_cycle():
    m = make_mountain_cycle()
    assert m.altitude[-1] >= 1270.0
    assert m.altitude[-2] < 1270.0
    assert np.all(m.grade > 0)
    # 12 slowdowns to ~30 km/h
    slow = (m.v < 31 / 3.6) & (m.time > 20)
    starts = np.flatnonzero(np.diff(slow.astype(int)) == 1)
    assert starts.size == 12


def test_mixed_load_cycle():
    m = mixed_load_cycle()
    assert m.n_steps == 1800 and m.dt == 1.0
    assert m.v.max() * 3.6 == pytest.approx(131.0, abs=1.0)
    assert np.max(m.a) > 1.0
    assert m.v[0] == 0.0 and m.v[-1] == 0.0


def test_resolve(tmp_path):
    assert resolve_mission("highway").name == "highway"
    p = write(tmp_path, "time_s,speed_mps\n0,1\n3,2\n", "own.csv")
    assert resolve_mission(str(p), dt=1.0).n_steps == 3
