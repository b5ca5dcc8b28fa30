import json
import math
from pathlib import Path

import jsonschema
import numpy as np
import pytest
from scipy.linalg import expm

from sddm_nav.governor import ControllerGains, RobotGovernorState
from sddm_nav.scenario import ScenarioConfig, parse_scenario
from sddm_nav.sim import (
    BLOWUP,
    CSV_HEADER,
    GOAL_REACHED,
    PLANNING_FAILURE,
    TIMEOUT,
    compare_controllers,
    metrics_json,
    rk4_step,
    run_scenario,
    step,
    trajectory_csv,
    write_outputs,
)
from sddm_nav.errors import ConfigurationError, NumericalBlowupError

DOCS = Path(__file__).resolve().parents[1] / "docs"
GAINS = ControllerGains()
SQ2 = math.sqrt(2)

SMALL = """\
name: small
bounds: [-1, -2, 7, 2]
start: [0, 0]
goal: [6, 0.5]
segments:
  - [1, -0.8, 5, -0.8]
  - [1, 1.2, 5, 1.2]
disks:
  - {center: [3, 0.9], radius: 0.15}
timeout: 40
"""

MAZE = """\
name: tiny_maze
bounds: [0, 0, 6, 4]
start: [0.8, 0.8]
goal: [5.2, 3.2]
sensing: lidar
segments:
  - [3, 0, 3, 2.6]
sensor: {beams: 180, range_max: 5.0, rate: 20.0}
grid: {resolution: 0.1, inflation: 0.3}
timeout: 60
"""


def cfg_for(text, **kw):
    return ScenarioConfig.from_scenario(parse_scenario(text, "t.world"), **kw)


def drop_state(x0=1.0):
    return RobotGovernorState(np.array([x0, 0.0]), np.zeros(2), np.zeros(2))


def closed_form(t, x0=1.0):
    return x0 * (1 + SQ2 * t) * math.exp(-SQ2 * t)


def test_equilibrium_step_is_fixed_point():
    s = RobotGovernorState(np.array([2.0, 1.0]), np.zeros(2), np.array([2.0, 1.0]))
    out = step(s, s.g, GAINS, 0.002)
    assert np.array_equal(out.as_vector(), s.as_vector()) and out.t == pytest.approx(0.002)


def test_static_drop_matches_closed_form():
    s = drop_state()
    for _ in range(1000):
        s = step(s, np.zeros(2), GAINS, 0.002)
    assert abs(s.x[0] - closed_form(2.0)) <= 1e-8
    assert s.x[1] == 0.0 and s.t == pytest.approx(2.0)


def rk4_error(dt, t_end=2.0):
    s = drop_state()
    for _ in range(int(round(t_end / dt))):
        s = step(s, np.zeros(2), GAINS, dt)
    return abs(s.x[0] - closed_form(t_end))


def test_rk4_fourth_order():
    errs = [rk4_error(dt) for dt in (0.08, 0.04, 0.02)]
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    assert all(r >= 12 for r in ratios), ratios
    assert all(abs(math.log2(r) - 4) < 0.3 for r in ratios)


def test_rk4_step_generic():
    # y' = -y, one step against the degree-4 Taylor polynomial
    h = 0.1
    y = rk4_step(lambda v: -v, np.array([1.0]), h)
    assert y[0] == pytest.approx(1 - h + h**2 / 2 - h**3 / 6 + h**4 / 24, abs=1e-15)


def test_step_rejects_nonfinite():
    bad = RobotGovernorState(np.array([np.nan, 0.0]), np.zeros(2), np.zeros(2))
    with pytest.raises(NumericalBlowupError):
        step(bad, np.zeros(2), GAINS, 0.01)


def test_frozen_rk4_matches_matrix_exponential():
    a_bar = GAINS.closed_loop.a_bar
    rng = np.random.default_rng(61)
    s0 = rng.normal(size=4)
    s = RobotGovernorState(s0[:2], s0[2:], np.zeros(2))
    for _ in range(500):
        s = step(s, np.zeros(2), GAINS, 0.002)
    ref = expm(a_bar * 1.0) @ s0
    np.testing.assert_allclose(np.concatenate([s.x, s.v]), ref, atol=1e-10)


@pytest.fixture(scope="module")
def small_runs():
    return {m: run_scenario(cfg_for(SMALL, mode=m)) for m in ("sddm", "euclidean")}


def test_small_world_reaches_goal_safely(small_runs):
    for mode, tlog in small_runs.items():
        m = tlog.metrics()
        assert tlog.status == GOAL_REACHED, (mode, m)
        assert not tlog.collision and tlog.min_clearance > 0
        assert tlog.min_delta_e >= -1e-6
        assert m["final_position_error"] <= 0.05 and m["final_speed"] <= 0.05
        ts = [r.t for r in tlog.records]
        assert all(b > a for a, b in zip(ts, ts[1:]))


def test_small_world_sddm_faster(small_runs):
    assert small_runs["sddm"].time_to_goal < small_runs["euclidean"].time_to_goal


def test_leeway_and_zone_bookkeeping(small_runs):
    for r in small_runs["sddm"].records[::25]:
        assert r.delta_e == pytest.approx(r.dist2obs - r.bound)
        assert np.allclose(r.q, r.q.T)


def test_bound_replay_with_frozen_governor(small_runs):
    """From each logged state, the frozen-governor motion over one control window stays in the bound."""
    tlog = small_runs["sddm"]
    a_bar = GAINS.closed_loop.a_bar
    window = np.linspace(0, 10 * 0.002, 11)
    props = np.array([expm(a_bar * t) for t in window])
    for r in tlog.records[::5]:
        s0 = np.concatenate([r.x - r.g, r.v])
        traj = props @ s0
        vals = np.einsum("ij,jk,ik->i", traj[:, :2], r.q, traj[:, :2])
        assert vals.max() <= r.bound + 1e-6


def test_timeout_zero_is_immediate():
    tlog = run_scenario(cfg_for(SMALL, timeout=0.0))
    assert tlog.status == TIMEOUT and tlog.records == [] and tlog.final_time == 0.0


def test_short_timeout():
    tlog = run_scenario(cfg_for(SMALL, timeout=1.0))
    assert tlog.status == TIMEOUT and tlog.time_to_goal is None
    assert tlog.metrics()["mean_speed"] is None


def test_unreachable_goal_is_planning_failure():
    text = SMALL.replace("segments:\n", "segments:\n  - [5.5, -2, 5.5, 2]\n")
    tlog = run_scenario(cfg_for(text))
    assert tlog.status == PLANNING_FAILURE and "no path" in tlog.message


def test_nonfinite_dynamics_reports_blowup(monkeypatch):
    import sddm_nav.sim as sim

    calls = {"n": 0}
    real = sim.frozen_derivative

    def flaky(y, gbar, gains):
        calls["n"] += 1
        return real(y, gbar, gains) if calls["n"] < 400 else np.full_like(y, np.nan)

    monkeypatch.setattr(sim, "frozen_derivative", flaky)
    tlog = run_scenario(cfg_for(SMALL))
    assert tlog.status == BLOWUP and "non-finite" in tlog.message
    assert tlog.records and tlog.metrics()["status"] == BLOWUP


def test_unstable_step_size_is_caught():
    tlog = run_scenario(cfg_for(SMALL, dt=5.0, control_period=1, lookahead=False))
    assert tlog.status in (BLOWUP, "collision") and tlog.status != GOAL_REACHED


def test_determinism(small_runs):
    again = run_scenario(cfg_for(SMALL, mode="sddm"))
    assert trajectory_csv(again) == trajectory_csv(small_runs["sddm"])
    assert metrics_json(again) == metrics_json(small_runs["sddm"])


def test_compare_identical_modes_identical():
    cfg = cfg_for(SMALL, timeout=3.0)
    table, logs = compare_controllers([cfg, cfg])
    assert set(table) == {"sddm_0", "sddm_1"}
    assert trajectory_csv(logs[0]) == trajectory_csv(logs[1])
    with pytest.raises(ConfigurationError):
        compare_controllers([cfg, cfg_for(MAZE)])


def test_outputs_and_schemas(tmp_path, small_runs):
    tlog = small_runs["sddm"]
    files = write_outputs(tlog, tmp_path)
    names = {p.name for p in files}
    assert {"trajectory.csv", "metrics.json", "paths.json"} <= names
    rows = (tmp_path / "trajectory.csv").read_text().splitlines()
    assert rows[0] == ",".join(CSV_HEADER) and len(rows) == len(tlog.records) + 1
    jsonschema.validate(json.loads((tmp_path / "metrics.json").read_text()),
                        json.loads((DOCS / "metrics.schema.json").read_text()))
    jsonschema.validate(json.loads((tmp_path / "paths.json").read_text()),
                        json.loads((DOCS / "paths.schema.json").read_text()))


def test_lidar_world_with_snapshots(tmp_path):
    tlog = run_scenario(cfg_for(MAZE), snapshots=True)
    assert tlog.status == GOAL_REACHED, tlog.metrics()
    assert tlog.replans >= 1 and len(tlog.grids) == len(tlog.paths)
    assert not tlog.collision and tlog.min_delta_e >= -1e-6
    # every replanned path starts at the governor position logged at that instant
    by_t = {round(r.t, 9): r for r in tlog.records}
    for t, wp in tlog.paths[1:]:
        np.testing.assert_array_equal(wp[0], by_t[round(t, 9)].g)
    files = write_outputs(tlog, tmp_path)
    pgms = sorted(p for p in files if p.suffix == ".pgm")
    assert pgms and pgms[0].read_text().startswith("P2\n60 40\n255\n")


def test_relaxed_bound_logging():
    tlog = run_scenario(cfg_for(SMALL, timeout=0.5, relaxed_every=5))
    logged = [r for r in tlog.records if r.relaxed is not None]
    assert len(logged) == 5
    for r in logged:
        assert r.relaxed >= r.bound - 1e-8
