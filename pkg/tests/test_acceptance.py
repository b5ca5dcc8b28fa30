"""Acceptance gate: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v``; the summary lines are also
printed at the end of the pytest session.
"""

import math

import numpy as np
import pytest

from sddm_nav.bounds import (
    build_closed_loop,
    check_certificate,
    double_integrator,
    exact_output_peak,
    relaxed_output_peak,
)
from sddm_nav.cli import main as cli_main
from sddm_nav.governor import ControllerGains, RobotGovernorState, current_metric
from sddm_nav.metric import DirectionalWeights, make_directional_matrix
from sddm_nav.planner import astar_cells
from sddm_nav.scenario import ScenarioConfig, load_scenario, random_clutter
from sddm_nav.sim import run_scenario, step
from sddm_nav.world import ObstacleSet, is_free

from test_bounds import random_system
from test_planner import dijkstra_cost

RESULTS = {}
GAINS = ControllerGains()
SQ2 = math.sqrt(2)
SCENARIOS = ("corridor", "sparse_circles", "maze")


def report(n, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    RESULTS[n] = line
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def shipped_runs():
    runs = {}
    for name in SCENARIOS:
        sc = load_scenario(name)
        for mode in ("sddm", "euclidean"):
            runs[name, mode] = run_scenario(ScenarioConfig.from_scenario(sc, mode=mode))
    return runs


@pytest.fixture(scope="module")
def clutter_runs():
    return [run_scenario(ScenarioConfig.from_scenario(random_clutter(seed), mode="sddm")) for seed in range(50)]


def test_criterion_1_directional_matrix():
    rng = np.random.default_rng(101)
    bad = 0
    for _ in range(1000):
        c1 = rng.uniform(0.01, 10)
        c2 = c1 + rng.uniform(0.01, 10)
        v = rng.normal(size=2) * 10 ** rng.uniform(-3, 3)
        q = make_directional_matrix(v, DirectionalWeights(c1, c2)).q
        lam = np.linalg.eigvalsh(q)
        ok = lam[0] >= c1 - 1e-9 and lam[-1] <= c2 + 1e-9 and np.linalg.norm(q @ v - c1 * v) <= 1e-9 * np.linalg.norm(v) * c2
        bad += not ok
    r = SQ2 / 2
    q = make_directional_matrix([r, r], DirectionalWeights(1.0, 4.0)).q
    err = float(np.abs(q - np.array([[2.5, -1.5], [-1.5, 2.5]])).max())
    report(1, bad == 0 and err <= 1e-12, f"1000 random matrices, {bad} violations; diagonal example max error {err:.1e}")


def test_criterion_2_exact_peak_oracle():
    a, b, k = double_integrator(1.0, 2 * SQ2)
    s0 = np.array([-2.0, 0.0, 0.0, 2.0])
    q = make_directional_matrix(-s0[:2], DirectionalWeights(1.0, 4.0)).q  # Q[g - x] = diag(1, 4)
    pk = exact_output_peak(build_closed_loop(a, b, k, q), s0)
    eta_ref, t_ref = 8 * math.exp(-2 / 3), 1 / (3 * SQ2)
    eu = exact_output_peak(build_closed_loop(a, b, k, np.eye(2)), s0 * [1, 1, 0, 0])
    ok = abs(pk.value - eta_ref) <= 1e-3 and abs(pk.argmax_time - t_ref) <= 1e-3
    ok = ok and abs(eu.value - 4.0) <= 1e-3 and eu.argmax_time == 0.0
    report(2, ok, f"eta={pk.value:.6f} (ref {eta_ref:.6f}) at t={pk.argmax_time:.6f} (ref {t_ref:.6f}); "
                  f"euclidean eta={eu.value:.6f} at t={eu.argmax_time}")


def test_criterion_3_relaxation_soundness():
    rng = np.random.default_rng(103)
    below, cert_fail, worst = 0, 0, math.inf
    for _ in range(100):
        sys = random_system(rng)
        s0 = rng.normal(size=4)
        eta = exact_output_peak(sys, s0).value
        pk, cert = relaxed_output_peak(sys, s0)
        below += pk.value < eta - 1e-8
        cert_fail += bool(check_certificate(sys, s0, cert))
        worst = min(worst, pk.value / eta)
    report(3, below == 0 and cert_fail == 0,
           f"100 systems: {below} with delta < eta, {cert_fail} invalid certificates, min delta/eta={worst:.3f}")


def test_criterion_4_static_governor_safety():
    rng = np.random.default_rng(104)
    cases = exits = touches = 0
    worst = -math.inf
    while cases < 50:
        disks = np.column_stack([rng.uniform(-6, 6, (6, 2)), rng.uniform(0.3, 1.2, 6)])
        obs = ObstacleSet(disks, np.zeros((0, 4)), (-8, -8, 8, 8))
        g = rng.uniform(-6, 6, 2)
        x = g + rng.normal(size=2) * rng.uniform(0.1, 1.5)
        v = rng.normal(size=2) * rng.uniform(0.0, 1.5)
        state = RobotGovernorState(x, v, g)
        if not (is_free(obs, g) and is_free(obs, x)):
            continue
        q = current_metric(state, GAINS).q
        delta = relaxed_output_peak(GAINS.closed_loop.with_metric(q), state.error_state)[0].value
        if obs.dist_sq(q, g) < delta:
            continue  # safety condition not met at t0
        cases += 1
        s = state
        out = touch = False
        for _ in range(7500):  # 15 s at 2 ms
            s = step(s, g, GAINS, 0.002)
            e = s.x - g
            val = float(e @ q @ e)
            worst = max(worst, val - delta)
            out |= val > delta + 1e-6
            touch |= obs.clearance(s.x) <= 0
        exits += out
        touches += touch
    report(4, exits == 0 and touches == 0,
           f"50 frozen-governor runs: {exits} left the bound ellipsoid, {touches} touched obstacles, "
           f"max excess {worst:.2e}")


def _run_ok(tlog):
    m = tlog.metrics()
    return (tlog.status == "goal-reached" and not tlog.collision and m["final_position_error"] <= 0.05
            and m["final_speed"] <= 0.05 and tlog.min_delta_e >= -1e-6 and tlog.min_clearance > 0)


def test_criterion_5_closed_loop_safety(shipped_runs, clutter_runs):
    failed = [f"{n}/{m}" for (n, m), t in shipped_runs.items() if not _run_ok(t)]
    failed += [t.scenario for t in clutter_runs if not _run_ok(t)]
    min_de = min(t.min_delta_e for t in [*shipped_runs.values(), *clutter_runs])
    min_cl = min(t.min_clearance for t in [*shipped_runs.values(), *clutter_runs])
    report(5, not failed, f"{len(shipped_runs)} shipped runs + {len(clutter_runs)} clutter worlds; failures: "
                          f"{failed or 'none'}; min deltaE={min_de:.4f}, min clearance={min_cl:.3f} m")


def test_criterion_6_corridor_effect(shipped_runs):
    parts, ok = [], True
    for name in ("corridor", "sparse_circles"):
        s, e = shipped_runs[name, "sddm"], shipped_runs[name, "euclidean"]
        good = (s.time_to_goal is not None and e.time_to_goal is not None and s.time_to_goal < e.time_to_goal
                and s.mean_speed > e.mean_speed)
        ok &= good
        parts.append(f"{name}: t {s.time_to_goal:.2f} vs {e.time_to_goal:.2f} s, "
                     f"speed {s.mean_speed:.3f} vs {e.mean_speed:.3f} m/s")
    report(6, ok, "; ".join(parts))


def test_criterion_7_rk4_order():
    def err(dt, t_end=2.0):
        s = RobotGovernorState(np.array([1.0, 0.0]), np.zeros(2), np.zeros(2))
        for _ in range(int(round(t_end / dt))):
            s = step(s, np.zeros(2), GAINS, dt)
        return abs(s.x[0] - (1 + SQ2 * t_end) * math.exp(-SQ2 * t_end))

    errs = [err(dt) for dt in (0.08, 0.04, 0.02)]
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    report(7, all(r >= 12 for r in ratios), f"errors {[f'{e:.2e}' for e in errs]}, ratios {[f'{r:.2f}' for r in ratios]}")


def test_criterion_8_planner(shipped_runs):
    rng = np.random.default_rng(108)
    mismatches = checked = 0
    while checked < 20:
        ny, nx = rng.integers(5, 51, 2)
        free = rng.random((ny, nx)) > rng.uniform(0.1, 0.35)
        cells = np.argwhere(free)
        s, g = cells[rng.choice(len(cells), 2, replace=False)]
        start, goal = (int(s[1]), int(s[0])), (int(g[1]), int(g[0]))
        _, cost = astar_cells(free, start, goal)
        ref = dijkstra_cost(free, start, goal)
        if math.isinf(ref):
            mismatches += not math.isinf(cost)
            continue
        checked += 1
        mismatches += abs(cost - ref) > 1e-9
    # replanned paths start at the governor: compare with the logged g at each replan instant
    off = 0
    plans = 0
    for mode in ("sddm", "euclidean"):
        tlog = shipped_runs["maze", mode]
        by_t = {round(r.t, 9): r.g for r in tlog.records}
        for t, wp in tlog.paths[1:]:
            plans += 1
            off += not np.array_equal(wp[0], by_t[round(t, 9)])
    report(8, mismatches == 0 and off == 0 and plans > 0,
           f"20 grids, {mismatches} cost mismatches; {plans} maze replans, {off} not starting at the governor")


def test_criterion_9_determinism(tmp_path, capsys):
    dirs = [tmp_path / "a", tmp_path / "b"]
    codes = [cli_main(["run", "--scenario", "corridor", "--mode", "sddm", "--out", str(d), "--seed", "3"]) for d in dirs]
    capsys.readouterr()
    same = all((dirs[0] / f).read_bytes() == (dirs[1] / f).read_bytes() for f in ("trajectory.csv", "metrics.json"))
    report(9, codes == [0, 0] and same, f"exit codes {codes}; trajectory.csv and metrics.json identical: {same}")


def pytest_terminal_summary_lines():
    return [RESULTS[k] for k in sorted(RESULTS)]
