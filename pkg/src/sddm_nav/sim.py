"""Fixed-step simulation of the robot-governor loop, metrics and log writers."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, NumericalBlowupError, PlanningFailure
from .governor import (
    PathPolyline,
    RobotGovernorState,
    frozen_derivative,
    project_goal,
    safe_zone,
)
from .bounds import relaxed_output_peak
from .planner import PlanRequest, astar_plan, path_blocked, replan_policy
from .scenario import ScenarioConfig
from .world import OccupancyGrid, inflate, integrate_scan, rasterize, simulate_lidar, to_pgm

log = logging.getLogger(__name__)

CSV_HEADER = ("t", "x", "y", "vx", "vy", "gx", "gy", "gbarx", "gbary", "alpha", "deltaE", "bound",
              "dist2obs", "q11", "q12", "q22")

GOAL_REACHED = "goal-reached"
TIMEOUT = "timeout"
PLANNING_FAILURE = "planning-failure"
BLOWUP = "numerical-blowup"
COLLISION = "collision"

SAFEGUARD_HALVINGS = 8


@dataclass
class ControlRecord:
    t: float
    x: np.ndarray
    v: np.ndarray
    g: np.ndarray
    gbar: np.ndarray
    alpha: float
    delta_e: float
    bound: float
    dist2obs: float
    q: np.ndarray
    relaxed: float | None = None

    def row(self):
        return (self.t, *self.x, *self.v, *self.g, *self.gbar, self.alpha, self.delta_e, self.bound,
                self.dist2obs, self.q[0, 0], self.q[0, 1], self.q[1, 1])


@dataclass
class TrajectoryLog:
    scenario: str
    mode: str
    records: list = field(default_factory=list)
    status: str = TIMEOUT
    message: str = ""
    time_to_goal: float | None = None
    final_time: float = 0.0
    path_length: float = 0.0
    min_clearance: float = math.inf
    collision: bool = False
    replans: int = 0
    safeguard_cuts: int = 0
    final_x: np.ndarray | None = None
    final_v: np.ndarray | None = None
    goal: np.ndarray | None = None
    paths: list = field(default_factory=list)  # (t, waypoints) for each plan
    grids: list = field(default_factory=list)  # (t, OccupancyGrid) snapshots

    @property
    def min_delta_e(self) -> float:
        return min((r.delta_e for r in self.records), default=math.inf)

    @property
    def mean_speed(self) -> float | None:
        if self.time_to_goal is None or self.time_to_goal <= 0:
            return None
        return self.path_length / self.time_to_goal

    @property
    def succeeded(self) -> bool:
        return self.status == GOAL_REACHED and not self.collision

    def metrics(self) -> dict:
        def num(v):
            if v is None:
                return None
            v = float(v)
            return v if math.isfinite(v) else None  # JSON has no inf

        return {
            "scenario": self.scenario,
            "mode": self.mode,
            "status": self.status,
            "message": self.message,
            "time_to_goal": num(self.time_to_goal),
            "final_time": num(self.final_time),
            "path_length": num(self.path_length),
            "mean_speed": num(self.mean_speed),
            "min_delta_e": num(self.min_delta_e),
            "min_clearance": num(self.min_clearance),
            "collision": bool(self.collision),
            "control_steps": len(self.records),
            "replans": self.replans,
            "safeguard_cuts": self.safeguard_cuts,
            "final_position_error": num(np.linalg.norm(self.final_x - self.goal)) if self.final_x is not None else None,
            "final_speed": num(np.linalg.norm(self.final_v)) if self.final_v is not None else None,
        }


def rk4_step(f, y, h):
    k1 = f(y)
    k2 = f(y + 0.5 * h * k1)
    k3 = f(y + 0.5 * h * k2)
    k4 = f(y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def step(state: RobotGovernorState, gbar, gains, dt) -> RobotGovernorState:
    """One RK4 step of the robot-governor dynamics with the projected goal held fixed."""
    if not state.is_finite():
        raise NumericalBlowupError(f"non-finite state at t={state.t}")
    gbar = np.asarray(gbar, dtype=float)
    y = rk4_step(lambda s: frozen_derivative(s, gbar, gains), state.as_vector(), dt)
    out = RobotGovernorState.from_vector(y, state.t + dt)
    if not out.is_finite():
        raise NumericalBlowupError(f"non-finite state after step to t={out.t}")
    return out


class _Sensing:
    """World access for the controller: exact geometry, or lidar plus a map and replanning."""

    def __init__(self, cfg: ScenarioConfig, rng):
        self.cfg = cfg
        self.sc = cfg.scenario
        self.rng = rng
        self.lidar = self.sc.sensing == "lidar"
        self.scan = None
        self.next_scan = 0.0
        self.grid = None
        self.inflated = None
        if self.lidar:
            self.grid = OccupancyGrid.empty(self.sc.obstacles.bounds, cfg.grid.resolution, cfg.grid.inflation)

    @property
    def world(self):
        return self.scan if self.lidar else self.sc.obstacles

    def sense(self, x, t) -> bool:
        """Take a scan if one is due; True if the map changed."""
        if not self.lidar or t + 1e-12 < self.next_scan:
            return False
        s = self.cfg.sensor
        self.scan = simulate_lidar(self.sc.obstacles, x, s.beams, s.range_max, s.noise_std, self.rng)
        self.next_scan += 1.0 / s.rate
        new = integrate_scan(self.grid, self.scan)
        changed = not np.array_equal(new.cells, self.grid.cells)
        self.grid = new
        if changed or self.inflated is None:
            self.inflated = inflate(self.grid, self.cfg.unknown_as_occupied)
        return changed

    def plan(self, start):
        if self.lidar:
            grid = self.inflated
        else:
            grid = inflate(rasterize(self.sc.obstacles, self.cfg.grid.resolution, self.cfg.grid.inflation))
        return astar_plan(PlanRequest(start, self.sc.goal, grid)).waypoints

    def blocked(self, waypoints) -> bool:
        if not self.lidar:
            return False
        return path_blocked(self.inflated, waypoints, skip_radius=self.cfg.grid.inflation + self.cfg.grid.resolution)


def _zone_and_goal(state, world, path, cfg, alpha):
    zone = safe_zone(state, world, cfg.gains, cfg.mode, cfg.bound_method)
    alpha, gbar = project_goal(path, zone, alpha)
    return zone, alpha, gbar


def run_scenario(cfg: ScenarioConfig, snapshots: bool = False) -> TrajectoryLog:
    """Simulate one scenario until the goal tolerance, the timeout or a failure."""
    sc = cfg.scenario
    obs = sc.obstacles
    out = TrajectoryLog(scenario=sc.name, mode=cfg.mode, goal=sc.goal.copy())
    rng = np.random.default_rng(cfg.seed)
    sensing = _Sensing(cfg, rng)

    state = RobotGovernorState(sc.start.copy(), np.zeros_like(sc.start), sc.start.copy(), 0.0)
    out.final_x, out.final_v = state.x, state.v
    out.min_clearance = obs.clearance(state.x)
    h = cfg.dt
    control_dt = cfg.control_period * h

    sensing.sense(state.x, 0.0)
    try:
        waypoints = sc.path if (sc.path is not None and not sensing.lidar) else sensing.plan(state.g)
    except PlanningFailure as exc:
        out.status, out.message = PLANNING_FAILURE, str(exc)
        log.warning("%s: %s", sc.name, exc)
        return out
    path = PathPolyline(waypoints)
    out.paths.append((0.0, path.waypoints.copy()))
    if snapshots and sensing.lidar:
        out.grids.append((0.0, sensing.grid))
    alpha = 0.0
    tick = 0
    n_steps = 0
    zone, alpha, gbar = _zone_and_goal(state, sensing.world, path, cfg, alpha)

    while True:
        t = n_steps * control_dt
        if np.linalg.norm(state.x - sc.goal) <= cfg.goal_tol and np.linalg.norm(state.v) <= cfg.speed_tol:
            out.status, out.time_to_goal = GOAL_REACHED, t
            break
        if t >= cfg.timeout - 1e-12:
            out.status = TIMEOUT
            out.message = f"goal not reached within {cfg.timeout} s"
            break

        if sensing.lidar:
            changed = sensing.sense(state.x, t)
            blocked = sensing.blocked(path.waypoints) if changed else False
            if replan_policy(tick, changed, blocked, cfg.replan_period):
                try:
                    path = PathPolyline(sensing.plan(state.g))
                except PlanningFailure as exc:
                    out.status, out.message = PLANNING_FAILURE, str(exc)
                    log.warning("%s: replanning failed at t=%.3f: %s", sc.name, t, exc)
                    break
                out.replans += 1
                out.paths.append((t, path.waypoints.copy()))
                if snapshots:
                    out.grids.append((t, sensing.grid))
                tick = 0
                alpha = 0.0
            zone, alpha, gbar = _zone_and_goal(state, sensing.world, path, cfg, alpha)

        relaxed = None
        if cfg.relaxed_every and n_steps % cfg.relaxed_every == 0 and cfg.mode == "sddm":
            relaxed = relaxed_output_peak(cfg.gains.closed_loop.with_metric(zone.zone.shape), state.error_state)[0].value

        rec = ControlRecord(t, state.x, state.v, state.g, gbar, alpha, zone.delta_e, zone.bound.value,
                            zone.dist_sq_obs, zone.zone.shape, relaxed)
        out.records.append(rec)

        # integrate one control period; with the safeguard, shorten the governor move
        # whenever the next evaluation would see a negative leeway
        scale = 1.0
        for attempt in range(SAFEGUARD_HALVINGS + 1):
            cmd = state.g + scale * (gbar - state.g) if attempt < SAFEGUARD_HALVINGS else state.g
            try:
                nxt, clear, hit, travelled = _integrate(state, cmd, cfg, obs, h)
            except NumericalBlowupError as exc:
                exc.last_record = rec
                out.status, out.message = BLOWUP, str(exc)
                out.final_time = t
                return out
            n_zone, n_alpha, n_gbar = _zone_and_goal(nxt, sensing.world, path, cfg, alpha)
            if not cfg.lookahead or n_zone.delta_e >= 0 or zone.delta_e < 0 or attempt == SAFEGUARD_HALVINGS:
                break
            scale *= 0.5
            out.safeguard_cuts += 1
        if attempt:
            rec.gbar = cmd
        out.min_clearance = min(out.min_clearance, clear)
        out.path_length += travelled
        state, zone, alpha, gbar = nxt, n_zone, n_alpha, n_gbar
        n_steps += 1
        tick += 1
        out.final_x, out.final_v = state.x, state.v
        if hit:
            out.collision = True
            out.status, out.message = COLLISION, f"robot entered the obstacle set at t={state.t:.3f}"
            break

    out.final_time = n_steps * control_dt
    out.final_x, out.final_v = state.x, state.v
    return out


def _integrate(state, gbar, cfg, obs, h):
    """One control period of RK4 steps; returns (state, min clearance, collided, distance travelled)."""
    gains = cfg.gains
    gbar = np.asarray(gbar, dtype=float)
    f = lambda s: frozen_derivative(s, gbar, gains)  # noqa: E731
    y = state.as_vector()
    n = len(state.x)
    xs = np.empty((cfg.control_period + 1, n))
    xs[0] = state.x
    for i in range(cfg.control_period):
        y = rk4_step(f, y, h)
        xs[i + 1] = y[:n]
    t = state.t + cfg.control_period * h
    if not np.all(np.isfinite(y)):
        raise NumericalBlowupError(f"non-finite state in the control period ending at t={t:.6g}")
    clear = obs.clearance_many(xs[1:])
    travelled = float(np.linalg.norm(np.diff(xs, axis=0), axis=1).sum())
    return RobotGovernorState.from_vector(y, t), float(clear.min()), bool(np.any(clear <= 0.0)), travelled


def compare_controllers(cfg_pair):
    """Run the configurations (typically sddm and euclidean) on one world; returns (table, logs)."""
    if len({c.scenario.name for c in cfg_pair}) > 1:
        raise ConfigurationError("compare needs the same scenario for every configuration")
    logs = [run_scenario(c) for c in cfg_pair]
    names = [lg.mode for lg in logs]
    if len(set(names)) < len(names):
        names = [f"{n}_{i}" for i, n in enumerate(names)]
    keys = ("status", "time_to_goal", "mean_speed", "min_clearance", "min_delta_e", "path_length", "collision")
    table = {}
    for name, lg in zip(names, logs):
        m = lg.metrics()
        table[name] = {k: m[k] for k in keys}
    return table, logs


# ---------------------------------------------------------------------------
# writers


def _fmt(v):
    return repr(float(v))


def trajectory_csv(tlog: TrajectoryLog) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in tlog.records:
        w.writerow([_fmt(v) for v in r.row()])
    return buf.getvalue()


def metrics_json(tlog: TrajectoryLog) -> str:
    return json.dumps(tlog.metrics(), indent=2, sort_keys=True) + "\n"


def write_outputs(tlog: TrajectoryLog, out_dir, prefix="") -> list:
    """trajectory.csv, metrics.json, path waypoints and any grid snapshots; returns written paths."""
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    written = []
    for name, text in ((f"{prefix}trajectory.csv", trajectory_csv(tlog)), (f"{prefix}metrics.json", metrics_json(tlog))):
        (d / name).write_text(text, encoding="utf-8")
        written.append(d / name)
    paths = [{"t": t, "waypoints": wp.tolist()} for t, wp in tlog.paths]
    (d / f"{prefix}paths.json").write_text(json.dumps(paths, indent=1) + "\n", encoding="utf-8")
    written.append(d / f"{prefix}paths.json")
    for i, (t, grid) in enumerate(tlog.grids):
        p = d / f"{prefix}grid_{i:04d}.pgm"
        p.write_text(to_pgm(grid), encoding="ascii")
        written.append(p)
    return written
