"""Robot-governor controller: safe zones, projected goals and the two control laws.

Two safety measures are supported:

* ``sddm``: ellipsoidal local safe zone from the directional output peak of
  the frozen closed loop;
* ``euclidean``: spherical zone from the robot's kinetic plus potential
  energy (the Lyapunov-function baseline).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .bounds import (
    ENERGY,
    ClosedLoopSystem,
    HorizonConfig,
    PeakBound,
    build_closed_loop,
    double_integrator,
    exact_output_peak,
    relaxed_output_peak,
)
from .errors import BoundUncertainError, ConfigurationError
from .metric import DirectionalMatrix, DirectionalWeights, Ellipsoid, ellipsoid_segment_max_param, make_directional_matrix

MODES = ("sddm", "euclidean")


@dataclass(frozen=True)
class ControllerGains:
    k: float = 1.0
    zeta: float = 2.0 * math.sqrt(2.0)
    k_g: float = 1.0
    weights: DirectionalWeights = field(default_factory=DirectionalWeights)

    def __post_init__(self):
        for name in ("k", "zeta", "k_g"):
            val = getattr(self, name)
            if not (np.isfinite(val) and val > 0):
                raise ConfigurationError(f"gain {name} must be positive, got {val}")

    @cached_property
    def closed_loop(self) -> ClosedLoopSystem:
        """Frozen-governor error dynamics s = (x - g, v) with identity output metric."""
        a, b, kg = double_integrator(self.k, self.zeta, 2)
        return build_closed_loop(a, b, kg, np.eye(2))


@dataclass(frozen=True)
class RobotGovernorState:
    x: np.ndarray
    v: np.ndarray
    g: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        for name in ("x", "v", "g"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.x, self.v, self.g])

    @classmethod
    def from_vector(cls, y, t=0.0):
        n = len(y) // 3
        return cls(y[:n].copy(), y[n : 2 * n].copy(), y[2 * n :].copy(), t)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.as_vector())) and math.isfinite(self.t))

    @property
    def error_state(self) -> np.ndarray:
        return np.concatenate([self.x - self.g, self.v])


class PathPolyline:
    """Piecewise-linear path r(alpha), alpha in [0, 1] proportional to arc length."""

    def __init__(self, waypoints):
        pts = np.asarray(waypoints, dtype=float)
        if pts.ndim != 2 or len(pts) < 2:
            raise ConfigurationError("a path needs at least 2 waypoints")
        keep = np.concatenate([[True], np.linalg.norm(np.diff(pts, axis=0), axis=1) > 1e-12])
        pts = pts[keep]
        if len(pts) == 1:
            pts = np.vstack([pts, pts])
        self.waypoints = pts
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        self.seg_len = seg
        self.cum = np.concatenate([[0.0], np.cumsum(seg)])
        self.length = float(self.cum[-1])

    def __len__(self):
        return len(self.waypoints)

    def alpha_of(self, seg_index, t) -> float:
        if self.length == 0:
            return 1.0
        return float((self.cum[seg_index] + t * self.seg_len[seg_index]) / self.length)

    def point(self, alpha) -> np.ndarray:
        alpha = min(1.0, max(0.0, float(alpha)))
        if self.length == 0:
            return self.waypoints[-1].copy()
        s = alpha * self.length
        i = int(np.searchsorted(self.cum, s, side="right") - 1)
        i = min(max(i, 0), len(self.seg_len) - 1)
        t = (s - self.cum[i]) / self.seg_len[i]
        return self.waypoints[i] + min(1.0, t) * (self.waypoints[i + 1] - self.waypoints[i])

    @property
    def end(self) -> np.ndarray:
        return self.waypoints[-1]


@dataclass(frozen=True)
class LocalSafeZone:
    zone: Ellipsoid
    delta_e: float
    dist_sq_obs: float
    bound: PeakBound


def tracking_control(state: RobotGovernorState, gains: ControllerGains) -> np.ndarray:
    return -2.0 * gains.k * (state.x - state.g) - gains.zeta * state.v


def current_metric(state: RobotGovernorState, gains: ControllerGains) -> DirectionalMatrix:
    return make_directional_matrix(state.g - state.x, gains.weights)


def _assemble(g, q, dist_sq, bound: PeakBound) -> LocalSafeZone:
    delta_e = dist_sq - bound.value
    level = max(0.0, delta_e) if math.isfinite(delta_e) else 0.0
    if math.isinf(dist_sq) and math.isfinite(bound.value):
        level = math.inf
    return LocalSafeZone(Ellipsoid(center=np.asarray(g, dtype=float).copy(), shape=q, level=level), delta_e, dist_sq, bound)


def compute_safe_zone(state, world, gains: ControllerGains, bound_method="exact", horizon_cfg=None) -> LocalSafeZone:
    """Directional local safe zone around the governor.

    ``world`` is anything with ``dist_sq(q, g)``: an ObstacleSet or a LidarScan.
    A bound that cannot be certified yields delta_e = -inf so the governor halts.
    """
    q = current_metric(state, gains).q
    dist_sq = world.dist_sq(q, state.g)
    sys = gains.closed_loop.with_metric(q)
    try:
        if bound_method == "exact":
            bound = exact_output_peak(sys, state.error_state, horizon_cfg)
        elif bound_method == "relaxed":
            bound, _ = relaxed_output_peak(sys, state.error_state)
        else:
            raise ConfigurationError(f"unknown bound method {bound_method!r}")
    except BoundUncertainError:
        bound = PeakBound(math.inf, "exact-critical-points")
    return _assemble(state.g, q, dist_sq, bound)


def baseline_energy(state: RobotGovernorState, gains: ControllerGains) -> float:
    e = state.x - state.g
    return float(gains.k * (e @ e) + 0.5 * (state.v @ state.v))


def baseline_safe_zone(state, world, gains: ControllerGains) -> LocalSafeZone:
    """Spherical zone of squared radius d^2(g, O) - E/k.

    E is non-increasing for a static governor and k ||x - g||^2 <= E, so E/k
    bounds the robot's future squared distance from g.
    """
    q = np.eye(len(state.g))
    dist_sq = world.dist_sq(q, state.g)
    bound = PeakBound(baseline_energy(state, gains) / gains.k, ENERGY)
    return _assemble(state.g, q, dist_sq, bound)


def safe_zone(state, world, gains, mode="sddm", bound_method="exact") -> LocalSafeZone:
    if mode == "sddm":
        return compute_safe_zone(state, world, gains, bound_method)
    if mode == "euclidean":
        return baseline_safe_zone(state, world, gains)
    raise ConfigurationError(f"unknown controller mode {mode!r}; expected one of {MODES}")


def project_goal(path: PathPolyline, zone: LocalSafeZone, alpha_prev: float):
    """Farthest path point inside the safe zone, as (alpha*, gbar).

    Falls back to (alpha_prev, g) when no part of the path lies in the zone.
    """
    e = zone.zone
    best = None
    wp = path.waypoints
    for i in range(len(wp) - 1):
        t = ellipsoid_segment_max_param(e, wp[i], wp[i + 1])
        if t is not None:
            a = path.alpha_of(i, t)
            if best is None or a > best[0]:
                best = (a, wp[i] + t * (wp[i + 1] - wp[i]))
    if best is None:
        return float(alpha_prev), e.center.copy()
    if not zone.delta_e > 0:
        # zone is the single point g: keep the path bookkeeping but hold exactly at g
        return best[0], e.center.copy()
    return best


def governor_control(state: RobotGovernorState, gbar, gains: ControllerGains) -> np.ndarray:
    return -gains.k_g * (state.g - np.asarray(gbar, dtype=float))


def frozen_derivative(y, gbar, gains: ControllerGains) -> np.ndarray:
    """Time derivative of (x, v, g) with the projected goal held fixed."""
    n = len(y) // 3
    x, v, g = y[:n], y[n : 2 * n], y[2 * n :]
    return np.concatenate([v, -2.0 * gains.k * (x - g) - gains.zeta * v, -gains.k_g * (g - gbar)])


def rgs_derivative(state, world, path, gains, mode="sddm", alpha_prev=0.0) -> np.ndarray:
    """Closed-loop robot-governor vector field, projected goal recomputed from the current state."""
    zone = safe_zone(state, world, gains, mode)
    _, gbar = project_goal(path, zone, alpha_prev)
    return frozen_derivative(state.as_vector(), gbar, gains)
