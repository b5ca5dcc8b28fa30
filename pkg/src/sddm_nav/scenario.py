"""Scenario world files and run configuration.

World files are YAML documents::

    name: corridor
    bounds: [xmin, ymin, xmax, ymax]
    start: [x, y]
    goal: [x, y]
    sensing: geometric        # or: lidar (unknown environment)
    path: [[x, y], ...]       # optional; planned with A* when absent
    disks:
      - {center: [x, y], radius: r}
    segments:
      - [ax, ay, bx, by]
    sensor: {beams: 360, range_max: 10.0, rate: 20.0, noise_std: 0.0}
    grid: {resolution: 0.1, inflation: 0.3}
    planner: {replan_period: 20}
    timeout: 120.0

Validation errors carry ``file:line`` references.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigurationError
from .governor import MODES, ControllerGains
from .world import ObstacleSet, is_free


class _LineDict(dict):
    line = None
    key_lines: dict = {}


class _LineList(list):
    line = None
    item_lines: list = []


class _Loader(yaml.SafeLoader):
    pass


def _mapping(loader, node):
    loader.flatten_mapping(node)
    out = _LineDict((loader.construct_object(k, deep=True), loader.construct_object(v, deep=True)) for k, v in node.value)
    out.line = node.start_mark.line + 1
    out.key_lines = {k.value: k.start_mark.line + 1 for k, _ in node.value}
    return out


def _sequence(loader, node):
    out = _LineList(loader.construct_object(v, deep=True) for v in node.value)
    out.line = node.start_mark.line + 1
    out.item_lines = [v.start_mark.line + 1 for v in node.value]
    return out


_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _mapping)
_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_SEQUENCE_TAG, _sequence)


@dataclass(frozen=True)
class SensorConfig:
    beams: int = 360
    range_max: float = 10.0
    rate: float = 20.0
    noise_std: float = 0.0


@dataclass(frozen=True)
class GridConfig:
    resolution: float = 0.1
    inflation: float = 0.3


@dataclass(frozen=True)
class Scenario:
    name: str
    obstacles: ObstacleSet
    start: np.ndarray
    goal: np.ndarray
    sensing: str = "geometric"
    path: np.ndarray | None = None
    sensor: SensorConfig = SensorConfig()
    grid: GridConfig = GridConfig()
    replan_period: int = 20
    timeout: float = 120.0
    source: str | None = None


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: Scenario
    mode: str = "sddm"
    gains: ControllerGains = field(default_factory=ControllerGains)
    dt: float = 0.002
    control_period: int = 10
    sensor: SensorConfig = SensorConfig()
    grid: GridConfig = GridConfig()
    replan_period: int = 20
    goal_tol: float = 0.05
    speed_tol: float = 0.05
    timeout: float = 120.0
    bound_method: str = "exact"
    lookahead: bool = True
    relaxed_every: int = 0  # log the invariant-ellipsoid bound every N control steps (0: never)
    unknown_as_occupied: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.dt > 0:
            raise ConfigurationError(f"dt must be positive, got {self.dt}")
        if self.control_period < 1:
            raise ConfigurationError(f"control_period must be >= 1, got {self.control_period}")
        if self.timeout < 0:
            raise ConfigurationError(f"timeout must be nonnegative, got {self.timeout}")
        if self.bound_method not in ("exact", "relaxed"):
            raise ConfigurationError(f"bound_method must be exact or relaxed, got {self.bound_method!r}")
        if self.replan_period < 1:
            raise ConfigurationError(f"replan_period must be >= 1, got {self.replan_period}")

    @classmethod
    def from_scenario(cls, scenario: Scenario, **kw):
        base = dict(sensor=scenario.sensor, grid=scenario.grid, replan_period=scenario.replan_period,
                    timeout=scenario.timeout)
        base.update(kw)
        return cls(scenario=scenario, **base)


# override key -> (target, field, type)
OVERRIDES = {
    "k": ("gains", "k", float),
    "zeta": ("gains", "zeta", float),
    "k_g": ("gains", "k_g", float),
    "c1": ("weights", "c1", float),
    "c2": ("weights", "c2", float),
    "dt": ("cfg", "dt", float),
    "control_period": ("cfg", "control_period", int),
    "timeout": ("cfg", "timeout", float),
    "goal_tol": ("cfg", "goal_tol", float),
    "speed_tol": ("cfg", "speed_tol", float),
    "bound_method": ("cfg", "bound_method", str),
    "lookahead": ("cfg", "lookahead", lambda s: _parse_bool(s)),
    "relaxed_every": ("cfg", "relaxed_every", int),
    "replan_period": ("cfg", "replan_period", int),
    "unknown_as_occupied": ("cfg", "unknown_as_occupied", lambda s: _parse_bool(s)),
    "beams": ("sensor", "beams", int),
    "range_max": ("sensor", "range_max", float),
    "sensor_rate": ("sensor", "rate", float),
    "noise_std": ("sensor", "noise_std", float),
    "resolution": ("grid", "resolution", float),
    "inflation": ("grid", "inflation", float),
}


def _parse_bool(s):
    low = str(s).lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def apply_overrides(cfg: ScenarioConfig, pairs) -> ScenarioConfig:
    """Apply KEY=VALUE strings; unknown keys or bad values raise ConfigurationError."""
    groups = {"gains": {}, "weights": {}, "cfg": {}, "sensor": {}, "grid": {}}
    for item in pairs:
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} is not of the form KEY=VALUE")
        key, raw = item.split("=", 1)
        key = key.strip()
        if key not in OVERRIDES:
            raise ConfigurationError(f"unknown override key {key!r}; known keys: {', '.join(sorted(OVERRIDES))}")
        target, name, conv = OVERRIDES[key]
        try:
            groups[target][name] = conv(raw.strip())
        except ValueError as exc:
            raise ConfigurationError(f"bad value for {key}: {exc}") from None
    gains = cfg.gains
    if groups["weights"]:
        gains = dataclasses.replace(gains, weights=dataclasses.replace(gains.weights, **groups["weights"]))
    if groups["gains"]:
        gains = dataclasses.replace(gains, **groups["gains"])
    return dataclasses.replace(
        cfg,
        gains=gains,
        sensor=dataclasses.replace(cfg.sensor, **groups["sensor"]),
        grid=dataclasses.replace(cfg.grid, **groups["grid"]),
        **groups["cfg"],
    )


# ---------------------------------------------------------------------------
# world files

_TOP_KEYS = {"name", "bounds", "start", "goal", "sensing", "path", "disks", "segments", "sensor", "grid",
             "planner", "timeout", "description"}


def _vec(val, n, what, src, line):
    try:
        arr = np.asarray(val, dtype=float).reshape(-1)
    except (TypeError, ValueError):
        raise ConfigurationError(f"{what} must be a list of {n} numbers", src, line) from None
    if arr.size != n or not np.all(np.isfinite(arr)):
        raise ConfigurationError(f"{what} must be a list of {n} finite numbers, got {val!r}", src, line)
    return arr


def _line_of(mapping, key):
    return getattr(mapping, "key_lines", {}).get(key, getattr(mapping, "line", None))


def _sub(doc, key, cls, src):
    raw = doc.get(key)
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{key} must be a mapping", src, _line_of(doc, key))
    names = {f.name: f.type for f in dataclasses.fields(cls)}
    kw = {}
    for k, v in raw.items():
        if k not in names:
            raise ConfigurationError(f"unknown {key} field {k!r}", src, _line_of(raw, k))
        conv = int if cls.__dataclass_fields__[k].type in ("int", int) else float
        try:
            kw[k] = conv(v)
        except (TypeError, ValueError):
            raise ConfigurationError(f"{key}.{k} must be numeric, got {v!r}", src, _line_of(raw, k)) from None
        if not kw[k] >= 0 or (k != "noise_std" and kw[k] == 0):
            raise ConfigurationError(f"{key}.{k} must be positive, got {v!r}", src, _line_of(raw, k))
    return cls(**kw)


def parse_scenario(text: str, source: str = "<string>") -> Scenario:
    try:
        doc = yaml.load(text, Loader=_Loader)
    except yaml.MarkedYAMLError as exc:
        line = exc.problem_mark.line + 1 if exc.problem_mark else None
        raise ConfigurationError(f"YAML syntax error: {exc.problem}", source, line) from None
    if not isinstance(doc, dict):
        raise ConfigurationError("scenario must be a YAML mapping", source, 1)
    for key in doc:
        if key not in _TOP_KEYS:
            raise ConfigurationError(f"unknown key {key!r}", source, _line_of(doc, key))
    for key in ("bounds", "start", "goal"):
        if key not in doc:
            raise ConfigurationError(f"missing required key {key!r}", source, getattr(doc, "line", 1))

    bounds = _vec(doc["bounds"], 4, "bounds", source, _line_of(doc, "bounds"))
    if not (bounds[2] > bounds[0] and bounds[3] > bounds[1]):
        raise ConfigurationError(f"bounds are empty: {bounds.tolist()}", source, _line_of(doc, "bounds"))

    disks = []
    raw_disks = doc.get("disks") or []
    for i, d in enumerate(raw_disks):
        line = raw_disks.item_lines[i] if hasattr(raw_disks, "item_lines") else None
        if not isinstance(d, dict) or set(d) != {"center", "radius"}:
            raise ConfigurationError("disk entries need exactly 'center' and 'radius'", source, line)
        c = _vec(d["center"], 2, "disk center", source, line)
        try:
            r = float(d["radius"])
        except (TypeError, ValueError):
            raise ConfigurationError(f"disk radius must be numeric, got {d['radius']!r}", source, line) from None
        if not r > 0:
            raise ConfigurationError(f"disk radius must be positive, got {r}", source, line)
        disks.append([c[0], c[1], r])

    segs = []
    raw_segs = doc.get("segments") or []
    for i, s in enumerate(raw_segs):
        line = raw_segs.item_lines[i] if hasattr(raw_segs, "item_lines") else None
        segs.append(_vec(s, 4, "segment", source, line))

    obstacles = ObstacleSet(np.array(disks).reshape(-1, 3), np.array(segs).reshape(-1, 4), tuple(bounds))
    start = _vec(doc["start"], 2, "start", source, _line_of(doc, "start"))
    goal = _vec(doc["goal"], 2, "goal", source, _line_of(doc, "goal"))
    for key, p in (("start", start), ("goal", goal)):
        if not is_free(obstacles, p):
            raise ConfigurationError(f"{key} {p.tolist()} is not in free space", source, _line_of(doc, key))

    sensing = doc.get("sensing", "geometric")
    if sensing not in ("geometric", "lidar"):
        raise ConfigurationError(f"sensing must be 'geometric' or 'lidar', got {sensing!r}", source,
                                 _line_of(doc, "sensing"))

    path = None
    if doc.get("path") is not None:
        raw = doc["path"]
        line = _line_of(doc, "path")
        pts = [_vec(p, 2, "path waypoint", source, raw.item_lines[i] if hasattr(raw, "item_lines") else line)
               for i, p in enumerate(raw)]
        if len(pts) < 2:
            raise ConfigurationError("path needs at least 2 waypoints", source, line)
        path = np.array(pts)
        for i, p in enumerate(path):
            if not is_free(obstacles, p):
                raise ConfigurationError(f"path waypoint {p.tolist()} is not in free space", source,
                                         raw.item_lines[i] if hasattr(raw, "item_lines") else line)

    planner = doc.get("planner") or {}
    try:
        replan_period = int(planner.get("replan_period", 20))
    except (TypeError, ValueError, AttributeError):
        raise ConfigurationError("planner.replan_period must be an integer", source, _line_of(doc, "planner")) from None
    try:
        timeout = float(doc.get("timeout", 120.0))
    except (TypeError, ValueError):
        raise ConfigurationError("timeout must be numeric", source, _line_of(doc, "timeout")) from None
    if not (timeout >= 0 and math.isfinite(timeout)):
        raise ConfigurationError(f"timeout must be nonnegative, got {timeout}", source, _line_of(doc, "timeout"))

    return Scenario(
        name=str(doc.get("name", Path(source).stem)),
        obstacles=obstacles,
        start=start,
        goal=goal,
        sensing=sensing,
        path=path,
        sensor=_sub(doc, "sensor", SensorConfig, source),
        grid=_sub(doc, "grid", GridConfig, source),
        replan_period=replan_period,
        timeout=timeout,
        source=source,
    )


def builtin_scenarios() -> list[str]:
    return sorted(p.name.rsplit(".", 1)[0] for p in resources.files("sddm_nav.scenarios").iterdir()
                  if p.name.endswith(".world"))


def load_scenario(path_or_name) -> Scenario:
    """Load a world file by path, or a shipped scenario by name (e.g. ``corridor``)."""
    p = Path(path_or_name)
    if p.exists():
        return parse_scenario(p.read_text(encoding="utf-8"), str(p))
    name = p.name[:-6] if p.name.endswith(".world") else p.name
    res = resources.files("sddm_nav.scenarios") / f"{name}.world"
    if res.is_file():
        return parse_scenario(res.read_text(encoding="utf-8"), f"{name}.world")
    raise ConfigurationError(f"scenario file not found: {path_or_name}")



def random_clutter(seed: int, size: float = 15.0, n_disks=(10, 16), radius=(0.3, 1.0), margin: float = 1.0) -> Scenario:
    """Seeded random disk field with start and goal in opposite corners.

    Disks are kept ``margin`` away from start and goal. The path is left to
    the planner; callers should treat a planning failure as a rejected draw.
    """
    rng = np.random.default_rng(seed)
    start = np.array([1.0, 1.0])
    goal = np.array([size - 1.0, size - 1.0])
    k = int(rng.integers(n_disks[0], n_disks[1] + 1))
    disks = []
    while len(disks) < k:
        c = rng.uniform(0.0, size, 2)
        r = rng.uniform(*radius)
        if min(np.linalg.norm(c - start), np.linalg.norm(c - goal)) < r + margin:
            continue
        disks.append([c[0], c[1], r])
    obs = ObstacleSet(np.array(disks), np.zeros((0, 4)), (0.0, 0.0, size, size))
    return Scenario(name=f"clutter_{seed:03d}", obstacles=obs, start=start, goal=goal,
                    grid=GridConfig(resolution=0.1, inflation=0.5), source=f"random_clutter({seed})")
