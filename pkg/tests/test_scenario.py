import numpy as np
import pytest

from sddm_nav.errors import ConfigurationError
from sddm_nav.scenario import (
    ScenarioConfig,
    apply_overrides,
    builtin_scenarios,
    load_scenario,
    parse_scenario,
    random_clutter,
)
from sddm_nav.world import is_free

BASE = """\
name: t
bounds: [0, 0, 10, 5]
start: [1, 1]
goal: [9, 4]
"""


def test_builtin_scenarios_load():
    assert {"corridor", "sparse_circles", "maze"} <= set(builtin_scenarios())
    corridor = load_scenario("corridor")
    assert corridor.sensing == "geometric" and corridor.path is not None
    ys = corridor.obstacles.segments[:2, [1, 3]]
    assert sorted({float(v) for v in ys.ravel()}) == [-1.0, 1.0]  # 2 m wide
    assert np.ptp(corridor.obstacles.segments[:2, [0, 2]]) == 20.0  # 20 m long
    circles = load_scenario("sparse_circles.world")
    assert 8 <= len(circles.obstacles.disks) <= 12
    b = circles.obstacles.bounds
    assert (b[2] - b[0], b[3] - b[1]) == (30.0, 30.0)
    assert load_scenario("maze").sensing == "lidar"


def test_load_by_path(tmp_path):
    p = tmp_path / "w.world"
    p.write_text(BASE + "disks:\n  - {center: [5, 2.5], radius: 1}\n")
    sc = load_scenario(p)
    assert sc.name == "t" and sc.obstacles.disks.shape == (1, 3) and sc.source == str(p)
    with pytest.raises(ConfigurationError, match="not found"):
        load_scenario(tmp_path / "missing.world")


def test_defaults():
    sc = parse_scenario(BASE)
    assert sc.sensor.beams == 360 and sc.sensor.range_max == 10.0 and sc.sensor.rate == 20.0
    assert sc.grid.resolution == 0.1 and sc.grid.inflation == 0.3
    assert sc.timeout == 120.0 and sc.replan_period == 20 and sc.path is None


@pytest.mark.parametrize("extra,line,match", [
    ("disks:\n  - {center: [5, 2.5], radius: -1}\n", 6, "radius must be positive"),
    ("disks:\n  - {center: [5], radius: 1}\n", 6, "disk center"),
    ("segments:\n  - [1, 2, 3]\n", 6, "segment"),
    ("colour: red\n", 5, "unknown key"),
    ("sensing: sonar\n", 5, "sensing"),
    ("sensor: {beams: 0}\n", 5, "positive"),
    ("sensor: {lasers: 3}\n", 5, "unknown sensor field"),
    ("timeout: -3\n", 5, "timeout"),
    ("path:\n  - [1, 1]\n", 5, "at least 2"),
    ("disks:\n  - {center: [1, 1], radius: 0.5}\n", 3, "start"),
])
def test_errors_carry_line_numbers(extra, line, match):
    with pytest.raises(ConfigurationError, match=match) as exc:
        parse_scenario(BASE + extra, "w.world")
    assert exc.value.line == line
    assert str(exc.value).startswith(f"w.world:{line}:")


def test_missing_key_and_syntax_errors():
    with pytest.raises(ConfigurationError, match="missing required key 'goal'"):
        parse_scenario("bounds: [0, 0, 1, 1]\nstart: [0.5, 0.5]\n", "w.world")
    with pytest.raises(ConfigurationError, match="YAML syntax") as exc:
        parse_scenario(BASE + "disks: [\n", "w.world")
    assert exc.value.line is not None
    with pytest.raises(ConfigurationError, match="mapping"):
        parse_scenario("- 1\n- 2\n")
    with pytest.raises(ConfigurationError, match="empty"):
        parse_scenario("bounds: [0, 0, 0, 1]\nstart: [0, 0]\ngoal: [0, 0]\n")


def test_path_waypoint_in_obstacle():
    text = BASE + "disks:\n  - {center: [5, 2.5], radius: 1}\npath:\n  - [1, 1]\n  - [5, 2.5]\n  - [9, 4]\n"
    with pytest.raises(ConfigurationError, match="waypoint") as exc:
        parse_scenario(text, "w.world")
    assert exc.value.line == 9


def test_overrides():
    cfg = ScenarioConfig.from_scenario(parse_scenario(BASE))
    out = apply_overrides(cfg, ["k=2", "c2=6", "dt=0.001", "beams=90", "inflation=0.5", "lookahead=false"])
    assert out.gains.k == 2.0 and out.gains.weights.c2 == 6.0 and out.dt == 0.001
    assert out.sensor.beams == 90 and out.grid.inflation == 0.5 and out.lookahead is False
    assert cfg.gains.k == 1.0  # original untouched
    for bad in (["nope=1"], ["k"], ["k=abc"], ["c1=5"], ["dt=-1"], ["lookahead=maybe"], ["control_period=0"]):
        with pytest.raises(ConfigurationError):
            apply_overrides(cfg, bad)


def test_config_validation():
    sc = parse_scenario(BASE)
    for kw in ({"mode": "fast"}, {"dt": 0.0}, {"control_period": 0}, {"timeout": -1.0}, {"bound_method": "sos"}):
        with pytest.raises(ConfigurationError):
            ScenarioConfig.from_scenario(sc, **kw)


def test_random_clutter_is_seeded():
    a, b, c = random_clutter(7), random_clutter(7), random_clutter(8)
    assert np.array_equal(a.obstacles.disks, b.obstacles.disks)
    assert not np.array_equal(a.obstacles.disks, c.obstacles.disks)
    assert 10 <= len(a.obstacles.disks) <= 16
    assert is_free(a.obstacles, a.start) and is_free(a.obstacles, a.goal)
