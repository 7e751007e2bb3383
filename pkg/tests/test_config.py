import json
import textwrap

import pytest

from obspart.config import load_config, parse_config
from obspart.errors import ConfigError

MINIMAL = """\
seed: 1
planning:
  goal: [10, 10]
"""


def parse(text):
    return parse_config(textwrap.dedent(text), "test")


def error_of(text) -> ConfigError:
    with pytest.raises(ConfigError) as info:
        parse(text)
    return info.value


def test_minimal_config_uses_defaults():
    cfg = parse(MINIMAL)
    assert cfg.seed == 1
    assert cfg.planning.goal == (10.0, 10.0)
    assert cfg.world.bounds == (0.0, 0.0, 100.0, 100.0)
    assert cfg.planning.backend == "ramdl" and cfg.planning.exact is True
    assert cfg.sweep.sizes == (64, 128, 256, 512)
    assert cfg.with_seed(5).seed == 5


def test_shipped_configs_load():
    for name in ("example", "density"):
        cfg = load_config(f"configs/{name}.yaml")
        json.dumps(cfg.echo())


def test_unknown_field_is_located():
    err = error_of("""
        seed: 1
        planning:
          goal: [10, 10]
          depht: 2
    """)
    assert (err.field, err.line) == ("planning.depht", 5)
    assert "unknown field" in str(err) and "line 5" in str(err)


def test_missing_required_field():
    err = error_of("""
        seed: 1
        planning:
          paths: 4
    """)
    assert err.field == "planning.goal"
    assert err.line == 3


def test_type_errors_are_located():
    err = error_of("""
        seed: 1
        world:
          landmarks: many
        planning:
          goal: [10, 10]
    """)
    assert (err.field, err.line) == ("world.landmarks", 4)
    err = error_of("""
        seed: 1
        planning:
          goal: [10, 10]
          exact: 1
    """)
    assert err.field == "planning.exact"


def test_value_checks():
    cases = {
        "planning:\n  goal: [10, 10]\n  backend: qr\n": "planning.backend",
        "planning:\n  goal: [10]\n": "planning.goal",
        "planning:\n  goal: [10, 10]\n  depth: -1\n": "planning.depth",
        "sensor:\n  fov: 7.0\nplanning:\n  goal: [1, 1]\n": "sensor.fov",
        "world:\n  bounds: [0, 0, -1, 5]\nplanning:\n  goal: [1, 1]\n": "world.bounds",
        "world:\n  obstacles: [[[0, 0], [1, 1]]]\nplanning:\n  goal: [1, 1]\n": "world.obstacles[0]",
        "prior:\n  trajectory: waypoints\nplanning:\n  goal: [1, 1]\n": "prior.waypoints",
        "prior:\n  keep_fraction: 0\nplanning:\n  goal: [1, 1]\n": "prior.keep_fraction",
        "sweep:\n  keep_fractions: [0.5]\nplanning:\n  goal: [1, 1]\n": "sweep.keep_fractions",
    }
    for body, field in cases.items():
        assert error_of("seed: 0\n" + body).field == field, body


def test_duplicate_keys_and_bad_yaml():
    err = error_of("seed: 1\nseed: 2\nplanning:\n  goal: [1, 1]\n")
    assert (err.field, err.line) == ("seed", 2)
    err = error_of("seed: [1\n")
    assert "invalid YAML" in str(err)
    assert error_of("").args[0].endswith("empty config")
    with pytest.raises(ConfigError):
        load_config("/nonexistent/config.yaml")


def test_negative_seed_rejected():
    assert error_of("seed: -1\nplanning:\n  goal: [1, 1]\n").field == "seed"
