"""
Scenario configuration: a YAML file validated into typed sections.

Errors carry the dotted field name and the source line so that a bad
config points straight at the offending entry.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .bounds import BACKENDS
from .errors import ConfigError
from .partition import STRATEGIES
from .planner import OBJECTIVES, PlannerConfig
from .slam import PRMConfig, SensorSpec, WorldConfig

SWEEP_KINDS = ("convergence", "depth", "density", "speedup")
TRAJECTORIES = ("line", "loop", "lawnmower", "waypoints")


@dataclass(frozen=True)
class SensorConfig:
    max_range: float = 15.0
    fov: float = 2.0 * math.pi
    range_std: float = 0.1
    bearing_std_deg: float = 1.0

    def spec(self) -> SensorSpec:
        V = np.diag([self.range_std ** 2, math.radians(self.bearing_std_deg) ** 2])
        return SensorSpec(self.max_range, self.fov, V)


@dataclass(frozen=True)
class PriorConfig:
    trajectory: str = "loop"
    poses: int = 40
    waypoints: tuple = ()
    keep_fraction: float = 1.0


@dataclass(frozen=True)
class PlanningConfig:
    goal: tuple[float, float] = (80.0, 80.0)
    paths: int = 20
    samples: int = 500
    radius: float | None = None
    k_nearest: int = 10
    depth: int = 1
    strategy: str = "random"
    backend: str = "ramdl"
    objective: str = "final"
    alpha: float = 0.0
    exact: bool = True
    refine_budget: int = 0

    def prm(self) -> PRMConfig:
        return PRMConfig(self.samples, self.radius, self.k_nearest)

    def planner(self, seed: int) -> PlannerConfig:
        return PlannerConfig(self.depth, self.strategy, seed, self.backend, self.objective, self.alpha,
                             self.exact, self.refine_budget, self.goal)


@dataclass(frozen=True)
class SweepConfig:
    path: int = 0
    keep_fractions: tuple[float, ...] = (0.2, 0.4, 0.6, 0.8, 1.0)
    sizes: tuple[int, ...] = (64, 128, 256, 512)
    state_factor: int = 4


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int
    world: WorldConfig
    sensor: SensorConfig
    motion_std: tuple[float, float, float]
    prior: PriorConfig
    planning: PlanningConfig
    replan_steps: int = 0
    repeats: int = 1
    sweep: SweepConfig = field(default_factory=SweepConfig)
    output_dir: str = "results"

    def motion_cov(self) -> np.ndarray:
        return np.diag(np.square(self.motion_std))

    def echo(self) -> dict:
        out = asdict(self)
        out["world"]["obstacles"] = [[list(p) for p in poly] for poly in self.world.obstacles]
        return _jsonable(out)

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return replace(self, seed=seed)


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)
    return v


class _Node:
    """Composed YAML value plus the line it came from."""

    def __init__(self, value, line: int, path: str):
        self.value = value
        self.line = line
        self.path = path


def _build(node, path: str):
    line = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for k, v in node.value:
            key = str(k.value)
            sub = f"{path}.{key}" if path else key
            if key in out:
                raise ConfigError(f"duplicate key {key!r}", field=sub, line=k.start_mark.line + 1)
            child = _build(v, sub)
            if isinstance(v, yaml.MappingNode):
                # a section is reported at its key, not at its first entry
                child.line = k.start_mark.line + 1
            out[key] = child
        return _Node(out, line, path)
    if isinstance(node, yaml.SequenceNode):
        return _Node([_build(v, f"{path}[{i}]") for i, v in enumerate(node.value)], line, path)
    value = yaml.constructor.SafeConstructor().construct_object(node)
    return _Node(value, line, path)


class _Section:
    def __init__(self, node: _Node | None, path: str, parent_line: int = 1):
        if node is not None and not isinstance(node.value, dict):
            raise ConfigError("expected a mapping", field=path, line=node.line)
        self.items = {} if node is None else node.value
        self.path = path
        self.line = parent_line if node is None else node.line
        self.used: set[str] = set()

    def _field(self, key):
        return f"{self.path}.{key}" if self.path else key

    def section(self, key: str) -> "_Section":
        self.used.add(key)
        return _Section(self.items.get(key), self._field(key), self.line)

    def raw(self, key: str):
        self.used.add(key)
        return self.items.get(key)

    def get(self, key: str, kind, default=None, required=False, check=None, msg=""):
        self.used.add(key)
        node = self.items.get(key)
        if node is None or node.value is None:
            if required:
                raise ConfigError("required field missing", field=self._field(key), line=self.line)
            return default
        value = node.value
        try:
            if kind is bool:
                if not isinstance(value, bool):
                    raise TypeError
            elif kind is int:
                if isinstance(value, bool) or not isinstance(value, int):
                    raise TypeError
            elif kind is float:
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise TypeError
                value = float(value)
            elif kind is str:
                if not isinstance(value, str):
                    raise TypeError
            elif kind == "floats":
                value = tuple(_num(x) for x in _seq(value))
            elif kind == "ints":
                value = tuple(_int(x) for x in _seq(value))
        except TypeError:
            raise ConfigError(f"expected {getattr(kind, '__name__', kind)}, got {value!r}",
                              field=self._field(key), line=node.line) from None
        if check is not None and not check(value):
            raise ConfigError(msg or f"invalid value {value!r}", field=self._field(key), line=node.line)
        return value

    def finish(self):
        extra = sorted(set(self.items) - self.used)
        if extra:
            key = extra[0]
            raise ConfigError("unknown field", field=self._field(key), line=self.items[key].line)


def _seq(v):
    if not isinstance(v, list):
        raise TypeError
    return [x.value if isinstance(x, _Node) else x for x in v]


def _num(x):
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise TypeError
    return float(x)


def _int(x):
    if isinstance(x, bool) or not isinstance(x, int):
        raise TypeError
    return x


def _points(node: _Node, path: str, size: int):
    try:
        pts = tuple(tuple(_num(c) for c in _seq(p)) for p in _seq(node.value))
    except TypeError:
        raise ConfigError(f"expected a list of {size}-D points", field=path, line=node.line) from None
    if any(len(p) != size for p in pts):
        raise ConfigError(f"expected a list of {size}-D points", field=path, line=node.line)
    return pts


def parse_config(text: str, source: str = "<string>") -> ScenarioConfig:
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"{source}: invalid YAML ({getattr(exc, 'problem', exc)})",
                          line=None if mark is None else mark.line + 1) from None
    if root is None:
        raise ConfigError(f"{source}: empty config")
    top = _Section(_build(root, ""), "")
    pos = lambda v: v > 0  # noqa: E731
    seed = top.get("seed", int, required=True, check=lambda v: v >= 0, msg="seed must be non-negative")

    w = top.section("world")
    bounds = w.get("bounds", "floats", (0.0, 0.0, 100.0, 100.0),
                   check=lambda b: len(b) == 4 and b[2] > b[0] and b[3] > b[1],
                   msg="bounds must be [xmin, ymin, xmax, ymax] with positive extent")
    n_lm = w.get("landmarks", int, 100, check=lambda v: v >= 0, msg="landmark count must be non-negative")
    obstacles = ()
    obs = w.raw("obstacles")
    if obs is not None and obs.value is not None:
        if not isinstance(obs.value, list):
            raise ConfigError("expected a list of polygons", field="world.obstacles", line=obs.line)
        obstacles = tuple(_points(p, f"world.obstacles[{i}]", 2) for i, p in enumerate(obs.value))
        for i, poly in enumerate(obstacles):
            if len(poly) < 3:
                raise ConfigError("a polygon needs at least three vertices", field=f"world.obstacles[{i}]",
                                  line=obs.value[i].line)
    margin = w.get("margin", float, 0.0, check=lambda v: v >= 0)
    w.finish()

    s = top.section("sensor")
    sensor = SensorConfig(
        s.get("max_range", float, 15.0, check=pos, msg="max_range must be positive"),
        s.get("fov", float, 2.0 * math.pi, check=lambda v: 0 < v <= 2 * math.pi, msg="fov must lie in (0, 2 pi]"),
        s.get("range_std", float, 0.1, check=pos, msg="range_std must be positive"),
        s.get("bearing_std_deg", float, 1.0, check=pos, msg="bearing_std_deg must be positive"),
    )
    s.finish()

    m = top.section("motion")
    motion_std = m.get("std", "floats", (0.1, 0.1, 0.01),
                       check=lambda v: len(v) == 3 and all(x > 0 for x in v),
                       msg="motion.std must be three positive standard deviations")
    m.finish()

    p = top.section("prior")
    traj = p.get("trajectory", str, "loop", check=lambda v: v in TRAJECTORIES,
                 msg=f"trajectory must be one of {TRAJECTORIES}")
    wp_node = p.raw("waypoints")
    waypoints = () if wp_node is None or wp_node.value is None else _points(wp_node, "prior.waypoints", 2)
    if traj == "waypoints" and len(waypoints) < 2:
        raise ConfigError("waypoint trajectory needs at least two waypoints", field="prior.waypoints",
                          line=p.line if wp_node is None else wp_node.line)
    prior = PriorConfig(
        traj,
        p.get("poses", int, 40, check=lambda v: v >= 2, msg="prior.poses must be at least 2"),
        waypoints,
        p.get("keep_fraction", float, 1.0, check=lambda v: 0 < v <= 1, msg="keep_fraction must lie in (0, 1]"),
    )
    p.finish()

    pl = top.section("planning")
    goal = pl.get("goal", "floats", required=True, check=lambda v: len(v) == 2, msg="goal must be [x, y]")
    planning = PlanningConfig(
        goal=goal,
        paths=pl.get("paths", int, 20, check=pos, msg="paths must be positive"),
        samples=pl.get("samples", int, 500, check=pos, msg="samples must be positive"),
        radius=pl.get("radius", float, None, check=pos, msg="radius must be positive"),
        k_nearest=pl.get("k_nearest", int, 10, check=pos, msg="k_nearest must be positive"),
        depth=pl.get("depth", int, 1, check=lambda v: v >= 0, msg="depth must be non-negative"),
        strategy=pl.get("strategy", str, "random", check=lambda v: v in STRATEGIES,
                        msg=f"strategy must be one of {STRATEGIES}"),
        backend=pl.get("backend", str, "ramdl", check=lambda v: v in BACKENDS,
                       msg=f"backend must be one of {BACKENDS}"),
        objective=pl.get("objective", str, "final", check=lambda v: v in OBJECTIVES,
                         msg=f"objective must be one of {OBJECTIVES}"),
        alpha=pl.get("alpha", float, 0.0, check=lambda v: v >= 0, msg="alpha must be non-negative"),
        exact=pl.get("exact", bool, True),
        refine_budget=pl.get("refine_budget", int, 0, check=lambda v: v >= 0,
                             msg="refine_budget must be non-negative"),
    )
    pl.finish()

    sw = top.section("sweep")
    sweep = SweepConfig(
        path=sw.get("path", int, 0, check=lambda v: v >= 0),
        keep_fractions=sw.get("keep_fractions", "floats", (0.2, 0.4, 0.6, 0.8, 1.0),
                              check=lambda v: len(v) >= 2 and all(0 < x <= 1 for x in v),
                              msg="keep_fractions needs at least two values in (0, 1]"),
        sizes=sw.get("sizes", "ints", (64, 128, 256, 512),
                     check=lambda v: len(v) >= 1 and all(x >= 2 for x in v), msg="sizes must be at least 2"),
        state_factor=sw.get("state_factor", int, 4, check=lambda v: v >= 1),
    )
    sw.finish()

    cfg = ScenarioConfig(
        seed=seed,
        world=WorldConfig(bounds, n_lm, obstacles, margin),
        sensor=sensor,
        motion_std=motion_std,
        prior=prior,
        planning=planning,
        replan_steps=top.get("replan_steps", int, 0, check=lambda v: v >= 0),
        repeats=top.get("repeats", int, 1, check=pos, msg="repeats must be positive"),
        sweep=sweep,
        output_dir=top.get("output_dir", str, "results"),
    )
    top.finish()
    return cfg


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text, str(path))
