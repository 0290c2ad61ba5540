"""Scenario files: YAML documents validated against a fixed schema.

Every error names the offending key path and its line in the file. Unknown
keys are rejected; omitted parameters take their defaults.

Schema (all sections except ``robot_start`` and ``goal`` optional)::

    name: str
    robot_start: [x, y, theta]
    goal: [x, y, theta]
    route: [[x, y], ...]              # via points between start and goal
    lookahead: float                  # carrot distance along the route (m)
    statics:
      - segment: [[x, y], [x, y]]
      - circle: {center: [x, y], radius: r}
      - point: [x, y]
    agents:
      - {id, waypoints: [[x, y], ...], preferred_speed, start_delay, reactive}
    sensors: {camera: {CameraModel fields}, lidar_beams: int}
    robot: {RobotModel fields}
    planner_params: {teb: {...}, social: {...}, dwa: {...}}
    predictor: interaction | constant_velocity
    jitter: {position, speed, delay}
    seed: int
    repeats: int
    timeout: float
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import yaml

from .core import CircleObstacle, ObstacleArrays, ObstacleShape, Point2, PointObstacle, Pose2, SegmentObstacle
from .dwa import DwaParams
from .mpteb import SocialParams
from .perception import CameraModel
from .sim import AgentScript, RobotModel
from .teb import TebParams


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class Jitter:
    """Per-repeat perturbation ranges for the scripted agents."""

    position: float = 0.1  # uniform +- metres on the spawn point
    speed: float = 0.05  # relative
    delay: float = 0.3  # extra start delay drawn from [0, delay] seconds

    def __post_init__(self):
        if min(self.position, self.speed, self.delay) < 0 or self.speed >= 1:
            raise ValueError("jitter ranges must be >= 0 and speed < 1")


@dataclass(frozen=True)
class Scenario:
    name: str
    robot_start: Pose2
    goal: Pose2
    statics: tuple[ObstacleShape, ...] = ()
    agents: tuple[AgentScript, ...] = ()
    route: tuple[Point2, ...] = ()
    lookahead: float = 4.0
    camera: CameraModel = CameraModel()
    lidar_beams: int = 360
    robot: RobotModel = RobotModel()
    teb: TebParams = TebParams()
    social: SocialParams = SocialParams()
    dwa: DwaParams = DwaParams()
    predictor: str = "interaction"
    jitter: Jitter = Jitter()
    seed: int = 0
    repeats: int = 10
    timeout: float = 60.0

    def __post_init__(self):
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if not self.timeout > 0:
            raise ValueError("timeout must be positive")
        if not self.lookahead > 0:
            raise ValueError("lookahead must be positive")
        if self.lidar_beams < 1:
            raise ValueError("lidar_beams must be >= 1")
        ids = [a.id for a in self.agents]
        if len(set(ids)) != len(ids):
            raise ValueError("agent ids must be unique")
        arrs = ObstacleArrays.from_shapes(self.statics)
        for label, p in (("robot_start", self.robot_start), ("goal", self.goal)):
            if len(arrs):
                d, _ = arrs.nearest([[p.x, p.y]])
                if d[0] < self.robot.radius:
                    raise ValueError(f"{label} is not in free space")


# --- YAML plumbing ----------------------------------------------------------------


class _Doc:
    """Keeps the composed node tree so errors can report line numbers."""

    def __init__(self, text: str, source: str):
        self.source = source
        try:
            self.root = yaml.compose(text)
        except yaml.YAMLError as e:
            raise ScenarioError(f"{source}: invalid YAML: {e}") from None

    def line(self, path: tuple) -> int | None:
        node = self.root
        line = None if node is None else node.start_mark.line + 1
        for key in path:
            if isinstance(node, yaml.MappingNode):
                nxt = next((v for k, v in node.value if k.value == key), None)
            elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
                nxt = node.value[key]
            else:
                nxt = None
            if nxt is None:
                break
            node = nxt
            line = node.start_mark.line + 1
        return line

    def error(self, path: tuple, msg: str) -> ScenarioError:
        where = ".".join(str(p) for p in path) or "<root>"
        line = self.line(path)
        at = f" (line {line})" if line is not None else ""
        return ScenarioError(f"{self.source}{at}: {where}: {msg}")


def _num(doc: _Doc, v: Any, path: tuple) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise doc.error(path, f"expected a finite number, got {v!r}")
    return float(v)


def _int(doc: _Doc, v: Any, path: tuple) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise doc.error(path, f"expected an integer, got {v!r}")
    return v


def _vec(doc: _Doc, v: Any, path: tuple, n: int) -> list[float]:
    if not isinstance(v, list) or len(v) != n:
        raise doc.error(path, f"expected a list of {n} numbers, got {v!r}")
    return [_num(doc, x, path + (i,)) for i, x in enumerate(v)]


def _mapping(doc: _Doc, v: Any, path: tuple, allowed) -> dict:
    if not isinstance(v, dict):
        raise doc.error(path, f"expected a mapping, got {type(v).__name__}")
    for k in v:
        if k not in allowed:
            raise doc.error(path + (k,), f"unknown key {k!r}; allowed: {sorted(allowed)}")
    return v


def _params(doc: _Doc, cls, v: Any, path: tuple):
    """Build a flat parameter dataclass from a mapping of overrides."""
    fields = {f.name: f for f in dataclasses.fields(cls)}
    raw = _mapping(doc, {} if v is None else v, path, fields)
    kwargs = {}
    for k, x in raw.items():
        default = getattr(cls(), k)
        if isinstance(default, bool):
            if not isinstance(x, bool):
                raise doc.error(path + (k,), f"expected true/false, got {x!r}")
            kwargs[k] = x
        elif isinstance(default, int):
            kwargs[k] = _int(doc, x, path + (k,))
        else:
            kwargs[k] = _num(doc, x, path + (k,))
    try:
        return cls(**kwargs)
    except ValueError as e:
        raise doc.error(path, str(e)) from None


def _shape(doc: _Doc, v: Any, path: tuple, idx: int) -> ObstacleShape:
    raw = _mapping(doc, v, path, {"segment", "circle", "point", "id"})
    kinds = [k for k in ("segment", "circle", "point") if k in raw]
    if len(kinds) != 1:
        raise doc.error(path, "each static needs exactly one of segment, circle, point")
    sid = str(raw.get("id", f"static{idx}"))
    kind = kinds[0]
    p = path + (kind,)
    if kind == "segment":
        body = raw[kind]
        if not isinstance(body, list) or len(body) != 2:
            raise doc.error(p, "a segment is [[x, y], [x, y]]")
        a, b = (_vec(doc, body[i], p + (i,), 2) for i in range(2))
        return SegmentObstacle(Point2(*a), Point2(*b), id=sid)
    if kind == "point":
        return PointObstacle(Point2(*_vec(doc, raw[kind], p, 2)), id=sid)
    body = _mapping(doc, raw[kind], p, {"center", "radius"})
    if "center" not in body or "radius" not in body:
        raise doc.error(p, "a circle needs center and radius")
    r = _num(doc, body["radius"], p + ("radius",))
    if r < 0:
        raise doc.error(p + ("radius",), "radius must be >= 0")
    return CircleObstacle(Point2(*_vec(doc, body["center"], p + ("center",), 2)), r, id=sid)


def _agent(doc: _Doc, v: Any, path: tuple) -> AgentScript:
    raw = _mapping(doc, v, path, {"id", "waypoints", "preferred_speed", "start_delay", "reactive"})
    if "id" not in raw or "waypoints" not in raw:
        raise doc.error(path, "an agent needs id and waypoints")
    wps = raw["waypoints"]
    if not isinstance(wps, list) or not wps:
        raise doc.error(path + ("waypoints",), "expected a non-empty list of [x, y]")
    points = tuple(Point2(*_vec(doc, w, path + ("waypoints", i), 2)) for i, w in enumerate(wps))
    kwargs = {}
    for k in ("preferred_speed", "start_delay"):
        if k in raw:
            kwargs[k] = _num(doc, raw[k], path + (k,))
    if "reactive" in raw:
        if not isinstance(raw["reactive"], bool):
            raise doc.error(path + ("reactive",), "expected true/false")
        kwargs["reactive"] = raw["reactive"]
    try:
        return AgentScript(str(raw["id"]), points, **kwargs)
    except ValueError as e:
        raise doc.error(path, str(e)) from None


_TOP = {
    "name", "robot_start", "goal", "route", "lookahead", "statics", "agents", "sensors", "robot",
    "planner_params", "predictor", "jitter", "seed", "repeats", "timeout",
}


def parse_scenario(text: str, source: str = "<scenario>") -> Scenario:
    doc = _Doc(text, source)
    data = yaml.safe_load(text)
    raw = _mapping(doc, data, (), _TOP)
    for req in ("robot_start", "goal"):
        if req not in raw:
            raise doc.error((), f"missing required key {req!r}")
    kw: dict[str, Any] = {
        "name": str(raw.get("name", Path(source).stem)),
        "robot_start": Pose2(*_vec(doc, raw["robot_start"], ("robot_start",), 3)),
        "goal": Pose2(*_vec(doc, raw["goal"], ("goal",), 3)),
    }
    statics = raw.get("statics") or []
    if not isinstance(statics, list):
        raise doc.error(("statics",), "expected a list")
    kw["statics"] = tuple(_shape(doc, s, ("statics", i), i) for i, s in enumerate(statics))
    agents = raw.get("agents") or []
    if not isinstance(agents, list):
        raise doc.error(("agents",), "expected a list")
    kw["agents"] = tuple(_agent(doc, a, ("agents", i)) for i, a in enumerate(agents))
    route = raw.get("route") or []
    if not isinstance(route, list):
        raise doc.error(("route",), "expected a list of [x, y]")
    kw["route"] = tuple(Point2(*_vec(doc, p, ("route", i), 2)) for i, p in enumerate(route))

    sensors = _mapping(doc, raw.get("sensors") or {}, ("sensors",), {"camera", "lidar_beams"})
    kw["camera"] = _params(doc, CameraModel, sensors.get("camera"), ("sensors", "camera"))
    if "lidar_beams" in sensors:
        kw["lidar_beams"] = _int(doc, sensors["lidar_beams"], ("sensors", "lidar_beams"))
    kw["robot"] = _params(doc, RobotModel, raw.get("robot"), ("robot",))
    pp = _mapping(doc, raw.get("planner_params") or {}, ("planner_params",), {"teb", "social", "dwa"})
    kw["teb"] = _params(doc, TebParams, pp.get("teb"), ("planner_params", "teb"))
    kw["social"] = _params(doc, SocialParams, pp.get("social"), ("planner_params", "social"))
    kw["dwa"] = _params(doc, DwaParams, pp.get("dwa"), ("planner_params", "dwa"))
    kw["jitter"] = _params(doc, Jitter, raw.get("jitter"), ("jitter",))
    if "predictor" in raw:
        if raw["predictor"] not in ("interaction", "constant_velocity"):
            raise doc.error(("predictor",), "expected interaction or constant_velocity")
        kw["predictor"] = raw["predictor"]
    for k in ("seed", "repeats"):
        if k in raw:
            kw[k] = _int(doc, raw[k], (k,))
    for k in ("timeout", "lookahead"):
        if k in raw:
            kw[k] = _num(doc, raw[k], (k,))
    try:
        return Scenario(**kw)
    except ValueError as e:
        raise doc.error((), str(e)) from None


def load_scenario(path) -> Scenario:
    path = Path(path)
    return parse_scenario(path.read_text(), str(path))


def bundled_dir() -> Path:
    return Path(__file__).parent / "scenarios"


def bundled(name: str) -> Scenario:
    return load_scenario(bundled_dir() / f"{name}.yaml")
