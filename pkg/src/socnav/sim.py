"""Deterministic discrete-time world and the sense/predict/plan/act loop."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .core import (
    CircleObstacle,
    ObstacleArrays,
    ObstacleShape,
    Point2,
    PointObstacle,
    Pose2,
    SegmentObstacle,
    Twist,
    pose_distance,
    unicycle_step,
)
from .dwa import DwaParams, select_velocity
from .mpteb import HUMAN_RADIUS, SocialParams, build_context, plan_mpteb, plan_teb
from .perception import AgentTrack, detect_humans, raycast_lidar, update_tracks
from .prediction import V_HUMAN_MAX, InteractionParams, PredictorKind, clamp_speed, interaction_force
from .teb import BandMemory, TebParams

if TYPE_CHECKING:  # pragma: no cover
    from .scenario import Scenario

PLANNERS = ("dwa", "teb", "mpteb")
ARRIVAL_RADIUS = 0.2
WAYPOINT_RADIUS = 0.3
REFRESH_TICKS = 5  # tracks and predictions every 0.5 s at d_t = 0.1
REACTION_TIME = 0.5
TRACK_MEMORY = 1.0  # humans unseen for longer are dropped from the clearance set


@dataclass(frozen=True)
class RobotModel:
    wheelbase: float = 0.4
    radius: float = 0.25
    v_max: float = 1.0
    omega_max: float = 0.5
    a_max: float = 0.5
    alpha_max: float = 0.5
    control_period: float = 0.1

    def __post_init__(self):
        for name in ("wheelbase", "radius", "v_max", "omega_max", "control_period"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.a_max < 0 or self.alpha_max < 0:
            raise ValueError("acceleration limits must be >= 0")


@dataclass(frozen=True)
class AgentScript:
    """Scripted pedestrian; the first waypoint is the spawn point."""

    id: str
    waypoints: tuple[Point2, ...]
    preferred_speed: float = 1.0
    start_delay: float = 0.0
    reactive: bool = False

    def __post_init__(self):
        if not self.waypoints:
            raise ValueError(f"agent {self.id!r} needs at least one waypoint")
        if not 0 < self.preferred_speed <= V_HUMAN_MAX:
            raise ValueError(f"agent {self.id!r}: preferred_speed must be in (0, {V_HUMAN_MAX}]")
        if self.start_delay < 0:
            raise ValueError(f"agent {self.id!r}: start_delay must be >= 0")


@dataclass(frozen=True)
class AgentState:
    id: str
    position: Point2
    velocity: Point2 = Point2(0.0, 0.0)
    target: int = 1  # index of the waypoint being walked to


@dataclass(frozen=True)
class WorldState:
    tick: int
    dt: float
    robot: Pose2
    twist: Twist
    agents: tuple[AgentState, ...]
    statics: tuple[ObstacleShape, ...] = ()

    @property
    def time(self) -> float:
        return self.tick * self.dt


@dataclass(frozen=True)
class CollisionReport:
    collided: bool
    min_hr_distance: float  # robot-human centre distance, inf without humans
    min_margin: float  # smallest surface gap to any human or static shape


# --- kinematics ----------------------------------------------------------------


def wheel_speeds(cmd: Twist, model: RobotModel) -> tuple[Fraction, Fraction]:
    """Right and left wheel speeds v +- L*omega/2, held exactly."""
    v = Fraction(cmd.v)
    half = Fraction(model.wheelbase) * Fraction(cmd.omega) / 2
    return v + half, v - half


def step_robot(pose: Pose2, cmd: Twist, model: RobotModel = RobotModel()) -> Pose2:
    """Differential-drive update from wheel speeds.

    Wheel speeds are combined in exact rational arithmetic, so the recovered
    (v, omega) are the commanded floats and the update equals the unicycle step.
    """
    vr, vl = wheel_speeds(cmd, model)
    v = float((vr + vl) / 2)
    w = float((vr - vl) / Fraction(model.wheelbase))
    x, y, th = unicycle_step(pose.x, pose.y, pose.theta, v, w, model.control_period)
    return Pose2(float(x), float(y), float(th))


def limit_command(cmd: Twist, current: Twist, model: RobotModel) -> Twist:
    """Clip a command to the absolute limits and the one-period acceleration bounds."""
    dv = model.a_max * model.control_period
    dw = model.alpha_max * model.control_period
    v = min(max(cmd.v, current.v - dv), current.v + dv)
    w = min(max(cmd.omega, current.omega - dw), current.omega + dw)
    v = min(max(v, -model.v_max), model.v_max)
    w = min(max(w, -model.omega_max), model.omega_max)
    return Twist(v, w)


# --- pedestrians ----------------------------------------------------------------


def initial_agents(scripts: Sequence[AgentScript]) -> tuple[AgentState, ...]:
    return tuple(AgentState(s.id, s.waypoints[0], Point2(0.0, 0.0), 1) for s in scripts)


def step_agents(
    state: WorldState,
    scripts: Sequence[AgentScript],
    dt: float,
    params: InteractionParams = InteractionParams(),
) -> tuple[AgentState, ...]:
    """Advance every agent one tick toward its current waypoint."""
    by_id = {s.id: s for s in scripts}
    pos = np.array([[a.position.x, a.position.y] for a in state.agents]).reshape(-1, 2)
    force = None
    if any(by_id[a.id].reactive for a in state.agents):
        everyone = np.vstack([pos, [[state.robot.x, state.robot.y]]])
        force = interaction_force(everyone, ObstacleArrays.from_shapes(state.statics), params)[: len(pos)]

    out = []
    for i, a in enumerate(state.agents):
        script = by_id[a.id]
        target = a.target
        wps = script.waypoints
        # waypoints are consumed once within reach
        while target < len(wps) and pose_distance(a.position, wps[target]) < WAYPOINT_RADIUS:
            target += 1
        v_des = np.zeros(2)
        if state.time >= script.start_delay and target < len(wps):
            d = np.array([wps[target].x - a.position.x, wps[target].y - a.position.y])
            n = float(np.hypot(d[0], d[1]))
            if n > 0:
                v_des = d / n * script.preferred_speed
        v = v_des
        if script.reactive and force is not None and state.time >= script.start_delay:
            v = clamp_speed(v_des + force[i] * REACTION_TIME, V_HUMAN_MAX)
        p = pos[i] + v * dt
        out.append(AgentState(a.id, Point2(float(p[0]), float(p[1])), Point2(float(v[0]), float(v[1])), target))
    return tuple(out)


def check_collision(state: WorldState, model: RobotModel = RobotModel(), agent_radius: float = HUMAN_RADIUS) -> CollisionReport:
    r = state.robot
    min_hr = math.inf
    margin = math.inf
    for a in state.agents:
        d = pose_distance(r, a.position)
        min_hr = min(min_hr, d)
        margin = min(margin, d - model.radius - agent_radius)
    if state.statics:
        d, _ = ObstacleArrays.from_shapes(state.statics).nearest(np.array([[r.x, r.y]]))
        margin = min(margin, float(d[0]) - model.radius)
    return CollisionReport(margin < 0, min_hr, margin)


# --- route following ------------------------------------------------------------


class RouteFollower:
    """Carrot on the start -> via points -> goal polyline, a fixed arc length ahead.

    Progress along the route never decreases.
    """

    def __init__(self, start: Pose2, via: Sequence[Point2], goal: Pose2, lookahead: float):
        pts = [(start.x, start.y)] + [(p.x, p.y) for p in via] + [(goal.x, goal.y)]
        self.pts = np.array(pts, dtype=float)
        seg = np.diff(self.pts, axis=0)
        self.lengths = np.hypot(seg[:, 0], seg[:, 1])
        self.cum = np.concatenate([[0.0], np.cumsum(self.lengths)])
        self.goal = goal
        self.lookahead = lookahead
        self.progress = 0.0

    def _project(self, p: np.ndarray) -> float:
        best, best_s = math.inf, 0.0
        for i, L in enumerate(self.lengths):
            if L == 0:
                continue
            a = self.pts[i]
            u = min(max(float((p - a) @ (self.pts[i + 1] - a)) / (L * L), 0.0), 1.0)
            q = a + u * (self.pts[i + 1] - a)
            d = float(np.hypot(*(p - q)))
            # only the part of the route at or ahead of the current progress counts
            if self.cum[i] + u * L >= self.progress - 1e-9 and d < best:
                best, best_s = d, self.cum[i] + u * L
        return best_s

    def carrot(self, robot: Pose2) -> Pose2:
        self.progress = max(self.progress, self._project(np.array([robot.x, robot.y])))
        s = self.progress + self.lookahead
        if s >= self.cum[-1] or len(self.lengths) == 0:
            return self.goal
        i = int(np.searchsorted(self.cum, s, side="right") - 1)
        i = min(i, len(self.lengths) - 1)
        d = self.pts[i + 1] - self.pts[i]
        u = (s - self.cum[i]) / self.lengths[i]
        p = self.pts[i] + u * d
        return Pose2(float(p[0]), float(p[1]), math.atan2(d[1], d[0]))


# --- planners -------------------------------------------------------------------


@dataclass
class Observation:
    now: float
    robot: Pose2
    twist: Twist
    goal: Pose2
    statics: tuple[ObstacleShape, ...]
    humans_now: list[tuple[str, Point2]]
    tracks: dict[str, AgentTrack]
    robot_track: AgentTrack
    refresh: bool


class IdlePlanner:
    """Never moves; the negative control."""

    name = "idle"

    def plan(self, obs: Observation):
        return Twist(), {}


class DwaPlanner:
    name = "dwa"

    def __init__(self, params: DwaParams):
        self.params = params

    def plan(self, obs: Observation):
        obstacles = list(obs.statics) + [CircleObstacle(p, HUMAN_RADIUS, id=h) for h, p in obs.humans_now]
        return select_velocity(obs.robot, obs.twist, obs.goal, obstacles, self.params), {}


class TebPlanner:
    name = "teb"

    def __init__(self, params: TebParams):
        self.params = params
        self.memory = BandMemory()

    def plan(self, obs: Observation):
        res = plan_teb(obs.robot, obs.goal, obs.statics, obs.humans_now, self.params, obs.twist, self.memory)
        return res.twist, {"band": res.candidate.band if res.candidate else None, "flag": res.flag}


class MpTebPlanner:
    name = "mpteb"

    def __init__(self, params: TebParams, social: SocialParams, kind: PredictorKind):
        self.params = params
        self.social = social
        self.kind = kind
        self.context = None
        self.predictions = []
        self.memory = BandMemory()

    def plan(self, obs: Observation):
        info = {}
        if obs.refresh or self.context is None:
            self.context, self.predictions = build_context(
                obs.tracks, obs.robot_track, obs.statics, self.kind, obs.now
            )
            info["predictions"] = self.predictions
        ctx = replace(self.context, now=obs.now)
        res = plan_mpteb(
            obs.robot,
            obs.goal,
            obs.tracks,
            obs.statics,
            self.params,
            self.social,
            self.kind,
            robot_track=obs.robot_track,
            humans_now=obs.humans_now,
            now=obs.now,
            start_twist=obs.twist,
            context=ctx,
            memory=self.memory,
        )
        info["band"] = res.candidate.band if res.candidate else None
        info["flag"] = res.flag
        return res.twist, info


def make_planner(name: str, scenario: "Scenario"):
    if name == "dwa":
        return DwaPlanner(scenario.dwa)
    if name == "teb":
        return TebPlanner(scenario.teb)
    if name == "mpteb":
        return MpTebPlanner(scenario.teb, scenario.social, PredictorKind(scenario.predictor))
    if name == "idle":
        return IdlePlanner()
    raise ValueError(f"unknown planner {name!r}; expected one of {PLANNERS}")


# --- run loop -------------------------------------------------------------------


@dataclass
class RunTrace:
    """Header plus one record per tick; serialises to JSON lines."""

    header: dict
    records: list[dict] = field(default_factory=list)

    @property
    def outcome(self) -> str:
        return self.header.get("outcome", "running")

    def to_jsonl(self) -> str:
        lines = [json.dumps(self.header, sort_keys=True)]
        lines += [json.dumps(r, sort_keys=True) for r in self.records]
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_jsonl().encode()).hexdigest()

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_jsonl())

    @classmethod
    def load(cls, path) -> "RunTrace":
        with open(path) as fh:
            rows = [json.loads(line) for line in fh if line.strip()]
        if not rows:
            raise ValueError(f"{path}: empty trace")
        return cls(rows[0], rows[1:])


def jitter_scripts(scripts: Sequence[AgentScript], jitter, rng: np.random.Generator) -> list[AgentScript]:
    """Per-repeat perturbation of spawn points, speeds and start delays."""
    out = []
    for s in scripts:
        dx, dy = rng.uniform(-jitter.position, jitter.position, size=2)
        k = 1.0 + rng.uniform(-jitter.speed, jitter.speed)
        delay = rng.uniform(0.0, jitter.delay)
        spawn = Point2(s.waypoints[0].x + dx, s.waypoints[0].y + dy)
        speed = min(max(s.preferred_speed * k, 1e-3), V_HUMAN_MAX)
        out.append(replace(s, waypoints=(spawn,) + tuple(s.waypoints[1:]), preferred_speed=speed, start_delay=s.start_delay + delay))
    return out


def _observe(tracks: dict[str, AgentTrack], detections, now: float) -> None:
    for hid, p in detections:
        t = tracks.get(hid)
        if t is not None:
            t.current = p
            t.last_seen = now


def _xy(p) -> list[float]:
    return [float(p.x), float(p.y)]


def run_scenario(scenario: "Scenario", planner: str, seed: int | None = None, *, record_bands: bool = True) -> RunTrace:
    """Simulate one run to arrival, collision or timeout."""
    model = scenario.robot
    dt = model.control_period
    seed = scenario.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    scripts = jitter_scripts(scenario.agents, scenario.jitter, rng)
    statics = tuple(scenario.statics)
    agent = make_planner(planner, scenario)
    route = RouteFollower(scenario.robot_start, scenario.route, scenario.goal, scenario.lookahead)
    interaction = InteractionParams()

    state = WorldState(0, dt, scenario.robot_start, Twist(), initial_agents(scripts), statics)
    tracks: dict[str, AgentTrack] = {}
    robot_track = AgentTrack("robot")
    trace = RunTrace(
        {
            "scenario": scenario.name,
            "planner": planner,
            "seed": int(seed),
            "dt": dt,
            "robot_radius": model.radius,
            "agent_radius": HUMAN_RADIUS,
            "start": [scenario.robot_start.x, scenario.robot_start.y, scenario.robot_start.theta],
            "goal": [scenario.goal.x, scenario.goal.y, scenario.goal.theta],
            "statics": [_shape_record(s) for s in statics],
            "agents": [a.id for a in scripts],
        }
    )
    max_ticks = int(round(scenario.timeout / dt))
    outcome = "timeout"
    while True:
        now = state.time
        report = check_collision(state, model)
        rec = {
            "tick": state.tick,
            "t": now,
            "robot": [state.robot.x, state.robot.y, state.robot.theta],
            "agents": {a.id: _xy(a.position) for a in state.agents},
            "min_hr": report.min_hr_distance if math.isfinite(report.min_hr_distance) else None,
        }
        trace.records.append(rec)
        if report.collided:
            outcome = "collision"
            break
        if pose_distance(state.robot, scenario.goal) < ARRIVAL_RADIUS:
            outcome = "arrived"
            break
        if state.tick >= max_ticks:
            break

        # sense
        humans = [(a.id, a.position) for a in state.agents]
        detections = detect_humans(state.robot, scenario.camera, humans, statics)
        scan = raycast_lidar(
            state.robot,
            list(statics) + [CircleObstacle(p, HUMAN_RADIUS) for _, p in humans],
            scenario.lidar_beams,
            scenario.camera.max_depth,
        )
        rec["lidar_min"] = float(np.min(scan.ranges))
        refresh = state.tick % REFRESH_TICKS == 0
        if refresh:
            tracks = update_tracks(tracks, detections, now)
            robot_track.add(now, state.robot.position)
        else:
            _observe(tracks, detections, now)
        humans_now = sorted(
            (t.id, t.current) for t in tracks.values() if t.current is not None and now - t.last_seen <= TRACK_MEMORY
        )

        # plan
        obs = Observation(now, state.robot, state.twist, route.carrot(state.robot), statics, humans_now, tracks, robot_track, refresh)
        cmd, info = agent.plan(obs)
        cmd = limit_command(cmd, state.twist, model)
        rec["cmd"] = [cmd.v, cmd.omega]
        if record_bands and info.get("band") is not None:
            rec["band"] = [[round(float(a), 4), round(float(b), 4)] for a, b in info["band"].xy]
        if "predictions" in info:
            rec["predictions"] = {p.agent_id: [_xy(q) for q in p.points] for p in info["predictions"]}

        # act
        robot = step_robot(state.robot, cmd, model)
        agents = step_agents(state, scripts, dt, interaction)
        state = WorldState(state.tick + 1, dt, robot, cmd, agents, statics)

    trace.header["outcome"] = outcome
    trace.header["ticks"] = state.tick
    return trace


def _shape_record(s: ObstacleShape) -> dict:
    if isinstance(s, SegmentObstacle):
        return {"segment": [_xy(s.a), _xy(s.b)]}
    if isinstance(s, CircleObstacle):
        return {"circle": {"center": _xy(s.center), "radius": s.radius}}
    if isinstance(s, PointObstacle):
        return {"point": _xy(s.position)}
    raise TypeError(type(s).__name__)
