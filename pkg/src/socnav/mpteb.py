"""Motion-prediction TEB: social cost terms layered on the classic band objective.

Per interior band pose, at its cumulative time ``t`` from the planning
instant, three costs are added (scaled by ``delta_mp``):

* human-like: distance to the robot's own predicted path,
* dynamic obstacle: squared hinge on the distance to each predicted human
  (and to ``p + v t`` for untracked moving shapes),
* priority side: the negated, clamped side indicator of nearby humans, so
  oncoming people are preferably kept on the robot's left.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from .core import (
    CircleObstacle,
    ObstacleArrays,
    ObstacleShape,
    Point2,
    Pose2,
    TimedBand,
    Twist,
    interpolate_samples,
    interpolate_timed,
    pose_distance,
)
from .perception import AgentTrack
from .prediction import INTERACTION, PredictedTrajectory, PredictorKind, predict_all
from .teb import (
    BandCandidate,
    BandMemory,
    DynamicObstacle,
    ExtraTerms,
    TebParams,
    extract_control,
    generate_candidates,
    objective,
    select_best,
)

PRIORITY_RANGE = 2.0
ARRIVAL_RADIUS = 0.2
HUMAN_RADIUS = 0.3


@dataclass(frozen=True)
class SocialParams:
    w1: float = 0.5
    w2: float = 5.0
    delta_mp: float = 1.0
    d_social: float = 0.8
    pri_saturation: float = 1.0

    def __post_init__(self):
        for f in self.__dataclass_fields__:
            if getattr(self, f) < 0:
                raise ValueError(f"{f} must be >= 0")


@dataclass(frozen=True)
class SocialContext:
    """Snapshot of predictions for one planning cycle.

    ``now`` maps band time ``t`` (seconds from the planning instant) onto the
    absolute prediction clock.
    """

    human_predictions: tuple[PredictedTrajectory, ...] = ()
    robot_self_prediction: PredictedTrajectory | None = None
    dynamic_obstacles: tuple[ObstacleShape, ...] = ()
    now: float = 0.0

    def is_empty(self) -> bool:
        return not self.human_predictions and self.robot_self_prediction is None and not self.dynamic_obstacles


EMPTY_CONTEXT = SocialContext()


def _human_at(pred: PredictedTrajectory, t: float, now: float) -> Point2:
    return interpolate_timed(pred, max(now + t, 0.0))


# --- scalar reference costs ---------------------------------------------------


def cost_human_like(band_pose: Pose2, t: float, ctx: SocialContext, sp: SocialParams) -> float:
    if ctx.robot_self_prediction is None:
        return 0.0
    s = _human_at(ctx.robot_self_prediction, t, ctx.now)
    return sp.w1 * pose_distance(band_pose, s)


def cost_dynamic_obstacle(band_pose: Pose2, t: float, ctx: SocialContext, sp: SocialParams) -> float:
    total = 0.0
    for pred in ctx.human_predictions:
        d = pose_distance(band_pose, _human_at(pred, t, ctx.now))
        total += sp.w2 * max(0.0, sp.d_social - d) ** 2
    for o in ctx.dynamic_obstacles:
        p = o.position
        q = Point2(p.x + o.velocity.x * t, p.y + o.velocity.y * t)
        d = pose_distance(band_pose, q)
        total += sp.w2 * max(0.0, sp.d_social - d) ** 2
    return total


def side_indicator(robot: Pose2, obstacle_xy: Point2) -> float:
    """Positive when the obstacle lies on the robot's left (non-priority side)."""
    return math.cos(robot.theta) * (obstacle_xy.y - robot.y) - math.sin(robot.theta) * (obstacle_xy.x - robot.x)


def cost_priority(band_pose: Pose2, t: float, ctx: SocialContext, sp: SocialParams) -> float:
    total = 0.0
    for pred in ctx.human_predictions:
        h = _human_at(pred, t, ctx.now)
        if pose_distance(band_pose, h) > PRIORITY_RANGE:
            continue
        e = side_indicator(band_pose, h)
        total -= min(max(e, -sp.pri_saturation), sp.pri_saturation)
    return total


# --- vectorised form used by the optimiser -------------------------------------


@dataclass
class SocialCost:
    """Social terms evaluated on whole bands with analytic derivatives."""

    ctx: SocialContext
    sp: SocialParams
    humans: list = field(init=False)
    robot: tuple | None = field(init=False)
    shapes_p: np.ndarray = field(init=False)
    shapes_v: np.ndarray = field(init=False)
    packed: tuple = field(init=False, repr=False)

    def __post_init__(self):
        now = self.ctx.now
        self.humans = [(p.times - now, p.array()) for p in self.ctx.human_predictions]
        rp = self.ctx.robot_self_prediction
        self.robot = None if rp is None else (rp.times - now, rp.array())
        dyn = list(self.ctx.dynamic_obstacles)
        self.shapes_p = np.array([(o.position.x, o.position.y) for o in dyn]).reshape(-1, 2)
        self.shapes_v = np.array([(o.velocity.x, o.velocity.y) for o in dyn]).reshape(-1, 2)
        self.packed = self._pack()

    def _pack(self) -> tuple:
        sp = self.sp
        lens = np.array([len(t) for t, _ in self.humans], dtype=np.int64)
        width = max(1, int(lens.max())) if len(lens) else 1
        h_t = np.zeros((len(lens), width))
        h_p = np.zeros((len(lens), width, 2))
        for i, (t, pts) in enumerate(self.humans):
            h_t[i, : len(t)] = t
            h_p[i, : len(t)] = pts
        if self.robot is None:
            r_t, r_p = np.zeros(1), np.zeros((1, 2))
        else:
            r_t, r_p = (np.ascontiguousarray(a, dtype=float) for a in self.robot)
        sprm = np.array([sp.w1, sp.w2, sp.d_social, sp.pri_saturation, sp.delta_mp])
        r_len = 0 if self.robot is None else len(r_t)
        return sprm, h_t, h_p, lens, self.shapes_p, self.shapes_v, r_t, r_p, r_len

    def accumulate(self, x, y, th, dt, jac: bool, g: np.ndarray, H: np.ndarray) -> float:
        """Add the weighted social value, half-gradient and Gauss-Newton matrix in place."""
        return _kernels.social_system(x, y, th, dt, *self.packed, jac, g, H)

    @property
    def weight(self) -> float:
        return self.sp.delta_mp

    def _tracks_at(self, t):
        """Positions and velocities of every hinge source at times ``t``: (S, K, 2) each."""
        pos, vel = [], []
        for times, pts in self.humans:
            p, v = interpolate_samples(times, pts, np.maximum(t, times[0]))
            pos.append(p)
            vel.append(np.where((t >= times[0])[:, None], v, 0.0))
        for p0, v0 in zip(self.shapes_p, self.shapes_v):
            pos.append(p0[None, :] + t[:, None] * v0[None, :])
            vel.append(np.repeat(v0[None, :], len(t), axis=0))
        if not pos:
            return np.zeros((0, len(t), 2)), np.zeros((0, len(t), 2))
        return np.array(pos), np.array(vel)

    def evaluate(self, x, y, th, t, jac: bool) -> ExtraTerms:
        n = len(x)
        k = np.arange(1, n - 1)
        px, py, pth, pt = x[k], y[k], th[k], t[k]
        m = len(k)
        sp = self.sp
        scalar = 0.0
        sgrad = np.zeros((n, 4)) if jac else None

        # dynamic-obstacle hinge rows, one per (source, pose)
        H, Hv = self._tracks_at(pt)
        S = H.shape[0]
        w = math.sqrt(sp.w2)
        if S:
            dx = px[None, :] - H[..., 0]
            dy = py[None, :] - H[..., 1]
            d = np.hypot(dx, dy)
            e = np.maximum(0.0, sp.d_social - d)
            res = (w * e).ravel()
            res_pose = np.tile(k, S)
            res_grad = None
            if jac:
                act = w * (e > 0) / np.maximum(d, 1e-12)
                gx = -act * dx
                gy = -act * dy
                gt = act * (dx * Hv[..., 0] + dy * Hv[..., 1])
                res_grad = np.stack([gx.ravel(), gy.ravel(), np.zeros(S * m), gt.ravel()], axis=1)
        else:
            res, res_pose = np.zeros(0), np.zeros(0, dtype=int)
            res_grad = np.zeros((0, 4)) if jac else None

        # human-like attraction to the robot's own prediction
        if self.robot is not None and sp.w1 > 0 and m:
            times, pts = self.robot
            s, sv = interpolate_samples(times, pts, np.maximum(pt, times[0]))
            sv = np.where((pt >= times[0])[:, None], sv, 0.0)
            ex, ey = px - s[:, 0], py - s[:, 1]
            dist = np.hypot(ex, ey)
            scalar += float(sp.w1 * dist.sum())
            if jac:
                inv = sp.w1 / np.maximum(dist, 1e-12)
                sgrad[k, 0] += inv * ex
                sgrad[k, 1] += inv * ey
                sgrad[k, 3] += -inv * (ex * sv[:, 0] + ey * sv[:, 1])

        # priority side, humans only
        nh = len(self.humans)
        if nh and m:
            hx, hy = H[:nh, :, 0], H[:nh, :, 1]
            c, s_ = np.cos(pth)[None, :], np.sin(pth)[None, :]
            rx, ry = hx - px[None, :], hy - py[None, :]
            gate = np.hypot(rx, ry) <= PRIORITY_RANGE
            ind = c * ry - s_ * rx
            sat = sp.pri_saturation
            clamped = np.clip(ind, -sat, sat)
            scalar += float(-np.sum(np.where(gate, clamped, 0.0)))
            if jac:
                live = gate & (np.abs(ind) < sat)
                de_dx = s_ * np.ones_like(rx)
                de_dy = -c * np.ones_like(rx)
                de_dth = -s_ * ry - c * rx
                de_dt = c * Hv[:nh, :, 1] - s_ * Hv[:nh, :, 0]
                sgrad[k, 0] -= np.sum(np.where(live, de_dx, 0.0), axis=0)
                sgrad[k, 1] -= np.sum(np.where(live, de_dy, 0.0), axis=0)
                sgrad[k, 2] -= np.sum(np.where(live, de_dth, 0.0), axis=0)
                sgrad[k, 3] -= np.sum(np.where(live, de_dt, 0.0), axis=0)

        return ExtraTerms(res, res_pose, res_grad, scalar, sgrad)


def objective_mp(
    band: TimedBand,
    obstacles=(),
    ctx: SocialContext = EMPTY_CONTEXT,
    params: TebParams = TebParams(),
    sp: SocialParams = SocialParams(),
    start_twist: Twist | None = None,
) -> float:
    """Classic objective plus ``delta_mp`` times the summed social costs."""
    base = objective(band, obstacles, params, start_twist)
    social = 0.0
    if not ctx.is_empty():
        cost = SocialCost(ctx, sp)
        ev = cost.evaluate(band.x, band.y, band.theta, band.times(), False)
        social = float(ev.residuals @ ev.residuals) + ev.scalar
    return base + sp.delta_mp * social


def social_breakdown(band: TimedBand, ctx: SocialContext, sp: SocialParams) -> dict[str, float]:
    """Per-term social cost totals over interior poses (for run logs)."""
    out = {"human_like": 0.0, "dynamic_obstacle": 0.0, "priority": 0.0}
    times = band.times()
    for k, pose in enumerate(band.poses[1:-1], start=1):
        t = float(times[k])
        out["human_like"] += cost_human_like(pose, t, ctx, sp)
        out["dynamic_obstacle"] += cost_dynamic_obstacle(pose, t, ctx, sp)
        out["priority"] += cost_priority(pose, t, ctx, sp)
    return out


# --- planning pipeline ----------------------------------------------------------


@dataclass
class PlanResult:
    twist: Twist
    candidate: BandCandidate | None
    flag: str = "ok"  # ok | arrived | blocked
    diagnostics: dict = field(default_factory=dict)


def in_collision(robot: Pose2, statics: ObstacleArrays, humans: Sequence[Point2], params: TebParams) -> bool:
    if len(statics):
        d, _ = statics.nearest(np.array([[robot.x, robot.y]]))
        if d[0] < params.robot_radius:
            return True
    return any(pose_distance(robot, h) < params.robot_radius + HUMAN_RADIUS for h in humans)


def human_circles(humans: Sequence[tuple[str, Point2]]) -> list[CircleObstacle]:
    return [CircleObstacle(p, HUMAN_RADIUS, id=hid) for hid, p in humans]


def plan_with(
    robot: Pose2,
    goal: Pose2,
    statics: Sequence[ObstacleShape],
    humans_now: Sequence[tuple[str, Point2]],
    dyn: Sequence[DynamicObstacle],
    params: TebParams,
    extra=None,
    start_twist: Twist | None = None,
    memory: BandMemory | None = None,
) -> PlanResult:
    """Shared candidate -> optimise -> select -> command pipeline."""
    if pose_distance(robot, goal) < ARRIVAL_RADIUS:
        return PlanResult(Twist(), None, "arrived")
    clearance = ObstacleArrays.from_shapes(list(statics) + human_circles(humans_now))
    walls = ObstacleArrays.from_shapes(statics)
    if in_collision(robot, walls, [p for _, p in humans_now], params):
        return PlanResult(Twist(), None, "blocked")
    cands = generate_candidates(robot, goal, dyn, params, clearance, extra, start_twist, memory=memory, walls=walls)
    # segment-level feasibility first, then the objective
    best = select_best([c for c in cands if c.diagnostics["feasible"]] or cands)
    return PlanResult(
        extract_control(best.band, params),
        best,
        "ok",
        {"n_candidates": len(cands), "costs": [c.cost for c in cands]},
    )


def build_context(
    tracks: dict[str, AgentTrack],
    robot_track: AgentTrack | None,
    statics: Sequence[ObstacleShape],
    kind: PredictorKind,
    now: float,
    dynamic_shapes: Sequence[ObstacleShape] = (),
) -> tuple[SocialContext, list[PredictedTrajectory]]:
    preds, _ = predict_all(tracks, robot_track, kind, statics)
    humans = tuple(p for p in preds if robot_track is None or p.agent_id != robot_track.id)
    robot_pred = None
    if robot_track is not None and len(robot_track.history) == robot_track.history.maxlen:
        robot_pred = next((p for p in preds if p.agent_id == robot_track.id), None)
    return SocialContext(humans, robot_pred, tuple(dynamic_shapes), now), preds


def prediction_tubes(ctx: SocialContext) -> list[DynamicObstacle]:
    out = []
    for p in ctx.human_predictions:
        times = p.times - ctx.now
        pts = p.array()
        keep = times >= 0
        # first sample sits at the planning instant
        first = interpolate_samples(times, pts, 0.0)[0]
        t2 = np.concatenate([[0.0], times[keep & (times > 0)]])
        p2 = np.vstack([first, pts[keep & (times > 0)]])
        out.append(DynamicObstacle(p.agent_id, t2, p2, HUMAN_RADIUS))
    return out


def plan_mpteb(
    robot: Pose2,
    goal: Pose2,
    tracks: dict[str, AgentTrack],
    statics: Sequence[ObstacleShape],
    params: TebParams = TebParams(),
    sp: SocialParams = SocialParams(),
    kind: PredictorKind = INTERACTION,
    *,
    robot_track: AgentTrack | None = None,
    humans_now: Sequence[tuple[str, Point2]] = (),
    now: float = 0.0,
    start_twist: Twist | None = None,
    dynamic_shapes: Sequence[ObstacleShape] = (),
    context: SocialContext | None = None,
    memory: BandMemory | None = None,
) -> PlanResult:
    """Predict, seed homotopy candidates along predicted tubes, optimise with social costs, command.

    ``humans_now`` are the currently perceived human positions (clearance
    term); a precomputed ``context`` skips the prediction step.
    """
    if context is None:
        context, _ = build_context(tracks, robot_track, statics, kind, now, dynamic_shapes)
    cost = SocialCost(context, sp)
    dyn = prediction_tubes(context)
    res = plan_with(robot, goal, statics, humans_now, dyn, params, cost, start_twist, memory)
    res.diagnostics["n_predictions"] = len(context.human_predictions)
    res.diagnostics["self_prediction"] = context.robot_self_prediction is not None
    if res.candidate is not None:
        res.diagnostics["social"] = social_breakdown(res.candidate.band, context, sp)
    return res


def plan_teb(
    robot: Pose2,
    goal: Pose2,
    statics: Sequence[ObstacleShape],
    humans_now: Sequence[tuple[str, Point2]] = (),
    params: TebParams = TebParams(),
    start_twist: Twist | None = None,
    memory: BandMemory | None = None,
) -> PlanResult:
    """Classic TEB: humans are static obstacles at their current positions."""
    dyn = [
        DynamicObstacle(hid, np.array([0.0]), np.array([[p.x, p.y]]), HUMAN_RADIUS) for hid, p in humans_now
    ]
    return plan_with(robot, goal, statics, humans_now, dyn, params, None, start_twist, memory)
