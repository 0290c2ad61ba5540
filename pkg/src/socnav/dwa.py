"""Dynamic Window Approach baseline.

Commands are sampled on a regular grid inside the acceleration-reachable
window, rolled out at constant command and scored by heading, clearance and
speed. Clearance is the free arc length along the command's curvature before
the first contact with an obstacle at its current position, so it does not
reward slowing down near walls that are not in the way. Collision gating uses
obstacle positions advanced along their velocity at each rollout time; the
simulator passes humans with zero velocity, so in practice only their current
positions are checked.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import ObstacleArrays, ObstacleShape, Pose2, Twist, unicycle_step

INFEASIBLE = -math.inf
_SCORE_DECIMALS = 9
_ARC_STEP = 0.05


@dataclass(frozen=True)
class DwaParams:
    v_samples: int = 11
    omega_samples: int = 21
    sim_horizon: float = 2.0
    sim_dt: float = 0.1
    heading_weight: float = 0.8
    clearance_weight: float = 0.2
    velocity_weight: float = 0.1
    v_max: float = 1.0
    omega_max: float = 0.5
    a_max: float = 0.5
    alpha_max: float = 0.5
    control_period: float = 0.1
    robot_radius: float = 0.25
    clearance_cap: float = 1.0
    reverse_ratio: float = 0.2

    def __post_init__(self):
        if self.v_samples < 2 or self.omega_samples < 2:
            raise ValueError("need at least 2 samples per axis")
        if not self.sim_horizon > 0 or not self.sim_dt > 0:
            raise ValueError("sim_horizon and sim_dt must be positive")
        for name in ("v_max", "omega_max", "control_period", "clearance_cap"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("a_max", "alpha_max", "robot_radius", "reverse_ratio"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.sim_horizon / self.sim_dt)))


def _window_1d(cur: float, lo: float, hi: float, reach: float) -> tuple[float, float]:
    a, b = max(lo, cur - reach), min(hi, cur + reach)
    if a > b:
        # current value outside the absolute limits: collapse to the nearest limit
        a = b = min(max(cur, lo), hi)
    return a, b


def admissible_window(current: Twist, params: DwaParams = DwaParams()):
    """Velocity ranges reachable within one control period, inside the absolute limits."""
    v_rng = _window_1d(
        current.v, -params.reverse_ratio * params.v_max, params.v_max, params.a_max * params.control_period
    )
    w_rng = _window_1d(
        current.omega, -params.omega_max, params.omega_max, params.alpha_max * params.control_period
    )
    return v_rng, w_rng


def command_grid(current: Twist, params: DwaParams = DwaParams()) -> tuple[np.ndarray, np.ndarray]:
    """Flattened (v, omega) samples, v-major."""
    (v0, v1), (w0, w1) = admissible_window(current, params)
    vs = np.linspace(v0, v1, params.v_samples)
    ws = np.linspace(w0, w1, params.omega_samples)
    vv, ww = np.meshgrid(vs, ws, indexing="ij")
    return vv.ravel(), ww.ravel()


def _rollout_arrays(pose: Pose2, v: np.ndarray, w: np.ndarray, params: DwaParams):
    k = params.n_steps
    xs = np.empty((len(v), k))
    ys = np.empty((len(v), k))
    ths = np.empty((len(v), k))
    x = np.full(len(v), pose.x)
    y = np.full(len(v), pose.y)
    th = np.full(len(v), pose.theta)
    for i in range(k):
        x, y, th = unicycle_step(x, y, th, v, w, params.sim_dt)
        xs[:, i], ys[:, i], ths[:, i] = x, y, th
    return xs, ys, ths


def rollout(pose: Pose2, cmd: Twist, params: DwaParams = DwaParams()) -> list[Pose2]:
    """Constant-command forward simulation over the horizon (start pose excluded)."""
    xs, ys, ths = _rollout_arrays(pose, np.array([cmd.v]), np.array([cmd.omega]), params)
    return [Pose2(float(a), float(b), float(c)) for a, b, c in zip(xs[0], ys[0], ths[0])]


def free_distance(pose: Pose2, v, w, obstacles: ObstacleArrays, params: DwaParams) -> np.ndarray:
    """Arc length along each command's curvature until the robot disc touches an obstacle.

    Obstacles are taken at their current positions; the result is capped at
    ``clearance_cap``. A command with ``v == 0`` does not move along its arc
    and gets the cap unless the robot already touches something.
    """
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    cap = params.clearance_cap
    if not len(obstacles):
        return np.full(len(v), cap)
    s = np.linspace(0.0, cap, int(math.ceil(cap / _ARC_STEP)) + 1)
    sign = np.where(v < 0, -1.0, 1.0)[:, None]
    moving = np.abs(v) > 0
    kappa = np.where(moving, w / np.where(moving, np.abs(v), 1.0), 0.0)[:, None]
    ds = sign * s[None, :]
    th = pose.theta + kappa * s[None, :]
    straight = np.abs(kappa) < 1e-9
    k_safe = np.where(straight, 1.0, kappa)
    xs = np.where(straight, pose.x + ds * math.cos(pose.theta), pose.x + (np.sin(th) - math.sin(pose.theta)) / k_safe * sign)
    ys = np.where(straight, pose.y + ds * math.sin(pose.theta), pose.y - (np.cos(th) - math.cos(pose.theta)) / k_safe * sign)
    d, _ = obstacles.nearest(np.column_stack([xs.ravel(), ys.ravel()]))
    hit = (d.reshape(xs.shape) < params.robot_radius)
    first = np.where(hit.any(axis=1), np.argmax(hit, axis=1), -1)
    out = np.where(first >= 0, s[np.maximum(first, 0)], cap)
    return np.where(moving | hit[:, 0], out, cap)


def _score_arrays(pose: Pose2, xs, ys, ths, v, w, goal: Pose2, obstacles: Sequence[ObstacleShape], params: DwaParams):
    n, k = xs.shape
    # heading: alignment of the final heading with the bearing to the goal
    dx, dy = goal.x - xs[:, -1], goal.y - ys[:, -1]
    err = np.arctan2(np.sin(np.arctan2(dy, dx) - ths[:, -1]), np.cos(np.arctan2(dy, dx) - ths[:, -1]))
    heading = np.where(np.hypot(dx, dy) < 1e-9, 1.0, 1.0 - np.abs(err) / math.pi)

    # gating: every rollout pose against obstacles advanced to its time; a
    # shape moving at v is queried with the poses shifted by -v t instead
    pts = np.stack([xs, ys], axis=-1)
    t = params.sim_dt * np.arange(1, k + 1)
    still = [o for o in obstacles if o.velocity.x == 0 and o.velocity.y == 0]
    movers = [o for o in obstacles if o.velocity.x != 0 or o.velocity.y != 0]
    d = np.full(n * k, np.inf)
    if still:
        d = np.minimum(d, ObstacleArrays.from_shapes(still).nearest(pts.reshape(-1, 2))[0])
    for o in movers:
        shifted = pts - t[None, :, None] * np.array([o.velocity.x, o.velocity.y])
        d = np.minimum(d, ObstacleArrays.from_shapes([o]).nearest(shifted.reshape(-1, 2))[0])
    feasible = np.all(d.reshape(n, k) >= params.robot_radius, axis=1)
    clearance = free_distance(pose, v, w, ObstacleArrays.from_shapes(obstacles), params) / params.clearance_cap
    velocity = v / params.v_max
    total = (
        params.heading_weight * heading
        + params.clearance_weight * clearance
        + params.velocity_weight * velocity
    )
    return np.where(feasible, total, INFEASIBLE)


def score(
    traj: Sequence[Pose2],
    goal: Pose2,
    obstacles: Sequence[ObstacleShape] = (),
    params: DwaParams = DwaParams(),
    *,
    start: Pose2,
    cmd: Twist,
) -> float:
    """Weighted score of one rollout of ``cmd`` from ``start``; ``-inf`` if it collides."""
    if not traj:
        raise ValueError("empty trajectory")
    xs = np.array([[p.x for p in traj]])
    ys = np.array([[p.y for p in traj]])
    ths = np.array([[p.theta for p in traj]])
    v, w = np.array([cmd.v]), np.array([cmd.omega])
    return float(_score_arrays(start, xs, ys, ths, v, w, goal, obstacles, params)[0])


def tie_key(s: float, v: float, w: float) -> tuple:
    """Sort key: higher score, then lower |omega|, lower v, lower omega."""
    return (-quantize(s), abs(w), v, w)


def quantize(s):
    """Scores are compared after rounding to 1e-9 so rounding noise cannot flip a tie."""
    return np.round(s, _SCORE_DECIMALS)


def stop_command(current: Twist, params: DwaParams = DwaParams()) -> Twist:
    """Maximal deceleration of both velocities toward zero."""
    dv = min(abs(current.v), params.a_max * params.control_period)
    dw = min(abs(current.omega), params.alpha_max * params.control_period)
    return Twist(current.v - math.copysign(dv, current.v), current.omega - math.copysign(dw, current.omega))


def evaluate_grid(pose: Pose2, current: Twist, goal: Pose2, obstacles: Sequence[ObstacleShape], params: DwaParams = DwaParams()):
    """All grid commands and their scores."""
    v, w = command_grid(current, params)
    xs, ys, ths = _rollout_arrays(pose, v, w, params)
    return v, w, _score_arrays(pose, xs, ys, ths, v, w, goal, obstacles, params)


def select_velocity(
    pose: Pose2,
    current: Twist,
    goal: Pose2,
    obstacles: Sequence[ObstacleShape] = (),
    params: DwaParams = DwaParams(),
) -> Twist:
    v, w, s = evaluate_grid(pose, current, goal, obstacles, params)
    ok = np.isfinite(s)
    if not ok.any():
        return stop_command(current, params)
    # lexsort uses the last key as primary
    sr = np.where(ok, -quantize(s), np.inf)
    order = np.lexsort((w, v, np.abs(w), sr))
    i = order[0]
    return Twist(float(v[i]), float(w[i]))
