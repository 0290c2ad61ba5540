"""Random DWA scenes and the exhaustive grid oracle shared by the test modules."""

import math

import numpy as np

from socnav.core import CircleObstacle, Point2, Pose2, SegmentObstacle, Twist, dist_to_obstacle
from socnav.dwa import INFEASIBLE, admissible_window, rollout, score, stop_command, tie_key


def random_scene(rng, n_obs=None):
    pose = Pose2(*rng.uniform(-3, 3, 2), rng.uniform(-math.pi, math.pi))
    if rng.uniform() < 0.2:
        # goal dead ahead: mirrored turn rates tie on the score
        goal = Pose2(pose.x + 4 * math.cos(pose.theta), pose.y + 4 * math.sin(pose.theta), 0.0)
    else:
        goal = Pose2(*rng.uniform(-6, 6, 2), 0.0)
    obstacles = []
    for _ in range(int(rng.integers(0, 5)) if n_obs is None else n_obs):
        c = Point2(pose.x + rng.uniform(-2.5, 2.5), pose.y + rng.uniform(-2.5, 2.5))
        vel = Point2(*rng.uniform(-0.8, 0.8, 2)) if rng.uniform() < 0.5 else Point2(0.0, 0.0)
        if rng.uniform() < 0.6:
            if math.hypot(c.x - pose.x, c.y - pose.y) < 0.7:
                continue
            obstacles.append(CircleObstacle(c, rng.uniform(0.1, 0.4), velocity=vel))
        else:
            a = rng.uniform(0, math.pi)
            d = rng.uniform(0.5, 3.0)
            seg = SegmentObstacle(c, Point2(c.x + d * math.cos(a), c.y + d * math.sin(a)), velocity=vel)
            if dist_to_obstacle(pose, seg) < 0.5:
                continue
            obstacles.append(seg)
    current = Twist(rng.uniform(-0.2, 1.0), rng.uniform(-0.5, 0.5))
    return pose, current, goal, obstacles


def brute_force(pose, current, goal, obstacles, params):
    (v0, v1), (w0, w1) = admissible_window(current, params)
    best = None
    for v in np.linspace(v0, v1, params.v_samples):
        for w in np.linspace(w0, w1, params.omega_samples):
            cmd = Twist(float(v), float(w))
            s = score(rollout(pose, cmd, params), goal, obstacles, params, start=pose, cmd=cmd)
            if s == INFEASIBLE:
                continue
            key = tie_key(s, cmd.v, cmd.omega)
            if best is None or key < best[0]:
                best = (key, cmd)
    return stop_command(current, params) if best is None else best[1]
