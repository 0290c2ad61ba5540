"""Simulated RGB-D human detection, 2D LiDAR and per-human tracks.

The camera sits at the robot centre looking along the robot heading. Camera
frame: ``y`` is depth (forward), ``x`` grows to the right of the heading, the
same direction image columns grow in.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .core import (
    CircleObstacle,
    ObstacleShape,
    Point2,
    PointObstacle,
    Pose2,
    SegmentObstacle,
)

HISTORY_LEN = 8
SAMPLE_PERIOD = 0.5
STALE_AFTER = 3.0
_GRID_TOL = 1e-6


@dataclass(frozen=True)
class CameraModel:
    cx: float = 320.0
    fy: float = 320.0 / math.tan(math.radians(87.0 / 2))
    image_width: float = 640.0
    hfov: float = 87.0
    max_depth: float = 8.0

    def __post_init__(self):
        if not self.fy > 0:
            raise ValueError("fy must be positive")
        if not 0 < self.cx < self.image_width:
            raise ValueError("cx must lie inside the image")
        if not 0 < self.hfov < 180:
            raise ValueError("hfov must be in (0, 180) degrees")
        if not self.max_depth > 0:
            raise ValueError("max_depth must be positive")


@dataclass(frozen=True)
class DetectionBox:
    x_min: float
    x_max: float
    depth: float
    agent_id: str = ""

    def __post_init__(self):
        if not self.x_min < self.x_max:
            raise ValueError("x_min must be < x_max")


@dataclass(frozen=True)
class LidarScan:
    ranges: np.ndarray
    angle_min: float
    angle_max: float
    max_range: float = 8.0

    @property
    def angles(self) -> np.ndarray:
        return np.linspace(self.angle_min, self.angle_max, len(self.ranges))


@dataclass
class AgentTrack:
    """Observed history of one agent on the 0.5 s sampling grid."""

    id: str
    history: deque = field(default_factory=lambda: deque(maxlen=HISTORY_LEN))
    last_seen: float = -math.inf
    current: Point2 | None = None

    @property
    def times(self) -> np.ndarray:
        return np.array([t for t, _ in self.history])

    @property
    def positions(self) -> np.ndarray:
        return np.array([(p.x, p.y) for _, p in self.history]).reshape(-1, 2)

    @property
    def last_time(self) -> float:
        return self.history[-1][0] if self.history else -math.inf

    @property
    def last_position(self) -> Point2:
        return self.history[-1][1]

    def add(self, t: float, p: Point2) -> bool:
        """Append a sample if 0.5 s has elapsed; restart the history on a gap."""
        self.last_seen = t
        self.current = p
        if not self.history:
            self.history.append((t, p))
            return True
        dt = t - self.last_time
        if dt < SAMPLE_PERIOD - _GRID_TOL:
            return False
        if dt > SAMPLE_PERIOD + _GRID_TOL:
            self.history.clear()
        self.history.append((t, p))
        return True


def _to_camera(robot: Pose2, p: Point2) -> tuple[float, float]:
    dx, dy = p.x - robot.x, p.y - robot.y
    c, s = math.cos(robot.theta), math.sin(robot.theta)
    depth = c * dx + s * dy
    right = s * dx - c * dy
    return right, depth


def camera_to_world(p_cam: Point2, robot: Pose2) -> Point2:
    """Rigid transform from the camera frame into the world frame."""
    c, s = math.cos(robot.theta), math.sin(robot.theta)
    return Point2(robot.x + p_cam.y * c + p_cam.x * s, robot.y + p_cam.y * s - p_cam.x * c)


def _segments_block(a: Point2, b: Point2, statics: Iterable[ObstacleShape]) -> bool:
    for o in statics:
        if isinstance(o, SegmentObstacle) and _segments_intersect(a, b, o.a, o.b):
            return True
    return False


def _segments_intersect(p1: Point2, p2: Point2, q1: Point2, q2: Point2) -> bool:
    def orient(a, b, c):
        return (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    return (d1 * d2 < 0) and (d3 * d4 < 0)


def project_human_to_detection(
    robot: Pose2,
    cam: CameraModel,
    human: Point2,
    human_radius: float = 0.3,
    statics: Sequence[ObstacleShape] = (),
    agent_id: str = "",
) -> DetectionBox | None:
    """Forward pinhole projection of a human disc into a detection box.

    Returns ``None`` when the human is outside the field of view, beyond
    ``max_depth`` or hidden behind a static segment.
    """
    x_cam, depth = _to_camera(robot, human)
    if depth <= 0 or depth > cam.max_depth:
        return None
    if abs(math.atan2(x_cam, depth)) > math.radians(cam.hfov) / 2:
        return None
    if _segments_block(robot.position, human, statics):
        return None
    center = cam.cx + cam.fy * x_cam / depth
    half = cam.fy * human_radius / depth
    return DetectionBox(center - half, center + half, depth, agent_id)


def detection_to_position(box: DetectionBox, cam: CameraModel) -> Point2:
    """Back-project a detection box to a camera-frame position (x right, y depth)."""
    if not box.depth > 0:
        raise ValueError("detection depth must be positive")
    d = box.depth
    x = (box.x_min + (box.x_max - box.x_min) / 2 - cam.cx) * d / cam.fy
    return Point2(x, d)


def detect_humans(
    robot: Pose2,
    cam: CameraModel,
    humans: Iterable[tuple[str, Point2]],
    statics: Sequence[ObstacleShape] = (),
    human_radius: float = 0.3,
    noise_std: float = 0.0,
    rng: np.random.Generator | None = None,
) -> list[tuple[str, Point2]]:
    """World-frame human positions as seen through the simulated camera."""
    out = []
    for hid, p in humans:
        box = project_human_to_detection(robot, cam, p, human_radius, statics, hid)
        if box is None:
            continue
        w = camera_to_world(detection_to_position(box, cam), robot)
        if noise_std > 0 and rng is not None:
            nx, ny = rng.normal(0.0, noise_std, size=2)
            w = Point2(w.x + nx, w.y + ny)
        out.append((hid, w))
    return out


def raycast_lidar(
    robot: Pose2,
    world_geometry: Sequence[ObstacleShape],
    n_beams: int = 360,
    max_range: float = 8.0,
) -> LidarScan:
    """Full-circle scan; beam 0 points along the robot heading."""
    if n_beams < 1:
        raise ValueError("n_beams must be >= 1")
    rel = 2 * math.pi * np.arange(n_beams) / n_beams
    ang = robot.theta + rel
    d = np.column_stack([np.cos(ang), np.sin(ang)])
    o = np.array([robot.x, robot.y])
    ranges = np.full(n_beams, max_range)

    for shape in world_geometry:
        if isinstance(shape, SegmentObstacle):
            a, b = shape.a.xy, shape.b.xy
            e = b - a
            denom = d[:, 0] * e[1] - d[:, 1] * e[0]
            ao = a - o
            with np.errstate(divide="ignore", invalid="ignore"):
                t = (ao[0] * e[1] - ao[1] * e[0]) / denom
                u = (ao[0] * d[:, 1] - ao[1] * d[:, 0]) / denom
            hit = (np.abs(denom) > 1e-12) & (t > 0) & (u >= 0) & (u <= 1)
            ranges = np.where(hit, np.minimum(ranges, t), ranges)
        elif isinstance(shape, CircleObstacle) and shape.radius > 0:
            oc = o - shape.center.xy
            b = d @ oc
            c = oc @ oc - shape.radius**2
            disc = b * b - c
            with np.errstate(invalid="ignore"):
                sq = np.sqrt(disc)
            t1 = -b - sq
            t2 = -b + sq
            t = np.where(t1 > 0, t1, t2)
            hit = (disc >= 0) & (t > 0)
            ranges = np.where(hit, np.minimum(ranges, t), ranges)
        elif isinstance(shape, (PointObstacle, CircleObstacle)):
            continue  # zero-area shapes are invisible to a beam
    return LidarScan(ranges, 0.0, float(rel[-1]), max_range)


def update_tracks(
    tracks: dict[str, AgentTrack],
    detections: Iterable[tuple[str, Point2]],
    now: float,
) -> dict[str, AgentTrack]:
    """Feed id-tagged detections into the track set and drop stale tracks."""
    for hid, p in detections:
        track = tracks.get(hid)
        if track is None:
            track = tracks[hid] = AgentTrack(hid)
        track.add(now, p)
    return {k: t for k, t in tracks.items() if now - t.last_seen <= STALE_AFTER}
