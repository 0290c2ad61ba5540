"""Geometry primitives, angle arithmetic and distance kernels."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

import numpy as np

TWO_PI = 2.0 * math.pi


def normalize_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    if not math.isfinite(a):
        raise ValueError(f"cannot normalize non-finite angle {a!r}")
    r = math.remainder(a, TWO_PI)
    if r <= -math.pi:
        r += TWO_PI
    return r


def wrap_angles(a):
    """Vectorised angle wrap for numpy arrays; result in [-pi, pi]."""
    return np.arctan2(np.sin(a), np.cos(a))


@dataclass(frozen=True)
class Point2:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite point ({self.x}, {self.y})")

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def norm(self) -> float:
        return math.hypot(self.x, self.y)


ORIGIN = Point2(0.0, 0.0)


@dataclass(frozen=True)
class Pose2:
    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite pose ({self.x}, {self.y})")
        object.__setattr__(self, "theta", normalize_angle(float(self.theta)))

    @property
    def position(self) -> Point2:
        return Point2(self.x, self.y)

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class Twist:
    v: float = 0.0
    omega: float = 0.0

    def clamped(self, v_max: float, omega_max: float, v_min: float | None = None) -> Twist:
        lo = -v_max if v_min is None else v_min
        return Twist(min(max(self.v, lo), v_max), min(max(self.omega, -omega_max), omega_max))


def pose_distance(a: Pose2 | Point2, b: Pose2 | Point2) -> float:
    """Euclidean distance on the xy plane; headings are ignored."""
    return math.hypot(a.x - b.x, a.y - b.y)


# --- obstacles -------------------------------------------------------------


@dataclass(frozen=True)
class PointObstacle:
    position: Point2
    velocity: Point2 = ORIGIN
    id: str = ""

    def at_time(self, t: float) -> PointObstacle:
        return PointObstacle(_advance(self.position, self.velocity, t), self.velocity, self.id)


@dataclass(frozen=True)
class CircleObstacle:
    center: Point2
    radius: float
    velocity: Point2 = ORIGIN
    id: str = ""

    def __post_init__(self):
        if not self.radius >= 0:
            raise ValueError(f"circle radius must be >= 0, got {self.radius}")

    @property
    def position(self) -> Point2:
        return self.center

    def at_time(self, t: float) -> CircleObstacle:
        return CircleObstacle(_advance(self.center, self.velocity, t), self.radius, self.velocity, self.id)


@dataclass(frozen=True)
class SegmentObstacle:
    a: Point2
    b: Point2
    velocity: Point2 = ORIGIN
    id: str = ""

    def __post_init__(self):
        if self.a == self.b:
            raise ValueError("segment endpoints must be distinct")

    @property
    def position(self) -> Point2:
        return Point2(0.5 * (self.a.x + self.b.x), 0.5 * (self.a.y + self.b.y))

    def at_time(self, t: float) -> SegmentObstacle:
        return SegmentObstacle(
            _advance(self.a, self.velocity, t), _advance(self.b, self.velocity, t), self.velocity, self.id
        )


ObstacleShape = Union[PointObstacle, CircleObstacle, SegmentObstacle]


def _advance(p: Point2, v: Point2, t: float) -> Point2:
    return Point2(p.x + v.x * t, p.y + v.y * t)


def is_dynamic(o: ObstacleShape) -> bool:
    return o.velocity.x != 0.0 or o.velocity.y != 0.0


def closest_point_on_segment(p: Point2, a: Point2, b: Point2) -> Point2:
    dx, dy = b.x - a.x, b.y - a.y
    u = ((p.x - a.x) * dx + (p.y - a.y) * dy) / (dx * dx + dy * dy)
    u = min(1.0, max(0.0, u))
    return Point2(a.x + u * dx, a.y + u * dy)


def dist_to_obstacle(p: Point2 | Pose2, o: ObstacleShape) -> float:
    """Distance from ``p`` to the boundary of ``o``; zero inside a circle."""
    if isinstance(o, PointObstacle):
        return math.hypot(p.x - o.position.x, p.y - o.position.y)
    if isinstance(o, CircleObstacle):
        return max(0.0, math.hypot(p.x - o.center.x, p.y - o.center.y) - o.radius)
    if isinstance(o, SegmentObstacle):
        q = closest_point_on_segment(Point2(p.x, p.y), o.a, o.b)
        return math.hypot(p.x - q.x, p.y - q.y)
    raise TypeError(f"unknown obstacle type {type(o).__name__}")


@dataclass
class ObstacleArrays:
    """Packed static geometry for vectorised distance queries.

    Point obstacles are stored as zero-radius circles.
    """

    centers: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    radii: np.ndarray = field(default_factory=lambda: np.zeros(0))
    seg_a: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    seg_b: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    @classmethod
    def from_shapes(cls, shapes: Iterable[ObstacleShape], t: float = 0.0) -> ObstacleArrays:
        centers, radii, sa, sb = [], [], [], []
        for o in shapes:
            if t:
                o = o.at_time(t)
            if isinstance(o, PointObstacle):
                centers.append((o.position.x, o.position.y))
                radii.append(0.0)
            elif isinstance(o, CircleObstacle):
                centers.append((o.center.x, o.center.y))
                radii.append(o.radius)
            elif isinstance(o, SegmentObstacle):
                sa.append((o.a.x, o.a.y))
                sb.append((o.b.x, o.b.y))
            else:
                raise TypeError(f"unknown obstacle type {type(o).__name__}")
        return cls(
            np.array(centers, dtype=float).reshape(-1, 2),
            np.array(radii, dtype=float),
            np.array(sa, dtype=float).reshape(-1, 2),
            np.array(sb, dtype=float).reshape(-1, 2),
        )

    def __len__(self) -> int:
        return len(self.radii) + len(self.seg_a)

    def distances(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-point distance to every obstacle and the unit direction away from it.

        Returns ``(d, n)`` with shapes ``(P, M)`` and ``(P, M, 2)``. Circle
        distances are clamped at zero inside, matching :func:`dist_to_obstacle`.
        """
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        parts_d, parts_n = [], []
        if len(self.radii):
            diff = pts[:, None, :] - self.centers[None, :, :]
            r = np.hypot(diff[..., 0], diff[..., 1])
            parts_d.append(np.maximum(0.0, r - self.radii[None, :]))
            parts_n.append(diff / np.maximum(r, 1e-12)[..., None])
        if len(self.seg_a):
            ab = self.seg_b - self.seg_a
            ap = pts[:, None, :] - self.seg_a[None, :, :]
            u = np.clip(np.einsum("pmk,mk->pm", ap, ab) / np.einsum("mk,mk->m", ab, ab), 0.0, 1.0)
            q = self.seg_a[None, :, :] + u[..., None] * ab[None, :, :]
            diff = pts[:, None, :] - q
            r = np.hypot(diff[..., 0], diff[..., 1])
            parts_d.append(r)
            parts_n.append(diff / np.maximum(r, 1e-12)[..., None])
        if not parts_d:
            return np.zeros((len(pts), 0)), np.zeros((len(pts), 0, 2))
        return np.concatenate(parts_d, axis=1), np.concatenate(parts_n, axis=1)

    def nearest(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Distance to the nearest obstacle (``inf`` if none) and its gradient."""
        d, n = self.distances(pts)
        if d.shape[1] == 0:
            return np.full(d.shape[0], np.inf), np.zeros((d.shape[0], 2))
        j = np.argmin(d, axis=1)
        rows = np.arange(d.shape[0])
        return d[rows, j], n[rows, j]


# --- timed paths -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TimedBand:
    """Poses interleaved with time intervals; the TEB decision variable."""

    x: np.ndarray
    y: np.ndarray
    theta: np.ndarray
    dts: np.ndarray

    def __post_init__(self):
        n = len(self.x)
        if n < 2:
            raise ValueError("a band needs at least two poses")
        if len(self.y) != n or len(self.theta) != n or len(self.dts) != n - 1:
            raise ValueError("inconsistent band array lengths")
        for name in ("x", "y", "theta", "dts"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            raise ValueError("non-finite band pose")
        if np.any(self.dts <= 0):
            raise ValueError("band time intervals must be positive")

    def __eq__(self, other) -> bool:
        if not isinstance(other, TimedBand):
            return NotImplemented
        return all(np.array_equal(getattr(self, f), getattr(other, f)) for f in ("x", "y", "theta", "dts"))

    __hash__ = None

    @classmethod
    def from_poses(cls, poses: Sequence[Pose2], dts: Sequence[float]) -> TimedBand:
        return cls(
            np.array([p.x for p in poses]),
            np.array([p.y for p in poses]),
            np.array([p.theta for p in poses]),
            np.asarray(dts, dtype=float),
        )

    @property
    def n(self) -> int:
        return len(self.x)

    @property
    def poses(self) -> list[Pose2]:
        return [Pose2(float(a), float(b), float(c)) for a, b, c in zip(self.x, self.y, self.theta)]

    @property
    def xy(self) -> np.ndarray:
        return np.column_stack([self.x, self.y])

    def times(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.dts)])

    def timed_samples(self) -> tuple[np.ndarray, np.ndarray]:
        return self.times(), self.xy

    def path_length(self) -> float:
        return float(np.sum(np.hypot(np.diff(self.x), np.diff(self.y))))

    def duration(self) -> float:
        return float(np.sum(self.dts))


def interpolate_samples(times: np.ndarray, pts: np.ndarray, t):
    """Piecewise-linear position and velocity at time(s) ``t``, clamped at both ends.

    Returns ``(pos, vel)``; ``vel`` is the slope of the bracketing segment and
    zero outside the sampled interval.
    """
    times = np.asarray(times, dtype=float)
    pts = np.asarray(pts, dtype=float)
    t = np.asarray(t, dtype=float)
    scalar = t.ndim == 0
    t = np.atleast_1d(t)
    if len(times) == 1:
        pos = np.repeat(pts[:1], len(t), axis=0)
        vel = np.zeros_like(pos)
    else:
        # np.minimum/np.maximum instead of np.clip: much cheaper on short arrays
        i = np.minimum(np.maximum(np.searchsorted(times, t, side="right") - 1, 0), len(times) - 2)
        t0, t1 = times[i], times[i + 1]
        slope = (pts[i + 1] - pts[i]) / (t1 - t0)[:, None]
        inside = (t >= times[0]) & (t < times[-1])
        tc = np.minimum(np.maximum(t, times[0]), times[-1])
        pos = pts[i] + slope * (tc - t0)[:, None]
        # exact samples at or beyond the ends
        pos[t <= times[0]] = pts[0]
        pos[t >= times[-1]] = pts[-1]
        vel = np.where(inside[:, None], slope, 0.0)
    if scalar:
        return pos[0], vel[0]
    return pos, vel


def interpolate_timed(path, t: float) -> Point2:
    """Position on a timed path (band or prediction) at time ``t``."""
    if t < 0 or not math.isfinite(t):
        raise ValueError(f"time must be finite and >= 0, got {t}")
    times, pts = path.timed_samples()
    if len(times) == 0:
        raise ValueError("cannot interpolate an empty path")
    pos, _ = interpolate_samples(times, pts, t)
    return Point2(float(pos[0]), float(pos[1]))


def unicycle_step(x, y, theta, v, omega, dt):
    """One forward-Euler step of the unicycle model (scalars or arrays).

    The heading is returned unwrapped; callers normalise it.
    """
    return x + v * np.cos(theta) * dt, y + v * np.sin(theta) * dt, theta + omega * dt
