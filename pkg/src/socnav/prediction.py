"""Fixed-horizon trajectory predictors.

Every predictor consumes up to eight observed positions on a 0.5 s grid and
emits exactly twelve future positions, 0.5 s apart (6 s horizon).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import ObstacleArrays, ObstacleShape, Point2
from .perception import AgentTrack, SAMPLE_PERIOD

N_PRED = 12
STEP = SAMPLE_PERIOD
HORIZON = N_PRED * STEP
V_HUMAN_MAX = 2.0
ROBOT_ID = "robot"


class InsufficientHistory(ValueError):
    pass


@dataclass(frozen=True)
class InteractionParams:
    """Social-force rollout gains."""

    a: float = 2.0  # m/s^2
    b: float = 0.35  # m
    agent_radius: float = 0.6  # summed radii of an agent pair
    static_radius: float = 0.3
    static_gain: float = 2.0
    v_max: float = V_HUMAN_MAX

    def __post_init__(self):
        for name in ("a", "b", "agent_radius", "static_radius", "static_gain", "v_max"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.b <= 0:
            raise ValueError("b must be positive")


@dataclass(frozen=True)
class PredictorKind:
    name: str = "interaction"  # or "constant_velocity"
    params: InteractionParams = InteractionParams()

    def __post_init__(self):
        if self.name not in ("interaction", "constant_velocity"):
            raise ValueError(f"unknown predictor kind {self.name!r}")


CONSTANT_VELOCITY = PredictorKind("constant_velocity")
INTERACTION = PredictorKind("interaction")


@dataclass(frozen=True)
class PredictedTrajectory:
    agent_id: str
    t0: float
    origin: Point2
    points: tuple[Point2, ...]

    def __post_init__(self):
        if len(self.points) != N_PRED:
            raise ValueError(f"a prediction has exactly {N_PRED} points")

    @property
    def times(self) -> np.ndarray:
        return self.t0 + STEP * np.arange(N_PRED + 1)

    def array(self) -> np.ndarray:
        """Origin followed by the twelve predicted points, shape (13, 2)."""
        return np.array([(self.origin.x, self.origin.y)] + [(p.x, p.y) for p in self.points])

    def timed_samples(self) -> tuple[np.ndarray, np.ndarray]:
        return self.times, self.array()


def fit_velocity(track: AgentTrack) -> np.ndarray:
    """Least-squares velocity over the track history."""
    if len(track.history) < 2:
        raise InsufficientHistory(f"insufficient history for track {track.id!r}")
    t = track.times
    p = track.positions
    tc = t - t.mean()
    return (tc @ (p - p.mean(axis=0))) / (tc @ tc)


def clamp_speed(v: np.ndarray, v_max: float) -> np.ndarray:
    s = np.hypot(v[..., 0], v[..., 1])
    scale = np.where(s > v_max, v_max / np.maximum(s, 1e-300), 1.0)
    return v * scale[..., None]


def _to_prediction(agent_id: str, t0: float, origin: np.ndarray, pts: np.ndarray) -> PredictedTrajectory:
    return PredictedTrajectory(
        agent_id,
        t0,
        Point2(float(origin[0]), float(origin[1])),
        tuple(Point2(float(x), float(y)) for x, y in pts),
    )


def predict_constant_velocity(track: AgentTrack, v_max: float = V_HUMAN_MAX) -> PredictedTrajectory:
    v = clamp_speed(fit_velocity(track), v_max)
    p = track.positions[-1].copy()
    out = np.empty((N_PRED, 2))
    for k in range(N_PRED):
        p = p + v * STEP
        out[k] = p
    return _to_prediction(track.id, track.last_time, track.positions[-1], out)


def interaction_force(pos: np.ndarray, statics: ObstacleArrays, params: InteractionParams) -> np.ndarray:
    """Exponential repulsion on every agent from the others and from static geometry."""
    n = len(pos)
    force = np.zeros((n, 2))
    if n > 1:
        diff = pos[:, None, :] - pos[None, :, :]
        d = np.hypot(diff[..., 0], diff[..., 1])
        np.fill_diagonal(d, np.inf)
        mag = params.a * np.exp((params.agent_radius - d) / params.b)
        unit = diff / np.where(np.isfinite(d), np.maximum(d, 1e-9), 1.0)[..., None]
        force = force + np.sum(mag[..., None] * unit, axis=1)
    if len(statics):
        ds, ns = statics.distances(pos)
        mag = params.static_gain * np.exp((params.static_radius - ds) / params.b)
        force = force + np.sum(mag[..., None] * ns, axis=1)
    return force


def _rollout(
    starts: np.ndarray,
    v_pref: np.ndarray,
    statics: ObstacleArrays,
    params: InteractionParams,
) -> np.ndarray:
    """Joint forward-Euler rollout of all agents; returns (A, 12, 2)."""
    pos = starts.copy()
    out = np.empty((len(starts), N_PRED, 2))
    for k in range(N_PRED):
        force = interaction_force(pos, statics, params)
        v = clamp_speed(v_pref + force * STEP, params.v_max)
        pos = pos + v * STEP
        out[:, k] = pos
    return out


def _aligned_starts(tracks: Sequence[AgentTrack], t_ref: float, v_max: float):
    v = np.array([fit_velocity(tr) for tr in tracks]).reshape(-1, 2)
    p = np.array([tr.positions[-1] for tr in tracks]).reshape(-1, 2)
    lag = np.array([t_ref - tr.last_time for tr in tracks])
    # tracks sampled before the reference time are dead-reckoned forward
    p = np.where(lag[:, None] > 0, p + clamp_speed(v, v_max) * lag[:, None], p)
    return p, v


def predict_interaction(
    track: AgentTrack,
    neighbors: Sequence[AgentTrack] = (),
    robot_track: AgentTrack | None = None,
    statics: Sequence[ObstacleShape] = (),
    params: InteractionParams = InteractionParams(),
) -> PredictedTrajectory:
    """Social-force rollout standing in for a learned interaction-aware predictor.

    All agents (focal, neighbours, robot) are rolled out concurrently, each
    following its fitted velocity plus exponential repulsion from the others
    and from static geometry. With zero gains the result equals
    :func:`predict_constant_velocity` bit for bit.
    """
    others = [n for n in neighbors if len(n.history) >= 2 and n.id != track.id]
    if robot_track is not None and len(robot_track.history) >= 2:
        others.append(robot_track)
    preds = _joint_predict([track] + others, statics, params)
    return preds[0]


def _joint_predict(
    tracks: Sequence[AgentTrack],
    statics: Sequence[ObstacleShape] | ObstacleArrays,
    params: InteractionParams,
) -> list[PredictedTrajectory]:
    t_ref = max(tr.last_time for tr in tracks)
    starts, v_pref = _aligned_starts(tracks, t_ref, params.v_max)
    arrs = statics if isinstance(statics, ObstacleArrays) else ObstacleArrays.from_shapes(statics)
    if params.static_gain == 0:
        arrs = ObstacleArrays()
    rolled = _rollout(starts, v_pref, arrs, params)
    return [_to_prediction(tr.id, t_ref, starts[i], rolled[i]) for i, tr in enumerate(tracks)]


def predict_all(
    tracks: dict[str, AgentTrack] | Sequence[AgentTrack],
    robot_track: AgentTrack | None,
    kind: PredictorKind = INTERACTION,
    statics: Sequence[ObstacleShape] = (),
) -> tuple[list[PredictedTrajectory], list[str]]:
    """Predict every track with enough history, plus the robot itself.

    Returns ``(predictions, skipped_ids)``; predictions are ordered by agent id
    with the robot's own prediction last.
    """
    items = tracks.values() if isinstance(tracks, dict) else tracks
    humans = sorted((t for t in items if t.id != ROBOT_ID), key=lambda t: t.id)
    usable = [t for t in humans if len(t.history) >= 2]
    skipped = [t.id for t in humans if len(t.history) < 2]
    robot_ok = robot_track is not None and len(robot_track.history) >= 2
    if robot_track is not None and not robot_ok:
        skipped.append(robot_track.id)
    everyone = usable + ([robot_track] if robot_ok else [])
    if not everyone:
        return [], skipped
    if kind.name == "constant_velocity":
        return [predict_constant_velocity(t, kind.params.v_max) for t in everyone], skipped
    return _joint_predict(everyone, statics, kind.params), skipped
