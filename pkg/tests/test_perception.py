import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from socnav.core import CircleObstacle, Point2, Pose2, SegmentObstacle
from socnav.perception import (
    HISTORY_LEN,
    AgentTrack,
    CameraModel,
    DetectionBox,
    camera_to_world,
    detect_humans,
    detection_to_position,
    project_human_to_detection,
    raycast_lidar,
    update_tracks,
)

CAM = CameraModel()


def _random_in_fov(rng, cam, n):
    half = math.radians(cam.hfov) / 2
    out = []
    while len(out) < n:
        robot = Pose2(*rng.uniform(-5, 5, 2), rng.uniform(-math.pi, math.pi))
        bearing = rng.uniform(-half * 0.99, half * 0.99)
        depth = rng.uniform(0.3, cam.max_depth)
        # bearing measured from the heading, positive to the right
        right, fwd = depth * math.tan(bearing), depth
        out.append((robot, camera_to_world(Point2(right, fwd), robot)))
    return out


def test_detection_examples():
    cam = CameraModel(cx=320, fy=600)
    assert detection_to_position(DetectionBox(300, 340, 2.0), cam) == Point2(0.0, 2.0)
    p = detection_to_position(DetectionBox(400, 440, 2.0), cam)
    assert p.x == pytest.approx(1 / 3) and p.y == 2.0
    with pytest.raises(ValueError):
        detection_to_position(DetectionBox(400, 440, 0.0), cam)


def test_projection_dead_ahead_and_behind():
    robot = Pose2(0, 0, 0)
    box = project_human_to_detection(robot, CAM, Point2(2.0, 0.0))
    assert (box.x_min + box.x_max) / 2 == pytest.approx(CAM.cx)
    assert box.depth == pytest.approx(2.0)
    assert project_human_to_detection(robot, CAM, Point2(-2.0, 0.0)) is None
    assert project_human_to_detection(robot, CAM, Point2(CAM.max_depth + 0.5, 0.0)) is None


def test_projection_off_axis_matches_pinhole():
    cam = CameraModel(cx=320, fy=600)
    robot = Pose2(0, 0, 0)
    # 3 m away at 30 degrees to the right of the heading
    b = math.radians(30)
    human = Point2(3 * math.cos(b), -3 * math.sin(b))
    box = project_human_to_detection(robot, cam, human)
    depth = 3 * math.cos(b)
    assert box.depth == pytest.approx(depth)
    assert (box.x_min + box.x_max) / 2 == pytest.approx(cam.cx + cam.fy * math.tan(b))


def test_occluded_human_is_not_detected():
    wall = SegmentObstacle(Point2(1.0, -1.0), Point2(1.0, 1.0))
    assert project_human_to_detection(Pose2(0, 0, 0), CAM, Point2(2, 0), statics=[wall]) is None


def test_camera_to_world_examples():
    assert camera_to_world(Point2(0, 2), Pose2(0, 0, 0)) == Point2(2, 0)
    p = camera_to_world(Point2(0, 2), Pose2(1, 1, math.pi / 2))
    assert p.x == pytest.approx(1) and p.y == pytest.approx(3)
    assert camera_to_world(Point2(0, 0), Pose2(4, -2, 1.0)) == Point2(4, -2)


def test_round_trip_1000_humans():
    rng = np.random.default_rng(3)
    worst = 0.0
    for robot, human in _random_in_fov(rng, CAM, 1000):
        box = project_human_to_detection(robot, CAM, human)
        assert box is not None
        back = camera_to_world(detection_to_position(box, CAM), robot)
        worst = max(worst, math.hypot(back.x - human.x, back.y - human.y))
    assert worst < 1e-9


def test_detect_humans_returns_world_positions():
    robot = Pose2(1, 1, 0.3)
    humans = [("a", Point2(3, 1.5)), ("b", Point2(-3, 1))]
    seen = detect_humans(robot, CAM, humans)
    assert [h for h, _ in seen] == ["a"]
    assert seen[0][1].x == pytest.approx(3) and seen[0][1].y == pytest.approx(1.5)


def test_lidar_examples():
    robot = Pose2(0, 0, 0)
    assert np.all(raycast_lidar(robot, [], 16).ranges == 8.0)
    wall = SegmentObstacle(Point2(3, -1), Point2(3, 1))
    assert raycast_lidar(robot, [wall], 4).ranges[0] == pytest.approx(3.0)
    with pytest.raises(ValueError):
        raycast_lidar(robot, [], 0)


def test_lidar_circle_matches_quadratic():
    c, r = Point2(2.0, 0.7), 0.5
    scan = raycast_lidar(Pose2(0, 0, 0), [CircleObstacle(c, r)], 720)
    for ang, got in zip(scan.angles, scan.ranges):
        dx, dy = math.cos(ang), math.sin(ang)
        b = dx * c.x + dy * c.y
        disc = b * b - (c.x**2 + c.y**2 - r * r)
        expected = b - math.sqrt(disc) if disc >= 0 and b - math.sqrt(disc) > 0 else 8.0
        assert got == pytest.approx(min(expected, 8.0), abs=1e-9)


@given(st.floats(1.0, 7.0), st.floats(0.1, 0.9))
def test_lidar_monotone_as_obstacle_approaches(dist, shift):
    far = raycast_lidar(Pose2(0, 0, 0), [CircleObstacle(Point2(dist, 0.0), 0.3)], 8).ranges[0]
    near = raycast_lidar(Pose2(0, 0, 0), [CircleObstacle(Point2(dist - shift, 0.0), 0.3)], 8).ranges[0]
    assert near <= far


def test_track_ring_buffer_and_resampling():
    tracks = {}
    for k in range(9):
        tracks = update_tracks(tracks, [("h", Point2(k, 0))], 0.5 * k)
    assert len(tracks["h"].history) == HISTORY_LEN
    assert tracks["h"].positions[0, 0] == 1.0
    t2 = update_tracks({}, [("h", Point2(0, 0))], 0.0)
    t2 = update_tracks(t2, [("h", Point2(0.1, 0))], 0.2)
    assert len(t2["h"].history) == 1


def test_stale_track_removed():
    tracks = update_tracks({}, [("h", Point2(0, 0))], 0.0)
    tracks = update_tracks(tracks, [], 3.5)
    assert "h" not in tracks


@given(st.lists(st.floats(0.05, 1.2), min_size=1, max_size=40))
def test_track_history_on_grid(gaps):
    track, t = AgentTrack("h"), 0.0
    for g in gaps:
        t += g
        track.add(t, Point2(t, 0.0))
        assert len(track.history) <= HISTORY_LEN
        d = np.diff(track.times)
        assert np.all(np.abs(d - 0.5) <= 1e-6)
