import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import gradcheck
from socnav.core import CircleObstacle, Point2, Pose2, TimedBand, Twist, interpolate_timed, pose_distance
from socnav.perception import AgentTrack
from socnav.mpteb import (
    EMPTY_CONTEXT,
    INTERACTION,
    PRIORITY_RANGE,
    SocialContext,
    SocialParams,
    build_context,
    cost_dynamic_obstacle,
    cost_human_like,
    cost_priority,
    objective_mp,
    plan_mpteb,
    side_indicator,
)
from socnav.prediction import N_PRED, PredictedTrajectory
from socnav.teb import TebParams, objective


def line_prediction(agent_id, start, vel, t0=0.0):
    pts = tuple(Point2(start[0] + vel[0] * 0.5 * k, start[1] + vel[1] * 0.5 * k) for k in range(1, N_PRED + 1))
    return PredictedTrajectory(agent_id, t0, Point2(*start), pts)


def make_track(tid, start, vel, n=8, t_end=4.0):
    tr = AgentTrack(tid)
    for k in range(n):
        t = t_end - 0.5 * (n - 1 - k)
        tr.add(t, Point2(start[0] + vel[0] * (t - t_end), start[1] + vel[1] * (t - t_end)))
    return tr


# --- single-pose costs -----------------------------------------------------------


def test_human_like_examples():
    sp = SocialParams(w1=0.5)
    ctx = SocialContext(robot_self_prediction=line_prediction("robot", (0, 0), (1, 0)))
    assert cost_human_like(Pose2(1.0, 0.0, 0.0), 1.0, ctx, sp) == 0.0
    assert cost_human_like(Pose2(1.0, 1.0, 0.0), 1.0, ctx, sp) == pytest.approx(0.5)
    assert cost_human_like(Pose2(1.0, 1.0, 0.0), 1.0, EMPTY_CONTEXT, sp) == 0.0


def test_dynamic_obstacle_examples():
    sp = SocialParams(w2=5.0, d_social=0.8)
    ctx = SocialContext(human_predictions=(line_prediction("h", (2.0, 0.3), (0, 0)),))
    assert cost_dynamic_obstacle(Pose2(2.0, 0.0, 0.0), 1.0, ctx, sp) == pytest.approx(1.25)
    assert cost_dynamic_obstacle(Pose2(0.0, 0.0, 0.0), 1.0, ctx, sp) == 0.0
    # an untracked moving shape is taken at p + v t, a still one at p
    moving = SocialContext(dynamic_obstacles=(CircleObstacle(Point2(1.0, 0.0), 0.3, velocity=Point2(0.5, 0.0)),))
    assert cost_dynamic_obstacle(Pose2(2.0, 0.3, 0.0), 2.0, moving, sp) == pytest.approx(1.25)
    still = SocialContext(dynamic_obstacles=(CircleObstacle(Point2(1.0, 0.0), 0.3),))
    assert cost_dynamic_obstacle(Pose2(1.0, 0.3, 0.0), 5.0, still, sp) == pytest.approx(1.25)


def test_side_indicator_examples():
    assert side_indicator(Pose2(0, 0, 0), Point2(1, 0.5)) == 0.5
    assert side_indicator(Pose2(0, 0, math.pi / 2), Point2(1, 0)) == pytest.approx(-1.0)
    assert side_indicator(Pose2(1, 1, math.pi / 4), Point2(3, 3)) == pytest.approx(0.0, abs=1e-15)


def test_priority_examples():
    sp = SocialParams()
    left = SocialContext(human_predictions=(line_prediction("h", (0.0, 0.5), (0, 0)),))
    assert cost_priority(Pose2(0, 0, 0), 0.5, left, sp) == pytest.approx(-0.5)
    far = SocialContext(human_predictions=(line_prediction("h", (0.0, 3.0), (0, 0)),))
    assert cost_priority(Pose2(0, 0, 0), 0.5, far, sp) == 0.0
    # right-hand humans are penalised, and the raw value is clamped
    right = SocialContext(human_predictions=(line_prediction("h", (0.5, -1.9), (0, 0)),))
    assert cost_priority(Pose2(0, 0, 0), 0.5, right, SocialParams(pri_saturation=1.0)) == 1.0
    assert PRIORITY_RANGE == 2.0


def _rot(p, phi, t):
    c, s = math.cos(phi), math.sin(phi)
    return c * p[0] - s * p[1] + t[0], s * p[0] + c * p[1] + t[1]


@settings(max_examples=200)
@given(
    st.floats(-5, 5), st.floats(-5, 5), st.floats(-math.pi, math.pi),
    st.floats(-5, 5), st.floats(-5, 5),
    st.floats(-math.pi, math.pi), st.floats(-20, 20), st.floats(-20, 20),
)
def test_side_indicator_rigid_invariance(rx, ry, rth, ox, oy, phi, tx, ty):
    base = side_indicator(Pose2(rx, ry, rth), Point2(ox, oy))
    r2 = _rot((rx, ry), phi, (tx, ty))
    o2 = _rot((ox, oy), phi, (tx, ty))
    moved = side_indicator(Pose2(*r2, rth + phi), Point2(*o2))
    assert abs(moved - base) < 1e-12


# --- objective -------------------------------------------------------------------


def _oracle_social(band: TimedBand, ctx: SocialContext, sp: SocialParams) -> float:
    """Independent per-pose summation with np.interp on the prediction samples."""

    def at(pred, t):
        ts = np.asarray(pred.times) - ctx.now
        pts = pred.array()
        tq = max(t, ts[0])
        return np.array([np.interp(tq, ts, pts[:, 0]), np.interp(tq, ts, pts[:, 1])])

    total = 0.0
    times = np.concatenate([[0.0], np.cumsum(band.dts)])
    for k in range(1, band.n - 1):
        p = np.array([band.x[k], band.y[k]])
        th, t = band.theta[k], times[k]
        if ctx.robot_self_prediction is not None:
            total += sp.w1 * np.linalg.norm(p - at(ctx.robot_self_prediction, t))
        for pred in ctx.human_predictions:
            h = at(pred, t)
            total += sp.w2 * max(0.0, sp.d_social - np.linalg.norm(p - h)) ** 2
            if np.linalg.norm(h - p) <= PRIORITY_RANGE:
                e = math.cos(th) * (h[1] - p[1]) - math.sin(th) * (h[0] - p[0])
                total -= min(max(e, -sp.pri_saturation), sp.pri_saturation)
        for o in ctx.dynamic_obstacles:
            q = np.array([o.position.x + o.velocity.x * t, o.position.y + o.velocity.y * t])
            total += sp.w2 * max(0.0, sp.d_social - np.linalg.norm(p - q)) ** 2
    return sp.delta_mp * total


def test_objective_matches_term_oracle():
    rng = np.random.default_rng(11)
    params = TebParams()
    for _ in range(100):
        band = gradcheck.random_band(rng)
        ctx = gradcheck.random_context(rng, band)
        sp = SocialParams(w1=rng.uniform(0, 1), w2=rng.uniform(0, 10), delta_mp=rng.uniform(0.1, 2))
        got = objective_mp(band, (), ctx, params, sp) - objective(band, (), params)
        assert got == pytest.approx(_oracle_social(band, ctx, sp), rel=1e-9, abs=1e-9)


def test_empty_context_and_zero_delta_reduce_exactly():
    rng = np.random.default_rng(12)
    for _ in range(100):
        band = gradcheck.random_band(rng)
        obs = gradcheck.random_obstacles(rng, band)
        tw = Twist(rng.uniform(0, 1), rng.uniform(-0.5, 0.5))
        base = objective(band, obs, TebParams(), tw)
        assert objective_mp(band, obs, EMPTY_CONTEXT, TebParams(), SocialParams(), tw) == base
        ctx = gradcheck.random_context(rng, band)
        assert objective_mp(band, obs, ctx, TebParams(), SocialParams(delta_mp=0.0), tw) == base


def test_objective_monotone_in_w2():
    band = TimedBand(np.linspace(0, 2, 5), np.zeros(5), np.zeros(5), np.full(4, 0.5))
    ctx = SocialContext(human_predictions=(line_prediction("h", (1.0, 0.3), (0, 0)),))
    values = [objective_mp(band, (), ctx, TebParams(), SocialParams(w2=w)) for w in np.linspace(0, 20, 21)]
    assert np.all(np.diff(values) > 0)


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1), st.floats(0, 10), st.floats(0, 10))
def test_objective_non_decreasing_in_w2(seed, wa, wb):
    rng = np.random.default_rng(seed)
    band = gradcheck.random_band(rng)
    ctx = gradcheck.random_context(rng, band)
    lo, hi = sorted((wa, wb))
    a = objective_mp(band, (), ctx, TebParams(), SocialParams(w2=lo))
    b = objective_mp(band, (), ctx, TebParams(), SocialParams(w2=hi))
    assert b >= a - 1e-12 * max(1.0, abs(a))


def test_social_terms_match_finite_differences():
    rng = np.random.default_rng(13)
    worst = {"human_like": 0.0, "dynamic_obstacle": 0.0, "priority": 0.0}
    for _ in range(100):
        for name, err in gradcheck.social_term_errors(rng).items():
            worst[name] = max(worst[name], err)
    assert max(worst.values()) < gradcheck.REL_TOL, worst


# --- planner --------------------------------------------------------------------


def test_plan_empty_world_heads_straight_at_full_speed():
    res = plan_mpteb(Pose2(0, 0, 0), Pose2(8, 0, 0), {}, [], start_twist=Twist(1.0, 0.0))
    assert res.flag == "ok"
    assert res.twist.v == pytest.approx(TebParams().v_max, rel=1e-3)
    assert abs(res.twist.omega) < 1e-3


def test_plan_head_on_keeps_human_on_left():
    tracks = {"h": make_track("h", (4.0, 0.0), (-0.8, 0.0))}
    res = plan_mpteb(
        Pose2(0, 0, 0), Pose2(8, 0, 0), tracks, [],
        now=4.0, humans_now=[("h", Point2(4.0, 0.0))], start_twist=Twist(0.8, 0.0),
    )
    ctx, _ = build_context(tracks, None, [], INTERACTION, 4.0)
    pred = ctx.human_predictions[0]
    band = res.candidate.band
    pairs = [(pose, interpolate_timed(pred, 4.0 + t)) for pose, t in zip(band.poses, band.times())]
    pose, human = min(pairs, key=lambda ph: pose_distance(*ph))
    assert side_indicator(pose, human) > 0
    assert res.candidate.homotopy_signature == (("h", "left"),)


def test_plan_goal_reached():
    res = plan_mpteb(Pose2(7.9, 0.05, 0.0), Pose2(8, 0, 0), {}, [])
    assert res.flag == "arrived" and res.twist == Twist() and res.candidate is None


def test_plan_blocked_when_already_touching():
    res = plan_mpteb(Pose2(0, 0, 0), Pose2(8, 0, 0), {}, [], humans_now=[("h", Point2(0.3, 0.0))])
    assert res.flag == "blocked" and res.twist == Twist()


def test_plan_is_deterministic():
    tracks = {"a": make_track("a", (4.0, 0.4), (-0.8, 0.0)), "b": make_track("b", (3.0, -2.0), (0.0, 0.7))}
    kwargs = dict(now=4.0, humans_now=[("a", Point2(4.0, 0.4)), ("b", Point2(3.0, -2.0))], start_twist=Twist(0.5, 0.0))
    a = plan_mpteb(Pose2(0, 0, 0), Pose2(8, 0, 0), tracks, [], **kwargs)
    b = plan_mpteb(Pose2(0, 0, 0), Pose2(8, 0, 0), tracks, [], **kwargs)
    assert a.twist == b.twist
    assert a.candidate.band == b.candidate.band


def test_social_params_validation():
    with pytest.raises(ValueError):
        SocialParams(w2=-1.0)
