"""Timed Elastic Band: residual terms, band optimisation and homotopy candidates.

Internally a band with ``N`` poses is laid out as the full variable vector
``[x_0..x_{N-1}, y_0..y_{N-1}, theta_0..theta_{N-1}, dt_0..dt_{N-2}]``. Every
term returns its residual vector together with a dense Jacobian over that
full vector; the optimiser drops the columns of the two anchored poses.

Inequality constraints are one-sided quadratic penalties, so the objective is
the squared norm of the stacked weighted residuals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product
from typing import Protocol, Sequence

import numpy as np

from . import _kernels
from .core import (
    ObstacleArrays,
    ObstacleShape,
    Pose2,
    TimedBand,
    Twist,
    dist_to_obstacle,
    interpolate_samples,
    normalize_angle,
    wrap_angles,
)

DT_FLOOR = 1e-3
_DT_LOW = float(np.nextafter(DT_FLOOR, 1.0))
_EPS = 1e-9
_NO_H = np.zeros((0, 0))


@dataclass(frozen=True)
class TebParams:
    dt_ref: float = 0.3
    dt_hysteresis: float = 0.1
    dt_max: float = 10.0
    d_min: float = 0.5
    v_max: float = 1.0
    omega_max: float = 0.5
    a_max: float = 0.5
    alpha_max: float = 0.5
    delta_h: float = 1000.0
    delta_v: float = 2.0
    delta_o: float = 50.0
    delta_alpha: float = 1.0
    n_outer: int = 4
    n_inner: int = 6
    max_poses: int = 100
    robot_radius: float = 0.25
    k_homotopy: int = 3
    crossing_width: float = 1.0
    feasibility_horizon: float = 10.0  # seconds of band checked segment by segment

    def __post_init__(self):
        for f in self.__dataclass_fields__:
            if not getattr(self, f) > 0:
                raise ValueError(f"{f} must be positive, got {getattr(self, f)}")
        if self.dt_hysteresis >= self.dt_ref:
            raise ValueError("dt_hysteresis must be smaller than dt_ref")
        if self.max_poses < 2:
            raise ValueError("max_poses must be >= 2")


@dataclass(frozen=True)
class DynamicObstacle:
    """An obstacle whose position is known as a function of band time.

    ``times`` start at 0 (the planning instant); positions are held constant
    beyond the last sample. A single sample describes a static obstacle.
    """

    id: str
    times: np.ndarray
    positions: np.ndarray
    radius: float = 0.0

    def at(self, t):
        return interpolate_samples(self.times, self.positions, t)[0]


@dataclass(frozen=True)
class BandCandidate:
    band: TimedBand
    homotopy_signature: tuple[tuple[str, str], ...]
    cost: float
    diagnostics: dict = field(default_factory=dict, compare=False)


class ExtraCost(Protocol):
    """Additional costs evaluated per band pose at its cumulative time."""

    weight: float

    def evaluate(self, x, y, th, t, jac: bool) -> "ExtraTerms": ...


@dataclass
class ExtraTerms:
    """Residual rows plus a free-form scalar, both functions of (x_k, y_k, theta_k, t_k).

    ``residuals`` enter the objective squared; ``scalar`` enters linearly.
    """

    residuals: np.ndarray
    res_pose: np.ndarray
    res_grad: np.ndarray | None  # (R, 4): d/d(x_k, y_k, theta_k, t_k)
    scalar: float
    scalar_grad: np.ndarray | None  # (N, 4)


# --- variable layout ---------------------------------------------------------


def _cols(n: int):
    return 0, n, 2 * n, 3 * n  # x, y, theta, dt offsets


def n_vars(n: int) -> int:
    return 4 * n - 1


def pack(band: TimedBand) -> np.ndarray:
    return np.concatenate([band.x, band.y, band.theta, band.dts])


def unpack(z: np.ndarray, n: int):
    return z[:n], z[n : 2 * n], z[2 * n : 3 * n], z[3 * n :]


def free_columns(n: int) -> np.ndarray:
    ix, iy, ith, idt = _cols(n)
    interior = np.arange(1, n - 1)
    return np.concatenate([ix + interior, iy + interior, ith + interior, idt + np.arange(n - 1)])


def _time_map(n: int) -> np.ndarray:
    """T[k, i] = 1 iff dt_i contributes to the time of pose k."""
    return np.tril(np.ones((n, n - 1)), -1)


# --- residual terms ----------------------------------------------------------


def term_time(x, y, th, dt, params: TebParams, jac=True):
    n = len(x)
    r = dt.copy()
    if not jac:
        return r, None
    J = np.zeros((n - 1, n_vars(n)))
    J[np.arange(n - 1), 3 * n + np.arange(n - 1)] = 1.0
    return r, J


def term_kinematics(x, y, th, dt, params: TebParams, jac=True):
    n = len(x)
    w = math.sqrt(params.delta_h)
    dx, dy = np.diff(x), np.diff(y)
    c, s = np.cos(th), np.sin(th)
    cs, ss = c[:-1] + c[1:], s[:-1] + s[1:]
    r = w * (cs * dy - ss * dx)
    if not jac:
        return r, None
    m = n - 1
    rows = np.arange(m)
    i, j = np.arange(m), np.arange(1, n)
    J = np.zeros((m, n_vars(n)))
    J[rows, i] = w * ss
    J[rows, j] = -w * ss
    J[rows, n + i] = -w * cs
    J[rows, n + j] = w * cs
    J[rows, 2 * n + i] = w * (-s[:-1] * dy - c[:-1] * dx)
    J[rows, 2 * n + j] = w * (-s[1:] * dy - c[1:] * dx)
    return r, J


def _seg_speed(x, y, th, dt):
    """Segment displacements, clamped lengths, travel signs and unit directions.

    For coincident poses the direction falls back to the heading, the limit of
    the signed speed's gradient when the pose moves along it.
    """
    dx, dy = np.diff(x), np.diff(y)
    dist = np.hypot(dx, dy)
    proj = np.cos(th[:-1]) * dx + np.sin(th[:-1]) * dy
    moving = dist > _EPS
    sign = np.where(moving & (proj < 0), -1.0, 1.0)
    safe = np.where(moving, dist, 1.0)
    ux = np.where(moving, dx / safe, np.cos(th[:-1]))
    uy = np.where(moving, dy / safe, np.sin(th[:-1]))
    return dx, dy, np.maximum(dist, _EPS), sign, ux, uy


def term_velocity(x, y, th, dt, params: TebParams, jac=True):
    """Rows ``0..N-2`` penalise linear speed, rows ``N-1..`` angular speed."""
    n = len(x)
    m = n - 1
    w = math.sqrt(params.delta_v)
    dx, dy, dist, _, _, _ = _seg_speed(x, y, th, dt)
    v = dist / dt
    dth = wrap_angles(np.diff(th))
    om = dth / dt
    ev = np.maximum(0.0, v - params.v_max)
    eo = np.maximum(0.0, np.abs(om) - params.omega_max)
    r = w * np.concatenate([ev, eo])
    if not jac:
        return r, None
    J = np.zeros((2 * m, n_vars(n)))
    i, j = np.arange(m), np.arange(1, n)
    av = (ev > 0) * w
    gx = dx / (dist * dt)
    gy = dy / (dist * dt)
    J[i, i] = -av * gx
    J[i, j] = av * gx
    J[i, n + i] = -av * gy
    J[i, n + j] = av * gy
    J[i, 3 * n + i] = -av * v / dt
    ao = (eo > 0) * w
    sg = np.sign(om)
    J[m + i, 2 * n + i] = -ao * sg / dt
    J[m + i, 2 * n + j] = ao * sg / dt
    J[m + i, 3 * n + i] = -ao * np.abs(om) / dt
    return r, J


def term_acceleration(x, y, th, dt, params: TebParams, jac=True, start_twist: Twist | None = None):
    """One row per interior pose, plus one for the start velocity if given.

    Each row is the larger of the linear and rotational excess.
    """
    n = len(x)
    w = math.sqrt(params.delta_alpha)
    dx, dy, dist, sign, ux, uy = _seg_speed(x, y, th, dt)
    vs = sign * dist / dt
    om = wrap_angles(np.diff(th)) / dt
    nv = n_vars(n)
    rows_r, rows_J = [], []

    if n >= 3:
        k = np.arange(1, n - 1)
        a_i, b_i = k - 1, k
        dt1, dt2 = dt[a_i], dt[b_i]
        S = dt1 + dt2
        acc = 2 * (vs[b_i] - vs[a_i]) / S
        alp = 2 * (om[b_i] - om[a_i]) / S
        lin = np.maximum(0.0, np.abs(acc) - params.a_max)
        rot = np.maximum(0.0, np.abs(alp) - params.alpha_max)
        use_lin = lin >= rot
        r = w * np.where(use_lin, lin, rot)
        rows_r.append(r)
        if jac:
            m = len(k)
            J = np.zeros((m, nv))
            rows = np.arange(m)
            # linear branch: derivatives of acc
            ga = sign[a_i] / dt1  # dv_a / d(displacement) along the unit direction
            gb = sign[b_i] / dt2
            wl = w * (use_lin & (lin > 0)) * np.sign(acc)
            f = 2 / S
            dva_x, dva_y = ga * ux[a_i], ga * uy[a_i]
            dvb_x, dvb_y = gb * ux[b_i], gb * uy[b_i]
            J[rows, k - 1] += wl * f * dva_x
            J[rows, k] += wl * f * (-dva_x - dvb_x)
            J[rows, k + 1] += wl * f * dvb_x
            J[rows, n + k - 1] += wl * f * dva_y
            J[rows, n + k] += wl * f * (-dva_y - dvb_y)
            J[rows, n + k + 1] += wl * f * dvb_y
            J[rows, 3 * n + a_i] += wl * (-acc / S + 2 * vs[a_i] / (S * dt1))
            J[rows, 3 * n + b_i] += wl * (-acc / S - 2 * vs[b_i] / (S * dt2))
            # rotational branch
            wr = w * (~use_lin & (rot > 0)) * np.sign(alp)
            J[rows, 2 * n + k - 1] += wr * f / dt1
            J[rows, 2 * n + k] += wr * f * (-1 / dt1 - 1 / dt2)
            J[rows, 2 * n + k + 1] += wr * f / dt2
            J[rows, 3 * n + a_i] += wr * (-alp / S + 2 * om[a_i] / (S * dt1))
            J[rows, 3 * n + b_i] += wr * (-alp / S - 2 * om[b_i] / (S * dt2))
            rows_J.append(J)

    if start_twist is not None:
        d0 = dt[0]
        acc0 = (vs[0] - start_twist.v) / d0
        alp0 = (om[0] - start_twist.omega) / d0
        lin0 = max(0.0, abs(acc0) - params.a_max)
        rot0 = max(0.0, abs(alp0) - params.alpha_max)
        rows_r.append(np.array([w * max(lin0, rot0)]))
        if jac:
            J0 = np.zeros((1, nv))
            if lin0 >= rot0 and lin0 > 0:
                s0 = w * np.sign(acc0)
                g = sign[0] / (d0 * d0)
                J0[0, 0] = -s0 * g * ux[0]
                J0[0, 1] = s0 * g * ux[0]
                J0[0, n] = -s0 * g * uy[0]
                J0[0, n + 1] = s0 * g * uy[0]
                J0[0, 3 * n] = s0 * -(vs[0] / d0 + acc0) / d0
            elif rot0 > lin0:
                s0 = w * np.sign(alp0)
                J0[0, 2 * n] = -s0 / (d0 * d0)
                J0[0, 2 * n + 1] = s0 / (d0 * d0)
                J0[0, 3 * n] = s0 * -(om[0] / d0 + alp0) / d0
            rows_J.append(J0)

    r = np.concatenate(rows_r) if rows_r else np.zeros(0)
    if not jac:
        return r, None
    J = np.concatenate(rows_J) if rows_J else np.zeros((0, nv))
    return r, J


def term_clearance(x, y, th, dt, params: TebParams, obstacles: ObstacleArrays, jac=True):
    """One row per interior pose: hinge on the distance to the nearest obstacle."""
    n = len(x)
    m = max(n - 2, 0)
    nv = n_vars(n)
    if m == 0 or len(obstacles) == 0:
        return np.zeros(m), (np.zeros((m, nv)) if jac else None)
    w = math.sqrt(params.delta_o)
    pts = np.column_stack([x[1:-1], y[1:-1]])
    d, g = obstacles.nearest(pts)
    e = np.maximum(0.0, params.d_min - d)
    r = w * e
    if not jac:
        return r, None
    J = np.zeros((m, nv))
    k = np.arange(1, n - 1)
    act = w * ((e > 0) & (d > 0))
    J[np.arange(m), k] = -act * g[:, 0]
    J[np.arange(m), n + k] = -act * g[:, 1]
    return r, J


# --- scalar reference implementations ---------------------------------------


def residual_kinematics(s_i: Pose2, s_j: Pose2) -> float:
    """z-component of (heading_i + heading_j) x displacement."""
    dx, dy = s_j.x - s_i.x, s_j.y - s_i.y
    return (math.cos(s_i.theta) + math.cos(s_j.theta)) * dy - (math.sin(s_i.theta) + math.sin(s_j.theta)) * dx


def residual_velocity(s_i: Pose2, s_j: Pose2, dt: float, params: TebParams) -> tuple[float, float]:
    v = math.hypot(s_j.x - s_i.x, s_j.y - s_i.y) / dt
    om = normalize_angle(s_j.theta - s_i.theta) / dt
    return max(0.0, abs(v) - params.v_max), max(0.0, abs(om) - params.omega_max)


def signed_speed(s_i: Pose2, s_j: Pose2, dt: float) -> float:
    dx, dy = s_j.x - s_i.x, s_j.y - s_i.y
    proj = math.cos(s_i.theta) * dx + math.sin(s_i.theta) * dy
    return (-1.0 if proj < 0 else 1.0) * math.hypot(dx, dy) / dt


def residual_acceleration(
    s_prev: Pose2, s_i: Pose2, s_next: Pose2, dt_prev: float, dt_next: float, params: TebParams
) -> float:
    v1, v2 = signed_speed(s_prev, s_i, dt_prev), signed_speed(s_i, s_next, dt_next)
    a = 2 * (v2 - v1) / (dt_prev + dt_next)
    w1 = normalize_angle(s_i.theta - s_prev.theta) / dt_prev
    w2 = normalize_angle(s_next.theta - s_i.theta) / dt_next
    al = 2 * (w2 - w1) / (dt_prev + dt_next)
    return max(max(0.0, abs(a) - params.a_max), max(0.0, abs(al) - params.alpha_max))


def residual_clearance(s_i: Pose2, obstacles: Sequence[ObstacleShape], params: TebParams) -> float:
    cutoff = 3 * params.d_min
    near = [d for d in (dist_to_obstacle(s_i, o) for o in obstacles) if d <= cutoff]
    if not near:
        return 0.0
    return max(0.0, params.d_min - min(near))


# --- objective ---------------------------------------------------------------


@dataclass
class Problem:
    """Everything the optimiser needs besides the band itself."""

    params: TebParams
    obstacles: ObstacleArrays = field(default_factory=ObstacleArrays)
    extra: ExtraCost | None = None
    start_twist: Twist | None = None

    def packed_params(self) -> np.ndarray:
        p = self.params
        return np.array([
            p.v_max, p.omega_max, p.a_max, p.alpha_max,
            p.delta_h, p.delta_v, p.delta_o, p.delta_alpha, p.d_min,
        ])

    def packed_twist(self) -> np.ndarray:
        t = self.start_twist
        return np.zeros(3) if t is None else np.array([1.0, t.v, t.omega])


def _as_arrays(obstacles) -> ObstacleArrays:
    if isinstance(obstacles, ObstacleArrays):
        return obstacles
    return ObstacleArrays.from_shapes(obstacles or ())


def classic_terms(x, y, th, dt, problem: Problem, jac=True):
    p = problem.params
    return [
        term_time(x, y, th, dt, p, jac),
        term_kinematics(x, y, th, dt, p, jac),
        term_velocity(x, y, th, dt, p, jac),
        term_acceleration(x, y, th, dt, p, jac, problem.start_twist),
        term_clearance(x, y, th, dt, p, problem.obstacles, jac),
    ]


def _classic_value(terms) -> float:
    return float(sum(float(r @ r) for r, _ in terms))


def band_times(dt: np.ndarray) -> np.ndarray:
    return np.concatenate([[0.0], np.cumsum(dt)])


def extra_value(x, y, th, dt, extra: ExtraCost | None) -> float:
    """Unweighted social sum: squared residual rows plus the scalar part."""
    if extra is None:
        return 0.0
    ev = extra.evaluate(x, y, th, band_times(dt), False)
    return float(ev.residuals @ ev.residuals) + ev.scalar


def evaluate_reference(z: np.ndarray, n: int, problem: Problem) -> float:
    """Objective built from the numpy term functions."""
    x, y, th, dt = unpack(z, n)
    value = _classic_value(classic_terms(x, y, th, dt, problem, jac=False))
    if problem.extra is not None:
        value = value + problem.extra.weight * extra_value(x, y, th, dt, problem.extra)
    return value


def objective(band: TimedBand, obstacles=(), params: TebParams = TebParams(), start_twist: Twist | None = None) -> float:
    """Classic TEB objective: squared norm of all weighted residuals."""
    problem = Problem(params, _as_arrays(obstacles), None, start_twist)
    return evaluate(pack(band), band.n, problem)


def linearize_reference(z: np.ndarray, n: int, problem: Problem):
    """Value, half-gradient and Gauss-Newton Hessian from the numpy term functions."""
    x, y, th, dt = unpack(z, n)
    terms = classic_terms(x, y, th, dt, problem, jac=True)
    r = np.concatenate([t[0] for t in terms])
    J = np.concatenate([t[1] for t in terms])
    value = _classic_value(terms)
    g = J.T @ r
    H = J.T @ J
    if problem.extra is not None:
        wmp = problem.extra.weight
        ev = problem.extra.evaluate(x, y, th, band_times(dt), True)
        value = value + wmp * (float(ev.residuals @ ev.residuals) + ev.scalar)
        Js = extra_jacobian(ev, n)
        g = g + wmp * (Js.T @ ev.residuals) + 0.5 * wmp * extra_scalar_gradient(ev, n)
        H = H + wmp * (Js.T @ Js)
    return value, g, H


def _system(z: np.ndarray, n: int, problem: Problem, jac: bool):
    x, y, th, dt = unpack(z, n)
    nv = n_vars(n)
    g = np.zeros(nv)
    H = np.zeros((nv, nv)) if jac else _NO_H
    obs = problem.obstacles
    value = _kernels.classic_system(
        x, y, th, dt, problem.packed_params(), problem.packed_twist(),
        obs.centers, obs.radii, obs.seg_a, obs.seg_b, jac, g, H,
    )
    extra = problem.extra
    if extra is not None:
        accumulate = getattr(extra, "accumulate", None)
        if accumulate is not None:
            value += accumulate(x, y, th, dt, jac, g, H)
        else:
            ev = extra.evaluate(x, y, th, band_times(dt), jac)
            value += extra.weight * (float(ev.residuals @ ev.residuals) + ev.scalar)
            if jac:
                Js = extra_jacobian(ev, n)
                g += extra.weight * (Js.T @ ev.residuals) + 0.5 * extra.weight * extra_scalar_gradient(ev, n)
                H += extra.weight * (Js.T @ Js)
    return value, g, H


def evaluate(z: np.ndarray, n: int, problem: Problem) -> float:
    return _system(z, n, problem, False)[0]


def linearize(z: np.ndarray, n: int, problem: Problem):
    """Value, half-gradient and Gauss-Newton Hessian over the full variable vector."""
    return _system(z, n, problem, True)


def extra_jacobian(ev: ExtraTerms, n: int) -> np.ndarray:
    R = len(ev.residuals)
    J = np.zeros((R, n_vars(n)))
    if R == 0:
        return J
    rows = np.arange(R)
    k = ev.res_pose
    J[rows, k] = ev.res_grad[:, 0]
    J[rows, n + k] = ev.res_grad[:, 1]
    J[rows, 2 * n + k] = ev.res_grad[:, 2]
    J[:, 3 * n :] = ev.res_grad[:, 3:4] * _time_map(n)[k]
    return J


def extra_scalar_gradient(ev: ExtraTerms, n: int) -> np.ndarray:
    g = np.zeros(n_vars(n))
    if ev.scalar_grad is None:
        return g
    sg = ev.scalar_grad
    g[:n] = sg[:, 0]
    g[n : 2 * n] = sg[:, 1]
    g[2 * n : 3 * n] = sg[:, 2]
    g[3 * n :] = _time_map(n).T @ sg[:, 3]
    return g


# --- band construction -------------------------------------------------------


def _band_through(points: np.ndarray, start: Pose2, goal: Pose2, params: TebParams) -> TimedBand:
    """Resample a polyline at spacing ``v_max * dt_ref``; headings follow the path."""
    spacing = params.v_max * params.dt_ref
    seg = np.diff(points, axis=0)
    lens = np.hypot(seg[:, 0], seg[:, 1])
    keep = lens > 1e-9
    if not np.any(keep):
        return TimedBand.from_poses([start, goal], [params.dt_ref])
    pts = np.vstack([points[:1], points[1:][keep]])
    seg, lens = seg[keep], lens[keep]
    total = float(lens.sum())
    m = max(1, math.ceil(total / spacing - 1e-9))
    m = min(m, params.max_poses - 1)
    s = np.linspace(0.0, total, m + 1)
    cum = np.concatenate([[0.0], np.cumsum(lens)])
    i = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg) - 1)
    u = (s - cum[i]) / lens[i]
    xy = pts[i] + u[:, None] * seg[i]
    heading = np.arctan2(seg[i, 1], seg[i, 0])
    xy[0], xy[-1] = (start.x, start.y), (goal.x, goal.y)
    heading[0], heading[-1] = start.theta, goal.theta
    return TimedBand(xy[:, 0], xy[:, 1], heading, np.full(m, params.dt_ref))


def init_band(start: Pose2, goal: Pose2, params: TebParams = TebParams()) -> TimedBand:
    """Straight-line seed band with spacing ``v_max * dt_ref`` and goal-facing headings."""
    return _band_through(np.array([[start.x, start.y], [goal.x, goal.y]]), start, goal, params)


def resize_band(band: TimedBand, params: TebParams = TebParams()) -> TimedBand:
    """One sweep of pose insertion (long intervals) and removal (short intervals)."""
    x, y, th, dt = list(band.x), list(band.y), list(band.theta), list(band.dts)
    hi = params.dt_ref + params.dt_hysteresis
    lo = params.dt_ref - params.dt_hysteresis
    i = 0
    while i < len(dt):
        if dt[i] > hi and len(x) < params.max_poses:
            half = dt[i] / 2
            mid_th = normalize_angle(th[i] + normalize_angle(th[i + 1] - th[i]) / 2)
            x.insert(i + 1, (x[i] + x[i + 1]) / 2)
            y.insert(i + 1, (y[i] + y[i + 1]) / 2)
            th.insert(i + 1, mid_th)
            dt[i] = half
            dt.insert(i + 1, half)
            i += 2
        elif dt[i] < lo and len(x) > 2:
            if i + 1 < len(x) - 1:
                # drop the segment's end pose and merge intervals
                merged = dt[i] + dt[i + 1]
                del x[i + 1], y[i + 1], th[i + 1]
                dt[i] = merged
                del dt[i + 1]
            elif i > 0:
                merged = dt[i - 1] + dt[i]
                del x[i], y[i], th[i]
                dt[i - 1] = merged
                del dt[i]
            i += 1
        else:
            i += 1
    return TimedBand(np.array(x), np.array(y), np.array(th), np.array(dt))


# --- optimiser ---------------------------------------------------------------


def optimize_band(
    band: TimedBand,
    obstacles=(),
    params: TebParams = TebParams(),
    extra_costs: ExtraCost | None = None,
    start_twist: Twist | None = None,
    history: list | None = None,
) -> TimedBand:
    """Levenberg-Marquardt over interior poses and all time intervals.

    Accepted steps never increase the objective. ``history`` (if given)
    receives one ``(before, after)`` pair per accepted step.
    """
    problem = Problem(params, _as_arrays(obstacles), extra_costs, start_twist)
    return _optimize(band, problem, history)


_LAM_MAX = 1e10


def _optimize(band: TimedBand, problem: Problem, history: list | None = None) -> TimedBand:
    params = problem.params
    lam = 1e-3
    for _ in range(params.n_outer):
        band = resize_band(band, params)
        n = band.n
        z = pack(band)
        free = free_columns(n)
        value, g, H = linearize(z, n, problem)
        if not math.isfinite(value):
            break
        stop = False
        for _ in range(params.n_inner):
            gf = g[free]
            Hf = H[np.ix_(free, free)]
            eye = np.eye(len(gf))
            accepted = False
            # grow the damping until a step decreases the cost; the stiff
            # kinematic rows can shrink the descent region to ~1e-5 m
            while lam <= _LAM_MAX:
                # plain Levenberg damping; the Marquardt scaling stalled on
                # lateral detours where the kinematic rows dominate the diagonal
                A = Hf + lam * eye
                try:
                    step = np.linalg.solve(A, -gf)
                except np.linalg.LinAlgError:
                    lam *= 10
                    continue
                trial = z.copy()
                trial[free] += step
                _project(trial, n, params)
                new_value = evaluate(trial, n, problem)
                if math.isfinite(new_value) and new_value < value:
                    accepted = True
                    break
                lam *= 10
            if not accepted:
                lam = 1e-3
                stop = True
                break
            if history is not None:
                history.append((value, new_value))
            improvement = (value - new_value) / max(abs(value), 1e-12)
            z = trial
            lam = max(lam / 5, 1e-9)
            if improvement < 1e-6:
                value = new_value
                stop = True
                break
            value, g, H = linearize(z, n, problem)
        band = TimedBand(*unpack(z, n))
        if stop and _converged_sizes(band, params):
            break
    return _drop_stationary(band, problem, history)


_STATIONARY = 1e-4


def _drop_stationary(band: TimedBand, problem: Problem, history: list | None = None) -> TimedBand:
    """Remove interior poses that sit on their predecessor, if that lowers the cost.

    A zero-length segment is a kink of the signed speed, so the optimiser can
    park a pose there and plan a wait it cannot leave; dropping the pose
    together with that segment's interval removes the wait.
    """
    value = evaluate(pack(band), band.n, problem)
    i = 1
    while i < band.n - 1 and band.n > 3:
        if math.hypot(band.x[i] - band.x[i - 1], band.y[i] - band.y[i - 1]) >= _STATIONARY:
            i += 1
            continue
        keep = np.arange(band.n) != i
        trial = TimedBand(band.x[keep], band.y[keep], band.theta[keep], np.delete(band.dts, i - 1))
        new_value = evaluate(pack(trial), trial.n, problem)
        if not new_value < value:
            i += 1
            continue
        if history is not None:
            history.append((value, new_value))
        band, value = trial, new_value
    return band


def _project(z: np.ndarray, n: int, params: TebParams) -> None:
    # anchors are untouched so they stay bit-identical
    z[2 * n + 1 : 3 * n - 1] = wrap_angles(z[2 * n + 1 : 3 * n - 1])
    z[3 * n :] = np.clip(z[3 * n :], _DT_LOW, params.dt_max)


def _converged_sizes(band: TimedBand, params: TebParams) -> bool:
    lo = params.dt_ref - params.dt_hysteresis
    hi = params.dt_ref + params.dt_hysteresis
    return bool(np.all((band.dts >= lo) & (band.dts <= hi))) or band.n <= 2


# --- homotopy candidates -----------------------------------------------------


def _crossing(start: Pose2, goal: Pose2, obs: DynamicObstacle, params: TebParams):
    """Predicted crossing point of an obstacle with the straight start-goal corridor."""
    p0 = np.array([start.x, start.y])
    d = np.array([goal.x - start.x, goal.y - start.y])
    length = float(np.hypot(*d))
    if length < 1e-6:
        return None
    u = d / length
    t_end = length / params.v_max
    taus = np.linspace(0.0, t_end, max(2, int(math.ceil(t_end / 0.1)) + 1))
    robot = p0 + np.minimum(taus * params.v_max, length)[:, None] * u
    hum = obs.at(taus)
    gap = np.hypot(*(robot - hum).T)
    k = int(np.argmin(gap))
    h = hum[k]
    along = float((h - p0) @ u)
    lateral = float(u[0] * (h[1] - p0[1]) - u[1] * (h[0] - p0[0]))
    if not (0.0 < along < length) or abs(lateral) > params.crossing_width:
        return None
    return h, along, float(taus[k])


def band_signature(band: TimedBand, obstacles: Sequence[DynamicObstacle]) -> tuple[tuple[str, str], ...]:
    """Side on which each obstacle lies relative to the band at closest approach."""
    if not obstacles:
        return ()
    times = band.times()
    sig = []
    for o in obstacles:
        h = o.at(times)
        gap = np.hypot(band.x - h[:, 0], band.y - h[:, 1])
        k = int(np.argmin(gap))
        # heading of the local path direction, robust to turned-in-place poses
        j = min(k + 1, band.n - 1)
        i = j - 1
        hd = math.atan2(band.y[j] - band.y[i], band.x[j] - band.x[i])
        side = math.cos(hd) * (h[k, 1] - band.y[k]) - math.sin(hd) * (h[k, 0] - band.x[k])
        sig.append((o.id, "left" if side > 0 else "right"))
    return tuple(sorted(sig))


def candidate_seeds(start: Pose2, goal: Pose2, obstacles: Sequence[DynamicObstacle], params: TebParams):
    """Seed bands for every side assignment of the k nearest crossing obstacles."""
    crossings = []
    for o in obstacles:
        c = _crossing(start, goal, o, params)
        if c is not None:
            dist_now = float(np.hypot(o.positions[0, 0] - start.x, o.positions[0, 1] - start.y))
            crossings.append((dist_now, o.id, o, c))
    crossings.sort(key=lambda item: (item[0], item[1]))
    crossings = crossings[: params.k_homotopy]
    if not crossings:
        return [init_band(start, goal, params)], []
    d = np.array([goal.x - start.x, goal.y - start.y])
    u = d / np.hypot(*d)
    left = np.array([-u[1], u[0]])
    offset = 2 * params.d_min
    seeds = []
    by_along = sorted(crossings, key=lambda c: c[3][1])
    for sides in product((1.0, -1.0), repeat=len(by_along)):
        pts = [np.array([start.x, start.y])]
        for s, (_, _, _, (h, _, _)) in zip(sides, by_along):
            # robot passes on the side ``s``; the obstacle ends up on the other one
            pts.append(h + s * offset * left)
        pts.append(np.array([goal.x, goal.y]))
        seeds.append(_band_through(np.array(pts), start, goal, params))
    return seeds, [c[2] for c in crossings]


def update_band(band: TimedBand, start: Pose2, goal: Pose2, params: TebParams = TebParams()) -> TimedBand:
    """Re-anchor a previous solution at a new start and goal (warm start).

    Poses the robot has already passed are pruned; the goal pose is replaced,
    or the band is extended by a straight stretch if the goal moved further
    than one pose spacing.
    """
    xy = band.xy
    look = max(1, min(band.n - 1, 10))
    d = np.hypot(xy[:look, 0] - start.x, xy[:look, 1] - start.y)
    # among coincident nearest poses take the last: a stationary leading
    # segment would otherwise be kept and command a standstill forever
    k = int(np.flatnonzero(d <= d.min() + 1e-6)[-1])
    x, y, th, dt = band.x[k:].copy(), band.y[k:].copy(), band.theta[k:].copy(), band.dts[k:].copy()
    x[0], y[0], th[0] = start.x, start.y, start.theta
    if len(x) < 3:
        return init_band(start, goal, params)
    spacing = params.v_max * params.dt_ref
    if math.hypot(goal.x - x[-1], goal.y - y[-1]) <= spacing:
        x[-1], y[-1], th[-1] = goal.x, goal.y, goal.theta
        return TimedBand(x, y, th, dt)
    tail = _band_through(
        np.array([[x[-2], y[-2]], [goal.x, goal.y]]), Pose2(x[-2], y[-2], th[-2]), goal, params
    )
    return TimedBand(
        np.concatenate([x[:-2], tail.x]),
        np.concatenate([y[:-2], tail.y]),
        np.concatenate([th[:-2], tail.theta]),
        np.concatenate([dt[:-1], tail.dts]),
    )


def band_feasible(
    band: TimedBand,
    walls: ObstacleArrays,
    dynamic: Sequence[DynamicObstacle] = (),
    params: TebParams = TebParams(),
    step: float = 0.05,
) -> bool:
    """Collision check along the band's segments, not just at its poses.

    Clearance in the objective is only seen at poses, so two poses may sit on
    either side of an obstacle while the segment between them passes through
    it. Dynamic obstacles are checked at the matching band time.
    """
    if band.n < 2 or (not len(walls) and not dynamic):
        return True
    times = band.times()
    pts, ts = [band.xy[:1]], [times[:1]]
    for i in range(band.n - 1):
        if times[i] >= params.feasibility_horizon:
            break
        a, b = band.xy[i], band.xy[i + 1]
        k = max(1, math.ceil(float(np.hypot(*(b - a))) / step))
        u = np.arange(1, k + 1) / k
        pts.append(a + u[:, None] * (b - a))
        ts.append(times[i] + u * (times[i + 1] - times[i]))
    p, t = np.vstack(pts), np.concatenate(ts)
    if len(walls):
        d, _ = walls.nearest(p)
        if np.any(d < params.robot_radius):
            return False
    for o in dynamic:
        h = o.at(t)
        if np.any(np.hypot(p[:, 0] - h[:, 0], p[:, 1] - h[:, 1]) < params.robot_radius + o.radius):
            return False
    return True


class BandMemory:
    """Optimised bands kept across planning cycles, one per homotopy signature."""

    def __init__(self):
        self.bands: dict[tuple, TimedBand] = {}

    def warm(self, start: Pose2, goal: Pose2, crossing, params: TebParams) -> dict[tuple, TimedBand]:
        out = {}
        for band in self.bands.values():
            b = update_band(band, start, goal, params)
            out.setdefault(band_signature(b, crossing), b)
        return out

    def store(self, candidates: Sequence[BandCandidate]) -> None:
        self.bands = {c.homotopy_signature: c.band for c in candidates}

    def clear(self) -> None:
        self.bands = {}


def generate_candidates(
    start: Pose2,
    goal: Pose2,
    obstacles: Sequence[DynamicObstacle],
    params: TebParams = TebParams(),
    statics=(),
    extra_costs: ExtraCost | None = None,
    start_twist: Twist | None = None,
    cost_fn=None,
    memory: BandMemory | None = None,
    walls: ObstacleArrays | None = None,
) -> list[BandCandidate]:
    """Optimise one band per homotopy class; classes are deduplicated after optimisation.

    ``obstacles`` are the dynamic obstacles used for homotopy exploration.
    ``statics`` (shapes or packed arrays) enter the clearance term. With a
    ``memory``, a seed is replaced by last cycle's band of the same class
    unless that band fails the segment check against ``walls`` (defaults to
    ``statics``) and ``obstacles``.
    """
    problem = Problem(params, _as_arrays(statics), extra_costs, start_twist)
    seeds, crossing = candidate_seeds(start, goal, obstacles, params)
    warm = memory.warm(start, goal, crossing, params) if memory is not None else {}
    walls = problem.obstacles if walls is None else walls
    best: dict[tuple, BandCandidate] = {}
    for seed in seeds:
        starts = [seed]
        prev = warm.pop(band_signature(seed, crossing), None)
        if prev is not None and band_feasible(prev, walls, obstacles, params):
            # the fresh seed is optimised too: a warm band can sit in a local
            # minimum (e.g. a stationary first segment) it never leaves
            starts.append(prev)
        for init in starts:
            hist: list = []
            band = _optimize(init, problem, hist)
            cost = evaluate(pack(band), band.n, problem) if cost_fn is None else cost_fn(band)
            sig = band_signature(band, crossing)
            feasible = band_feasible(band, walls, obstacles, params)
            cand = BandCandidate(
                band, sig, cost, {"accepted_steps": len(hist), "feasible": feasible, "warm": init is prev}
            )
            if sig not in best or _class_rank(cand) < _class_rank(best[sig]):
                best[sig] = cand
    out = [best[k] for k in sorted(best)]
    if memory is not None:
        memory.store(out)
    return out


def _class_rank(c: BandCandidate):
    return (not c.diagnostics.get("feasible", True),) + _rank(c)


def _rank(c: BandCandidate):
    return (c.cost, c.band.n, c.homotopy_signature)


def select_best(candidates: Sequence[BandCandidate]) -> BandCandidate:
    """Lowest cost; ties go to fewer poses, then to the lexicographically smaller signature."""
    if not candidates:
        raise ValueError("no candidates to select from")
    return min(candidates, key=_rank)


def extract_control(band: TimedBand, params: TebParams = TebParams()) -> Twist:
    """Velocity command from the first band segment, clamped to the limits."""
    if band.n < 2:
        return Twist()
    dx, dy = band.x[1] - band.x[0], band.y[1] - band.y[0]
    d0 = float(band.dts[0])
    proj = math.cos(band.theta[0]) * dx + math.sin(band.theta[0]) * dy
    v = (-1.0 if proj < 0 else 1.0) * math.hypot(dx, dy) / d0
    om = normalize_angle(float(band.theta[1] - band.theta[0])) / d0
    return Twist(v, om).clamped(params.v_max, params.omega_max)


def dynamic_from_shapes(shapes: Sequence[ObstacleShape], horizon: float = 6.0) -> list[DynamicObstacle]:
    """Constant-velocity obstacle tubes ``p + v t`` for moving shapes."""
    out = []
    for o in shapes:
        p = o.position
        times = np.array([0.0, horizon])
        pos = np.array([[p.x, p.y], [p.x + o.velocity.x * horizon, p.y + o.velocity.y * horizon]])
        out.append(DynamicObstacle(o.id, times, pos, getattr(o, "radius", 0.0)))
    return out

