"""Compiled objective kernels for the band optimiser.

Each kernel walks the residual rows of a band once and accumulates the
objective value, the half-gradient ``J^T r`` and the Gauss-Newton matrix
``J^T J`` directly from the few non-zero Jacobian entries of every row. The
numpy term functions in :mod:`socnav.teb` and :mod:`socnav.mpteb` define the
same quantities and serve as the reference in the tests.

Variable layout matches :func:`socnav.teb.pack`: ``[x, y, theta, dt]``.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

EPS = 1e-9
PRIORITY_RANGE = 2.0


@njit(cache=True)
def _wrap(a):
    return math.atan2(math.sin(a), math.cos(a))


@njit(cache=True)
def _sign(a):
    if a > 0:
        return 1.0
    if a < 0:
        return -1.0
    return 0.0


@njit(cache=True)
def _add_row(r, idx, val, cnt, g, H, jac):
    """Add one residual row: value r, Jacobian entries val[:cnt] at columns idx[:cnt]."""
    if jac:
        for a in range(cnt):
            g[idx[a]] += val[a] * r
            for b in range(cnt):
                H[idx[a], idx[b]] += val[a] * val[b]
    return r * r


@njit(cache=True)
def nearest_obstacle(px, py, centers, radii, seg_a, seg_b):
    """Distance to the nearest obstacle and the unit direction away from it."""
    best = np.inf
    gx = 0.0
    gy = 0.0
    for m in range(radii.shape[0]):
        dx = px - centers[m, 0]
        dy = py - centers[m, 1]
        r = math.hypot(dx, dy)
        d = max(0.0, r - radii[m])
        if d < best:
            best = d
            s = max(r, 1e-12)
            gx = dx / s
            gy = dy / s
    for m in range(seg_a.shape[0]):
        abx = seg_b[m, 0] - seg_a[m, 0]
        aby = seg_b[m, 1] - seg_a[m, 1]
        u = ((px - seg_a[m, 0]) * abx + (py - seg_a[m, 1]) * aby) / (abx * abx + aby * aby)
        u = min(1.0, max(0.0, u))
        dx = px - (seg_a[m, 0] + u * abx)
        dy = py - (seg_a[m, 1] + u * aby)
        r = math.hypot(dx, dy)
        if r < best:
            best = r
            s = max(r, 1e-12)
            gx = dx / s
            gy = dy / s
    return best, gx, gy


@njit(cache=True)
def classic_system(x, y, th, dt, prm, twist, centers, radii, seg_a, seg_b, jac, g, H):
    """Classic TEB objective; ``prm`` holds
    (v_max, omega_max, a_max, alpha_max, delta_h, delta_v, delta_o, delta_alpha, d_min),
    ``twist`` holds (has_start_twist, v0, omega0)."""
    n = x.shape[0]
    m = n - 1
    v_max, om_max, a_max, al_max = prm[0], prm[1], prm[2], prm[3]
    wh, wv, wo, wa = math.sqrt(prm[4]), math.sqrt(prm[5]), math.sqrt(prm[6]), math.sqrt(prm[7])
    d_min = prm[8]
    X, Y, TH, DT = 0, n, 2 * n, 3 * n
    idx = np.zeros(8, dtype=np.int64)
    val = np.zeros(8)
    total = 0.0

    dxs = np.empty(m)
    dys = np.empty(m)
    dist = np.empty(m)
    sgn = np.empty(m)
    vs = np.empty(m)
    om = np.empty(m)
    ux = np.empty(m)
    uy = np.empty(m)
    for i in range(m):
        dxs[i] = x[i + 1] - x[i]
        dys[i] = y[i + 1] - y[i]
        raw = math.hypot(dxs[i], dys[i])
        dist[i] = max(raw, EPS)
        proj = math.cos(th[i]) * dxs[i] + math.sin(th[i]) * dys[i]
        sgn[i] = -1.0 if proj < 0 else 1.0
        if raw > EPS:
            ux[i], uy[i] = dxs[i] / raw, dys[i] / raw
        else:
            # coincident poses: the signed speed grows along the heading
            ux[i], uy[i] = math.cos(th[i]), math.sin(th[i])
            sgn[i] = 1.0
        vs[i] = sgn[i] * dist[i] / dt[i]
        om[i] = _wrap(th[i + 1] - th[i]) / dt[i]

    for i in range(m):
        j = i + 1
        # time
        idx[0] = DT + i
        val[0] = 1.0
        total += _add_row(dt[i], idx, val, 1, g, H, jac)

        # kinematics
        ci, si, cj, sj = math.cos(th[i]), math.sin(th[i]), math.cos(th[j]), math.sin(th[j])
        cs, ss = ci + cj, si + sj
        r = wh * (cs * dys[i] - ss * dxs[i])
        idx[0], val[0] = X + i, wh * ss
        idx[1], val[1] = X + j, -wh * ss
        idx[2], val[2] = Y + i, -wh * cs
        idx[3], val[3] = Y + j, wh * cs
        idx[4], val[4] = TH + i, wh * (-si * dys[i] - ci * dxs[i])
        idx[5], val[5] = TH + j, wh * (-sj * dys[i] - cj * dxs[i])
        total += _add_row(r, idx, val, 6, g, H, jac)

        # linear speed
        v = dist[i] / dt[i]
        ev = max(0.0, v - v_max)
        if ev > 0:
            gx = dxs[i] / (dist[i] * dt[i])
            gy = dys[i] / (dist[i] * dt[i])
            idx[0], val[0] = X + i, -wv * gx
            idx[1], val[1] = X + j, wv * gx
            idx[2], val[2] = Y + i, -wv * gy
            idx[3], val[3] = Y + j, wv * gy
            idx[4], val[4] = DT + i, -wv * v / dt[i]
            total += _add_row(wv * ev, idx, val, 5, g, H, jac)

        # angular speed
        eo = max(0.0, abs(om[i]) - om_max)
        if eo > 0:
            sg = _sign(om[i])
            idx[0], val[0] = TH + i, -wv * sg / dt[i]
            idx[1], val[1] = TH + j, wv * sg / dt[i]
            idx[2], val[2] = DT + i, -wv * abs(om[i]) / dt[i]
            total += _add_row(wv * eo, idx, val, 3, g, H, jac)

    # acceleration at interior poses
    for k in range(1, n - 1):
        a, b = k - 1, k
        dt1, dt2 = dt[a], dt[b]
        S = dt1 + dt2
        f = 2.0 / S
        acc = f * (vs[b] - vs[a])
        alp = f * (om[b] - om[a])
        lin = max(0.0, abs(acc) - a_max)
        rot = max(0.0, abs(alp) - al_max)
        if lin >= rot:
            if lin > 0:
                s = wa * _sign(acc)
                ga = sgn[a] / dt1
                gb = sgn[b] / dt2
                dva_x, dva_y = ga * ux[a], ga * uy[a]
                dvb_x, dvb_y = gb * ux[b], gb * uy[b]
                idx[0], val[0] = X + k - 1, s * f * dva_x
                idx[1], val[1] = X + k, s * f * (-dva_x - dvb_x)
                idx[2], val[2] = X + k + 1, s * f * dvb_x
                idx[3], val[3] = Y + k - 1, s * f * dva_y
                idx[4], val[4] = Y + k, s * f * (-dva_y - dvb_y)
                idx[5], val[5] = Y + k + 1, s * f * dvb_y
                idx[6], val[6] = DT + a, s * (-acc / S + 2 * vs[a] / (S * dt1))
                idx[7], val[7] = DT + b, s * (-acc / S - 2 * vs[b] / (S * dt2))
                total += _add_row(wa * lin, idx, val, 8, g, H, jac)
        else:
            s = wa * _sign(alp)
            idx[0], val[0] = TH + k - 1, s * f / dt1
            idx[1], val[1] = TH + k, s * f * (-1 / dt1 - 1 / dt2)
            idx[2], val[2] = TH + k + 1, s * f / dt2
            idx[3], val[3] = DT + a, s * (-alp / S + 2 * om[a] / (S * dt1))
            idx[4], val[4] = DT + b, s * (-alp / S - 2 * om[b] / (S * dt2))
            total += _add_row(wa * rot, idx, val, 5, g, H, jac)

    # start velocity continuity
    if twist[0] > 0:
        d0 = dt[0]
        acc0 = (vs[0] - twist[1]) / d0
        alp0 = (om[0] - twist[2]) / d0
        lin0 = max(0.0, abs(acc0) - a_max)
        rot0 = max(0.0, abs(alp0) - al_max)
        r = wa * max(lin0, rot0)
        cnt = 0
        if lin0 >= rot0 and lin0 > 0:
            s = wa * _sign(acc0)
            gg = sgn[0] / (d0 * d0)
            idx[0], val[0] = X, -s * gg * ux[0]
            idx[1], val[1] = X + 1, s * gg * ux[0]
            idx[2], val[2] = Y, -s * gg * uy[0]
            idx[3], val[3] = Y + 1, s * gg * uy[0]
            idx[4], val[4] = DT, -s * (vs[0] / d0 + acc0) / d0
            cnt = 5
        elif rot0 > lin0:
            s = wa * _sign(alp0)
            idx[0], val[0] = TH, -s / (d0 * d0)
            idx[1], val[1] = TH + 1, s / (d0 * d0)
            idx[2], val[2] = DT, -s * (om[0] / d0 + alp0) / d0
            cnt = 3
        total += _add_row(r, idx, val, cnt, g, H, jac)

    # clearance at interior poses
    if radii.shape[0] + seg_a.shape[0] > 0:
        for k in range(1, n - 1):
            d, gx, gy = nearest_obstacle(x[k], y[k], centers, radii, seg_a, seg_b)
            e = max(0.0, d_min - d)
            if e > 0:
                act = wo if d > 0 else 0.0
                idx[0], val[0] = X + k, -act * gx
                idx[1], val[1] = Y + k, -act * gy
                total += _add_row(wo * e, idx, val, 2, g, H, jac)
    return total


@njit(cache=True)
def _interp(times, pts, length, t):
    """Position and velocity on a sampled track; positions clamp at both ends and
    the velocity is zero outside the sampled interval (matching the numpy form
    after clamping ``t`` to the first sample)."""
    if length == 1 or t <= times[0]:
        px, py = pts[0, 0], pts[0, 1]
        if length == 1 or t < times[0]:
            return px, py, 0.0, 0.0
        sx = (pts[1, 0] - pts[0, 0]) / (times[1] - times[0])
        sy = (pts[1, 1] - pts[0, 1]) / (times[1] - times[0])
        return px, py, sx, sy
    if t >= times[length - 1]:
        return pts[length - 1, 0], pts[length - 1, 1], 0.0, 0.0
    lo, hi = 0, length - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if times[mid] <= t:
            lo = mid
        else:
            hi = mid
    h = times[lo + 1] - times[lo]
    sx = (pts[lo + 1, 0] - pts[lo, 0]) / h
    sy = (pts[lo + 1, 1] - pts[lo, 1]) / h
    return pts[lo, 0] + sx * (t - times[lo]), pts[lo, 1] + sy * (t - times[lo]), sx, sy


@njit(cache=True)
def social_system(
    x, y, th, dt, sprm, h_times, h_pts, h_len, dyn_p, dyn_v, r_times, r_pts, r_len, jac, g, H
):
    """Social costs weighted by delta_mp; ``sprm`` holds (w1, w2, d_social, pri_sat, delta_mp).

    Human tracks are padded arrays ``(S, M)`` / ``(S, M, 2)`` with true lengths
    ``h_len``; the robot's own prediction is used when ``r_len > 0``.
    """
    n = x.shape[0]
    w1, w2, d_soc, sat, wmp = sprm[0], sprm[1], sprm[2], sprm[3], sprm[4]
    X, Y, TH, DT = 0, n, 2 * n, 3 * n
    sw = math.sqrt(wmp * w2)
    idx = np.zeros(n + 2, dtype=np.int64)
    val = np.zeros(n + 2)
    nh = h_len.shape[0]
    nd = dyn_p.shape[0]
    total = 0.0
    t = 0.0
    for k in range(1, n - 1):
        t += dt[k - 1]
        px, py, pth = x[k], y[k], th[k]
        c, s = math.cos(pth), math.sin(pth)
        for q in range(nh + nd):
            if q < nh:
                hx, hy, hvx, hvy = _interp(h_times[q], h_pts[q], h_len[q], t)
            else:
                hvx, hvy = dyn_v[q - nh, 0], dyn_v[q - nh, 1]
                hx, hy = dyn_p[q - nh, 0] + t * hvx, dyn_p[q - nh, 1] + t * hvy
            dx, dy = px - hx, py - hy
            d = math.hypot(dx, dy)
            # dynamic-obstacle hinge
            e = max(0.0, d_soc - d)
            if e > 0:
                act = sw / max(d, 1e-12)
                idx[0], val[0] = X + k, -act * dx
                idx[1], val[1] = Y + k, -act * dy
                gt = act * (dx * hvx + dy * hvy)
                for i in range(k):
                    idx[2 + i], val[2 + i] = DT + i, gt
                total += _add_row(sw * e, idx, val, k + 2, g, H, jac)
            # priority side, humans only
            if q < nh and d <= PRIORITY_RANGE:
                rx, ry = hx - px, hy - py
                ind = c * ry - s * rx
                total -= wmp * min(max(ind, -sat), sat)
                if jac and abs(ind) < sat:
                    h = 0.5 * wmp
                    g[X + k] -= h * s
                    g[Y + k] += h * c
                    g[TH + k] -= h * (-s * ry - c * rx)
                    de_dt = c * hvy - s * hvx
                    for i in range(k):
                        g[DT + i] -= h * de_dt
        # attraction to the robot's own prediction
        if r_len > 0 and w1 > 0:
            sx, sy, svx, svy = _interp(r_times, r_pts, r_len, t)
            ex, ey = px - sx, py - sy
            dist = math.hypot(ex, ey)
            total += wmp * w1 * dist
            if jac:
                inv = 0.5 * wmp * w1 / max(dist, 1e-12)
                g[X + k] += inv * ex
                g[Y + k] += inv * ey
                gt = -inv * (ex * svx + ey * svy)
                for i in range(k):
                    g[DT + i] += gt
    return total
