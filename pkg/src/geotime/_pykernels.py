"""Pure-Python twin of the compiled kernels.

Same algorithms, same event logic and same floating-point operation order as
``_ckernels.pyx``; used when the extension is not built or when
``GEOTIME_PURE=1`` is set.  Expect it to be one to two orders of magnitude
slower.
"""

from __future__ import annotations

import heapq
import math

import numpy as np

EUCLIDEAN, CONFORMAL_BUMP, CONSTANT_CURVATURE, CUSTOM_SPD = 0, 1, 2, 3
ST_HORIZON, ST_EXITED, ST_CHART, ST_UNDERFLOW, ST_TARGET = 0, 1, 2, 3, 4
NSTATE = 6
INF = math.inf

A21 = 1.0 / 5.0
A31, A32 = 3.0 / 40.0, 9.0 / 40.0
A41, A42, A43 = 44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0
A51, A52, A53, A54 = 19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0
A61, A62, A63, A64, A65 = (9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0,
                           49.0 / 176.0, -5103.0 / 18656.0)
B1, B3, B4, B5, B6 = 35.0 / 384.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0
E1, E3, E4, E5, E6, E7 = (71.0 / 57600.0, -71.0 / 16695.0, 71.0 / 1920.0,
                          -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0)


class _Metric:
    __slots__ = ("kind", "p0", "p1", "p2", "p3", "deg", "c11", "c12", "c22")

    def __init__(self, kind, mparams):
        mp = [float(v) for v in mparams]
        self.kind = kind
        self.p0 = mp[0] if len(mp) > 0 else 0.0
        self.p1 = mp[1] if len(mp) > 1 else 0.0
        self.p2 = mp[2] if len(mp) > 2 else 0.0
        self.p3 = mp[3] if len(mp) > 3 else 0.0
        self.deg = 0
        if kind == CUSTOM_SPD:
            deg = int(mp[0])
            k = (deg + 1) * (deg + 1)
            self.deg = deg
            self.c11 = mp[1:1 + k]
            self.c12 = mp[1 + k:1 + 2 * k]
            self.c22 = mp[1 + 2 * k:1 + 3 * k]


def _poly_derivs(c, deg, x, y):
    stride = deg + 1
    xi = [1.0] * stride
    yj = [1.0] * stride
    for i in range(1, stride):
        xi[i] = xi[i - 1] * x
        yj[i] = yj[i - 1] * y
    o = [0.0] * 6
    for i in range(stride):
        for j in range(stride):
            cij = c[i * stride + j]
            if cij == 0.0:
                continue
            o[0] += cij * xi[i] * yj[j]
            if i >= 1:
                o[1] += cij * i * xi[i - 1] * yj[j]
            if j >= 1:
                o[2] += cij * j * xi[i] * yj[j - 1]
            if i >= 2:
                o[3] += cij * i * (i - 1) * xi[i - 2] * yj[j]
            if i >= 1 and j >= 1:
                o[4] += cij * i * j * xi[i - 1] * yj[j - 1]
            if j >= 2:
                o[5] += cij * j * (j - 1) * xi[i] * yj[j - 2]
    return o


def _phi_derivs(m, x, y):
    if m.kind == CONFORMAL_BUMP:
        dx = x - m.p0
        dy = y - m.p1
        w2 = m.p3 * m.p3
        e = m.p2 * math.exp(-(dx * dx + dy * dy) / (2.0 * w2))
        return (e, -e * dx / w2, -e * dy / w2,
                e * (dx * dx / (w2 * w2) - 1.0 / w2),
                e * dx * dy / (w2 * w2),
                e * (dy * dy / (w2 * w2) - 1.0 / w2))
    if m.kind == CONSTANT_CURVATURE:
        K = m.p0
        q = 1.0 + K * (x * x + y * y)
        return (math.log(2.0) - math.log(q), -2.0 * K * x / q, -2.0 * K * y / q,
                -2.0 * K / q + 4.0 * K * K * x * x / (q * q),
                4.0 * K * K * x * y / (q * q),
                -2.0 * K / q + 4.0 * K * K * y * y / (q * q))
    return (0.0, 0.0, 0.0, 0.0, 0.0, 0.0)


def _brioschi(E, F, G):
    Eu, Ev, Evv = E[1], E[2], E[5]
    Fu, Fv, Fuv = F[1], F[2], F[4]
    Gu, Gv, Guu = G[1], G[2], G[3]
    e, f, g = E[0], F[0], G[0]
    a11 = -0.5 * Evv + Fuv - 0.5 * Guu
    a12, a13 = 0.5 * Eu, Fu - 0.5 * Ev
    a21, a31 = Fv - 0.5 * Gu, 0.5 * Gv
    d1 = a11 * (e * g - f * f) - a12 * (a21 * g - f * a31) + a13 * (a21 * f - e * a31)
    b12, b13 = 0.5 * Ev, 0.5 * Gu
    d2 = -b12 * (b12 * g - f * b13) + b13 * (b12 * f - e * b13)
    det = e * g - f * f
    return (d1 - d2) / (det * det)


def _geo_rhs(m, s, jac):
    vx, vy = s[2], s[3]
    K = 0.0
    if m.kind == CUSTOM_SPD:
        E = _poly_derivs(m.c11, m.deg, s[0], s[1])
        F = _poly_derivs(m.c12, m.deg, s[0], s[1])
        G = _poly_derivs(m.c22, m.deg, s[0], s[1])
        c1xx = 0.5 * E[1]
        c1xy = 0.5 * E[2]
        c1yy = F[2] - 0.5 * G[1]
        c2xx = F[1] - 0.5 * E[2]
        c2xy = 0.5 * G[1]
        c2yy = 0.5 * G[2]
        det = E[0] * G[0] - F[0] * F[0]
        i11 = G[0] / det
        i12 = -F[0] / det
        i22 = E[0] / det
        gx_xx = i11 * c1xx + i12 * c2xx
        gx_xy = i11 * c1xy + i12 * c2xy
        gx_yy = i11 * c1yy + i12 * c2yy
        gy_xx = i12 * c1xx + i22 * c2xx
        gy_xy = i12 * c1xy + i22 * c2xy
        gy_yy = i12 * c1yy + i22 * c2yy
        ax = -(gx_xx * vx * vx + 2.0 * gx_xy * vx * vy + gx_yy * vy * vy)
        ay = -(gy_xx * vx * vx + 2.0 * gy_xy * vx * vy + gy_yy * vy * vy)
        if jac:
            K = _brioschi(E, F, G)
    else:
        o = _phi_derivs(m, s[0], s[1])
        ax = -(o[1] * (vx * vx - vy * vy) + 2.0 * o[2] * vx * vy)
        ay = -(o[2] * (vy * vy - vx * vx) + 2.0 * o[1] * vx * vy)
        if jac:
            K = -math.exp(-2.0 * o[0]) * (o[3] + o[5])
    if jac:
        return [vx, vy, ax, ay, s[5], -K * s[4]]
    return [vx, vy, ax, ay, 0.0, 0.0]


def _rk_step(m, s, h, jac, rtol, atol):
    k1 = _geo_rhs(m, s, jac)
    k2 = _geo_rhs(m, [s[i] + h * A21 * k1[i] for i in range(NSTATE)], jac)
    k3 = _geo_rhs(m, [s[i] + h * (A31 * k1[i] + A32 * k2[i]) for i in range(NSTATE)], jac)
    k4 = _geo_rhs(m, [s[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i])
                      for i in range(NSTATE)], jac)
    k5 = _geo_rhs(m, [s[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i])
                      for i in range(NSTATE)], jac)
    k6 = _geo_rhs(m, [s[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i]
                                  + A65 * k5[i]) for i in range(NSTATE)], jac)
    out = [s[i] + h * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i])
           for i in range(NSTATE)]
    k7 = _geo_rhs(m, out, jac)
    n = NSTATE if jac else 4
    acc = 0.0
    for i in range(n):
        err = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i])
        sc = atol + rtol * max(abs(s[i]), abs(out[i]))
        acc += (err / sc) * (err / sc)
    return out, math.sqrt(acc / n)


class _Curve:
    __slots__ = ("n", "x0", "y0", "px", "py", "ax", "bx", "ay", "by", "ntab", "tab_psi")

    def __init__(self, curve):
        cf = [float(v) for v in curve[0]]
        n = len(cf) // 4
        self.n = n
        self.ax, self.bx = cf[:n], cf[n:2 * n]
        self.ay, self.by = cf[2 * n:3 * n], cf[3 * n:]
        self.x0, self.y0, self.px, self.py = (float(v) for v in curve[1])
        self.tab_psi = [float(v) for v in curve[2]]
        self.ntab = len(self.tab_psi) - 1


def _curve_eval(c, t):
    x, y, dx, dy = c.x0, c.y0, 0.0, 0.0
    for k in range(c.n):
        ck = math.cos((k + 1) * t)
        sk = math.sin((k + 1) * t)
        x += c.ax[k] * ck + c.bx[k] * sk
        y += c.ay[k] * ck + c.by[k] * sk
        dx += (k + 1) * (-c.ax[k] * sk + c.bx[k] * ck)
        dy += (k + 1) * (-c.ay[k] * sk + c.by[k] * ck)
    return x, y, dx, dy


def _wrap_pi(a):
    return a - 2.0 * math.pi * math.floor((a + math.pi) / (2.0 * math.pi))


def _curve_level(c, x, y):
    psi = math.atan2(y - c.py, x - c.px)
    p0 = c.tab_psi[0]
    ps = psi - 2.0 * math.pi * math.floor((psi - p0) / (2.0 * math.pi))
    lo, hi = 0, c.ntab
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if c.tab_psi[mid] <= ps:
            lo = mid
        else:
            hi = mid
    dt = 2.0 * math.pi / c.ntab
    t = dt * (lo + (ps - c.tab_psi[lo]) / (c.tab_psi[lo + 1] - c.tab_psi[lo]))
    for _ in range(12):
        X, Y, dX, dY = _curve_eval(c, t)
        rx, ry = X - c.px, Y - c.py
        r2 = rx * rx + ry * ry
        g = _wrap_pi(math.atan2(ry, rx) - psi)
        step = g / ((rx * dY - ry * dX) / r2)
        t -= step
        if abs(step) < 1e-15:
            break
    X, Y, _, _ = _curve_eval(c, t)
    tpar = t - 2.0 * math.pi * math.floor(t / (2.0 * math.pi))
    return (math.sqrt((x - c.px) ** 2 + (y - c.py) ** 2)
            - math.sqrt((X - c.px) ** 2 + (Y - c.py) ** 2)), tpar


def _approach(s, qx, qy):
    return (s[0] - qx) * s[2] + (s[1] - qy) * s[3]


def _locate(m, c, s0, a, b, fa, fb, which, qx, qy, jac, rtol, atol, tol):
    side = 0
    for _ in range(200):
        x = (a * fb - b * fa) / (fb - fa)
        if not (a < x < b):
            x = 0.5 * (a + b)
        out, _ = _rk_step(m, s0, x, jac, rtol, atol)
        if which == 0:
            fx = _curve_level(c, out[0], out[1])[0]
        elif which == 1:
            fx = out[4]
        else:
            fx = _approach(out, qx, qy)
        if fx == 0.0:
            return x, out
        if (fx > 0.0) == (fb > 0.0):
            b, fb = x, fx
            if side == -1:
                fa *= 0.5
            side = -1
        else:
            a, fa = x, fx
            if side == 1:
                fb *= 0.5
            side = 1
        if b - a < tol:
            break
    x = b if which == 0 else 0.5 * (a + b)
    out, _ = _rk_step(m, s0, x, jac, rtol, atol)
    return x, out


def integrate(kind, mparams, curve, y0, t_max, rtol, atol, h_max, h_init, jacobi,
              record, from_boundary, chart, event_tol, target=None, stop_at_target=False):
    """Integrate one unit-speed geodesic from ``y0 = (x, y, vx, vy)``.

    Returns ``(status, t_end, state, t_conj, exit_param, nsteps, events, samples)``.
    ``state`` holds ``(x, y, vx, vy, j, jdot)``.  ``events`` (closest approaches
    to ``target``) has rows ``(t, x, y, terminal, lateral_offset, dist)``;
    ``samples`` has rows ``(t, x, y, vx, vy, j, jdot)``.
    """
    m = _Metric(kind, mparams)
    c = _Curve(curve) if curve is not None else None
    have_target = target is not None
    qx, qy = (float(target[0]), float(target[1])) if have_target else (0.0, 0.0)
    s = [float(y0[0]), float(y0[1]), float(y0[2]), float(y0[3]), 0.0, 1.0]
    t = 0.0
    status = ST_HORIZON
    t_conj = INF
    exit_param = -1.0
    nsteps = 0
    samples = []
    events = []
    armed = not from_boundary
    F0 = -1.0
    Fn = -1.0
    if c is not None:
        F0 = _curve_level(c, s[0], s[1])[0]
    h = h_init
    if record:
        samples.append([0.0] + s)

    while t < t_max:
        h = min(h, h_max, t_max - t)
        snew, err = _rk_step(m, s, h, jacobi, rtol, atol)
        if not math.isfinite(err):
            err = 1e10
        if err > 1.0:
            h *= max(0.2, 0.9 * err ** -0.2)
            if h < 1e-14 * (1.0 + t):
                status = ST_UNDERFLOW
                break
            continue
        nsteps += 1
        te = INF
        sev = None
        if c is not None:
            Fn = _curve_level(c, snew[0], snew[1])[0]
            if armed:
                if Fn > 0.0:
                    te, sev = _locate(m, c, s, 0.0, h, F0, Fn, 0, qx, qy, jacobi, rtol, atol,
                                      event_tol)
            elif Fn < 0.0:
                armed = True
            elif t == 0.0:
                hh = h
                Fin = Fn
                for _ in range(60):
                    hh *= 0.5
                    probe, _ = _rk_step(m, s, hh, jacobi, rtol, atol)
                    Fin = _curve_level(c, probe[0], probe[1])[0]
                    if Fin < 0.0:
                        break
                if Fin < 0.0:
                    te, sev = _locate(m, c, s, hh, h, Fin, Fn, 0, qx, qy, jacobi, rtol, atol,
                                      event_tol)
                else:
                    te, sev = 0.0, list(s)
        tc = INF
        if jacobi and t_conj == INF and s[4] > 0.0 and snew[4] <= 0.0 and t > 0.0:
            tc, _ = _locate(m, c, s, 0.0, h, s[4], snew[4], 1, qx, qy, jacobi, rtol, atol, 1e-13)
        elif jacobi and t_conj == INF and t == 0.0 and snew[4] <= 0.0:
            probe, _ = _rk_step(m, s, 1e-3 * h, jacobi, rtol, atol)
            tc, _ = _locate(m, c, s, 1e-3 * h, h, probe[4], snew[4], 1, qx, qy, jacobi, rtol,
                            atol, 1e-13)
        if tc < te:
            t_conj = t + tc
        if have_target:
            D0 = _approach(s, qx, qy)
            Dn = _approach(sev if te < INF else snew, qx, qy)
            if D0 < 0.0 and Dn >= 0.0:
                ta, st = _locate(m, c, s, 0.0, te if te < INF else h, D0, Dn, 2, qx, qy, jacobi,
                                 rtol, atol, 1e-14)
                sp = math.sqrt(st[2] * st[2] + st[3] * st[3])
                events.append([t + ta, st[0], st[1], 0.0,
                               (st[2] * (qy - st[1]) - st[3] * (qx - st[0])) / sp,
                               math.sqrt((st[0] - qx) ** 2 + (st[1] - qy) ** 2)])
                if stop_at_target:
                    s, _ = _rk_step(m, s, ta, jacobi, rtol, atol)
                    t += ta
                    status = ST_TARGET
                    break
            elif te < INF and Dn < 0.0:
                sp = math.sqrt(sev[2] * sev[2] + sev[3] * sev[3])
                events.append([t + te, sev[0], sev[1], 1.0,
                               (sev[2] * (qy - sev[1]) - sev[3] * (qx - sev[0])) / sp,
                               math.sqrt((sev[0] - qx) ** 2 + (sev[1] - qy) ** 2)])
        if te < INF:
            t += te
            s = list(sev)
            exit_param = _curve_level(c, s[0], s[1])[1]
            status = ST_EXITED
            if record:
                samples.append([t] + s)
            break
        t += h
        s = snew
        if c is not None:
            F0 = Fn
        if record:
            samples.append([t] + s)
        if s[0] < chart[0] or s[0] > chart[1] or s[1] < chart[2] or s[1] > chart[3]:
            status = ST_CHART
            break
        fac = 5.0 if err < 1e-10 else 0.9 * err ** -0.2
        h *= min(5.0, max(0.2, fac))

    return (status, t, np.array(s, dtype=np.float64), t_conj, exit_param, nsteps,
            np.array(events, dtype=np.float64).reshape(-1, 6) if have_target else None,
            np.array(samples, dtype=np.float64).reshape(-1, 7) if record else None)


def gauss_curvature_at(kind, mparams, x, y):
    m = _Metric(kind, mparams)
    ds = _geo_rhs(m, [x, y, 0.0, 0.0, 1.0, 0.0], True)
    return -ds[5]


def _fmm_update(T, state, slow, nx, ny, i, j, h, order):
    idx = i * ny + j
    s = slow[idx]
    terms = []
    for lo_ok, hi_ok, step, pos, size in ((i > 0, i < nx - 1, ny, i, nx),
                                          (j > 0, j < ny - 1, 1, j, ny)):
        best = INF
        side = 0
        if lo_ok and state[idx - step] == 2:
            best = T[idx - step]
            side = -1
        if hi_ok and state[idx + step] == 2 and T[idx + step] < best:
            best = T[idx + step]
            side = 1
        if side == 0:
            continue
        aa = 1.0 / (h * h)
        bb = best
        if order == 2 and 0 <= pos + 2 * side < size:
            nb2 = idx + 2 * side * step
            if state[nb2] == 2 and T[nb2] <= best:
                aa = 9.0 / (4.0 * h * h)
                bb = (4.0 * best - T[nb2]) / 3.0
        terms.append((aa, bb))
    if not terms:
        return INF
    if len(terms) == 1:
        return terms[0][1] + s / math.sqrt(terms[0][0])
    (a0, b0), (a1, b1) = terms
    A = a0 + a1
    B = a0 * b0 + a1 * b1
    C = a0 * b0 * b0 + a1 * b1 * b1 - s * s
    disc = B * B - A * C
    if disc >= 0.0:
        val = (B + math.sqrt(disc)) / A
        if val >= b0 and val >= b1:
            return val
    t0 = b0 + s / math.sqrt(a0)
    t1 = b1 + s / math.sqrt(a1)
    return t0 if t0 < t1 else t1


def fast_march(slowness, mask, h, seed_idx, seed_val, order=2):
    """Fast marching for ``|grad u| = slowness``; ``seed_idx`` are flat indices frozen at ``seed_val``."""
    nx, ny = slowness.shape
    slow = slowness.ravel().tolist()
    mk = mask.ravel().tolist()
    T = [INF] * (nx * ny)
    state = [0] * (nx * ny)
    heap = []
    for idx, val in zip(seed_idx.tolist(), seed_val.tolist()):
        T[idx] = val
        state[idx] = 2
    for idx in seed_idx.tolist():
        heapq.heappush(heap, (T[idx], idx))
    while heap:
        key, idx = heapq.heappop(heap)
        if key > T[idx]:
            continue
        state[idx] = 2
        i, j = divmod(idx, ny)
        for nb in (idx - ny if i > 0 else -1, idx + ny if i < nx - 1 else -1,
                   idx - 1 if j > 0 else -1, idx + 1 if j < ny - 1 else -1):
            if nb < 0 or mk[nb] == 0 or state[nb] == 2:
                continue
            ni, nj = divmod(nb, ny)
            val = _fmm_update(T, state, slow, nx, ny, ni, nj, h, order)
            if val < T[nb]:
                T[nb] = val
                state[nb] = 1
                heapq.heappush(heap, (val, nb))
    return np.array(T, dtype=np.float64).reshape(nx, ny)
