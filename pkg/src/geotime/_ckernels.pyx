# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels.

Two entry points, mirrored line for line by :mod:`geotime._pykernels`:

``integrate``
    Dormand-Prince 5(4) integration of the geodesic equation (optionally with
    the scalar Jacobi equation) for the closed metric catalog, with boundary
    exit, Jacobi-zero and closest-approach events.
``fast_march``
    Fast marching (first or second order upwind) for ``|grad u| = n(x)`` on a
    masked grid.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, exp, log, atan2, fabs, floor, INFINITY, M_PI, isfinite
from libc.math cimport cos as cos_, sin as sin_
from libc.stdlib cimport malloc, free, realloc

cnp.import_array()

cdef enum:
    NSTATE = 6

cdef enum:
    EUCLIDEAN = 0
    CONFORMAL_BUMP = 1
    CONSTANT_CURVATURE = 2
    CUSTOM_SPD = 3

cdef enum:
    ST_HORIZON = 0
    ST_EXITED = 1
    ST_CHART = 2
    ST_UNDERFLOW = 3
    ST_TARGET = 4

cdef struct Metric:
    int kind
    double p0
    double p1
    double p2
    double p3
    int deg
    const double *c11
    const double *c12
    const double *c22

cdef struct Curve:
    int active
    int n
    double x0
    double y0
    double px
    double py
    const double *ax
    const double *bx
    const double *ay
    const double *by
    int ntab
    const double *tab_psi

# Dormand-Prince tableau
cdef double A21 = 1.0 / 5.0
cdef double A31 = 3.0 / 40.0, A32 = 9.0 / 40.0
cdef double A41 = 44.0 / 45.0, A42 = -56.0 / 15.0, A43 = 32.0 / 9.0
cdef double A51 = 19372.0 / 6561.0, A52 = -25360.0 / 2187.0, A53 = 64448.0 / 6561.0, A54 = -212.0 / 729.0
cdef double A61 = 9017.0 / 3168.0, A62 = -355.0 / 33.0, A63 = 46732.0 / 5247.0, A64 = 49.0 / 176.0, A65 = -5103.0 / 18656.0
cdef double B1 = 35.0 / 384.0, B3 = 500.0 / 1113.0, B4 = 125.0 / 192.0, B5 = -2187.0 / 6784.0, B6 = 11.0 / 84.0
cdef double E1 = 71.0 / 57600.0, E3 = -71.0 / 16695.0, E4 = 71.0 / 1920.0, E5 = -17253.0 / 339200.0, E6 = 22.0 / 525.0, E7 = -1.0 / 40.0


cdef void poly_derivs(const double *c, int deg, double x, double y, double *o) noexcept nogil:
    """value, d/dx, d/dy, d2/dx2, d2/dxdy, d2/dy2 of sum c[i,j] x^i y^j."""
    cdef int i, j, stride = deg + 1
    cdef double xi[16]
    cdef double yj[16]
    cdef double cij
    xi[0] = 1.0
    yj[0] = 1.0
    for i in range(1, stride):
        xi[i] = xi[i - 1] * x
        yj[i] = yj[i - 1] * y
    for i in range(6):
        o[i] = 0.0
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


cdef void phi_derivs(const Metric *m, double x, double y, double *o) noexcept nogil:
    """Conformal exponent phi and its first/second partials."""
    cdef double dx, dy, w2, e, q, K
    if m.kind == CONFORMAL_BUMP:
        dx = x - m.p0
        dy = y - m.p1
        w2 = m.p3 * m.p3
        e = m.p2 * exp(-(dx * dx + dy * dy) / (2.0 * w2))
        o[0] = e
        o[1] = -e * dx / w2
        o[2] = -e * dy / w2
        o[3] = e * (dx * dx / (w2 * w2) - 1.0 / w2)
        o[4] = e * dx * dy / (w2 * w2)
        o[5] = e * (dy * dy / (w2 * w2) - 1.0 / w2)
    elif m.kind == CONSTANT_CURVATURE:
        K = m.p0
        q = 1.0 + K * (x * x + y * y)
        o[0] = log(2.0) - log(q)
        o[1] = -2.0 * K * x / q
        o[2] = -2.0 * K * y / q
        o[3] = -2.0 * K / q + 4.0 * K * K * x * x / (q * q)
        o[4] = 4.0 * K * K * x * y / (q * q)
        o[5] = -2.0 * K / q + 4.0 * K * K * y * y / (q * q)
    else:
        o[0] = 0.0
        o[1] = 0.0
        o[2] = 0.0
        o[3] = 0.0
        o[4] = 0.0
        o[5] = 0.0


cdef double brioschi(double *E, double *F, double *G) noexcept nogil:
    """Gauss curvature from E, F, G and partials (layout of poly_derivs)."""
    cdef double Eu = E[1], Ev = E[2], Evv = E[5]
    cdef double Fu = F[1], Fv = F[2], Fuv = F[4]
    cdef double Gu = G[1], Gv = G[2], Guu = G[3]
    cdef double e = E[0], f = F[0], g = G[0]
    cdef double a11 = -0.5 * Evv + Fuv - 0.5 * Guu
    cdef double a12 = 0.5 * Eu, a13 = Fu - 0.5 * Ev
    cdef double a21 = Fv - 0.5 * Gu, a31 = 0.5 * Gv
    cdef double d1 = (a11 * (e * g - f * f) - a12 * (a21 * g - f * a31)
                      + a13 * (a21 * f - e * a31))
    cdef double b12 = 0.5 * Ev, b13 = 0.5 * Gu
    cdef double d2 = -b12 * (b12 * g - f * b13) + b13 * (b12 * f - e * b13)
    cdef double det = e * g - f * f
    return (d1 - d2) / (det * det)


cdef void geo_rhs(const Metric *m, const double *s, double *ds, bint jac) noexcept nogil:
    cdef double o[6]
    cdef double E[6]
    cdef double F[6]
    cdef double G[6]
    cdef double vx = s[2], vy = s[3]
    cdef double K = 0.0, det, i11, i12, i22
    cdef double gx_xx, gx_xy, gx_yy, gy_xx, gy_xy, gy_yy
    cdef double c1xx, c1xy, c1yy, c2xx, c2xy, c2yy
    ds[0] = vx
    ds[1] = vy
    if m.kind == CUSTOM_SPD:
        poly_derivs(m.c11, m.deg, s[0], s[1], E)
        poly_derivs(m.c12, m.deg, s[0], s[1], F)
        poly_derivs(m.c22, m.deg, s[0], s[1], G)
        # first-kind symbols [k, ij]
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
        ds[2] = -(gx_xx * vx * vx + 2.0 * gx_xy * vx * vy + gx_yy * vy * vy)
        ds[3] = -(gy_xx * vx * vx + 2.0 * gy_xy * vx * vy + gy_yy * vy * vy)
        if jac:
            K = brioschi(E, F, G)
    else:
        phi_derivs(m, s[0], s[1], o)
        ds[2] = -(o[1] * (vx * vx - vy * vy) + 2.0 * o[2] * vx * vy)
        ds[3] = -(o[2] * (vy * vy - vx * vx) + 2.0 * o[1] * vx * vy)
        if jac:
            K = -exp(-2.0 * o[0]) * (o[3] + o[5])
    if jac:
        ds[4] = s[5]
        ds[5] = -K * s[4]
    else:
        ds[4] = 0.0
        ds[5] = 0.0


cdef double rk_step(const Metric *m, const double *s, double h, double *out,
                    bint jac, double rtol, double atol) noexcept nogil:
    """One Dormand-Prince step; returns the scaled error norm."""
    cdef double k1[NSTATE]
    cdef double k2[NSTATE]
    cdef double k3[NSTATE]
    cdef double k4[NSTATE]
    cdef double k5[NSTATE]
    cdef double k6[NSTATE]
    cdef double k7[NSTATE]
    cdef double tmp[NSTATE]
    cdef int i, n = NSTATE if jac else 4
    cdef double err, sc, acc = 0.0
    geo_rhs(m, s, k1, jac)
    for i in range(NSTATE):
        tmp[i] = s[i] + h * A21 * k1[i]
    geo_rhs(m, tmp, k2, jac)
    for i in range(NSTATE):
        tmp[i] = s[i] + h * (A31 * k1[i] + A32 * k2[i])
    geo_rhs(m, tmp, k3, jac)
    for i in range(NSTATE):
        tmp[i] = s[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i])
    geo_rhs(m, tmp, k4, jac)
    for i in range(NSTATE):
        tmp[i] = s[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i])
    geo_rhs(m, tmp, k5, jac)
    for i in range(NSTATE):
        tmp[i] = s[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i])
    geo_rhs(m, tmp, k6, jac)
    for i in range(NSTATE):
        out[i] = s[i] + h * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i])
    geo_rhs(m, out, k7, jac)
    for i in range(n):
        err = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i])
        sc = atol + rtol * (fabs(s[i]) if fabs(s[i]) > fabs(out[i]) else fabs(out[i]))
        acc += (err / sc) * (err / sc)
    return sqrt(acc / n)


cdef void curve_eval(const Curve *c, double t, double *X, double *Y, double *dX, double *dY) noexcept nogil:
    cdef int k
    cdef double ck, sk, x = c.x0, y = c.y0, dx = 0.0, dy = 0.0
    for k in range(c.n):
        ck = cos_((k + 1) * t)
        sk = sin_((k + 1) * t)
        x += c.ax[k] * ck + c.bx[k] * sk
        y += c.ay[k] * ck + c.by[k] * sk
        dx += (k + 1) * (-c.ax[k] * sk + c.bx[k] * ck)
        dy += (k + 1) * (-c.ay[k] * sk + c.by[k] * ck)
    X[0] = x
    Y[0] = y
    dX[0] = dx
    dY[0] = dy



cdef inline double wrap_pi(double a) noexcept nogil:
    return a - 2.0 * M_PI * floor((a + M_PI) / (2.0 * M_PI))


cdef double curve_level(const Curve *c, double x, double y, double *tout) noexcept nogil:
    """Radial level function |x - pole| - rho(psi); negative inside."""
    cdef double psi = atan2(y - c.py, x - c.px)
    cdef double p0 = c.tab_psi[0]
    cdef double ps = psi - 2.0 * M_PI * floor((psi - p0) / (2.0 * M_PI))
    cdef int lo = 0, hi = c.ntab, mid, it
    cdef double dt = 2.0 * M_PI / c.ntab
    cdef double t, X, Y, dX, dY, rx, ry, r2, g, dg, step
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if c.tab_psi[mid] <= ps:
            lo = mid
        else:
            hi = mid
    t = dt * (lo + (ps - c.tab_psi[lo]) / (c.tab_psi[lo + 1] - c.tab_psi[lo]))
    for it in range(12):
        curve_eval(c, t, &X, &Y, &dX, &dY)
        rx = X - c.px
        ry = Y - c.py
        r2 = rx * rx + ry * ry
        g = wrap_pi(atan2(ry, rx) - psi)
        dg = (rx * dY - ry * dX) / r2
        step = g / dg
        t -= step
        if fabs(step) < 1e-15:
            break
    curve_eval(c, t, &X, &Y, &dX, &dY)
    tout[0] = t - 2.0 * M_PI * floor(t / (2.0 * M_PI))
    return sqrt((x - c.px) * (x - c.px) + (y - c.py) * (y - c.py)) - sqrt((X - c.px) * (X - c.px) + (Y - c.py) * (Y - c.py))


cdef inline double approach_fn(const double *s, double qx, double qy) noexcept nogil:
    return (s[0] - qx) * s[2] + (s[1] - qy) * s[3]


cdef double locate(const Metric *m, const Curve *c, const double *s0, double a, double b,
                   double fa, double fb, int which, double qx, double qy, bint jac,
                   double rtol, double atol, double tol, double *out) noexcept nogil:
    """Illinois false position on the step length for a sign change of an event function.

    which: 0 boundary level, 1 Jacobi field, 2 closest approach.
    """
    cdef double x, fx, tpar
    cdef int side = 0, it
    x = b
    for it in range(200):
        x = (a * fb - b * fa) / (fb - fa)
        if not (x > a and x < b):
            x = 0.5 * (a + b)
        rk_step(m, s0, x, out, jac, rtol, atol)
        if which == 0:
            fx = curve_level(c, out[0], out[1], &tpar)
        elif which == 1:
            fx = out[4]
        else:
            fx = approach_fn(out, qx, qy)
        if fx == 0.0:
            return x
        if (fx > 0.0) == (fb > 0.0):
            b = x
            fb = fx
            if side == -1:
                fa *= 0.5
            side = -1
        else:
            a = x
            fa = fx
            if side == 1:
                fb *= 0.5
            side = 1
        if b - a < tol:
            break
    x = b if which == 0 else 0.5 * (a + b)
    rk_step(m, s0, x, out, jac, rtol, atol)
    return x


cdef class _Buf:
    cdef double *data
    cdef Py_ssize_t n, cap, width

    def __cinit__(self, Py_ssize_t width):
        self.width = width
        self.cap = 64
        self.n = 0
        self.data = <double *> malloc(self.cap * width * sizeof(double))

    def __dealloc__(self):
        free(self.data)

    cdef void push(self, const double *row) noexcept nogil:
        cdef Py_ssize_t i
        if self.n == self.cap:
            self.cap *= 2
            self.data = <double *> realloc(self.data, self.cap * self.width * sizeof(double))
        for i in range(self.width):
            self.data[self.n * self.width + i] = row[i]
        self.n += 1

    def array(self):
        out = np.empty((self.n, self.width), dtype=np.float64)
        cdef double[:, ::1] v = out
        cdef Py_ssize_t i, j
        for i in range(self.n):
            for j in range(self.width):
                v[i, j] = self.data[i * self.width + j]
        return out


def integrate(int kind, double[::1] mparams, object curve, double[::1] y0, double t_max,
              double rtol, double atol, double h_max, double h_init, bint jacobi,
              bint record, bint from_boundary, double[::1] chart, double event_tol,
              object target=None, bint stop_at_target=False):
    """Integrate one geodesic; see ``geotime._pykernels.integrate`` for the contract."""
    cdef Metric m
    cdef Curve c
    cdef double[::1] cf
    cdef double[::1] tab
    cdef double s[NSTATE]
    cdef double snew[NSTATE]
    cdef double sev[NSTATE]
    cdef double sev2[NSTATE]
    cdef double row[7]
    cdef double t = 0.0, h, err, fac, F0 = -1.0, Fn, tpar = -1.0, exit_param = -1.0
    cdef double t_conj = INFINITY, te, tc, ta, hh, Fin, sin_t
    cdef double qx = 0.0, qy = 0.0, D0, Dn
    cdef bint armed, have_target = target is not None, exited = False
    cdef int status = ST_HORIZON, i, nsteps = 0, k
    cdef int deg = 0
    cdef _Buf samples = _Buf(7)
    cdef _Buf events = _Buf(6)

    m.kind = kind
    m.p0 = mparams[0] if mparams.shape[0] > 0 else 0.0
    m.p1 = mparams[1] if mparams.shape[0] > 1 else 0.0
    m.p2 = mparams[2] if mparams.shape[0] > 2 else 0.0
    m.p3 = mparams[3] if mparams.shape[0] > 3 else 0.0
    if kind == CUSTOM_SPD:
        deg = <int> mparams[0]
        k = (deg + 1) * (deg + 1)
        m.deg = deg
        m.c11 = &mparams[1]
        m.c12 = &mparams[1 + k]
        m.c22 = &mparams[1 + 2 * k]
    c.active = 0
    if curve is not None:
        cf = curve[0]
        tab = curve[2]
        c.active = 1
        c.n = cf.shape[0] // 4
        c.ax = &cf[0]
        c.bx = &cf[c.n]
        c.ay = &cf[2 * c.n]
        c.by = &cf[3 * c.n]
        c.x0 = curve[1][0]
        c.y0 = curve[1][1]
        c.px = curve[1][2]
        c.py = curve[1][3]
        c.ntab = tab.shape[0] - 1
        c.tab_psi = &tab[0]
    if have_target:
        qx = target[0]
        qy = target[1]

    for i in range(4):
        s[i] = y0[i]
    s[4] = 0.0
    s[5] = 1.0
    armed = not from_boundary
    if c.active:
        F0 = curve_level(&c, s[0], s[1], &tpar)
    h = h_init
    if record:
        row[0] = 0.0
        for i in range(6):
            row[i + 1] = s[i]
        samples.push(row)

    with nogil:
        while t < t_max:
            if h > h_max:
                h = h_max
            if h > t_max - t:
                h = t_max - t
            err = rk_step(&m, s, h, snew, jacobi, rtol, atol)
            if not isfinite(err):
                err = 1e10
            if err > 1.0:
                fac = 0.9 * err ** (-0.2)
                if fac < 0.2:
                    fac = 0.2
                h *= fac
                if h < 1e-14 * (1.0 + t):
                    status = ST_UNDERFLOW
                    break
                continue
            nsteps += 1
            te = INFINITY
            if c.active:
                Fn = curve_level(&c, snew[0], snew[1], &tpar)
                if armed:
                    if Fn > 0.0:
                        te = locate(&m, &c, s, 0.0, h, F0, Fn, 0, qx, qy, jacobi, rtol, atol, event_tol, sev)
                elif Fn < 0.0:
                    armed = True
                elif t == 0.0:
                    # started on the boundary and left the domain within one step
                    hh = h
                    Fin = Fn
                    for k in range(60):
                        hh *= 0.5
                        rk_step(&m, s, hh, sev, jacobi, rtol, atol)
                        Fin = curve_level(&c, sev[0], sev[1], &tpar)
                        if Fin < 0.0:
                            break
                    if Fin < 0.0:
                        te = locate(&m, &c, s, hh, h, Fin, Fn, 0, qx, qy, jacobi, rtol, atol, event_tol, sev)
                    else:
                        te = 0.0
                        for i in range(NSTATE):
                            sev[i] = s[i]
            tc = INFINITY
            if jacobi and t_conj == INFINITY and s[4] > 0.0 and snew[4] <= 0.0 and t > 0.0:
                tc = locate(&m, &c, s, 0.0, h, s[4], snew[4], 1, qx, qy, jacobi, rtol, atol, 1e-13, sev2)
            elif jacobi and t_conj == INFINITY and t == 0.0 and snew[4] <= 0.0:
                rk_step(&m, s, 1e-3 * h, sev2, jacobi, rtol, atol)
                tc = locate(&m, &c, s, 1e-3 * h, h, sev2[4], snew[4], 1, qx, qy, jacobi, rtol, atol, 1e-13, sev2)
            if tc < te:
                t_conj = t + tc
            if have_target:
                D0 = approach_fn(s, qx, qy)
                if te < INFINITY:
                    Dn = approach_fn(sev, qx, qy)
                else:
                    Dn = approach_fn(snew, qx, qy)
                if D0 < 0.0 and Dn >= 0.0:
                    ta = locate(&m, &c, s, 0.0, (te if te < INFINITY else h), D0, Dn, 2, qx, qy,
                                jacobi, rtol, atol, 1e-14, sev2)
                    row[0] = t + ta
                    row[1] = sev2[0]
                    row[2] = sev2[1]
                    row[3] = 0.0
                    sin_t = sqrt(sev2[2] * sev2[2] + sev2[3] * sev2[3])
                    row[4] = (sev2[2] * (qy - sev2[1]) - sev2[3] * (qx - sev2[0])) / sin_t
                    row[5] = sqrt((sev2[0] - qx) * (sev2[0] - qx) + (sev2[1] - qy) * (sev2[1] - qy))
                    events.push(row)
                    if stop_at_target:
                        rk_step(&m, s, ta, sev, jacobi, rtol, atol)
                        t += ta
                        for i in range(NSTATE):
                            s[i] = sev[i]
                        status = ST_TARGET
                        break
                elif te < INFINITY and Dn < 0.0:
                    row[0] = t + te
                    row[1] = sev[0]
                    row[2] = sev[1]
                    row[3] = 1.0
                    sin_t = sqrt(sev[2] * sev[2] + sev[3] * sev[3])
                    row[4] = (sev[2] * (qy - sev[1]) - sev[3] * (qx - sev[0])) / sin_t
                    row[5] = sqrt((sev[0] - qx) * (sev[0] - qx) + (sev[1] - qy) * (sev[1] - qy))
                    events.push(row)
            if te < INFINITY:
                t += te
                for i in range(NSTATE):
                    s[i] = sev[i]
                exit_param = tpar
                if c.active:
                    curve_level(&c, s[0], s[1], &exit_param)
                status = ST_EXITED
                if record:
                    row[0] = t
                    for i in range(6):
                        row[i + 1] = s[i]
                    samples.push(row)
                break
            t += h
            for i in range(NSTATE):
                s[i] = snew[i]
            if c.active:
                F0 = Fn
            if record:
                row[0] = t
                for i in range(6):
                    row[i + 1] = s[i]
                samples.push(row)
            if s[0] < chart[0] or s[0] > chart[1] or s[1] < chart[2] or s[1] > chart[3]:
                status = ST_CHART
                break
            fac = 5.0 if err < 1e-10 else 0.9 * err ** (-0.2)
            if fac > 5.0:
                fac = 5.0
            if fac < 0.2:
                fac = 0.2
            h *= fac

    state = np.empty(NSTATE, dtype=np.float64)
    for i in range(NSTATE):
        state[i] = s[i]
    return (status, t, state, t_conj, exit_param, nsteps,
            events.array() if have_target else None,
            samples.array() if record else None)


def gauss_curvature_at(int kind, double[::1] mparams, double x, double y):
    cdef Metric m
    cdef double s[NSTATE]
    cdef double ds[NSTATE]
    cdef int k
    m.kind = kind
    m.p0 = mparams[0] if mparams.shape[0] > 0 else 0.0
    m.p1 = mparams[1] if mparams.shape[0] > 1 else 0.0
    m.p2 = mparams[2] if mparams.shape[0] > 2 else 0.0
    m.p3 = mparams[3] if mparams.shape[0] > 3 else 0.0
    if kind == CUSTOM_SPD:
        m.deg = <int> mparams[0]
        k = (m.deg + 1) * (m.deg + 1)
        m.c11 = &mparams[1]
        m.c12 = &mparams[1 + k]
        m.c22 = &mparams[1 + 2 * k]
    s[0] = x
    s[1] = y
    s[2] = 0.0
    s[3] = 0.0
    s[4] = 1.0
    s[5] = 0.0
    geo_rhs(&m, s, ds, True)
    return -ds[5]


# ---------------------------------------------------------------- fast marching

cdef struct HeapItem:
    double key
    Py_ssize_t idx


cdef void heap_push(HeapItem **heap, Py_ssize_t *n, Py_ssize_t *cap, double key, Py_ssize_t idx) noexcept nogil:
    cdef Py_ssize_t i, parent
    cdef HeapItem tmp
    if n[0] == cap[0]:
        cap[0] *= 2
        heap[0] = <HeapItem *> realloc(heap[0], cap[0] * sizeof(HeapItem))
    i = n[0]
    n[0] += 1
    heap[0][i].key = key
    heap[0][i].idx = idx
    while i > 0:
        parent = (i - 1) // 2
        if heap[0][parent].key <= heap[0][i].key:
            break
        tmp = heap[0][parent]
        heap[0][parent] = heap[0][i]
        heap[0][i] = tmp
        i = parent


cdef HeapItem heap_pop(HeapItem *heap, Py_ssize_t *n) noexcept nogil:
    cdef HeapItem top = heap[0], tmp
    cdef Py_ssize_t i = 0, l, r, small
    n[0] -= 1
    heap[0] = heap[n[0]]
    while True:
        l = 2 * i + 1
        r = l + 1
        small = i
        if l < n[0] and heap[l].key < heap[small].key:
            small = l
        if r < n[0] and heap[r].key < heap[small].key:
            small = r
        if small == i:
            break
        tmp = heap[i]
        heap[i] = heap[small]
        heap[small] = tmp
        i = small
    return top


cdef double fmm_update(const double *T, const unsigned char *state, const unsigned char *mask,
                       const double *slow, Py_ssize_t nx, Py_ssize_t ny, Py_ssize_t i,
                       Py_ssize_t j, double h, int order) noexcept nogil:
    """Upwind update of sum_k a_k (T - b_k)^2 = n^2 over the two grid axes.

    First-order terms have a = 1/h^2, b = T_1; second-order one-sided terms
    (when the next node upwind is accepted and not larger) have a = 9/(4h^2),
    b = (4 T_1 - T_2) / 3.
    """
    cdef Py_ssize_t idx = i * ny + j, nb2
    cdef double a[2]
    cdef double b[2]
    cdef double best, aa, bb, A, B, C, disc, val, t0, t1, s = slow[idx]
    cdef int na = 0, side
    # x axis
    best = INFINITY
    side = 0
    if i > 0 and state[idx - ny] == 2:
        best = T[idx - ny]
        side = -1
    if i < nx - 1 and state[idx + ny] == 2 and T[idx + ny] < best:
        best = T[idx + ny]
        side = 1
    if side != 0:
        aa = 1.0 / (h * h)
        bb = best
        if order == 2 and i + 2 * side >= 0 and i + 2 * side < nx:
            nb2 = idx + 2 * side * ny
            if state[nb2] == 2 and T[nb2] <= best:
                aa = 9.0 / (4.0 * h * h)
                bb = (4.0 * best - T[nb2]) / 3.0
        a[na] = aa
        b[na] = bb
        na += 1
    # y axis
    best = INFINITY
    side = 0
    if j > 0 and state[idx - 1] == 2:
        best = T[idx - 1]
        side = -1
    if j < ny - 1 and state[idx + 1] == 2 and T[idx + 1] < best:
        best = T[idx + 1]
        side = 1
    if side != 0:
        aa = 1.0 / (h * h)
        bb = best
        if order == 2 and j + 2 * side >= 0 and j + 2 * side < ny:
            nb2 = idx + 2 * side
            if state[nb2] == 2 and T[nb2] <= best:
                aa = 9.0 / (4.0 * h * h)
                bb = (4.0 * best - T[nb2]) / 3.0
        a[na] = aa
        b[na] = bb
        na += 1
    if na == 0:
        return INFINITY
    if na == 1:
        return b[0] + s / sqrt(a[0])
    A = a[0] + a[1]
    B = a[0] * b[0] + a[1] * b[1]
    C = a[0] * b[0] * b[0] + a[1] * b[1] * b[1] - s * s
    disc = B * B - A * C
    if disc >= 0.0:
        val = (B + sqrt(disc)) / A
        if val >= b[0] and val >= b[1]:
            return val
    t0 = b[0] + s / sqrt(a[0])
    t1 = b[1] + s / sqrt(a[1])
    return t0 if t0 < t1 else t1


def fast_march(double[:, ::1] slowness, unsigned char[:, ::1] mask, double h,
               cnp.int64_t[::1] seed_idx, double[::1] seed_val, int order=2):
    """Fast marching for ``|grad u| = slowness``; ``seed_idx`` are flat indices frozen at ``seed_val``."""
    cdef Py_ssize_t nx = slowness.shape[0], ny = slowness.shape[1], ntot = nx * ny
    out = np.full((nx, ny), np.inf)
    cdef double[:, ::1] Tv = out
    cdef double *T = &Tv[0, 0]
    st = np.zeros((nx, ny), dtype=np.uint8)
    cdef unsigned char[:, ::1] stv = st
    cdef unsigned char *state = &stv[0, 0]
    cdef const unsigned char *mk = &mask[0, 0]
    cdef const double *slow = &slowness[0, 0]
    cdef Py_ssize_t cap = 1024, n = 0, k, idx, i, j, nb, d
    cdef HeapItem *heap = <HeapItem *> malloc(cap * sizeof(HeapItem))
    cdef HeapItem item
    cdef double val
    cdef Py_ssize_t nbr[4]
    with nogil:
        for k in range(seed_idx.shape[0]):
            idx = seed_idx[k]
            T[idx] = seed_val[k]
            state[idx] = 2
        for k in range(seed_idx.shape[0]):
            idx = seed_idx[k]
            heap_push(&heap, &n, &cap, T[idx], idx)
        while n > 0:
            item = heap_pop(heap, &n)
            idx = item.idx
            if item.key > T[idx]:
                continue
            state[idx] = 2
            i = idx // ny
            j = idx - i * ny
            nbr[0] = idx - ny if i > 0 else -1
            nbr[1] = idx + ny if i < nx - 1 else -1
            nbr[2] = idx - 1 if j > 0 else -1
            nbr[3] = idx + 1 if j < ny - 1 else -1
            for d in range(4):
                nb = nbr[d]
                if nb < 0 or mk[nb] == 0 or state[nb] == 2:
                    continue
                val = fmm_update(T, state, mk, slow, nx, ny, nb // ny, nb - (nb // ny) * ny, h, order)
                if val < T[nb]:
                    T[nb] = val
                    state[nb] = 1
                    heap_push(&heap, &n, &cap, val, nb)
    free(heap)
    return out
