"""Ground-truth distance oracles, cut times and cut-locus sampling.

Two independent oracles:

- :func:`distance_eikonal` solves ``|grad u|_{g^-1} = 1`` by fast marching on a
  masked grid (conformal metrics only);
- :func:`distance_shooting` solves the two-point problem by a multistart fan of
  geodesics refined with bracketing root finds in the shooting angle.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import brentq

from . import kernels
from .errors import DomainError, OracleError
from .geodesic import (DEFAULT_OPTIONS, IntegratorOptions, UnitVectorAt, _start_kind,
                       integrate_raw)
from .manifold import DomainSpec, MetricSpec, boundary_frame, metric_at

INF = float("inf")
TWO_PI = 2.0 * np.pi


# --------------------------------------------------------------------- eikonal

@dataclass(frozen=True, eq=False)
class DistanceField:
    """Distances from ``source`` on the grid ``xs x ys`` (``inf`` outside the domain)."""

    source: np.ndarray
    xs: np.ndarray
    ys: np.ndarray
    h: float
    values: np.ndarray
    mask: np.ndarray
    method: str = "eikonal"

    def at(self, pts) -> np.ndarray:
        """Bilinear interpolation; cells with masked corners fall back to the
        best value over the surrounding 4 x 4 nodes plus the local
        Euclidean-to-node length."""
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        fx = (pts[:, 0] - self.xs[0]) / self.h
        fy = (pts[:, 1] - self.ys[0]) / self.h
        i = np.clip(np.floor(fx).astype(int), 0, self.xs.size - 2)
        j = np.clip(np.floor(fy).astype(int), 0, self.ys.size - 2)
        ax, ay = fx - i, fy - j
        V = self.values
        c00, c10, c01, c11 = V[i, j], V[i + 1, j], V[i, j + 1], V[i + 1, j + 1]
        with np.errstate(invalid="ignore"):
            out = (c00 * (1 - ax) * (1 - ay) + c10 * ax * (1 - ay)
                   + c01 * (1 - ax) * ay + c11 * ax * ay)
        bad = ~np.isfinite(out)
        if np.any(bad):
            ib, jb = i[bad], j[bad]
            best = np.full(bad.sum(), INF)
            for di in range(-1, 3):
                for dj in range(-1, 3):
                    ii = np.clip(ib + di, 0, self.xs.size - 1)
                    jj = np.clip(jb + dj, 0, self.ys.size - 1)
                    dist = self.h * np.hypot(fx[bad] - ii, fy[bad] - jj)
                    best = np.minimum(best, V[ii, jj] + dist * self._speed)
            out[bad] = best
        return out

    @property
    def _speed(self):
        return getattr(self, "_nmax", 1.0)

    def export(self, path, fmt="csv"):
        """Grid dump with a header line ``h, bounds, method, source``."""
        head = (f"# geotime-field v1 h={self.h!r} bounds={self.xs[0]!r},{self.xs[-1]!r},"
                f"{self.ys[0]!r},{self.ys[-1]!r} nx={self.xs.size} ny={self.ys.size} "
                f"method={self.method} source={self.source[0]!r},{self.source[1]!r}\n")
        if fmt == "csv":
            with open(path, "w") as fh:
                fh.write(head)
                fh.write("x,y,value\n")
                X, Y = np.meshgrid(self.xs, self.ys, indexing="ij")
                for x, y, v in zip(X.ravel(), Y.ravel(), self.values.ravel()):
                    if np.isfinite(v):
                        fh.write(f"{x!r},{y!r},{v!r}\n")
        elif fmt == "bin":
            with open(path, "wb") as fh:
                fh.write(head.encode())
                fh.write(np.ascontiguousarray(self.values, dtype="<f8").tobytes())
        else:
            raise ValueError(f"unknown export format {fmt!r}")


def eikonal_grid(domain: DomainSpec, h: float, pad: int = 2):
    x0, x1, y0, y1 = domain.bbox()
    xs = x0 - pad * h + h * np.arange(int(np.ceil((x1 - x0) / h)) + 2 * pad + 1)
    ys = y0 - pad * h + h * np.arange(int(np.ceil((y1 - y0) / h)) + 2 * pad + 1)
    return xs, ys, domain.grid_mask(xs, ys)


def _segment_length(spec: MetricSpec, a, pts):
    """Riemannian length of straight segments ``a -> pts`` (Simpson in ``exp(phi)``)."""
    mid = 0.5 * (a + pts)
    n = (spec.conformal_factor(a[None]) + 4 * spec.conformal_factor(mid)
         + spec.conformal_factor(pts)) / 6.0
    return n * np.hypot(*(pts - a).T)


def distance_eikonal(spec: MetricSpec, domain: DomainSpec, source, h: float = 1.0 / 128,
                     seed_radius: float = 6.0, order: int = 2, grid=None) -> DistanceField:
    """Fast-marching distance from ``source``; nodes within ``seed_radius * h``
    are initialised with straight-segment lengths."""
    if not spec.is_conformal:
        raise DomainError("fast marching supports conformal metrics only; "
                          "use distance_shooting for custom_spd")
    src = np.asarray(source, dtype=np.float64).reshape(2)
    if float(domain.depth(src[None])[0]) < -1e-9:
        raise DomainError(f"source {src.tolist()} lies outside the domain")
    xs, ys, mask = grid if grid is not None else eikonal_grid(domain, h)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    P = np.stack([X, Y], -1)
    slow = np.ascontiguousarray(spec.conformal_factor(P))
    dist = np.hypot(X - src[0], Y - src[1])
    sel = (dist <= seed_radius * h) & mask
    if not sel.any():
        k = np.argmin(np.where(mask, dist, INF))
        sel = np.zeros_like(mask)
        sel.flat[k] = True
    idx = np.flatnonzero(sel).astype(np.int64)
    seed_val = _segment_length(spec, src, P.reshape(-1, 2)[idx])
    T = kernels.fast_march(slow, np.ascontiguousarray(mask, dtype=np.uint8), float(h), idx,
                           np.ascontiguousarray(seed_val), order)
    T[~mask] = INF
    field = DistanceField(src, xs, ys, float(h), T, mask)
    object.__setattr__(field, "_nmax", float(slow[mask].max()))
    return field


# -------------------------------------------------------------------- shooting

@dataclass(frozen=True)
class ShootingOptions:
    n_angles: int = 64
    t_max: float = 50.0
    tol_hit: float = 1e-8
    tol_cluster_len: float = 1e-5
    tol_cluster_deg: float = 2.0
    integrator: IntegratorOptions = DEFAULT_OPTIONS


DEFAULT_SHOOTING = ShootingOptions()
_NEAR_BOUNDARY = 1e-2


def _fan(spec, domain, p, n, from_boundary):
    """Shooting angles and unit directions; inward half-circle for boundary bases."""
    g = metric_at(spec, p)
    if from_boundary:
        _, t = domain.closest_boundary(p[None])
        fr = boundary_frame(domain, spec, float(domain.s_of_t(t)[0]))
        # the inward half-plane is bounded by the tangent line for any metric
        base_ang = np.arctan2(fr.tangent[1], fr.tangent[0]) + 0.5 * np.pi
        # Chebyshev-like spacing clusters rays near the two tangent directions
        k = (np.arange(n) + 0.5) / n
        th = base_ang + 0.5 * np.pi * (-np.cos(np.pi * k))
    else:
        th = TWO_PI * (np.arange(n) + 0.5) / n
    return th, g


def _direction(g, th):
    v = np.array([np.cos(th), np.sin(th)])
    return v / np.sqrt(v @ g @ v)


class _Shooter:
    """Caches the per-base setup for repeated shots from one point."""

    def __init__(self, spec, domain, p, opts: ShootingOptions):
        self.spec, self.domain, self.p, self.opts = spec, domain, p, opts
        self.g = metric_at(spec, p)
        depth = float(domain.depth(p[None])[0]) if domain is not None else 1.0
        if depth < -opts.integrator.boundary_tol:
            raise DomainError(f"point {p.tolist()} lies outside the domain")
        self.from_boundary = depth <= opts.integrator.boundary_tol

    def shoot(self, th, **kw):
        d = _direction(self.g, th)
        return integrate_raw(self.spec, self.domain, self.p, d, self.opts.t_max,
                             from_boundary=self.from_boundary, opts=self.opts.integrator, **kw)


def _cluster(sols, opts: ShootingOptions):
    """Keep solutions within the length tolerance of the minimum, one per angle cluster."""
    if not sols:
        return INF, []
    sols = sorted(sols, key=lambda s: s[1])
    L = sols[0][1]
    keep = []
    for th, ln in sols:
        if ln > L + opts.tol_cluster_len:
            break
        if all(abs(((th - k) + np.pi) % TWO_PI - np.pi) > np.deg2rad(opts.tol_cluster_deg)
               for k, _ in keep):
            keep.append((th, ln))
    return L, keep


def _adaptive_fan(sh: _Shooter, n, target=None, max_gap=0.05, max_depth=8, **kw):
    """Fan angles with their shots, bisected wherever neighbouring exit points
    are more than ``max_gap`` apart (focusing squeezes whole families of
    rays into slivers the uniform fan cannot resolve)."""
    th, _ = _fan(sh.spec, sh.domain, sh.p, n, sh.from_boundary)
    periodic = not sh.from_boundary
    if periodic:
        th = np.append(th, th[0] + TWO_PI)
    shots = [sh.shoot(t, target=target, **kw) for t in th]
    for _ in range(max_depth):
        ex = np.array([r[2][:2] for r in shots])
        far = np.flatnonzero(np.hypot(*np.diff(ex, axis=0).T) > max_gap)
        if far.size == 0:
            break
        mids = 0.5 * (th[far] + th[far + 1])
        th = np.insert(th, far + 1, mids)
        for k, t in zip(far[::-1], mids[::-1]):
            shots.insert(k + 1, sh.shoot(t, target=target, **kw))
    return th, shots


def _solve_interior_target(sh: _Shooter, q, opts: ShootingOptions):
    th, shots = _adaptive_fan(sh, opts.n_angles, target=q)

    def events(t):
        ev = sh.shoot(t, target=q)[6]
        return ev[ev[:, 3] == 0.0] if ev is not None else np.zeros((0, 6))

    fan = [r[6][r[6][:, 3] == 0.0] if r[6] is not None else np.zeros((0, 6)) for r in shots]
    sols = []
    best_res = INF
    for k in range(th.size - 1):
        a, b = th[k], th[k + 1]
        ea, eb = fan[k], fan[k + 1]
        for ra in ea:
            if ra[5] < opts.tol_hit:
                sols.append((float(np.mod(a, TWO_PI)), ra[0]))
                continue
            if eb.shape[0] == 0:
                continue
            rb = eb[np.argmin(np.abs(eb[:, 0] - ra[0]))]
            if np.sign(ra[4]) == np.sign(rb[4]) or rb[5] < opts.tol_hit:
                continue
            t_ref = [0.5 * (ra[0] + rb[0])]

            def f(x):
                e = events(x)
                if e.shape[0] == 0:
                    return np.nan
                r = e[np.argmin(np.abs(e[:, 0] - t_ref[0]))]
                t_ref[0] = r[0]
                return r[4]

            try:
                x = brentq(f, a, b, xtol=1e-14, rtol=1e-15, maxiter=100)
            except ValueError:
                continue
            e = events(x)
            if e.shape[0] == 0:
                continue
            r = e[np.argmin(np.abs(e[:, 0] - t_ref[0]))]
            best_res = min(best_res, r[5])
            if r[5] < opts.tol_hit:
                sols.append((float(np.mod(x, TWO_PI)), float(r[0])))
    return sols, best_res


def _solve_boundary_target(sh: _Shooter, q, opts: ShootingOptions):
    """Target on the boundary: root find on the wrapped exit parameter."""
    dom = sh.domain
    _, tq = dom.closest_boundary(q[None])
    tq = float(tq[0])
    th, shots = _adaptive_fan(sh, opts.n_angles)

    def wrap(r):
        if r[0] != kernels.ST_EXITED:
            return np.nan, INF
        return (r[4] - tq + np.pi) % TWO_PI - np.pi, r[1]

    def resid(t):
        return wrap(sh.shoot(t))

    vals = [wrap(r) for r in shots]
    sols = []
    best_res = INF
    for k in range(th.size - 1):
        a, b = th[k], th[k + 1]
        fa, fb = vals[k][0], vals[k + 1][0]
        if not (np.isfinite(fa) and np.isfinite(fb)):
            continue
        if fa == 0.0:
            sols.append((float(np.mod(a, TWO_PI)), vals[k][1]))
            continue
        if np.sign(fa) == np.sign(fb) or abs(fa - fb) > np.pi:
            continue
        try:
            x = brentq(lambda t: resid(t)[0], a, b, xtol=1e-15, rtol=1e-15, maxiter=100)
        except ValueError:
            continue
        res, L = resid(x)
        pt = sh.shoot(x)[2][:2]
        miss = float(np.hypot(*(pt - q)))
        best_res = min(best_res, miss)
        if miss < max(opts.tol_hit, 1e-7):
            sols.append((float(np.mod(x, TWO_PI)), float(L)))
    return sols, best_res


def _solve_near_boundary_target(sh: _Shooter, q, opts: ShootingOptions):
    """Target just inside the boundary: polish the minimizers to its boundary
    foot point by Newton on ``(theta, t)``.  Rays that reach such targets form
    a sliver narrower than any practical fan when geodesics focus."""
    dom = sh.domain
    _, tq = dom.closest_boundary(q[None])
    qb = dom.curve.eval(tq)[0]
    bsols, _ = _solve_boundary_target(sh, qb, opts)
    io = opts.integrator
    eps = 1e-7

    def state(th, t):
        r = integrate_raw(sh.spec, dom, sh.p, _direction(sh.g, th), t,
                          from_boundary=sh.from_boundary, opts=io)
        return r[2][:4], float(r[1])

    sols, best = [], INF
    for th0, L0 in bsols:
        th, t = th0, L0
        for _ in range(30):
            y, t = state(th, t)
            miss = q - y[:2]
            err = float(np.hypot(*miss))
            if err < opts.tol_hit:
                sols.append((float(np.mod(th, TWO_PI)), t))
                break
            y2, _ = state(th + eps, t)
            J = np.column_stack([(y2[:2] - y[:2]) / eps, y[2:4]])
            try:
                dth, dt = np.linalg.solve(J, miss)
            except np.linalg.LinAlgError:
                break
            th, t = th + dth, max(t + dt, 0.0)
        best = min(best, err)
    return sols, best


def distance_shooting(spec: MetricSpec, domain: DomainSpec, p, q,
                      opts: ShootingOptions = DEFAULT_SHOOTING):
    """Global minimum geodesic length from ``p`` to ``q`` and all minimizing directions.

    Returns ``(distance, directions)``; ``directions`` is a list of ``g``-unit
    vectors at ``p``, one per minimizer cluster.
    """
    L, keep, _ = _shooting_detail(spec, domain, p, q, opts)
    g = metric_at(spec, np.asarray(p, dtype=np.float64))
    return L, [_direction(g, th) for th, _ in keep]


def _shooting_detail(spec, domain, p, q, opts=DEFAULT_SHOOTING):
    p = np.asarray(p, dtype=np.float64).reshape(2)
    q = np.asarray(q, dtype=np.float64).reshape(2)
    spec._check(p)
    spec._check(q)
    if np.hypot(*(p - q)) < 1e-14:
        return 0.0, [], []
    dq = float(domain.depth(q[None])[0])
    if dq < -opts.integrator.boundary_tol:
        raise DomainError(f"target {q.tolist()} lies outside the domain")
    sh = _Shooter(spec, domain, p, opts)
    solve = _solve_boundary_target if dq <= opts.integrator.boundary_tol else _solve_interior_target
    sols, res = solve(sh, q, opts)
    if opts.integrator.boundary_tol < dq < _NEAR_BOUNDARY:
        extra, res2 = _solve_near_boundary_target(sh, q, opts)
        sols, res = sols + extra, min(res, res2)
    for factor in (4, 16):
        # strong focusing squeezes the bracket below the fan spacing: densify
        if sols:
            break
        o = replace(opts, n_angles=factor * opts.n_angles)
        sh = _Shooter(spec, domain, p, o)
        sols, res = solve(sh, q, o)
    if not sols:
        raise OracleError(f"no geodesic from {p.tolist()} reaches {q.tolist()} "
                          f"(best miss {res:.3g})")
    L, keep = _cluster(sols, opts)
    return L, keep, sols


def _approach_events(samples, Q):
    """Closest approaches of a recorded geodesic to every target in ``Q``:
    arrays ``(target, t, lateral_offset)`` from cubic Hermite interpolation
    between the recorded steps (used only to bracket, never as a result)."""
    t, X, V = samples[:, 0], samples[:, 1:3], samples[:, 3:5]
    D = np.einsum("ki,mki->mk", V, X[None] - Q[:, None])
    m, k = np.nonzero((D[:, :-1] < 0.0) & (D[:, 1:] >= 0.0))
    if m.size == 0:
        return m, np.zeros(0), np.zeros(0)
    a = -D[m, k] / (D[m, k + 1] - D[m, k])
    dt = (t[k + 1] - t[k])[:, None]
    s = a[:, None]
    h00, h10 = 2 * s ** 3 - 3 * s ** 2 + 1, s ** 3 - 2 * s ** 2 + s
    h01, h11 = -2 * s ** 3 + 3 * s ** 2, s ** 3 - s ** 2
    x = h00 * X[k] + h10 * dt * V[k] + h01 * X[k + 1] + h11 * dt * V[k + 1]
    v = (1 - s) * V[k] + s * V[k + 1]
    d = Q[m] - x
    off = (v[:, 0] * d[:, 1] - v[:, 1] * d[:, 0]) / np.hypot(v[:, 0], v[:, 1])
    return m, t[k] + a * (t[k + 1] - t[k]), off


def distances_from(spec: MetricSpec, domain: DomainSpec, p, Q,
                   opts: ShootingOptions = DEFAULT_SHOOTING) -> np.ndarray:
    """Distances from one point to many targets with a shared shooting fan.

    Same solutions as :func:`distance_shooting`: interior targets are
    bracketed between neighbouring recorded fan rays and refined with the
    exact closest-approach events, boundary targets by the exit parameter.
    Targets just inside the boundary, or left without a bracket, go through
    the full per-pair solver.
    """
    p = np.asarray(p, dtype=np.float64).reshape(2)
    Q = np.asarray(Q, dtype=np.float64).reshape(-1, 2)
    spec._check(p)
    out = np.full(Q.shape[0], np.nan)
    if Q.shape[0] == 0:
        return out
    same = np.hypot(*(Q - p).T) < 1e-14
    out[same] = 0.0
    dep = domain.depth(Q)
    btol = opts.integrator.boundary_tol
    if np.any(dep < -btol):
        raise DomainError("a target lies outside the domain")
    sh = _Shooter(spec, domain, p, opts)
    th, shots = _adaptive_fan(sh, opts.n_angles, record=True)
    sols = [[] for _ in range(Q.shape[0])]
    inner = np.flatnonzero(~same & (dep >= _NEAR_BOUNDARY))
    if inner.size:
        QI = Q[inner]
        M = inner.size
        ev = [_approach_events(r[7], QI) for r in shots]
        cnt = [np.bincount(e[0], minlength=M) for e in ev]
        pos = []
        for e in ev:
            first = np.full(M, -1)
            first[e[0][::-1]] = np.arange(e[0].size)[::-1]
            pos.append(first)
        for k in range(th.size - 1):
            (ma, ta, oa), (mb, tb, ob) = ev[k], ev[k + 1]
            # single approach on both rays: vectorized sign test
            one = np.flatnonzero((cnt[k] == 1) & (cnt[k + 1] == 1))
            ia, ib = pos[k][one], pos[k + 1][one]
            hit = np.sign(oa[ia]) != np.sign(ob[ib])
            for q, i, j in zip(one[hit], ia[hit], ib[hit]):
                _refine_interior(sh, QI[q], th[k], th[k + 1], 0.5 * (ta[i] + tb[j]), opts,
                                 sols[inner[q]], True)
            for q in np.flatnonzero((cnt[k] > 0) & (cnt[k + 1] > 0) & ((cnt[k] > 1) | (cnt[k + 1] > 1))):
                ea = np.flatnonzero(ma == q)
                eb = np.flatnonzero(mb == q)
                for n, i in enumerate(ea):
                    j = eb[np.argmin(np.abs(tb[eb] - ta[i]))]
                    if np.sign(oa[i]) == np.sign(ob[j]):
                        continue
                    # first approaches on both rays stay first inside the bracket
                    _refine_interior(sh, QI[q], th[k], th[k + 1], 0.5 * (ta[i] + tb[j]), opts,
                                     sols[inner[q]], n == 0 and j == eb[0])
    bnd = np.flatnonzero(~same & (dep <= btol))
    if bnd.size:
        _, tq = domain.closest_boundary(Q[bnd])
        ex = np.array([r[4] if r[0] == kernels.ST_EXITED else np.nan for r in shots])
        for q, tqq in zip(bnd, tq):
            w = (ex - tqq + np.pi) % TWO_PI - np.pi
            for k in np.flatnonzero((np.sign(w[:-1]) != np.sign(w[1:])) & (np.abs(np.diff(w)) <= np.pi)):
                _refine_boundary(sh, Q[q], float(tqq), th[k], th[k + 1], opts, sols[q])
    for q in np.flatnonzero(~same):
        if sols[q]:
            out[q] = _cluster(sols[q], opts)[0]
        else:
            out[q] = _shooting_detail(spec, domain, p, Q[q], opts)[0]
    return out


def _refine_interior(sh, q, a, b, t_ref, opts, sols, stop=False):
    t_ref = [t_ref]
    cache = {}

    def events(x):
        if x not in cache:
            ev = sh.shoot(x, target=q, stop_at_target=stop)[6]
            cache.clear()
            cache[x] = ev[ev[:, 3] == 0.0] if ev is not None else np.zeros((0, 6))
        return cache[x]

    def f(x):
        e = events(x)
        if e.shape[0] == 0:
            return np.nan
        r = e[np.argmin(np.abs(e[:, 0] - t_ref[0]))]
        t_ref[0] = r[0]
        return r[4]

    try:
        x = brentq(f, a, b, xtol=1e-14, rtol=1e-15, maxiter=100)
    except ValueError:
        return
    e = events(x)
    if e.shape[0]:
        r = e[np.argmin(np.abs(e[:, 0] - t_ref[0]))]
        if r[5] < opts.tol_hit:
            sols.append((float(np.mod(x, TWO_PI)), float(r[0])))


def _refine_boundary(sh, q, tq, a, b, opts, sols):
    def resid(x):
        r = sh.shoot(x)
        if r[0] != kernels.ST_EXITED:
            return np.nan, INF, r
        return (r[4] - tq + np.pi) % TWO_PI - np.pi, r[1], r

    try:
        x = brentq(lambda t: resid(t)[0], a, b, xtol=1e-15, rtol=1e-15, maxiter=100)
    except ValueError:
        return
    _, L, r = resid(x)
    if np.hypot(*(r[2][:2] - q)) < max(opts.tol_hit, 1e-7):
        sols.append((float(np.mod(x, TWO_PI)), float(L)))


# -------------------------------------------------------------------- cut time

CUT_KINDS = ("boundary_hit", "typical", "conjugate", "atypical")
_NEAR_EXIT = 1e-6


@dataclass(frozen=True, eq=False)
class CutPointRecord:
    direction: UnitVectorAt
    cut_time: float
    kind: str
    minimizer_count: int
    exit_time: float = INF
    conjugate_time: float = INF
    point: np.ndarray | None = None


def _point_at(spec, domain, init, t, from_boundary, opts):
    r = integrate_raw(spec, domain, init.base, init.direction, t, from_boundary=from_boundary,
                      opts=opts.integrator)
    return r[2][:2].copy()


def cut_time(spec: MetricSpec, domain: DomainSpec, init: UnitVectorAt, tol_cut: float | None = None,
             tol_match: float = 1e-3, t_tol: float = 1e-7,
             opts: ShootingOptions = DEFAULT_SHOOTING) -> CutPointRecord:
    """Cut time along ``init`` by bisection on ``d(p, gamma(t)) < t - tol_cut``.

    When the predicate does not fire before the exit the geodesic minimizes up
    to the boundary and the record is ``boundary_hit`` with ``cut_time =
    exit_time``.
    """
    io = opts.integrator
    if tol_cut is None:
        tol_cut = 10.0 * (io.rtol + opts.tol_hit)
    fb = _start_kind(domain, spec, init, io.boundary_tol)
    r = integrate_raw(spec, domain, init.base, init.direction, opts.t_max, jacobi=True,
                      from_boundary=fb, opts=io)
    if r[0] != kernels.ST_EXITED:
        raise OracleError("geodesic did not exit; cut time needs a non-trapped direction")
    t_exit, t_conj = float(r[1]), float(r[3])
    p = init.base
    theta0 = float(np.arctan2(init.direction[1], init.direction[0]))

    def shorter(t):
        q = _point_at(spec, domain, init, t, fb, opts) if t < t_exit else r[2][:2].copy()
        if t < t_exit and domain.depth(q[None])[0] < _NEAR_EXIT:
            # within rounding of the exit: targets this shallow are neither
            # interior nor boundary for the solvers, so test the exit point
            q, t = r[2][:2].copy(), t_exit
        L, keep, _ = _shooting_detail(spec, domain, p, q, opts)
        return L < t - tol_cut, keep, q

    fired, keep_hi, _ = shorter(t_exit)
    if not fired:
        return CutPointRecord(init, t_exit, "boundary_hit", 1, t_exit, t_conj, r[2][:2].copy())
    lo, hi = 0.0, t_exit
    while hi - lo > t_tol:
        mid = 0.5 * (lo + hi)
        f, keep, _ = shorter(mid)
        if f:
            hi, keep_hi = mid, keep
        else:
            lo = mid
    tc = 0.5 * (lo + hi)
    point = _point_at(spec, domain, init, tc, fb, opts)
    if abs(tc - t_conj) <= tol_match:
        return CutPointRecord(init, tc, "conjugate", 1, t_exit, t_conj, point)
    # distinct minimizers: gamma itself plus the shorter competitors found just past the cut
    others = [th for th, _ in keep_hi if abs(((th - theta0) + np.pi) % TWO_PI - np.pi) > 1e-6]
    count = 1 + len(others)
    kind = "atypical" if count >= 3 else "typical"
    return CutPointRecord(init, tc, kind, count, t_exit, t_conj, point)


def cut_locus_sample(spec: MetricSpec, domain: DomainSpec, p, n_directions: int,
                     opts: ShootingOptions = DEFAULT_SHOOTING, include_all: bool = False,
                     **kw) -> list:
    """Cut records over a uniform fan; only genuine cut points unless ``include_all``."""
    if n_directions < 8:
        raise DomainError("n_directions must be at least 8")
    p = np.asarray(p, dtype=np.float64)
    g = metric_at(spec, p)
    out = []
    for k in range(n_directions):
        th = TWO_PI * k / n_directions
        init = UnitVectorAt(p, _direction(g, th))
        rec = cut_time(spec, domain, init, opts=opts, **kw)
        if include_all or rec.kind != "boundary_hit":
            out.append(rec)
    return out


def read_field_header(path):
    with open(path, "rb") as fh:
        line = fh.readline().decode()
    if not line.startswith("# geotime-field v1"):
        raise ValueError("not a geotime field dump")
    out = {}
    for tok in line.split()[3:]:
        k, v = tok.split("=", 1)
        out[k] = v
    return out

