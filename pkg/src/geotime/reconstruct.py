"""Blind reconstruction from partial travel-time data.

Stages, each a pure function of the dataset:

1. boundary metric on Gamma from the rows of sources sitting on sensors;
2. boundary gradients ``grad r_p(z_j)`` with a second-difference spike screen;
3. sigma sets ``sigma(z, v)`` and their sup ``T_{z,v}``;
4. boundary membership of every source;
5. ``alpha = (v, r)`` and ``beta = (eta, T - r)`` charts at a good sensor;
6. distance differentials in the alpha chart and a co-sphere fit for ``g``.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import DataError, DomainError, PipelineError
from .traveltime import TravelTimeDataset

REPORT_MAGIC = "geotime-report v1"


@dataclass(frozen=True)
class ReconOptions:
    """Tolerances.  ``None`` entries scale with the declared (or estimated)
    lattice spacing ``h_src`` and the recovered mean sensor spacing ``ds``:
    ``tol_grad = ds / 4`` (angular half-width of the sigma tube) and
    ``tol_T = h_src``."""

    h_src: float | None = None
    n_dirs: int = 33
    v_max: float = 0.97
    tol_grad: float | None = None
    tol_T: float | None = None
    kappa_spike: float = 8.0
    spike_floor: float = 1e-8
    kappa_cont: float = 8.0
    k_cont: int = 4
    k_fit: int = 24
    min_fit: int = 5
    delta_id: float = 1e-9
    r_min_factor: float = 3.0
    min_angle_deg: float = 5.0


DEFAULT_RECON = ReconOptions()


# ------------------------------------------------------------------ Gamma

@dataclass(frozen=True, eq=False)
class GammaGeometry:
    u: np.ndarray
    lam: np.ndarray
    gamma_rows: np.ndarray  # row index of the source on sensor j, -1 if none
    arclength: np.ndarray   # recovered arc length from u = 0 to u_j
    spline: CubicSpline = field(repr=False)

    def speed(self, u):
        return self.spline(u)

    def arc_between(self, j, k) -> float:
        return float(abs(self.arclength[k] - self.arclength[j]))

    @property
    def mean_spacing(self) -> float:
        return float((self.arclength[-1] - self.arclength[0]) / (self.u.size - 1))


def _gamma_rows(ds: TravelTimeDataset, delta_id: float) -> np.ndarray:
    T = np.where(ds.mask.astype(bool)[:, None], ds.times, np.inf)
    rows = np.argmin(T, axis=0)
    hit = T[rows, np.arange(ds.m)] <= delta_id
    return np.where(hit, rows, -1)


def recover_gamma_metric(ds: TravelTimeDataset, opts: ReconOptions = DEFAULT_RECON) -> GammaGeometry:
    """Speed ``lambda(u) = |dz/du|_g`` from ``d(z_j, z_k) / |u_k - u_j|``.

    One-sided difference quotients over stencil widths 1 and 2 are
    Richardson-extrapolated (removing the first-order term) and the two sides
    averaged where both exist.
    """
    m = ds.m
    u = ds.u
    rows = _gamma_rows(ds, opts.delta_id)
    have = rows >= 0
    need = (m + 1) // 2
    if have.sum() < need:
        raise DataError(f"only {int(have.sum())} of {m} sensors carry a coincident source row; "
                        f"at least {need} are needed (deficit {need - int(have.sum())})")
    lam = np.full(m, np.nan)
    for j in np.flatnonzero(have):
        r = ds.times[rows[j]]
        est = []
        for sgn in (1, -1):
            k1, k2 = j + sgn, j + 2 * sgn
            if 0 <= k2 < m:
                d1, d2 = abs(u[k1] - u[j]), abs(u[k2] - u[j])
                q1, q2 = r[k1] / d1, r[k2] / d2
                est.append((d2 * q1 - d1 * q2) / (d2 - d1))
        if est:
            lam[j] = np.mean(est)
    good = np.isfinite(lam) & (lam > 0)
    if good.sum() < 4:
        raise DataError("too few sensors with a usable boundary speed estimate")
    spline = CubicSpline(u[good], lam[good], bc_type="not-a-knot", extrapolate=True)
    lam_all = spline(u)
    if np.any(lam_all <= 0):
        raise DataError("recovered boundary speed is not positive")
    S = spline.antiderivative()
    arclength = S(u) - S(u[0])
    return GammaGeometry(u.copy(), lam_all, rows, arclength, spline)


# ------------------------------------------------------------ gradients

def _fornberg_d1(x, x0):
    """First-derivative finite-difference weights on nodes ``x`` at ``x0``."""
    n = x.size
    A = np.vander(x - x0, n, increasing=True).T
    b = np.zeros(n)
    b[1] = 1.0
    return np.linalg.solve(A, b)


def _stencil_matrix(u):
    m = u.size
    W = np.zeros((m, m))
    for j in range(1, m - 1):
        lo = min(max(j - 2, 0), m - 5)
        idx = np.arange(lo, lo + 5)
        W[j, idx] = _fornberg_d1(u[idx], u[j])
    return W


def _second_differences(T, u):
    """Second divided differences scaled by the mean squared spacing."""
    h1 = np.diff(u)
    hbar = np.mean(h1)
    a = (T[..., 2:] - T[..., 1:-1]) / h1[1:]
    b = (T[..., 1:-1] - T[..., :-2]) / h1[:-1]
    return 2.0 * (a - b) / (h1[1:] + h1[:-1]) * hbar ** 2


def gradients_and_flags(ds: TravelTimeDataset, gg: GammaGeometry, opts: ReconOptions = DEFAULT_RECON):
    """All boundary-gradient values ``G[i, j]`` and smoothness flags ``F[i, j]``."""
    T = np.where(np.isfinite(ds.times), ds.times, 0.0)
    W = _stencil_matrix(ds.u)
    G = (T @ W.T) / gg.lam[None, :]
    D2 = np.abs(_second_differences(T, ds.u))
    thr = np.maximum(opts.kappa_spike * np.median(D2, axis=1), opts.spike_floor)
    spike = np.zeros_like(T, dtype=bool)
    spike[:, 1:-1] = D2 > thr[:, None]
    bad = spike.copy()
    bad[:, 1:] |= spike[:, :-1]
    bad[:, :-1] |= spike[:, 1:]
    F = ~bad & (np.abs(G) < 1.0) & ds.mask.astype(bool)[:, None]
    F[:, 0] = F[:, -1] = False
    return G, F


def boundary_gradient(ds: TravelTimeDataset, gg: GammaGeometry, i: int, j: int,
                      opts: ReconOptions = DEFAULT_RECON):
    """``(value, smooth)``: derivative of ``u -> times[i, u]`` at ``u_j`` per unit
    recovered arc length, oriented along increasing ``u``."""
    m = ds.m
    if not 0 < j < m - 1:
        raise DomainError("boundary gradient needs an interior sensor index")
    row = ds.times[i]
    lo = min(max(j - 2, 0), m - 5)
    idx = np.arange(lo, lo + 5)
    val = float(_fornberg_d1(ds.u[idx], ds.u[j]) @ row[idx] / gg.lam[j])
    D2 = np.abs(_second_differences(row[None], ds.u)[0])
    thr = max(opts.kappa_spike * np.median(D2), opts.spike_floor)
    ks = [k for k in (j - 1, j, j + 1) if 1 <= k <= m - 2]
    smooth = bool(ds.mask[i]) and abs(val) < 1.0 and not np.any(D2[np.array(ks) - 1] > thr)
    return val, smooth


# ------------------------------------------------------------- context

def embedding_distances(times: np.ndarray, mask=None, chunk=32) -> np.ndarray:
    """Sup-norm distances ``||r_p - r_q||_inf`` between all rows."""
    N = times.shape[0]
    T = np.where(np.isfinite(times), times, 0.0)
    E = np.empty((N, N))
    for a in range(0, N, chunk):
        E[a:a + chunk] = np.max(np.abs(T[a:a + chunk, None, :] - T[None, :, :]), axis=2)
    if mask is not None:
        bad = ~np.asarray(mask, dtype=bool)
        E[bad, :] = np.inf
        E[:, bad] = np.inf
        E[bad, bad] = 0.0
    return E


class _Context:
    """Cached per-dataset arrays shared by the stage functions."""

    def __init__(self, ds: TravelTimeDataset, gg: GammaGeometry, opts: ReconOptions):
        self.ds, self.gg, self.opts = ds, gg, opts
        self.ok = ds.mask.astype(bool)
        self.T = np.where(np.isfinite(ds.times), ds.times, np.inf)
        self.G, self.F = gradients_and_flags(ds, gg, opts)
        self.E = embedding_distances(ds.times, ds.mask)
        N = ds.N
        K = min(max(opts.k_fit, 16) + 8, N - 1)
        Es = self.E.copy()
        np.fill_diagonal(Es, np.inf)
        # ties broken by source id so the result does not depend on row order
        self.nbrs = np.lexsort((np.broadcast_to(ds.ids, (N, N)), Es), axis=1)[:, :K]
        self.nn_gap = Es[np.arange(N), self.nbrs[:, 0]]
        fin = self.nn_gap[np.isfinite(self.nn_gap)]
        self.h_est = float(np.percentile(fin, 90)) if fin.size else np.nan
        self.h = float(opts.h_src) if opts.h_src is not None else self.h_est
        self.ds_mean = gg.mean_spacing
        self.tol_theta = opts.tol_grad if opts.tol_grad is not None else 0.25 * self.ds_mean
        self.tol_T = opts.tol_T if opts.tol_T is not None else self.h
        self.vgrid = np.linspace(-opts.v_max, opts.v_max, opts.n_dirs)
        self.cont = self._continuity()
        self._classified = None

    def _continuity(self):
        """``cont[i, j]``: gradient at ``z_j`` varies boundedly across the
        ``k_cont`` nearest flag-true sources (discrete continuity)."""
        o = self.opts
        N, m = self.T.shape
        cont = np.zeros((N, m), dtype=bool)
        nb = self.nbrs
        e = np.take_along_axis(self.E, nb, 1)
        for j in range(1, m - 1):
            Fn = self.F[nb, j]
            rank = np.cumsum(Fn, axis=1)
            use = Fn & (rank <= o.k_cont)
            dG = np.abs(self.G[nb, j] - self.G[:, j][:, None])
            r = np.maximum(self.T[:, j], self.h)[:, None]
            viol = use & (dG > o.kappa_cont * e / r)
            cont[:, j] = self.F[:, j] & ~np.any(viol, axis=1)
        return cont

    def tube(self, j, v):
        tol = self.tol_theta * np.sqrt(max(1.0 - v * v, 0.0))
        return self.cont[:, j] & (np.abs(self.G[:, j] + v) <= tol)


_CACHE: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def context(ds: TravelTimeDataset, gg: GammaGeometry | None = None,
            opts: ReconOptions = DEFAULT_RECON) -> _Context:
    per = _CACHE.setdefault(ds, {})
    gg = gg if gg is not None else recover_gamma_metric(ds, opts)
    key = (id(gg), opts)
    if key not in per:
        per[key] = _Context(ds, gg, opts)
    return per[key]


# ------------------------------------------------------------ sigma sets

@dataclass(frozen=True, eq=False)
class SigmaSet:
    j: int
    v: float
    members: np.ndarray   # row indices, sensor source included
    ids: np.ndarray
    T_value: float
    argmax: int
    thin: bool


def build_sigma(ds: TravelTimeDataset, gg: GammaGeometry, j: int, v: float,
                tol_grad: float | None = None, opts: ReconOptions = DEFAULT_RECON) -> SigmaSet:
    """Sources whose gradient at ``z_j`` equals ``-v`` (within the tube), that
    are smooth there and whose neighbours' gradients vary continuously; the
    source on ``z_j`` is always a member.  ``T_value`` is the largest travel
    time to ``z_j`` among members, or among a window up to four times wider
    when only the wider one reaches a boundary-classified source."""
    if not -1.0 < v < 1.0:
        raise DomainError("v must lie in (-1, 1)")
    ctx = context(ds, gg, opts)
    return _sigma(ctx, j, v, tol_grad)


def _sigma(ctx: _Context, j, v, tol_grad=None) -> SigmaSet:
    if tol_grad is None:
        mem = ctx.tube(j, v)
    else:
        mem = ctx.cont[:, j] & (np.abs(ctx.G[:, j] + v) <= tol_grad)
    trivial = int(ctx.gg.gamma_rows[j])
    nontriv = np.flatnonzero(mem)
    if trivial >= 0:
        mem = mem.copy()
        mem[trivial] = True
    idx = np.flatnonzero(mem)
    thin = nontriv[nontriv != trivial].size == 0
    if thin:
        return SigmaSet(j, float(v), idx, ctx.ds.ids[idx], 0.0, trivial, True)
    r = ctx.T[idx, j]
    k = int(idx[np.argmax(r)])
    if tol_grad is None:
        k = _closed_argmax(ctx, j, v, k)
    return SigmaSet(j, float(v), idx, ctx.ds.ids[idx], float(ctx.T[k, j]), k, False)


def _closed_argmax(ctx: _Context, j, v, k, widen=(2.0, 4.0)):
    """Far end of the sigma set for the ``T`` estimate.  A tube that misses
    every source near the exit stops short; when the maximum is not attained
    by a boundary-classified source the window is doubled (at most twice) and
    the first widened maximum that is so attained is taken."""
    bnd = _classify_all(ctx).boundary
    if bnd[k]:
        return k
    base = ctx.tol_theta * np.sqrt(max(1.0 - v * v, 0.0))
    d = np.abs(ctx.G[:, j] + v)
    for f in widen:
        w = np.flatnonzero(ctx.cont[:, j] & (d <= f * base))
        if w.size:
            kw = int(w[np.argmax(ctx.T[w, j])])
            if bnd[kw]:
                return kw
    return k


# ------------------------------------------------------ boundary membership

@dataclass(frozen=True, eq=False)
class BoundaryClassification:
    boundary: np.ndarray
    margin: np.ndarray         # median over sensors of T(z_j, v_p) - r_p(z_j)
    vote: np.ndarray           # fraction of sensors where that gap is <= tol_T
    witness_j: np.ndarray
    witness_v: np.ndarray
    thin_sets: int
    grid_sets: int


def _window_max(vals, lo, hi):
    """``max(vals[lo[k]:hi[k]])`` for non-empty windows, vectorized."""
    ext = np.append(vals, -np.inf)
    idx = np.empty(2 * lo.size, dtype=np.intp)
    idx[0::2], idx[1::2] = lo, hi
    return np.maximum.reduceat(ext, idx)[0::2]


def _classify_all(ctx: _Context) -> BoundaryClassification:
    """Each source is tested in the sigma set of its own direction at every
    sensor: ``T(z_j, v) - r_p(z_j)`` with ``v = -grad r_p(z_j)``.  A boundary
    point ends its geodesic from every sensor, so the gap vanishes for all
    ``j``; an interior point has sources beyond it wherever sampling reaches.
    The median gap over sensors is the margin."""
    if ctx._classified is not None:
        return ctx._classified
    N, m = ctx.T.shape
    gaps = np.full((N, m), np.nan)
    thin = 0
    for j in range(1, m - 1):
        ok = np.flatnonzero(ctx.cont[:, j])
        if ok.size == 0:
            thin += ctx.vgrid.size
            continue
        o = np.argsort(ctx.G[ok, j], kind="stable")
        rows = ok[o]
        gs, rs = ctx.G[rows, j], ctx.T[rows, j]
        tol = ctx.tol_theta * np.sqrt(np.maximum(1.0 - gs * gs, 0.0))
        lo = np.searchsorted(gs, gs - tol, "left")
        hi = np.searchsorted(gs, gs + tol, "right")
        gaps[rows, j] = _window_max(rs, lo, hi) - rs
        # grid sets holding nothing but the sensor source (diagnostic)
        triv = int(ctx.gg.gamma_rows[j])
        vt = ctx.tol_theta * np.sqrt(1.0 - ctx.vgrid ** 2)
        a = np.searchsorted(gs, -ctx.vgrid - vt, "left")
        b = np.searchsorted(gs, -ctx.vgrid + vt, "right")
        n_in = b - a
        if triv >= 0 and ctx.cont[triv, j]:
            gt = ctx.G[triv, j]
            n_in = n_in - ((gt >= -ctx.vgrid - vt) & (gt <= -ctx.vgrid + vt))
        thin += int(np.sum(n_in <= 0))
    cnt = np.sum(np.isfinite(gaps), axis=1)
    with np.errstate(invalid="ignore"):
        hit = np.sum(gaps <= ctx.tol_T, axis=1)
    vote = np.where(cnt > 0, hit / np.maximum(cnt, 1), 0.0)
    margin = np.full(N, np.inf)
    has = cnt > 0
    margin[has] = np.nanmedian(gaps[has], axis=1)
    wj = np.full(N, -1)
    wv = np.full(N, np.nan)
    wj[has] = np.nanargmin(gaps[has], axis=1)
    wv[has] = -ctx.G[np.flatnonzero(has), wj[has]]
    bnd = (margin <= ctx.tol_T) & ctx.ok
    ctx._classified = BoundaryClassification(bnd, margin, vote, wj, wv, thin,
                                             (m - 2) * ctx.vgrid.size)
    return ctx._classified


def classify_boundary(ds: TravelTimeDataset, gg: GammaGeometry, i: int,
                      opts: ReconOptions = DEFAULT_RECON) -> str:
    """``"boundary"`` iff the median over sensors of ``T(z_j, v_p) - r_p(z_j)``
    is at most ``tol_T``; ``"interior"`` otherwise."""
    c = _classify_all(context(ds, gg, opts))
    return "boundary" if c.boundary[i] else "interior"


# ----------------------------------------------------------------- charts

def alpha_coords(ds: TravelTimeDataset, gg: GammaGeometry, i: int, j0: int,
                 opts: ReconOptions = DEFAULT_RECON):
    """``(v, r) = (-grad r_p(z_0), r_p(z_0))``."""
    ctx = context(ds, gg, opts)
    if not ctx.F[i, j0]:
        raise DomainError(f"chart unavailable: travel time of source {i} is not smooth at sensor {j0}")
    return float(-ctx.G[i, j0]), float(ctx.T[i, j0])


def beta_coords(ds: TravelTimeDataset, gg: GammaGeometry, i: int, j0: int,
                opts: ReconOptions = DEFAULT_RECON):
    """``(eta, tau) = (-grad r_p(z_0), T_{z_0, eta} - r_p(z_0))``; ``closed`` tells
    whether ``T`` is attained by a boundary-classified member."""
    ctx = context(ds, gg, opts)
    eta, r = alpha_coords(ds, gg, i, j0, opts)
    return _beta(ctx, i, j0, eta, r)


def _beta(ctx, i, j0, eta, r):
    sig = _sigma(ctx, j0, eta)
    cls = _classify_all(ctx)
    closed = (not sig.thin) and bool(cls.boundary[sig.argmax])
    return eta, sig.T_value - r, closed


def _choose_chart(ctx: _Context, i: int):
    """Sensor for the alpha chart: smooth for the source and its fit
    neighbours, preferring far and head-on sensors (score ``r sqrt(1 - v^2)``)."""
    o = ctx.opts
    if not ctx.ok[i]:
        return -1
    nb = ctx.nbrs[i, : o.k_fit]
    Fi = ctx.F[i]
    frac = np.mean(ctx.F[nb], axis=0)
    score = ctx.T[i] * np.sqrt(np.clip(1 - ctx.G[i] ** 2, 0, 1))
    for need in (1.0, 0.75, 0.5):
        cand = Fi & (frac >= need)
        if cand.any():
            s = np.where(cand, score, -np.inf)
            return int(np.argmax(s))
    return -1


# ------------------------------------------------------- covectors and fit

def _monomials(X, deg):
    cols = [np.ones(X.shape[0])]
    for d in range(1, deg + 1):
        for a in range(d, -1, -1):
            cols.append(X[:, 0] ** a * X[:, 1] ** (d - a))
    return np.stack(cols, -1)


def estimate_H(ds: TravelTimeDataset, gg: GammaGeometry, i: int, J=None, j0: int | None = None,
               opts: ReconOptions = DEFAULT_RECON):
    """Differentials ``D_alpha r_p(z_j)`` at source ``i`` for ``j`` in ``J``.

    Weighted least squares of a local polynomial (degree chosen by the number
    of usable neighbours) in the alpha chart.  Returns ``(covectors, J, j0)``.
    """
    ctx = context(ds, gg, opts)
    return _estimate_H(ctx, i, J, j0)


def _estimate_H(ctx: _Context, i, J=None, j0=None):
    o = ctx.opts
    if j0 is None:
        j0 = _choose_chart(ctx, i)
    if j0 < 0 or not ctx.F[i, j0]:
        raise DomainError(f"no alpha chart available for source {i}")
    nb = ctx.nbrs[i]
    nb = nb[ctx.F[nb, j0] & np.isfinite(ctx.E[i, nb])][: o.k_fit]
    if nb.size < o.min_fit:
        raise DomainError(f"thin neighbourhood: {nb.size} usable neighbours (need {o.min_fit})")
    rho = float(ctx.E[i, nb].max())
    pts = np.concatenate([[i], nb])
    if J is None:
        ok = ctx.F[i] & np.all(ctx.F[nb], axis=0) & (ctx.T[i] >= o.r_min_factor * rho)
        J = np.flatnonzero(ok)
    J = np.asarray(J, dtype=int)
    if J.size == 0:
        raise DomainError("no sensor is smooth across the whole neighbourhood")
    ri = ctx.T[i, j0]
    A = np.stack([-ctx.G[pts, j0], ctx.T[pts, j0]], -1)
    dA = A - A[0]
    scale = np.array([max(ri, rho), 1.0]) / rho
    X = dA * scale
    n = pts.size
    deg = 3 if n >= 16 else (2 if n >= 8 else 1)
    M = _monomials(X, deg)
    w = np.sqrt(np.exp(-(np.concatenate([[0.0], ctx.E[i, nb]]) / rho) ** 2))
    Y = ctx.T[np.ix_(pts, J)] - ctx.T[i, J][None, :]
    coef, *_ = np.linalg.lstsq(M * w[:, None], Y * w[:, None], rcond=None)
    cov = np.stack([coef[1] * scale[0], coef[2] * scale[1]], -1)
    return cov, J, j0


def _pick_spread(theta, min_angle):
    """Whether three of the directions (mod pi) are pairwise ``min_angle`` apart."""
    a = np.sort(np.mod(theta, np.pi))
    for start in a:
        sel = [start]
        for t in a:
            if t - sel[-1] >= min_angle and (t - start) <= np.pi - min_angle:
                sel.append(t)
                if len(sel) == 3:
                    return True
    return False


def fit_cosphere(covectors, min_angle_deg: float = 5.0):
    """Fit ``xi^T Q xi = 1``; returns ``(g_fit = Q^-1, residual, Q)``."""
    xi = np.atleast_2d(np.asarray(covectors, dtype=np.float64))
    if xi.shape[0] < 3:
        raise DomainError(f"rank-deficient co-sphere fit: {xi.shape[0]} covectors (need 3)")
    A = np.stack([xi[:, 0] ** 2, 2 * xi[:, 0] * xi[:, 1], xi[:, 1] ** 2], -1)
    cond = float(np.linalg.cond(A))
    if not _pick_spread(np.arctan2(xi[:, 1], xi[:, 0]), np.deg2rad(min_angle_deg)) or cond > 1e12:
        raise DomainError(f"rank-deficient co-sphere fit: covectors span too narrow an arc "
                          f"(condition number {cond:.3g})")
    q, *_ = np.linalg.lstsq(A, np.ones(xi.shape[0]), rcond=None)
    Q = np.array([[q[0], q[1]], [q[1], q[2]]])
    lam, V = np.linalg.eigh(Q)
    Q = (V * np.maximum(lam, 1e-8)) @ V.T
    res = float(np.sqrt(np.mean((np.einsum("ki,ij,kj->k", xi, Q, xi) - 1.0) ** 2)))
    return np.linalg.inv(Q), res, Q


# ---------------------------------------------------------- whole pipeline

@dataclass(frozen=True, eq=False)
class ReconstructedManifold:
    ids: np.ndarray
    gamma: GammaGeometry
    boundary: np.ndarray
    margin: np.ndarray
    witness_j: np.ndarray
    witness_v: np.ndarray
    chart_j: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    beta_closed: np.ndarray
    g_fit: np.ndarray
    residual: np.ndarray
    n_cov: np.ndarray
    status: np.ndarray
    embedding: np.ndarray = field(repr=False)
    tolerances: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    vote: np.ndarray | None = None

    @property
    def N(self):
        return self.ids.size


def reconstruct_all(ds: TravelTimeDataset, opts: ReconOptions = DEFAULT_RECON) -> ReconstructedManifold:
    """Run every stage; per-source failures are recorded in ``status``."""
    try:
        gg = recover_gamma_metric(ds, opts)
    except DataError as exc:
        raise PipelineError(f"boundary metric recovery failed: {exc}") from exc
    ctx = context(ds, gg, opts)
    cls = _classify_all(ctx)
    N = ds.N
    chart = np.full(N, -1)
    alpha = np.full((N, 2), np.nan)
    beta = np.full((N, 2), np.nan)
    closed = np.zeros(N, dtype=bool)
    g = np.full((N, 2, 2), np.nan)
    res = np.full(N, np.nan)
    ncov = np.zeros(N, dtype=int)
    status = np.array(["ok"] * N, dtype=object)
    for i in range(N):
        if not ctx.ok[i]:
            status[i] = "masked"
            continue
        j0 = _choose_chart(ctx, i)
        if j0 < 0:
            status[i] = "no-chart"
            continue
        chart[i] = j0
        alpha[i] = (-ctx.G[i, j0], ctx.T[i, j0])
        if cls.boundary[i]:
            eta, tau, cl = _beta(ctx, i, j0, alpha[i, 0], alpha[i, 1])
            beta[i] = (eta, tau)
            closed[i] = cl
        try:
            cov, J, _ = _estimate_H(ctx, i, None, j0)
            gi, ri, _ = fit_cosphere(cov, opts.min_angle_deg)
        except DomainError as exc:
            msg = str(exc)
            status[i] = "thin-neighbourhood" if "thin" in msg else (
                "rank-deficient" if "rank" in msg else "no-covectors")
            continue
        g[i], res[i], ncov[i] = gi, ri, J.size
    gap, pair = _min_gap(ctx.E)
    fin = ctx.nn_gap[np.isfinite(ctx.nn_gap)]
    dup_thr = 0.1 * float(np.median(fin)) if fin.size else 0.0
    near_dup = int(np.sum(ctx.nn_gap <= dup_thr)) if fin.size else 0
    st, cnt = np.unique(status.astype(str), return_counts=True)
    diag = {
        "N": int(N), "m": int(ds.m),
        "gamma_rows": int(np.sum(gg.gamma_rows >= 0)),
        "boundary_count": int(cls.boundary.sum()),
        "interior_count": int((~cls.boundary & ctx.ok).sum()),
        "thin_sigma_sets": int(cls.thin_sets), "sigma_sets": int(cls.grid_sets),
        "min_row_gap": gap, "min_row_pair": [int(pair[0]), int(pair[1])],
        "near_duplicate_threshold": dup_thr, "near_duplicate_rows": near_dup,
        "status": {str(k): int(c) for k, c in zip(st, cnt)},
        "h_estimated": ctx.h_est,
    }
    warnings = []
    if near_dup:
        warnings.append(f"data degeneracy: {near_dup} rows lie within {dup_thr:.3g} of another row "
                        f"in the sup-norm embedding")
    if cls.thin_sets:
        warnings.append(f"{cls.thin_sets} of {cls.grid_sets} sigma sets contain only the sensor source")
    tol = {"h_src": ctx.h, "ds": ctx.ds_mean, "tol_grad": ctx.tol_theta, "tol_T": ctx.tol_T,
           "kappa_spike": opts.kappa_spike, "kappa_cont": opts.kappa_cont, "k_cont": opts.k_cont,
           "k_fit": opts.k_fit, "n_dirs": opts.n_dirs, "v_max": opts.v_max}
    return ReconstructedManifold(ds.ids.copy(), gg, cls.boundary.copy(), cls.margin.copy(),
                                 cls.witness_j.copy(), cls.witness_v.copy(), chart, alpha, beta,
                                 closed, g, res, ncov, status.astype(str), ctx.E, tol, diag, warnings,
                                 cls.vote.copy())


def _min_gap(E):
    Es = E.copy()
    np.fill_diagonal(Es, np.inf)
    k = int(np.argmin(Es))
    i, j = divmod(k, E.shape[0])
    return float(Es[i, j]), (i, j)


# ----------------------------------------------------------------- report

def _f(x):
    return repr(float(x))


def write_report(recon: ReconstructedManifold, outdir) -> list:
    """Versioned text summary plus CSV tables; returns the written paths."""
    import os
    os.makedirs(outdir, exist_ok=True)
    paths = []
    d = recon.diagnostics
    lines = [REPORT_MAGIC, "", "[tolerances]"]
    lines += [f"{k} = {_f(v) if isinstance(v, float) else v}" for k, v in sorted(recon.tolerances.items())]
    lines += ["", "[gamma]", f"sensors = {recon.gamma.u.size}",
              f"sensor_sources = {d['gamma_rows']}",
              f"arc_length = {_f(recon.gamma.arclength[-1])}", "",
              "[boundary]", f"boundary = {d['boundary_count']}", f"interior = {d['interior_count']}",
              f"classified = {int(np.sum(recon.status != 'masked'))} of {recon.N}",
              f"sigma_sets = {d['sigma_sets']}", f"thin_sigma_sets = {d['thin_sigma_sets']}", "",
              "[embedding]", f"min_row_gap = {_f(d['min_row_gap'])}",
              f"near_duplicate_threshold = {_f(d['near_duplicate_threshold'])}",
              f"near_duplicate_rows = {d['near_duplicate_rows']}", "", "[metric]"]
    lines += [f"status.{k} = {v}" for k, v in sorted(d["status"].items())]
    fin = np.isfinite(recon.residual)
    if fin.any():
        lines.append(f"median_residual = {_f(np.median(recon.residual[fin]))}")
    lines += ["", "[warnings]"] + [f"- {w}" for w in recon.warnings]
    p = os.path.join(outdir, "report.txt")
    with open(p, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    paths.append(p)
    p = os.path.join(outdir, "gamma.csv")
    with open(p, "w") as fh:
        fh.write("j,u,speed,arc_length,sensor_source_id\n")
        for j in range(recon.gamma.u.size):
            row = recon.gamma.gamma_rows[j]
            sid = int(recon.ids[row]) if row >= 0 else -1
            fh.write(f"{j},{_f(recon.gamma.u[j])},{_f(recon.gamma.lam[j])},"
                     f"{_f(recon.gamma.arclength[j])},{sid}\n")
    paths.append(p)
    p = os.path.join(outdir, "sources.csv")
    with open(p, "w") as fh:
        fh.write("id,boundary,margin,vote,witness_j,witness_v,chart_j,alpha_v,alpha_r,beta_eta,beta_tau,"
                 "beta_closed,g11,g12,g22,residual,n_cov,status\n")
        order = np.argsort(recon.ids, kind="stable")
        for i in order:
            g = recon.g_fit[i]
            fh.write(",".join([
                str(int(recon.ids[i])), str(int(recon.boundary[i])), _f(recon.margin[i]), _f(recon.vote[i]),
                str(int(recon.witness_j[i])), _f(recon.witness_v[i]), str(int(recon.chart_j[i])),
                _f(recon.alpha[i, 0]), _f(recon.alpha[i, 1]), _f(recon.beta[i, 0]),
                _f(recon.beta[i, 1]), str(int(recon.beta_closed[i])), _f(g[0, 0]), _f(g[0, 1]),
                _f(g[1, 1]), _f(recon.residual[i]), str(int(recon.n_cov[i])), recon.status[i]]) + "\n")
    paths.append(p)
    return paths
