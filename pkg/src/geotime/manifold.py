"""Ground-truth geometry: metric fields on a planar chart and smooth domains.

Metrics come from a closed catalog (``euclidean``, ``conformal_bump``,
``constant_curvature``, ``custom_spd``).  Boundaries are closed Fourier curves
``t -> c(t)``, ``t in [0, 2*pi)``, stored together with a spectral arc-length
map so that callers can address points by Euclidean arc length ``s``.

Sign convention: the second fundamental form ``Pi`` is taken with respect to
the *outward* normal, so a strictly convex boundary has ``Pi < 0`` everywhere;
the geodesic curvature of the boundary seen from inside is ``kappa_g = -Pi``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.spatial import cKDTree

from . import kernels
from .errors import ConvexityError, DomainError

CATALOG = ("euclidean", "conformal_bump", "constant_curvature", "custom_spd")
_KIND = {name: i for i, name in enumerate(CATALOG)}

TWO_PI = 2.0 * np.pi


# --------------------------------------------------------------------- metrics

@dataclass(frozen=True, eq=False)
class MetricSpec:
    """A catalog metric on the chart rectangle ``chart = (xmin, xmax, ymin, ymax)``.

    ``params`` by catalog entry:

    - ``euclidean``: none
    - ``conformal_bump``: ``(cx, cy, amplitude, width)``; ``g = exp(2 phi) Id``
      with ``phi = a exp(-|x - c|^2 / (2 w^2))``
    - ``constant_curvature``: ``(K,)``; ``g = 4 / (1 + K |x|^2)^2 Id``
    - ``custom_spd``: unused; ``tables`` holds three ``(d+1, d+1)`` arrays of
      polynomial coefficients ``c[i, j] x^i y^j`` for ``g11, g12, g22``.
    """

    catalog_id: str
    params: tuple = ()
    chart: tuple = (-10.0, 10.0, -10.0, 10.0)
    tables: tuple | None = None
    _kparams: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.catalog_id not in _KIND:
            raise DomainError(f"unknown metric catalog id {self.catalog_id!r}")
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        object.__setattr__(self, "chart", tuple(float(c) for c in self.chart))
        need = {"euclidean": 0, "conformal_bump": 4, "constant_curvature": 1, "custom_spd": 0}
        if len(self.params) < need[self.catalog_id]:
            raise DomainError(f"{self.catalog_id} needs {need[self.catalog_id]} parameters")
        if self.catalog_id == "conformal_bump" and self.params[3] <= 0:
            raise DomainError("bump width must be positive")
        if self.catalog_id == "custom_spd":
            if self.tables is None or len(self.tables) != 3:
                raise DomainError("custom_spd needs three coefficient tables")
            tabs = tuple(np.atleast_2d(np.asarray(t, dtype=np.float64)) for t in self.tables)
            deg = max(max(t.shape) for t in tabs) - 1
            if deg > 15:
                raise DomainError("custom_spd degree above 15 is not supported")
            full = []
            for t in tabs:
                z = np.zeros((deg + 1, deg + 1))
                z[: t.shape[0], : t.shape[1]] = t
                full.append(z)
            object.__setattr__(self, "tables", tuple(full))
            kp = np.concatenate([[float(deg)]] + [t.ravel() for t in full])
        else:
            kp = np.asarray(self.params, dtype=np.float64)
            if kp.size == 0:
                kp = np.zeros(1)
        object.__setattr__(self, "_kparams", np.ascontiguousarray(kp))

    @property
    def kind(self) -> int:
        return _KIND[self.catalog_id]

    @property
    def kernel_params(self) -> np.ndarray:
        return self._kparams

    @property
    def is_conformal(self) -> bool:
        return self.catalog_id != "custom_spd"

    def in_chart(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        x0, x1, y0, y1 = self.chart
        return (pts[..., 0] >= x0) & (pts[..., 0] <= x1) & (pts[..., 1] >= y0) & (pts[..., 1] <= y1)

    def _check(self, x):
        x = np.asarray(x, dtype=np.float64)
        if not np.all(self.in_chart(x)):
            raise DomainError(f"point {x.tolist()} outside chart rectangle {self.chart}")
        return x

    def phi(self, pts) -> np.ndarray:
        """Conformal exponent ``phi`` (vectorised); ``g = exp(2 phi) Id``."""
        if not self.is_conformal:
            raise DomainError("phi is only defined for conformal catalog entries")
        pts = np.asarray(pts, dtype=np.float64)
        x, y = pts[..., 0], pts[..., 1]
        if self.catalog_id == "conformal_bump":
            cx, cy, a, w = self.params[:4]
            return a * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2.0 * w * w))
        if self.catalog_id == "constant_curvature":
            K = self.params[0]
            return np.log(2.0) - np.log1p(K * (x * x + y * y))
        return np.zeros_like(x)

    def conformal_factor(self, pts) -> np.ndarray:
        """``exp(phi)``: local ratio of Riemannian to Euclidean length."""
        return np.exp(self.phi(pts))


def metric_euclidean(chart=(-10.0, 10.0, -10.0, 10.0)) -> MetricSpec:
    return MetricSpec("euclidean", (), chart)


def metric_bump(center=(0.0, 0.0), amplitude=0.2, width=0.3, chart=(-10.0, 10.0, -10.0, 10.0)):
    return MetricSpec("conformal_bump", (center[0], center[1], amplitude, width), chart)


def metric_constant_curvature(K=1.0, chart=None) -> MetricSpec:
    if chart is None:
        # for negative K the whole square (corners included) stays well inside
        # the singular circle K |x|^2 = -1
        r = 10.0 if K >= 0 else 0.5 / np.sqrt(-K)
        chart = (-r, r, -r, r)
    return MetricSpec("constant_curvature", (K,), chart)


def metric_lens(chart=(-10.0, 10.0, -10.0, 10.0)) -> MetricSpec:
    """Strong positive bump at the origin; focuses geodesics and creates a cut locus."""
    return metric_bump((0.0, 0.0), 1.0, 0.25, chart)


def metric_mild_bump(chart=(-10.0, 10.0, -10.0, 10.0)) -> MetricSpec:
    return metric_bump((0.0, 0.0), 0.2, 0.3, chart)


def _metric_and_derivs(spec: MetricSpec, x):
    """``g`` (2x2) and ``dg[m] = d g / d x^m`` (2x2x2) at a single point."""
    if spec.catalog_id == "custom_spd":
        out = []
        for t in spec.tables:
            v = P.polyval2d(x[0], x[1], t)
            vx = P.polyval2d(x[0], x[1], P.polyder(t, axis=0))
            vy = P.polyval2d(x[0], x[1], P.polyder(t, axis=1))
            out.append((v, vx, vy))
        (a, ax, ay), (b, bx, by), (c, cx, cy) = out
        g = np.array([[a, b], [b, c]])
        dg = np.array([[[ax, bx], [bx, cx]], [[ay, by], [by, cy]]])
        return g, dg
    if spec.catalog_id == "euclidean":
        return np.eye(2), np.zeros((2, 2, 2))
    px, py = x[0], x[1]
    if spec.catalog_id == "conformal_bump":
        cx, cy, a, w = spec.params[:4]
        ph = a * np.exp(-((px - cx) ** 2 + (py - cy) ** 2) / (2.0 * w * w))
        dph = np.array([-ph * (px - cx) / (w * w), -ph * (py - cy) / (w * w)])
    else:
        K = spec.params[0]
        q = 1.0 + K * (px * px + py * py)
        ph = np.log(2.0) - np.log(q)
        dph = np.array([-2.0 * K * px / q, -2.0 * K * py / q])
    e = np.exp(2.0 * ph)
    g = e * np.eye(2)
    dg = np.stack([2.0 * dph[0] * g, 2.0 * dph[1] * g])
    return g, dg


def metric_at(spec: MetricSpec, x) -> np.ndarray:
    """Metric tensor ``g(x)`` as a symmetric positive-definite 2x2 matrix."""
    x = spec._check(x)
    g, _ = _metric_and_derivs(spec, x)
    if spec.catalog_id == "custom_spd" and (g[0, 0] <= 0 or np.linalg.det(g) <= 0):
        raise DomainError(f"custom_spd metric is not positive definite at {x.tolist()}")
    return g


def metric_derivatives(spec: MetricSpec, x) -> np.ndarray:
    """Partials ``dg[m, a, b] = d g_ab / d x^m``."""
    x = spec._check(x)
    return _metric_and_derivs(spec, x)[1]


def christoffel(spec: MetricSpec, x) -> np.ndarray:
    """Christoffel symbols ``G[i, j, k] = Gamma^i_{jk}`` of the Levi-Civita connection."""
    x = spec._check(x)
    g, dg = _metric_and_derivs(spec, x)
    ginv = np.linalg.inv(g)
    # first kind: [l; jk] = (d_j g_lk + d_k g_lj - d_l g_jk) / 2
    first = 0.5 * (np.einsum("jlk->ljk", dg) + np.einsum("klj->ljk", dg) - dg)
    return np.einsum("il,ljk->ijk", ginv, first)


def gauss_curvature(spec: MetricSpec, x) -> float:
    """Gauss curvature; ``-exp(-2 phi) lap(phi)`` for conformal metrics, Brioschi otherwise."""
    x = spec._check(x)
    return float(kernels.gauss_curvature_at(spec.kind, spec.kernel_params, float(x[0]), float(x[1])))


def g_inner(g, u, v):
    return np.einsum("...i,...ij,...j->...", u, g, v)


def g_norm(g, u):
    return np.sqrt(g_inner(g, u, u))


def metric_field(spec: MetricSpec, pts) -> np.ndarray:
    """Vectorised ``g`` over an ``(..., 2)`` point array (no chart check)."""
    pts = np.asarray(pts, dtype=np.float64)
    if spec.is_conformal:
        e = np.exp(2.0 * spec.phi(pts))
        return e[..., None, None] * np.eye(2)
    a, b, c = (P.polyval2d(pts[..., 0], pts[..., 1], t) for t in spec.tables)
    return np.stack([np.stack([a, b], -1), np.stack([b, c], -1)], -2)


# -------------------------------------------------------------------- boundary

class FourierCurve:
    """Closed planar curve ``c(t) = c0 + sum_k a_k cos kt + b_k sin kt``.

    ``coeffs`` has shape ``(4, n)`` with rows ``ax, bx, ay, by`` for modes
    ``1..n``.  The Euclidean arc length ``s(t)`` is represented spectrally, which
    makes ``s <-> t`` conversion accurate to round-off for smooth curves.
    """

    def __init__(self, center, coeffs, n_quad=4096):
        self.center = np.asarray(center, dtype=np.float64).reshape(2)
        self.coeffs = np.atleast_2d(np.asarray(coeffs, dtype=np.float64))
        if self.coeffs.shape[0] != 4:
            raise DomainError("Fourier table needs rows ax, bx, ay, by")
        self.n = self.coeffs.shape[1]
        self.k = np.arange(1, self.n + 1, dtype=np.float64)
        n_quad = max(n_quad, 8 * self.n)
        tq = TWO_PI * np.arange(n_quad) / n_quad
        speed = np.hypot(*self.eval(tq, 1).T)
        if speed.min() <= 0:
            raise DomainError("boundary curve is singular (zero speed)")
        sc = np.fft.rfft(speed) / n_quad
        self.length = float(TWO_PI * sc[0].real)
        self._sc = sc[1:]
        self._sk = np.arange(1, sc.size, dtype=np.float64)

    def eval(self, t, der=0):
        t = np.asarray(t, dtype=np.float64)
        kt = np.multiply.outer(t, self.k)
        c, s = np.cos(kt), np.sin(kt)
        ax, bx, ay, by = self.coeffs
        kp = self.k ** der
        if der % 4 == 0:
            x, y = c @ (ax * kp) + s @ (bx * kp), c @ (ay * kp) + s @ (by * kp)
        elif der % 4 == 1:
            x, y = -s @ (ax * kp) + c @ (bx * kp), -s @ (ay * kp) + c @ (by * kp)
        elif der % 4 == 2:
            x, y = -(c @ (ax * kp)) - s @ (bx * kp), -(c @ (ay * kp)) - s @ (by * kp)
        else:
            x, y = s @ (ax * kp) - c @ (bx * kp), s @ (ay * kp) - c @ (by * kp)
        out = np.stack([x, y], axis=-1)
        if der == 0:
            out = out + self.center
        return out

    def s_of_t(self, t):
        t = np.asarray(t, dtype=np.float64)
        tw = np.mod(t, TWO_PI)
        kt = np.multiply.outer(tw, self._sk)
        a, b = 2.0 * self._sc.real, -2.0 * self._sc.imag
        per = np.sin(kt) @ (a / self._sk) + (1.0 - np.cos(kt)) @ (b / self._sk)
        return self.length * tw / TWO_PI + per

    def t_of_s(self, s):
        s = np.mod(np.asarray(s, dtype=np.float64), self.length)
        t = TWO_PI * s / self.length
        for _ in range(30):
            r = self.s_of_t(t) - s
            r = r - self.length * np.round(r / self.length)
            sp = np.hypot(*np.moveaxis(self.eval(t, 1), -1, 0))
            step = r / sp
            t = t - step
            if np.all(np.abs(step) < 1e-15):
                break
        return np.mod(t, TWO_PI)

    @classmethod
    def from_points(cls, pts, n_modes=None, n_quad=4096, rel_tol=1e-13):
        """Fourier fit of a closed curve sampled at equally spaced parameters.

        ``n_modes=None`` keeps every mode up to the last one whose amplitude
        exceeds ``rel_tol`` times the largest.
        """
        pts = np.asarray(pts, dtype=np.float64)
        M = pts.shape[0]
        fx = np.fft.rfft(pts[:, 0]) / M
        fy = np.fft.rfft(pts[:, 1]) / M
        if n_modes is None:
            amp = np.hypot(np.abs(fx[1:M // 2]), np.abs(fy[1:M // 2]))
            n_modes = int(np.flatnonzero(amp > rel_tol * amp.max())[-1]) + 1
        n = min(n_modes, M // 2 - 1)
        co = np.array([2 * fx[1:n + 1].real, -2 * fx[1:n + 1].imag,
                       2 * fy[1:n + 1].real, -2 * fy[1:n + 1].imag])
        return cls((fx[0].real, fy[0].real), co, n_quad)


@dataclass(frozen=True, eq=False)
class DomainSpec:
    """A smooth simply connected domain bounded by a counterclockwise Fourier curve.

    ``gamma_arc = (s_a, s_b)`` is the measurement arc in Euclidean arc length
    measured from ``t = 0``.  ``pole`` is a point from which the boundary is
    radially visible (star-shaped); the geodesic kernels need it to evaluate
    the boundary crossing function.  Domains that are not star-shaped (the
    horseshoe) are still valid for grid-based distance computations.
    """

    curve: FourierCurve
    gamma_arc: tuple
    name: str = "domain"
    pole: tuple | None = None
    _kcurve: tuple | None = field(init=False, repr=False, default=None)
    _poly: np.ndarray = field(init=False, repr=False, default=None)
    _tree: object = field(init=False, repr=False, default=None)

    def __post_init__(self):
        sa, sb = (float(v) for v in self.gamma_arc)
        if not (0.0 <= sa < sb <= self.curve.length + 1e-12):
            raise DomainError(f"measurement arc must satisfy 0 <= s_a < s_b <= L, got {(sa, sb)}")
        object.__setattr__(self, "gamma_arc", (sa, sb))
        M = max(4096, 16 * self.curve.n)
        tq = TWO_PI * np.arange(M) / M
        poly = self.curve.eval(tq)
        d1 = self.curve.eval(tq, 1)
        area2 = np.sum(poly[:, 0] * d1[:, 1] - poly[:, 1] * d1[:, 0]) * TWO_PI / M
        if area2 <= 0:
            raise DomainError("boundary curve must be oriented counterclockwise")
        object.__setattr__(self, "_poly", poly)
        object.__setattr__(self, "_tree", cKDTree(poly))
        pole = self.curve.center if self.pole is None else np.asarray(self.pole, dtype=np.float64)
        object.__setattr__(self, "pole", (float(pole[0]), float(pole[1])))
        ntab = max(512, 8 * self.curve.n)
        tt = TWO_PI * np.arange(ntab + 1) / ntab
        pp = self.curve.eval(tt)
        psi = np.unwrap(np.arctan2(pp[:, 1] - pole[1], pp[:, 0] - pole[0]))
        if np.all(np.diff(psi) > 0) and abs(psi[-1] - psi[0] - TWO_PI) < 1e-9:
            dense = self.curve.eval(np.linspace(0, TWO_PI, 16 * ntab + 1))
            dpsi = np.diff(np.unwrap(np.arctan2(dense[:, 1] - pole[1], dense[:, 0] - pole[0])))
            if np.all(dpsi > 0):
                kc = (np.ascontiguousarray(self.curve.coeffs.ravel()),
                      np.array([self.curve.center[0], self.curve.center[1], pole[0], pole[1]]),
                      np.ascontiguousarray(psi))
                object.__setattr__(self, "_kcurve", kc)

    # arc-length addressing
    @property
    def length(self) -> float:
        return self.curve.length

    def t_of_s(self, s):
        return self.curve.t_of_s(s)

    def s_of_t(self, t):
        return np.mod(self.curve.s_of_t(t), self.length)

    def point(self, s):
        return self.curve.eval(self.curve.t_of_s(s))

    def gamma_points(self, u):
        """Chart points at normalised Gamma parameter ``u in [0, 1]``."""
        sa, sb = self.gamma_arc
        return self.point(sa + np.asarray(u, dtype=np.float64) * (sb - sa))

    @property
    def star_shaped(self) -> bool:
        return self._kcurve is not None

    @property
    def kernel_curve(self):
        if self._kcurve is None:
            raise DomainError(f"domain {self.name!r} is not star-shaped about its pole; "
                              "geodesic shooting is unavailable")
        return self._kcurve

    @property
    def polygon(self) -> np.ndarray:
        return self._poly

    def bbox(self):
        p = self._poly
        return float(p[:, 0].min()), float(p[:, 0].max()), float(p[:, 1].min()), float(p[:, 1].max())

    # containment
    def inside(self, pts) -> np.ndarray:
        """Even-odd point-in-polygon test against a dense sampling of the boundary."""
        pts = np.asarray(pts, dtype=np.float64)
        flat = pts.reshape(-1, 2)
        a = self._poly
        b = np.roll(a, -1, axis=0)
        res = np.zeros(flat.shape[0], dtype=bool)
        for lo in range(0, flat.shape[0], 256):
            q = flat[lo:lo + 256, None, :]
            cond = (a[None, :, 1] > q[..., 1]) != (b[None, :, 1] > q[..., 1])
            with np.errstate(divide="ignore", invalid="ignore"):
                xint = a[None, :, 0] + (q[..., 1] - a[None, :, 1]) * (b[None, :, 0] - a[None, :, 0]) \
                    / (b[None, :, 1] - a[None, :, 1])
            res[lo:lo + 256] = np.sum(cond & (q[..., 0] < xint), axis=1) % 2 == 1
        return res.reshape(pts.shape[:-1])

    def grid_mask(self, xs, ys) -> np.ndarray:
        """Inside mask on the tensor grid ``xs x ys`` (indexing 'ij') by scanlines."""
        a = self._poly
        b = np.roll(a, -1, axis=0)
        mask = np.zeros((xs.size, ys.size), dtype=bool)
        for j, y in enumerate(ys):
            cond = (a[:, 1] > y) != (b[:, 1] > y)
            if not cond.any():
                continue
            aa, bb = a[cond], b[cond]
            xc = np.sort(aa[:, 0] + (y - aa[:, 1]) * (bb[:, 0] - aa[:, 0]) / (bb[:, 1] - aa[:, 1]))
            cnt = np.searchsorted(xc, xs)
            mask[:, j] = cnt % 2 == 1
        return mask

    def closest_boundary(self, pts):
        """Euclidean distance to the boundary curve and the foot parameter ``t``."""
        pts = np.asarray(pts, dtype=np.float64)
        flat = pts.reshape(-1, 2)
        _, idx = self._tree.query(flat)
        t = TWO_PI * idx / self._poly.shape[0]
        for _ in range(6):
            c = self.curve.eval(t)
            c1 = self.curve.eval(t, 1)
            c2 = self.curve.eval(t, 2)
            r = c - flat
            f1 = np.sum(r * c1, axis=1)
            f2 = np.sum(c1 * c1, axis=1) + np.sum(r * c2, axis=1)
            t = t - f1 / np.where(np.abs(f2) > 1e-300, f2, 1.0)
        d = np.hypot(*(self.curve.eval(t) - flat).T)
        return d.reshape(pts.shape[:-1]), np.mod(t, TWO_PI).reshape(pts.shape[:-1])

    def depth(self, pts) -> np.ndarray:
        """Signed Euclidean distance to the boundary, positive inside."""
        d, _ = self.closest_boundary(pts)
        return np.where(self.inside(pts), d, -d)

    def classify(self, pts, tol=1e-9):
        """``'interior' | 'boundary' | 'exterior'`` per point (boundary within ``tol``)."""
        dep = np.atleast_1d(self.depth(pts))
        lab = np.where(np.abs(dep) <= tol, "boundary", np.where(dep > 0, "interior", "exterior"))
        return lab if np.ndim(pts) > 1 else str(lab[0])

    def is_simple(self, n=720) -> bool:
        """Pairwise segment intersection test on a sampled polyline."""
        p = self.curve.eval(TWO_PI * np.arange(n) / n)
        a, b = p, np.roll(p, -1, axis=0)

        def orient(p, q, r):
            return np.sign((q[..., 0] - p[..., 0]) * (r[..., 1] - p[..., 1])
                           - (q[..., 1] - p[..., 1]) * (r[..., 0] - p[..., 0]))

        A, B = a[:, None], b[:, None]
        C, D = a[None, :], b[None, :]
        hit = (orient(A, B, C) != orient(A, B, D)) & (orient(C, D, A) != orient(C, D, B))
        i, j = np.nonzero(hit)
        gap = np.abs(i - j)
        gap = np.minimum(gap, n - gap)
        return not np.any(gap > 1)


def circle_domain(radius=1.0, center=(0.0, 0.0), gamma_arc=None, name="disk") -> DomainSpec:
    co = np.array([[radius], [0.0], [0.0], [radius]])
    curve = FourierCurve(center, co)
    if gamma_arc is None:
        gamma_arc = (0.0, curve.length / 2)
    return DomainSpec(curve, gamma_arc, name)


def ellipse_domain(a=2.0, b=1.0, center=(0.0, 0.0), gamma_arc=None, name="ellipse") -> DomainSpec:
    co = np.array([[a], [0.0], [0.0], [b]])
    curve = FourierCurve(center, co)
    if gamma_arc is None:
        gamma_arc = (0.0, curve.length / 2)
    return DomainSpec(curve, gamma_arc, name)


def fourier_domain(center, coeffs, gamma_arc, name="fourier", pole=None) -> DomainSpec:
    return DomainSpec(FourierCurve(center, coeffs), gamma_arc, name, pole)


@dataclass(frozen=True)
class HorseshoeGeometry:
    """Annular C-shape opening to the left: radii ``inner < outer``, arms reaching
    polar angle ``+-arm``; the caps are half-discs joining the two arcs."""

    inner: float = 0.3
    outer: float = 1.0
    arm: float = np.deg2rad(135.0)

    @property
    def x0(self):
        """Tip of the hole facing the closed end: the wrap point of all minimizers."""
        return np.array([self.inner, 0.0])

    def polyline(self, n=8192):
        ri, ro, A = self.inner, self.outer, self.arm
        rc, rm = 0.5 * (ro - ri), 0.5 * (ro + ri)
        pieces = [
            ("arc", (0.0, 0.0), ro, -A, A),
            ("arc", (rm * np.cos(A), rm * np.sin(A)), rc, A, A + np.pi),
            ("arc", (0.0, 0.0), ri, A, -A),
            ("arc", (rm * np.cos(-A), rm * np.sin(-A)), rc, -A + np.pi, -A + 2 * np.pi),
        ]
        lens = [abs(p[4] - p[3]) * p[2] for p in pieces]
        total = sum(lens)
        s = np.arange(n) * total / n
        out = np.empty((n, 2))
        edges = np.concatenate([[0.0], np.cumsum(lens)])
        for k, (_, c, r, a0, a1) in enumerate(pieces):
            sel = (s >= edges[k]) & (s < edges[k + 1])
            ang = a0 + (a1 - a0) * (s[sel] - edges[k]) / lens[k]
            out[sel] = np.stack([c[0] + r * np.cos(ang), c[1] + r * np.sin(ang)], -1)
        return out

    def involute(self, ell0=0.8, theta_max=1.35, n=16):
        """Points whose boundary-hugging distance to ``x0`` equals ``ell0``.

        The string leaves the inner circle tangentially at polar angle
        ``-theta`` after wrapping clockwise from ``x0``.
        """
        th = np.linspace(0.0, theta_max, n)
        ri = self.inner
        base = ri * np.stack([np.cos(th), -np.sin(th)], -1)
        tang = np.stack([-np.sin(th), -np.cos(th)], -1)
        return base + (ell0 - ri * th)[:, None] * tang


def horseshoe_domain(geom: HorseshoeGeometry | None = None, gamma_angles=(95.0, 130.0),
                     n_modes=256, name="horseshoe") -> DomainSpec:
    """Non-convex C-shaped domain; Gamma sits on the outer arc of the upper arm."""
    geom = geom or HorseshoeGeometry()
    curve = FourierCurve.from_points(geom.polyline(), n_modes)
    ang = np.deg2rad(np.asarray(gamma_angles, dtype=np.float64))
    targets = geom.outer * np.stack([np.cos(ang), np.sin(ang)], -1)
    M = 8192
    tq = TWO_PI * np.arange(M) / M
    pts = curve.eval(tq)
    tt = [tq[np.argmin(np.hypot(*(pts - q).T))] for q in targets]
    sa, sb = sorted(float(v) for v in np.mod(curve.s_of_t(np.array(tt)), curve.length))
    return DomainSpec(curve, (sa, sb), name, pole=(0.0, 0.0))


# ------------------------------------------------------------- boundary frames

@dataclass(frozen=True, eq=False)
class BoundaryFrame:
    """Orthonormal (w.r.t. ``g``) frame at a boundary point.

    ``second_fundamental_form`` is taken w.r.t. the outward normal: negative on
    strictly convex boundaries.
    """

    s: float
    point: np.ndarray
    tangent: np.ndarray
    inward_normal: np.ndarray
    second_fundamental_form: float
    metric: np.ndarray
    speed: float  # |dc/ds|_g: Riemannian length per unit Euclidean arc length

    @property
    def geodesic_curvature(self) -> float:
        return -self.second_fundamental_form


def _frames(domain: DomainSpec, spec: MetricSpec, s):
    s = np.atleast_1d(np.asarray(s, dtype=np.float64))
    t = domain.t_of_s(s)
    c = domain.curve.eval(t)
    c1 = domain.curve.eval(t, 1)
    c2 = domain.curve.eval(t, 2)
    out = []
    for k in range(s.size):
        g = metric_at(spec, c[k])
        G = christoffel(spec, c[k])
        sp = float(g_norm(g, c1[k]))
        T = c1[k] / sp
        n0 = np.array([-c1[k, 1], c1[k, 0]])
        n = n0 - g_inner(g, n0, T) * T
        n = n / g_norm(g, n)
        acc = c2[k] + np.einsum("ijk,j,k->i", G, c1[k], c1[k])
        kappa = float(g_inner(g, acc, n)) / sp ** 2
        euclid_speed = float(np.hypot(*c1[k]))
        out.append(BoundaryFrame(float(np.mod(s[k], domain.length)), c[k].copy(), T, n, -kappa, g,
                                 sp / euclid_speed))
    return out


def boundary_frame(domain: DomainSpec, spec: MetricSpec, s: float) -> BoundaryFrame:
    """Unit tangent, inward unit normal and second fundamental form at arc length ``s``."""
    return _frames(domain, spec, s)[0]


def boundary_frames(domain: DomainSpec, spec: MetricSpec, s) -> list:
    return _frames(domain, spec, s)


@dataclass(frozen=True)
class ConvexityResult:
    passed: bool
    max_pi: float
    s_at_max: float
    margin_floor: float

    def __bool__(self):
        return self.passed


def check_strict_convexity(domain: DomainSpec, spec: MetricSpec, n_samples: int = 256,
                           margin_floor: float = 1e-6) -> ConvexityResult:
    """Pass iff the largest sampled ``Pi`` is below ``-margin_floor``."""
    if n_samples < 16:
        raise DomainError("n_samples must be at least 16")
    s = domain.length * np.arange(n_samples) / n_samples
    pis = np.array([f.second_fundamental_form for f in _frames(domain, spec, s)])
    k = int(np.argmax(pis))
    return ConvexityResult(bool(pis[k] < -margin_floor), float(pis[k]), float(s[k]), margin_floor)


def min_radius_of_curvature(domain: DomainSpec, n: int = 2048) -> float:
    """Smallest Euclidean radius of curvature of the chart curve (local reach)."""
    t = TWO_PI * np.arange(n) / n
    c1 = domain.curve.eval(t, 1)
    c2 = domain.curve.eval(t, 2)
    k = (c1[:, 0] * c2[:, 1] - c1[:, 1] * c2[:, 0]) / np.hypot(*c1.T) ** 3
    kmax = np.max(np.abs(k))
    return float(np.inf if kmax == 0 else 1.0 / kmax)


def _offset(domain: DomainSpec, eps: float) -> DomainSpec:
    curve = domain.curve
    M = max(1024, 16 * curve.n)
    t = TWO_PI * np.arange(M) / M
    c = curve.eval(t)
    c1 = curve.eval(t, 1)
    nout = np.stack([c1[:, 1], -c1[:, 0]], -1) / np.hypot(*c1.T)[:, None]
    pts = c + eps * nout
    new = FourierCurve.from_points(pts)
    # parametrisations correspond by t, so reuse the arc fraction for Gamma
    sa, sb = domain.gamma_arc
    ta, tb = curve.t_of_s(np.array([sa, sb]))
    nsa, nsb = new.s_of_t(np.array([ta, tb]))
    nsa = float(np.mod(nsa, new.length))
    nsb = float(nsa + np.mod(nsb - nsa, new.length)) if sb > sa else float(nsb)
    nsb = min(nsb, new.length)
    return DomainSpec(new, (nsa, nsb), f"{domain.name}+{eps:g}", domain.pole)


def extend_domain(domain: DomainSpec, spec: MetricSpec, eps: float) -> DomainSpec:
    """Outward normal offset of the boundary by Euclidean distance ``eps``.

    Admissible widths stay below the local reach of the boundary (the smallest
    radius of curvature), keep the offset inside the chart and keep the result
    strictly convex.  Otherwise :class:`ConvexityError` carries the largest
    admissible width found by bisection.
    """
    if eps <= 0:
        raise DomainError("collar width must be positive")
    reach = min_radius_of_curvature(domain)

    def admissible(e):
        if e >= reach:
            return False
        try:
            ext = _offset(domain, e)
        except DomainError:
            return False
        if not np.all(spec.in_chart(ext.polygon)):
            return False
        if not ext.is_simple():
            return False
        return check_strict_convexity(ext, spec).passed

    if admissible(eps):
        return _offset(domain, eps)
    lo, hi = 0.0, float(eps)
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if admissible(mid):
            lo = mid
        else:
            hi = mid
    raise ConvexityError(f"collar width {eps:g} is not admissible; largest admissible ~ {lo:.6g}",
                         lo)


def default_extension(domain: DomainSpec, spec: MetricSpec, fraction: float = 0.1) -> DomainSpec:
    """Canonical collar used for extended-domain quantities."""
    reach = min_radius_of_curvature(domain)
    return extend_domain(domain, spec, fraction * min(reach, 1.0))
