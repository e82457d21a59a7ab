"""Partial travel-time datasets: generation, serialisation, sidecar truth.

Dataset file layout (all numbers little-endian)::

    geotime-dataset v1\\n
    m=<int> N=<int> layout=row-major\\n
    <u_1> ... <u_m>\\n                      sensor parameters, Python repr
    float64[N*m]                           times, row-major
    int64[N]                               opaque source ids
    uint8[N]                               row mask (1 = oracle converged)

The sidecar ``<path>.truth`` uses the same framing with header
``geotime-truth v1``, a dimension line ``N=<int> cols=2 layout=row-major``, a
JSON metadata line and a ``float64[N*2]`` block of source chart points.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .distance import distance_eikonal, eikonal_grid
from .errors import DataError, DomainError
from .geodesic import DEFAULT_OPTIONS, IntegratorOptions, integrate_raw
from .manifold import DomainSpec, MetricSpec, boundary_frames, metric_at

MAGIC = "geotime-dataset v1"
TRUTH_MAGIC = "geotime-truth v1"
TWO_PI = 2.0 * np.pi


def _wrap(a):
    return (a + np.pi) % TWO_PI - np.pi


# ----------------------------------------------------------------- plans

@dataclass(frozen=True)
class SensorPlan:
    """``m`` sensors at uniform ``u``; ``warp`` in (-1, 1) makes the arc-length
    spacing non-uniform via ``s(u) = s_a + (s_b - s_a)(u + warp sin(pi u) / pi)``."""

    m: int = 64
    warp: float = 0.0
    max_spacing: float = np.inf

    def __post_init__(self):
        if self.m < 8:
            raise DomainError("at least 8 sensors are required")
        if not -1.0 < self.warp < 1.0:
            raise DomainError("warp must lie in (-1, 1)")


@dataclass(frozen=True, eq=False)
class SensorArray:
    u: np.ndarray
    gamma_params: np.ndarray
    positions: np.ndarray

    @property
    def m(self):
        return self.u.size


def make_sensors(domain: DomainSpec, plan: SensorPlan) -> SensorArray:
    u = np.linspace(0.0, 1.0, plan.m)
    sa, sb = domain.gamma_arc
    s = sa + (sb - sa) * (u + plan.warp * np.sin(np.pi * u) / np.pi)
    if np.max(np.diff(s)) > plan.max_spacing:
        raise DomainError(f"sensor spacing {np.max(np.diff(s)):.4g} exceeds {plan.max_spacing}")
    return SensorArray(u, s, domain.point(s))


@dataclass(frozen=True)
class SourcePlan:
    """Interior lattice plus boundary and collar rings.

    - lattice: points ``h_src * (i, j)`` at depth ``>= collar + h_src / 2``;
    - boundary ring: every Gamma sensor and the midpoints between them, plus
      the rest of the boundary at a comparable spacing;
    - collar ring: depth ``collar`` (default ``2 h_src``), spacing ``h_src / 2``.

    Ring counts are rounded to multiples of 4 so that lattices and rings on
    a disk are invariant under quarter turns.
    """

    h_src: float = 0.1
    collar: float | None = None
    ring_refine: int = 2
    collar_spacing: float | None = None
    include_lattice: bool = True

    @property
    def delta_collar(self):
        return 2.0 * self.h_src if self.collar is None else self.collar


@dataclass(frozen=True, eq=False)
class SourceSet:
    points: np.ndarray
    kinds: np.ndarray
    depth: np.ndarray
    boundary_s: np.ndarray  # arc parameter for boundary sources, nan otherwise


def _round4(n):
    return max(4, int(4 * round(n / 4.0)))


def make_sources(domain: DomainSpec, spec: MetricSpec, sensors: SensorArray,
                 plan: SourcePlan) -> SourceSet:
    h = plan.h_src
    dc = plan.delta_collar
    pts, kinds, bs = [], [], []
    if plan.include_lattice:
        x0, x1, y0, y1 = domain.bbox()
        ii = np.arange(np.floor(x0 / h), np.ceil(x1 / h) + 1)
        jj = np.arange(np.floor(y0 / h), np.ceil(y1 / h) + 1)
        X, Y = np.meshgrid(ii * h, jj * h, indexing="ij")
        lat = np.stack([X.ravel(), Y.ravel()], -1)
        lat = lat[domain.inside(lat)]
        dep = domain.depth(lat)
        lat = lat[dep >= dc + 0.5 * h]
        pts.append(lat)
        kinds += ["lattice"] * lat.shape[0]
        bs.append(np.full(lat.shape[0], np.nan))
    # boundary ring: Gamma at refined sensor spacing, the rest uniformly
    L = domain.length
    sa, sb = domain.gamma_arc
    r = plan.ring_refine
    uu = np.linspace(0.0, 1.0, r * (sensors.m - 1) + 1)
    sg = np.interp(uu, sensors.u, sensors.gamma_params)
    rest = L - (sb - sa)
    ring = [sg]
    if rest > 1e-12:
        ds = (sb - sa) / (r * (sensors.m - 1))
        n_rest = max(1, int(round(rest / ds)))
        ring.append(sb + rest * np.arange(1, n_rest) / n_rest)
    ring = np.mod(np.concatenate(ring), L)
    ring = ring[np.argsort(ring)]
    keep = np.concatenate([[True], np.diff(ring) > 1e-12])
    if ring.size > 1 and np.mod(ring[0] - ring[-1], L) < 1e-12:
        keep[-1] = False
    ring = ring[keep]
    pts.append(domain.point(ring))
    kinds += ["boundary"] * ring.size
    bs.append(ring)
    # collar ring along the inward normals
    cs = plan.collar_spacing if plan.collar_spacing is not None else 0.5 * h
    nc = _round4(L / cs)
    sc = L * np.arange(nc) / nc
    t = domain.t_of_s(sc)
    c1 = domain.curve.eval(t, 1)
    nin = np.stack([-c1[:, 1], c1[:, 0]], -1) / np.hypot(*c1.T)[:, None]
    col = domain.curve.eval(t) + dc * nin
    pts.append(col)
    kinds += ["collar"] * nc
    bs.append(np.full(nc, np.nan))
    P = np.concatenate(pts)
    B = np.concatenate(bs)
    kinds = np.array(kinds)
    dep = np.where(kinds == "boundary", 0.0, domain.depth(P))
    return SourceSet(P, kinds, dep, B)


# ----------------------------------------------------------------- dataset

@dataclass(frozen=True, eq=False)
class TravelTimeDataset:
    u: np.ndarray
    times: np.ndarray
    ids: np.ndarray
    mask: np.ndarray
    version: str = MAGIC

    @property
    def m(self):
        return self.u.size

    @property
    def N(self):
        return self.times.shape[0]

    def row_separation(self):
        """Minimum sup-norm distance between distinct rows and the arg pair."""
        T = self.times[self.mask.astype(bool)]
        best, pair = np.inf, (-1, -1)
        for i in range(T.shape[0] - 1):
            d = np.max(np.abs(T[i + 1:] - T[i]), axis=1)
            k = int(np.argmin(d))
            if d[k] < best:
                best, pair = float(d[k]), (i, i + 1 + k)
        return best, pair


@dataclass(frozen=True, eq=False)
class Truth:
    """Ground truth withheld from reconstruction (sidecar contents)."""

    positions: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def kinds(self):
        return np.array(self.meta.get("kinds", []))

    @property
    def depth(self):
        return np.array(self.meta.get("depth", []), dtype=np.float64)


@dataclass(frozen=True)
class OracleOptions:
    n_fan: int = 128
    max_exit_gap: float = 0.05
    max_depth: int = 8
    root_tol: float = 1e-7
    integrator: IntegratorOptions = DEFAULT_OPTIONS
    threads: int = 1
    method: str = "shooting"      # or "eikonal" for domains the shooting oracle cannot handle
    eikonal_h: float = 1.0 / 512

    def __post_init__(self):
        if self.method not in ("shooting", "eikonal"):
            raise DomainError(f"oracle method must be 'shooting' or 'eikonal', got {self.method!r}")


class _RowSolver:
    """Distances from one source to all sensors through the exit-parameter map."""

    def __init__(self, spec, domain, sensor_t, sensor_pts, opts: OracleOptions):
        self.spec, self.domain, self.opts = spec, domain, opts
        self.sensor_t = sensor_t
        self.sensor_pts = sensor_pts

    def _ray(self, th, velocity=False):
        d = np.array([np.cos(th), np.sin(th)])
        d = d / np.sqrt(d @ self.g @ d)
        r = integrate_raw(self.spec, self.domain, self.p, d, 50.0,
                          from_boundary=self.fb, opts=self.opts.integrator)
        ok = r[0] == kernels.ST_EXITED
        out = (float(r[4]), float(r[1])) if ok else (np.nan, np.inf)
        self._exit_xy = r[2][:2]
        return out + (r[2][2:4],) if velocity else out

    def row(self, p, from_boundary, tangent=None):
        o = self.opts
        self.p = np.asarray(p, dtype=np.float64)
        self.fb = from_boundary
        self.g = metric_at(self.spec, self.p)
        n = o.n_fan
        if from_boundary:
            base = np.arctan2(tangent[1], tangent[0]) + 0.5 * np.pi
            k = (np.arange(n) + 0.5) / n
            th = list(base - 0.5 * np.pi * np.cos(np.pi * k))
        else:
            th = list(TWO_PI * np.arange(n + 1) / n)
        vals = [self._ray(t) for t in th]
        # adaptive refinement where the exit parameter jumps
        ths, tes, Ts = [th[0]], [vals[0][0]], [vals[0][1]]
        stack = [(th[k], vals[k], th[k + 1], vals[k + 1], 0) for k in range(len(th) - 1)][::-1]
        while stack:
            a, va, b, vb, dep = stack.pop()
            gap = abs(_wrap(vb[0] - va[0])) if np.isfinite(va[0]) and np.isfinite(vb[0]) else np.inf
            if gap > o.max_exit_gap and dep < o.max_depth:
                m = 0.5 * (a + b)
                vm = self._ray(m)
                stack.append((m, vm, b, vb, dep + 1))
                stack.append((a, va, m, vm, dep + 1))
                continue
            ths.append(b)
            tes.append(vb[0])
            Ts.append(vb[1])
        ths, tes, Ts = np.array(ths), np.array(tes), np.array(Ts)
        out = np.full(self.sensor_t.size, np.inf)
        hit0 = np.hypot(*(self.sensor_pts - self.p).T) < 1e-12
        out[hit0] = 0.0
        for k in range(ths.size - 1):
            if not (np.isfinite(tes[k]) and np.isfinite(tes[k + 1])):
                continue
            span = _wrap(tes[k + 1] - tes[k])
            if abs(span) > 0.5:
                continue
            rel = _wrap(self.sensor_t - tes[k])
            inside = (rel * np.sign(span) >= 0) & (np.abs(rel) <= abs(span)) & ~hit0
            js = np.flatnonzero(inside)
            if js.size == 0:
                continue
            guess = self._guess(ths, tes, k, rel[js])
            for j, g0 in zip(js, guess):
                T = self._root(ths[k], ths[k + 1], self.sensor_t[j], span, rel[j], g0)
                if T < out[j]:
                    out[j] = T
        return out

    @staticmethod
    def _guess(ths, tes, k, rel):
        """Inverse cubic (Lagrange) interpolation of ``theta(exit_param)`` on
        the fan rays around interval ``k``; ``(theta, dtheta/dte)`` per target."""
        lo, hi = max(k - 1, 0), min(k + 3, ths.size)
        xs = [float(v) for v in ths[lo:hi]]
        ys = [0.0] * len(xs)
        for i in range(k - lo - 1, -1, -1):
            ys[i] = ys[i + 1] - float(_wrap(tes[lo + i + 1] - tes[lo + i]))
        for i in range(k - lo + 1, len(xs)):
            ys[i] = ys[i - 1] + float(_wrap(tes[lo + i] - tes[lo + i - 1]))
        dy = np.diff(ys)
        if not np.all(np.isfinite(ys)) or not (np.all(dy > 0) or np.all(dy < 0)):
            xs, ys = xs[k - lo:k - lo + 2], ys[k - lo:k - lo + 2]
        out = []
        n = len(xs)
        for r in rel:
            val = der = 0.0
            for i in range(n):
                li, dli = 1.0, 0.0
                for j in range(n):
                    if j != i:
                        w = 1.0 / (ys[i] - ys[j])
                        dli = dli * (r - ys[j]) * w + li * w
                        li *= (r - ys[j]) * w
                val += xs[i] * li
                der += xs[i] * dli
            out.append((val, der))
        return out

    def _root(self, a, b, tj, span, rel, g0):
        """Solve ``exit_param(theta) = tj`` on ``[a, b]`` with Newton/secant
        iterates kept inside a shrinking bracket."""
        fa = -rel
        fb = span - rel
        if fa == 0.0 or fb == 0.0:
            return self._ray(a if fa == 0.0 else b)[1]
        x, slope = g0
        if not (a < x < b):
            x = a + (b - a) * fa / (fa - fb)
            slope = (b - a) / (fb - fa)
        x0 = f0 = None
        T = np.inf
        for _ in range(60):
            te, T, vel = self._ray(x, True)
            if not np.isfinite(te):
                return np.inf
            fx = _wrap(te - tj)
            if abs(fx) < self.opts.root_tol:
                # first variation: dT/dt = <gamma'(T), c'(t)>_g at the exit point
                c1 = self.domain.curve.eval(np.array([te]), 1)[0]
                return T - fx * float(vel @ metric_at(self.spec, self._exit_xy) @ c1)
            if np.sign(fx) == np.sign(fa):
                a, fa = x, fx
            else:
                b, fb = x, fx
            if b - a < 1e-15:
                return T
            if x0 is None:
                x_new = x - fx * slope
            else:
                x_new = x - fx * (x - x0) / (fx - f0) if fx != f0 else 0.5 * (a + b)
            if not (a < x_new < b):
                x_new = a + (b - a) * fa / (fa - fb)
                if not (a < x_new < b):
                    x_new = 0.5 * (a + b)
            x0, f0, x = x, fx, x_new
        return T


def _solve_rows(args):
    spec, domain, sensors_t, sensors_pts, opts, pts, fbs, tangents = args
    rs = _RowSolver(spec, domain, sensors_t, sensors_pts, opts)
    return [rs.row(p, fb, tg) for p, fb, tg in zip(pts, fbs, tangents)]


def _eikonal_columns(args):
    spec, domain, h, zs, pts = args
    grid = eikonal_grid(domain, h)
    cols = []
    for z in zs:
        c = distance_eikonal(spec, domain, z, h, grid=grid).at(pts)
        c[np.hypot(*(pts - z).T) < 1e-12] = 0.0
        cols.append(c)
    return cols


def generate_dataset(spec: MetricSpec, domain: DomainSpec, source_plan: SourcePlan,
                     sensor_plan: SensorPlan, oracle: OracleOptions = OracleOptions(), seed: int = 0,
                     config_text: str = "", extra_sources=None):
    """Travel times ``times[i, j] = d(p_i, z_j)`` from the shooting oracle
    (or fast marching from each sensor when ``oracle.method == 'eikonal'``).

    Rows are shuffled by ``seed`` and labelled with opaque random ids; the
    sidecar (``Truth``) records the chart point of each row.
    """
    sensors = make_sensors(domain, sensor_plan)
    src = make_sources(domain, spec, sensors, source_plan)
    pts, kinds, depth, bs = src.points, src.kinds, src.depth, src.boundary_s
    if extra_sources is not None:
        ex = np.atleast_2d(np.asarray(extra_sources, dtype=np.float64))
        pts = np.concatenate([pts, ex])
        kinds = np.concatenate([kinds, np.array(["extra"] * ex.shape[0])])
        dex = domain.depth(ex)
        depth = np.concatenate([depth, dex])
        bs = np.concatenate([bs, np.full(ex.shape[0], np.nan)])
    N = pts.shape[0]
    if not np.any(kinds == "boundary"):
        raise DomainError("source plan must include sources on Gamma")
    sensor_t = domain.t_of_s(sensors.gamma_params)
    fbs = kinds == "boundary"
    tangents = np.zeros((N, 2))
    if fbs.any():
        frs = boundary_frames(domain, spec, bs[fbs])
        tangents[fbs] = np.array([f.tangent for f in frs])
    if oracle.method == "eikonal":
        # fast marching from each sensor; minimizers may hug a non-convex boundary
        chunks = np.array_split(np.arange(sensors.m), max(1, oracle.threads))
        jobs = [(spec, domain, oracle.eikonal_h, sensors.positions[c], pts) for c in chunks if c.size]
        if oracle.threads > 1:
            with ProcessPoolExecutor(oracle.threads) as ex:
                parts = list(ex.map(_eikonal_columns, jobs))
        else:
            parts = [_eikonal_columns(j) for j in jobs]
        times = np.column_stack([c for part in parts for c in part])
    else:
        chunks = np.array_split(np.arange(N), max(1, oracle.threads) * 4)
        jobs = [(spec, domain, sensor_t, sensors.positions, oracle, pts[c], fbs[c], tangents[c])
                for c in chunks if c.size]
        if oracle.threads > 1:
            with ProcessPoolExecutor(oracle.threads) as ex:
                parts = list(ex.map(_solve_rows, jobs))
        else:
            parts = [_solve_rows(j) for j in jobs]
        times = np.array([row for part in parts for row in part])
    mask = np.all(np.isfinite(times), axis=1).astype(np.uint8)
    times = np.where(np.isfinite(times), times, np.nan)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(N)
    ids = rng.choice(np.int64(2) ** 40, size=N, replace=False).astype(np.int64)
    ds = TravelTimeDataset(sensors.u.copy(), np.ascontiguousarray(times[perm]), ids, mask[perm])
    meta = {
        "kinds": kinds[perm].tolist(),
        "depth": [float(v) for v in depth[perm]],
        "boundary_s": [None if not np.isfinite(v) else float(v) for v in bs[perm]],
        "sensor_s": [float(v) for v in sensors.gamma_params],
        "sensor_points": sensors.positions.tolist(),
        "gamma_arc": list(domain.gamma_arc),
        "h_src": source_plan.h_src,
        "delta_collar": source_plan.delta_collar,
        "seed": int(seed),
        "oracle": oracle.method,
        "config": config_text,
    }
    return ds, Truth(np.ascontiguousarray(pts[perm]), meta)


# ----------------------------------------------------------------- file io

def write_dataset(ds: TravelTimeDataset, path, truth: Truth | None = None):
    u = np.asarray(ds.u, dtype=np.float64)
    if np.any(np.diff(u) <= 0):
        raise DataError("sensor parameters must be strictly increasing")
    head = (f"{MAGIC}\nm={ds.m} N={ds.N} layout=row-major\n"
            + " ".join(repr(float(v)) for v in u) + "\n").encode("ascii")
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(np.ascontiguousarray(ds.times, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(ds.ids, dtype="<i8").tobytes())
        fh.write(np.ascontiguousarray(ds.mask, dtype="u1").tobytes())
    if truth is not None:
        write_truth(truth, str(path) + ".truth")


def _read_line(buf, pos, what):
    end = buf.find(b"\n", pos)
    if end < 0:
        raise DataError(f"truncated header: missing {what} line at byte offset {pos}")
    return buf[pos:end].decode("ascii", errors="replace"), end + 1


def read_dataset(path, blind: bool = False, with_truth: bool = False):
    """Load a dataset; with ``with_truth`` also return the sidecar (``None`` if absent
    or when ``blind`` is set)."""
    with open(path, "rb") as fh:
        buf = fh.read()
    line, pos = _read_line(buf, 0, "version")
    if line != MAGIC:
        raise DataError(f"version mismatch: expected {MAGIC!r}, found {line[:40]!r}")
    line, pos2 = _read_line(buf, pos, "dimension")
    try:
        kv = dict(tok.split("=", 1) for tok in line.split())
        m, N = int(kv["m"]), int(kv["N"])
        layout = kv["layout"]
    except (ValueError, KeyError):
        raise DataError(f"malformed dimension line at byte offset {pos}: {line!r}") from None
    if layout != "row-major" or m < 1 or N < 0:
        raise DataError(f"malformed dimension line at byte offset {pos}: {line!r}")
    line, pos3 = _read_line(buf, pos2, "sensor parameter")
    try:
        u = np.array([float(t) for t in line.split()], dtype=np.float64)
    except ValueError:
        raise DataError(f"malformed sensor parameters at byte offset {pos2}") from None
    if u.size != m:
        raise DataError(f"expected {m} sensor parameters at byte offset {pos2}, found {u.size}")
    if np.any(np.diff(u) <= 0):
        raise DataError(f"sensor parameters at byte offset {pos2} are not strictly increasing")
    need = [("times", 8 * N * m), ("ids", 8 * N), ("mask", N)]
    off = pos3
    blocks = {}
    for name, nb in need:
        if len(buf) < off + nb:
            raise DataError(f"truncated {name} block: expected {nb} bytes at byte offset {off}, "
                            f"file ends at {len(buf)}")
        blocks[name] = buf[off:off + nb]
        off += nb
    if len(buf) != off:
        raise DataError(f"trailing bytes after offset {off}")
    times = np.frombuffer(blocks["times"], dtype="<f8").reshape(N, m).astype(np.float64)
    ids = np.frombuffer(blocks["ids"], dtype="<i8").astype(np.int64)
    mask = np.frombuffer(blocks["mask"], dtype="u1").copy()
    ds = TravelTimeDataset(u, times, ids, mask)
    if not with_truth:
        return ds
    tp = str(path) + ".truth"
    truth = None if blind or not os.path.exists(tp) else read_truth(tp)
    return ds, truth


def write_truth(truth: Truth, path):
    pos = np.ascontiguousarray(truth.positions, dtype="<f8")
    head = (f"{TRUTH_MAGIC}\nN={pos.shape[0]} cols=2 layout=row-major\n"
            + json.dumps(truth.meta, sort_keys=True, separators=(",", ":")) + "\n").encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(pos.tobytes())


def read_truth(path) -> Truth:
    with open(path, "rb") as fh:
        buf = fh.read()
    line, pos = _read_line(buf, 0, "version")
    if line != TRUTH_MAGIC:
        raise DataError(f"sidecar version mismatch: {line[:40]!r}")
    line, pos2 = _read_line(buf, pos, "dimension")
    try:
        kv = dict(tok.split("=", 1) for tok in line.split())
        N = int(kv["N"])
    except (ValueError, KeyError):
        raise DataError(f"malformed sidecar dimension line at byte offset {pos}") from None
    end = buf.find(b"\n", pos2)
    if end < 0:
        raise DataError(f"truncated sidecar metadata at byte offset {pos2}")
    try:
        meta = json.loads(buf[pos2:end].decode("utf-8"))
    except ValueError:
        raise DataError(f"malformed sidecar metadata at byte offset {pos2}") from None
    off = end + 1
    if len(buf) != off + 16 * N:
        raise DataError(f"sidecar block size mismatch at byte offset {off}")
    P = np.frombuffer(buf[off:], dtype="<f8").reshape(N, 2).astype(np.float64)
    return Truth(P, meta)


def boundary_arc_bound(domain: DomainSpec, spec: MetricSpec, s_a, s_b, n=64):
    """Riemannian length of the boundary arc between ``s_a`` and ``s_b``
    (an upper bound for the interior distance of its endpoints)."""
    s = np.linspace(s_a, s_b, n + 1)
    sp = np.array([f.speed for f in boundary_frames(domain, spec, s)])
    w = np.full(n + 1, 2.0)
    w[0] = w[-1] = 1.0
    w[1:-1:2] = 4.0
    return float(np.sum(w * sp) * (s_b - s_a) / (3 * n))
