"""Checks against ground truth: embedding, isometry transport, sigma/cut
consistency, the non-convex collapse counterexample and cut-locus structure."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .distance import (DEFAULT_SHOOTING, ShootingOptions, cut_locus_sample, cut_time,
                       distance_eikonal, distance_shooting, distances_from, eikonal_grid)
from .errors import DataError, DomainError
from .geodesic import UnitVectorAt, exp_map, unproject_scalar
from .manifold import (DomainSpec, HorseshoeGeometry, MetricSpec, boundary_frame, boundary_frames,
                       check_strict_convexity, horseshoe_domain, metric_at,
                       metric_euclidean)
from .reconstruct import (DEFAULT_RECON, ReconOptions, ReconstructedManifold, _sigma, context,
                          embedding_distances)
from .traveltime import TravelTimeDataset, Truth


def truth_setup(truth: Truth):
    """``(spec, domain)`` rebuilt from the configuration stored in the sidecar."""
    from .config import parse_config
    text = truth.meta.get("config", "")
    if not text:
        raise DataError("sidecar carries no configuration; pass spec and domain explicitly")
    cfg = parse_config(text)
    return cfg.metric_spec(), cfg.domain()


# ------------------------------------------------------------- embedding

@dataclass(frozen=True, eq=False)
class EmbeddingStats:
    min_gap: float
    min_pair: tuple
    duplicate_pairs: list
    pairs_checked: int = 0
    violations: int = 0
    max_excess: float = -np.inf
    exact_checks: int = 0


def _closed_form_distance(spec: MetricSpec, P):
    if spec.catalog_id == "euclidean":
        return np.hypot(*(P[:, None] - P[None]).transpose(2, 0, 1))
    if spec.catalog_id == "constant_curvature" and spec.params[0] > 0:
        # stereographic chart of the sphere of curvature K
        K = spec.params[0]
        R = 1.0 / np.sqrt(K)
        s2 = K * np.sum(P ** 2, axis=1)
        X = np.concatenate([2 * np.sqrt(K) * P, (1 - s2)[:, None]], axis=1) / (1 + s2)[:, None]
        c = np.clip(X @ X.T, -1.0, 1.0)
        return R * np.arccos(c)
    return None


def embedding_check(ds: TravelTimeDataset, truth: Truth | None = None, spec: MetricSpec | None = None,
                    domain: DomainSpec | None = None, tol: float = 1e-6, dup_tol: float = 0.0,
                    fmm_h: float = 1.0 / 128, fmm_margin: float = 5e-3,
                    opts: ShootingOptions = DEFAULT_SHOOTING) -> EmbeddingStats:
    """Injectivity of ``p -> r_p|Gamma`` and, with truth, ``gap <= d(p, q) + tol``.

    Distances come from closed forms where available.  Otherwise pairs are
    screened with fast-marching distances (``gap <= d_fmm - fmm_margin``) and
    the remaining ones are settled by shooting.
    """
    ok = ds.mask.astype(bool)
    E = embedding_distances(ds.times, ds.mask)
    Es = E.copy()
    np.fill_diagonal(Es, np.inf)
    k = int(np.argmin(Es))
    i0, j0 = divmod(k, ds.N)
    dups = [(int(a), int(b)) for a, b in zip(*np.nonzero(np.triu(Es <= dup_tol, 1)))]
    if truth is None:
        return EmbeddingStats(float(Es[i0, j0]), (i0, j0), dups)
    if spec is None or domain is None:
        spec, domain = truth_setup(truth)
    P = truth.positions
    idx = np.flatnonzero(ok)
    iu = np.triu_indices(idx.size, 1)
    gap = E[np.ix_(idx, idx)][iu]
    D = _closed_form_distance(spec, P[idx])
    exact = 0
    if D is not None:
        d = D[iu]
    else:
        d = np.empty(gap.size)
        grid = eikonal_grid(domain, fmm_h)
        Dm = np.empty((idx.size, idx.size))
        for a, i in enumerate(idx):
            Dm[a] = distance_eikonal(spec, domain, P[i], fmm_h, grid=grid).at(P[idx])
        d = np.minimum(Dm, Dm.T)[iu] - fmm_margin
        tight = np.flatnonzero(gap > d + tol)
        # settle the tight pairs exactly, one shared fan per source
        rows = iu[0][tight]
        for a in np.unique(rows):
            sel = tight[rows == a]
            d[sel] = distances_from(spec, domain, P[idx[a]], P[idx[iu[1][sel]]], opts)
        exact = int(tight.size)
    excess = gap - d
    return EmbeddingStats(float(Es[i0, j0]), (i0, j0), dups, int(gap.size),
                          int(np.sum(excess > tol)), float(excess.max()) if excess.size else -np.inf,
                          exact)


# --------------------------------------------------------- correspondence

@dataclass(frozen=True, eq=False)
class Correspondence:
    psi: np.ndarray        # row of dataset 2 matched to each row of dataset 1 (-1 if none)
    gap: np.ndarray        # sup-norm gap to the match
    ambiguous: list        # rows with a runner-up within the tie tolerance
    unmatched: list        # (row, min gap)


def correspondence(ds1: TravelTimeDataset, ds2: TravelTimeDataset, match_tol: float = 1e-5,
                   tie_tol: float = 1e-6) -> Correspondence:
    """Discrete ``Psi``: nearest rows in sup norm, sensors identified by index.

    ``tie_tol`` defaults to ten times the oracle root tolerance; rows whose
    runner-up lies within it are reported as ambiguous rather than guessed.
    """
    if ds1.m != ds2.m or not np.allclose(ds1.u, ds2.u, rtol=0, atol=1e-14):
        raise DataError("datasets use different sensor parametrisations")
    A = np.where(np.isfinite(ds1.times), ds1.times, np.inf)
    B = np.where(np.isfinite(ds2.times), ds2.times, np.inf)
    N1 = A.shape[0]
    psi = np.full(N1, -1)
    gap = np.full(N1, np.inf)
    amb, un = [], []
    for a in range(0, N1, 32):
        with np.errstate(invalid="ignore"):
            C = np.max(np.abs(A[a:a + 32, None, :] - B[None]), axis=2)
        C = np.where(np.isfinite(C), C, np.inf)
        o = np.argsort(C, axis=1)[:, :2]
        for r in range(C.shape[0]):
            i = a + r
            best = C[r, o[r, 0]]
            second = C[r, o[r, 1]] if C.shape[1] > 1 else np.inf
            if not ds1.mask[i] or best > match_tol:
                un.append((i, float(best)))
                continue
            if second - best <= tie_tol:
                amb.append(i)
                continue
            psi[i] = o[r, 0]
            gap[i] = best
    # keep only a bijection: drop rows whose target is claimed twice
    tgt, cnt = np.unique(psi[psi >= 0], return_counts=True)
    for t in tgt[cnt > 1]:
        for i in np.flatnonzero(psi == t):
            amb.append(int(i))
            psi[i] = -1
    return Correspondence(psi, gap, sorted(set(amb)), un)


def _truth_alpha_metric(spec, domain, frame, v, r, eps=1e-5):
    """Truth ``g`` in the alpha chart at ``z_0``: pull back by ``(v, r) -> exp(r w(v))``."""
    def P(vv, rr):
        return exp_map(spec, domain, frame.point, rr * unproject_scalar(frame, vv))
    ev = min(eps, 0.5 * (1 - abs(v)))
    Jc = np.stack([(P(v + ev, r) - P(v - ev, r)) / (2 * ev),
                   (P(v, r + eps) - P(v, r - eps)) / (2 * eps)], -1)
    return Jc.T @ metric_at(spec, P(v, r)) @ Jc


def metric_errors(recon: ReconstructedManifold, truth: Truth, spec: MetricSpec, domain: DomainSpec,
                  rows=None) -> np.ndarray:
    """Relative Frobenius error of ``g_fit`` against truth pulled into the same alpha chart."""
    S = np.asarray(truth.meta["sensor_s"], dtype=np.float64)
    frames = boundary_frames(domain, spec, S)
    rows = np.arange(recon.N) if rows is None else np.asarray(rows)
    err = np.full(rows.size, np.inf)
    for k, i in enumerate(rows):
        if recon.status[i] != "ok":
            continue
        j0 = recon.chart_j[i]
        v, r = recon.alpha[i]
        if r <= 0:
            continue
        try:
            gt = _truth_alpha_metric(spec, domain, frames[j0], v, r)
        except DomainError:
            continue
        err[k] = np.linalg.norm(recon.g_fit[i] - gt) / np.linalg.norm(gt)
    return err


@dataclass(frozen=True, eq=False)
class IsometryReport:
    correspondence: Correspondence
    metric_errors: np.ndarray
    distance_errors: np.ndarray
    boundary_agreement: dict
    strict_rows: np.ndarray
    gamma_consistent: bool | None = None
    sigma_transport: dict = field(default_factory=dict)
    cross_metric_errors: np.ndarray | None = None
    interior: np.ndarray | None = None

    def summary(self) -> dict:
        sel = self.interior if self.interior is not None else np.ones(self.metric_errors.size, bool)
        mi = self.metric_errors[sel]
        me = mi[np.isfinite(mi)]
        de = self.distance_errors[np.isfinite(self.distance_errors)]
        return {
            "matched": int(np.sum(self.correspondence.psi >= 0)),
            "ambiguous": len(self.correspondence.ambiguous),
            "unmatched": len(self.correspondence.unmatched),
            "metric_error_median": float(np.median(me)) if me.size else np.nan,
            "metric_error_p90": float(np.percentile(me, 90)) if me.size else np.nan,
            "interior_sources": int(sel.sum()),
            "frac_metric_le_2pct": float(np.mean(mi <= 0.02)) if mi.size else 0.0,
            "frac_metric_le_5pct": float(np.mean(mi <= 0.05)) if mi.size else 0.0,
            "distance_error_median": float(np.median(de)) if de.size else np.nan,
            "boundary": self.boundary_agreement,
            "gamma_consistent": self.gamma_consistent,
            "sigma_transport": self.sigma_transport,
            "frac_cross_le_5pct": (float(np.mean(self.cross_metric_errors <= 0.05))
                                   if self.cross_metric_errors is not None else None),
        }


def _strict(truth: Truth):
    kinds = truth.kinds
    dep = truth.depth
    dc = float(truth.meta.get("delta_collar", 0.0))
    return (kinds == "boundary") | (dep >= 3 * dc)


def _confusion(pred, actual, sel):
    p, a = pred[sel], actual[sel]
    tp, fp = int(np.sum(p & a)), int(np.sum(p & ~a))
    fn, tn = int(np.sum(~p & a)), int(np.sum(~p & ~a))
    prec = tp / (tp + fp) if tp + fp else 1.0
    rec = tp / (tp + fn) if tp + fn else 1.0
    return {"tp": tp, "fp": fp, "fn": fn, "tn": tn, "precision": prec, "recall": rec}


def boundary_confusion(recon: ReconstructedManifold, truth: Truth) -> dict:
    actual = truth.kinds == "boundary"
    ok = recon.status != "masked"
    strict = _strict(truth) & ok
    return {"strict": _confusion(recon.boundary, actual, strict),
            "all": _confusion(recon.boundary, actual, ok)}


def _local_distance_errors(recon, truth, spec, domain, n_pairs, seed, opts):
    rng = np.random.default_rng(seed)
    ok = np.flatnonzero(recon.status == "ok")
    if ok.size == 0:
        return np.array([])
    E = recon.embedding
    out = []
    for i in rng.choice(ok, size=min(n_pairs, ok.size), replace=False):
        Ei = E[i].copy()
        Ei[i] = np.inf
        q = int(np.argmin(Ei))
        j0 = recon.chart_j[i]
        ctx_alpha = _alpha_in(recon, q, j0)
        if ctx_alpha is None:
            continue
        da = ctx_alpha - recon.alpha[i]
        g = recon.g_fit[i]
        est = float(np.sqrt(da @ g @ da))
        P = truth.positions
        d = _closed_form_distance(spec, P[[i, q]])
        true = float(d[0, 1]) if d is not None else distance_shooting(spec, domain, P[i], P[q], opts)[0]
        if true > 0:
            out.append(abs(est - true) / true)
    return np.array(out)


def _alpha_in(recon, q, j0):
    ctx = recon.diagnostics.get("_ctx")
    if ctx is None or not ctx.F[q, j0]:
        return None
    return np.array([-ctx.G[q, j0], ctx.T[q, j0]])


def isometry_compare(recon: ReconstructedManifold, truth: Truth, spec: MetricSpec | None = None,
                     domain: DomainSpec | None = None, other: tuple | None = None,
                     ds: TravelTimeDataset | None = None, n_pairs: int = 100, seed: int = 0,
                     opts: ShootingOptions = DEFAULT_SHOOTING) -> IsometryReport:
    """Compare a reconstruction with ground truth.

    Without ``other`` the correspondence is the identity (self comparison).
    With ``other = (ds2, recon2, truth2)`` the discrete ``Psi`` between the
    datasets is built and boundary flags and metrics are compared through it.
    """
    if spec is None or domain is None:
        spec, domain = truth_setup(truth)
    N = recon.N
    me = metric_errors(recon, truth, spec, domain)
    if ds is not None:
        recon.diagnostics["_ctx"] = context(ds, None, _opts_from(recon))
    de = _local_distance_errors(recon, truth, spec, domain, n_pairs, seed, opts)
    recon.diagnostics.pop("_ctx", None)
    strict = _strict(truth)
    interior = (truth.kinds != "boundary") & (recon.status != "masked")
    if other is None:
        corr = Correspondence(np.arange(N), np.zeros(N), [], [])
        bnd = boundary_confusion(recon, truth)
        return IsometryReport(corr, me, de, bnd, strict, interior=interior)
    ds2, recon2, truth2 = other
    if ds is None:
        raise DataError("comparing two datasets needs the first dataset as well")
    corr = correspondence(ds, ds2)
    m = corr.psi >= 0
    a = recon.boundary[m]
    b = recon2.boundary[corr.psi[m]]
    sel = strict[m]
    agree = {"strict_agree": int(np.sum(a[sel] == b[sel])), "strict_total": int(sel.sum()),
             "all_agree": int(np.sum(a == b)), "all_total": int(m.sum())}
    # metrics: same sensor index, same chart coordinates
    rel = np.full(N, np.inf)
    for i in np.flatnonzero(m):
        k = corr.psi[i]
        if recon.status[i] == "ok" and recon2.status[k] == "ok" and recon.chart_j[i] == recon2.chart_j[k]:
            rel[i] = np.linalg.norm(recon.g_fit[i] - recon2.g_fit[k]) / np.linalg.norm(recon2.g_fit[k])
    g1 = recon.gamma.gamma_rows
    g2 = recon2.gamma.gamma_rows
    gam = bool(np.all((g1 < 0) | (corr.psi[np.maximum(g1, 0)] == g2)))
    st = sigma_transport(ds, ds2, corr, _opts_from(recon))
    return IsometryReport(corr, me, de, agree, strict, gam, st, rel, interior)


def _opts_from(recon: ReconstructedManifold) -> ReconOptions:
    t = recon.tolerances
    return ReconOptions(h_src=t.get("h_src"), n_dirs=t.get("n_dirs", 33), v_max=t.get("v_max", 0.97),
                        kappa_spike=t.get("kappa_spike", 8.0), kappa_cont=t.get("kappa_cont", 8.0),
                        k_cont=t.get("k_cont", 4), k_fit=t.get("k_fit", 24))


def sigma_transport(ds1, ds2, corr: Correspondence, opts: ReconOptions = DEFAULT_RECON,
                    n_sensors: int = 16, slack: float = 1e-6) -> dict:
    """Members of ``sigma_1(z_j, v)`` must map into ``sigma_2(z_j, v)``; images
    missing from the target set are excused only within ``slack`` of the tube edge."""
    c1 = context(ds1, None, opts)
    c2 = context(ds2, None, opts)
    js = np.unique(np.linspace(1, ds1.m - 2, n_sensors).round().astype(int))
    tested = violations = excused = 0
    for j in js:
        for v in c1.vgrid:
            s1 = _sigma(c1, j, v)
            s2 = set(_sigma(c2, j, v).members.tolist())
            for i in s1.members:
                k = corr.psi[i]
                if k < 0:
                    continue
                tested += 1
                if k in s2:
                    continue
                tol = c2.tol_theta * np.sqrt(1 - v * v)
                edge = abs(abs(c2.G[k, j] + v) - tol) <= slack
                if edge:
                    excused += 1
                else:
                    violations += 1
    return {"tested": tested, "violations": violations, "edge_cases": excused,
            "sensors": js.tolist(), "directions": int(c1.vgrid.size)}


def sigma_cut_consistency(ds: TravelTimeDataset, truth: Truth, spec: MetricSpec, domain: DomainSpec,
                          sensors=None, n_sensors: int = 16, opts: ReconOptions = DEFAULT_RECON,
                          shoot: ShootingOptions = DEFAULT_SHOOTING) -> dict:
    """``|T_value - cut_time(z_j, w(v))|`` over a sensor x direction grid."""
    ctx = context(ds, None, opts)
    S = np.asarray(truth.meta["sensor_s"], dtype=np.float64)
    js = (np.unique(np.linspace(1, ds.m - 2, n_sensors).round().astype(int))
          if sensors is None else np.asarray(sensors))
    rows = []
    for j in js:
        fr = boundary_frame(domain, spec, float(S[j]))
        for v in ctx.vgrid:
            sg = _sigma(ctx, j, v)
            init = UnitVectorAt(fr.point, unproject_scalar(fr, float(v)))
            rec = cut_time(spec, domain, init, opts=shoot)
            rows.append((int(j), float(v), sg.T_value, rec.cut_time, rec.kind, sg.thin))
    err = np.array([abs(r[2] - r[3]) for r in rows])
    return {"rows": rows, "max_error": float(err.max()), "tol_T": ctx.tol_T,
            "passed": bool(np.all(err <= ctx.tol_T)), "thin": int(sum(r[5] for r in rows))}


# ---------------------------------------------------------- counterexample

@dataclass(frozen=True, eq=False)
class CollapseReport:
    involute: np.ndarray
    data_diameter: float
    geodesic_diameter: float
    full_boundary_diameter: float
    convex_min_gap: float
    funnel_deviation: float
    convexity_max_pi: float
    eps_collapse: float
    d_sep: float
    h: float
    sensors: int

    @property
    def collapsed(self) -> bool:
        return self.data_diameter <= self.eps_collapse and self.geodesic_diameter >= self.d_sep

    @property
    def full_boundary_separates(self) -> bool:
        return self.full_boundary_diameter >= 0.5 * self.geodesic_diameter

    @property
    def convex_separates(self) -> bool:
        return self.convex_min_gap > self.eps_collapse

    def lines(self):
        return [
            f"convexity max Pi = {self.convexity_max_pi:.6g} (fails: concave arc present)",
            f"involute points = {self.involute.shape[0]}, sensors on Gamma = {self.sensors}, h = {self.h:.6g}",
            f"data diameter (Gamma) = {self.data_diameter:.6g} (target <= {self.eps_collapse:g})",
            f"geodesic diameter = {self.geodesic_diameter:.6g} (target >= {self.d_sep:g})",
            f"data diameter (full boundary) = {self.full_boundary_diameter:.6g}",
            f"convex disk, same points: min pairwise gap = {self.convex_min_gap:.6g}",
            f"funnel deviation |d(z,p) - d(z,x0) - l0| max = {self.funnel_deviation:.6g}",
            f"collapse reproduced: {self.collapsed}",
        ]


def _sup_diameter(rows):
    R = np.asarray(rows)
    return float(np.max(np.abs(R[:, None, :] - R[None, :, :]))) if R.shape[0] > 1 else 0.0


def counterexample_horseshoe(geom: HorseshoeGeometry | None = None, h: float = 1.0 / 512,
                             m: int = 32, m_full: int = 64, n_inv: int = 16, ell0: float = 0.8,
                             theta_max: float = 1.35, eps_collapse: float = 1e-2,
                             d_sep: float = 0.5, gamma_angles=(95.0, 130.0)) -> CollapseReport:
    """Travel times from the involute set to Gamma collapse; geodesic distances do not."""
    geom = geom or HorseshoeGeometry()
    spec = metric_euclidean()
    dom = horseshoe_domain(geom, gamma_angles)
    conv = check_strict_convexity(dom, spec)
    P = geom.involute(ell0, theta_max, n_inv)
    if np.any(dom.depth(P) <= 0):
        raise DomainError("involute points leave the horseshoe; shorten ell0 or theta_max")
    grid = eikonal_grid(dom, h)
    sa, sb = dom.gamma_arc
    Z = dom.point(np.linspace(sa, sb, m))
    rows = np.empty((n_inv, m))
    dev = 0.0
    x0 = geom.x0
    for j, z in enumerate(Z):
        f = distance_eikonal(spec, dom, z, h, grid=grid)
        rows[:, j] = f.at(P)
        dev = max(dev, float(np.max(np.abs(rows[:, j] - f.at(x0[None])[0] - ell0))))
    if dev > 5 * eps_collapse:
        raise DomainError(f"minimizers do not funnel through x0 (deviation {dev:.3g}); "
                          "the horseshoe geometry is inconsistent with the involute")
    data_diam = _sup_diameter(rows)
    geo = 0.0
    for p in P:
        f = distance_eikonal(spec, dom, p, h, grid=grid)
        geo = max(geo, float(np.max(f.at(P))))
    L = dom.length
    Zf = dom.point(L * np.arange(m_full) / m_full)
    full = np.empty((n_inv, m_full))
    for j, z in enumerate(Zf):
        full[:, j] = distance_eikonal(spec, dom, z, h, grid=grid).at(P)
    full_diam = _sup_diameter(full)
    # same points and sensor arc on the convex unit disk
    ang = np.deg2rad(np.linspace(gamma_angles[0], gamma_angles[1], m))
    Zd = geom.outer * np.stack([np.cos(ang), np.sin(ang)], -1)
    Rd = np.hypot(*(P[:, None, :] - Zd[None]).transpose(2, 0, 1))
    G = np.max(np.abs(Rd[:, None, :] - Rd[None]), axis=2)
    np.fill_diagonal(G, np.inf)
    return CollapseReport(P, data_diam, geo, full_diam, float(G.min()), dev, conv.max_pi,
                          eps_collapse, d_sep, h, m)


# -------------------------------------------------------------- cut locus

@dataclass(frozen=True, eq=False)
class CutLocusReport:
    p: np.ndarray
    n_directions: int
    counts: dict
    typical_points: np.ndarray
    conjugate_points: np.ndarray
    conjugate_clusters: np.ndarray
    conjugate_min_separation: float
    separation_threshold: float
    polyline: np.ndarray
    polyline_max_gap: float
    transversality_deg: float
    boundary_nonsmooth: np.ndarray
    area_h: float
    area_h2: float
    h: float

    @property
    def area_ratio(self) -> float:
        return self.area_h2 / self.area_h if self.area_h > 0 else 0.0

    @property
    def empty(self) -> bool:
        return sum(self.counts.values()) == 0

    def lines(self):
        c = self.counts
        out = [f"source = ({self.p[0]:.6g}, {self.p[1]:.6g}), directions = {self.n_directions}",
               f"typical = {c['typical']}, conjugate = {c['conjugate']}, atypical = {c['atypical']}"]
        if self.empty:
            out.append("cut locus empty: every geodesic minimizes up to the boundary")
            return out
        out += [f"conjugate clusters = {len(self.conjugate_clusters)}, min separation = "
                f"{self.conjugate_min_separation:.6g} (threshold {self.separation_threshold:.6g})",
                f"polyline points = {len(self.polyline)}, max gap = {self.polyline_max_gap:.6g}",
                f"transversality at boundary = {self.transversality_deg:.6g} deg",
                f"boundary non-smooth parameters = {len(self.boundary_nonsmooth)}",
                f"ridge area h={self.h:.6g}: {self.area_h:.6g}; h/2: {self.area_h2:.6g}; "
                f"ratio {self.area_ratio:.4g}"]
        return out


def _cluster_points(pts, radius):
    labels = -np.ones(len(pts), dtype=int)
    c = 0
    for i in range(len(pts)):
        if labels[i] >= 0:
            continue
        stack = [i]
        labels[i] = c
        while stack:
            a = stack.pop()
            near = np.flatnonzero((np.hypot(*(pts - pts[a]).T) <= radius) & (labels < 0))
            labels[near] = c
            stack.extend(near.tolist())
        c += 1
    return labels


def _order_polyline(pts):
    """Order points along a curve: start at an extreme of the principal axis."""
    if len(pts) < 2:
        return pts
    c = pts - pts.mean(0)
    _, _, Vt = np.linalg.svd(c, full_matrices=False)
    o = np.argsort(c @ Vt[0], kind="stable")
    return pts[o]


def _refine_cut_samples(spec, domain, p, every, gap_target, max_rounds, opts):
    g = metric_at(spec, p)
    n = len(every)
    items = sorted(((2 * np.pi * k / n, r) for k, r in enumerate(every)), key=lambda x: x[0])
    for _ in range(max_rounds):
        new = []
        for k in range(len(items)):
            (a, ra), (b, rb) = items[k], items[(k + 1) % len(items)]
            if k + 1 == len(items):
                b += 2 * np.pi
            if ra.kind == "boundary_hit" or rb.kind == "boundary_hit":
                continue
            if np.hypot(*(ra.point - rb.point)) > gap_target:
                th = 0.5 * (a + b)
                v = np.array([np.cos(th), np.sin(th)])
                init = UnitVectorAt(p, v / np.sqrt(v @ g @ v))
                new.append((th % (2 * np.pi), cut_time(spec, domain, init, opts=opts)))
        if not new:
            break
        items = sorted(items + new, key=lambda x: x[0])
    return [r for _, r in items]


def _ridge_area(spec, domain, p, h, tau=0.25, exclude=10.0):
    """Area of grid cells where the distance field has a concave kink."""
    f = distance_eikonal(spec, domain, p, h)
    V = f.values
    inside = f.mask.copy()
    X, Y = np.meshgrid(f.xs, f.ys, indexing="ij")
    far = np.hypot(X - p[0], Y - p[1]) > exclude * h
    flag = np.zeros_like(inside)
    for di, dj in ((1, 0), (0, 1), (1, 1), (1, -1)):
        step = h * np.hypot(di, dj)
        a = np.roll(V, (di, dj), (0, 1))
        b = np.roll(V, (-di, -dj), (0, 1))
        ok = inside & np.roll(inside, (di, dj), (0, 1)) & np.roll(inside, (-di, -dj), (0, 1))
        with np.errstate(invalid="ignore"):
            d2 = a + b - 2 * V
        flag |= ok & (d2 < -tau * step)
    flag &= far & (domain.depth(np.stack([X, Y], -1).reshape(-1, 2)).reshape(X.shape) > 2 * h)
    return float(flag.sum() * h * h)


def cutlocus_report(spec: MetricSpec, domain: DomainSpec, p, n_directions: int = 256,
                    h: float = 1.0 / 64, boundary_samples: int = 256, spike_kappa: float = 8.0,
                    gap_target: float = 0.05, max_rounds: int = 8,
                    opts: ShootingOptions = DEFAULT_SHOOTING) -> CutLocusReport:
    """Counts, conjugate isolation, polyline continuity, transversality, boundary
    non-smooth set and a two-resolution ridge-area trend.

    Counts refer to the uniform fan.  The polyline adds directions bisected
    between neighbouring cut samples farther apart than ``gap_target``; a
    continuous locus closes every such gap, a jump does not.
    """
    p = np.asarray(p, dtype=np.float64)
    every = cut_locus_sample(spec, domain, p, n_directions, opts, include_all=True)
    recs = [r for r in every if r.kind != "boundary_hit"]
    counts = {"typical": 0, "conjugate": 0, "atypical": 0}
    for r in recs:
        counts[r.kind] += 1
    typ = np.array([r.point for r in recs if r.kind in ("typical", "atypical")]).reshape(-1, 2)
    conj = np.array([r.point for r in recs if r.kind == "conjugate"]).reshape(-1, 2)
    dtheta = 2 * np.pi / n_directions
    speed = float(np.sqrt(np.max(np.linalg.eigvalsh(np.linalg.inv(metric_at(spec, p))))))
    t_ref = max([r.cut_time for r in recs], default=0.0)
    thr = 10 * dtheta * speed
    if len(conj):
        lab = _cluster_points(conj, 4 * dtheta * max(t_ref, 1.0))
        cl = np.array([conj[lab == k].mean(0) for k in range(lab.max() + 1)])
        if len(cl) > 1:
            D = np.hypot(*(cl[:, None] - cl[None]).transpose(2, 0, 1))
            np.fill_diagonal(D, np.inf)
            sep = float(D.min())
        else:
            sep = np.inf
    else:
        cl, sep = np.zeros((0, 2)), np.inf
    refined = _refine_cut_samples(spec, domain, p, every, gap_target, max_rounds, opts)
    pts = np.array([r.point for r in refined if r.kind != "boundary_hit"]).reshape(-1, 2)
    poly = _order_polyline(pts) if len(typ) else typ
    pgap = float(np.max(np.hypot(*np.diff(poly, axis=0).T))) if len(poly) > 1 else 0.0
    trans = np.nan
    if len(poly) >= 3:
        dep = domain.depth(poly)
        end = int(np.argmin(dep))
        nb = poly[max(end - 4, 0): end + 5]
        c = nb - nb.mean(0)
        _, _, Vt = np.linalg.svd(c, full_matrices=False)
        tdir = Vt[0]
        _, t = domain.closest_boundary(poly[end][None])
        s = float(domain.s_of_t(t)[0])
        fr = boundary_frame(domain, spec, s)
        ct = abs(float(tdir @ fr.tangent)) / (np.linalg.norm(tdir) * np.linalg.norm(fr.tangent))
        trans = float(np.degrees(np.arccos(min(ct, 1.0))))
    # non-smooth boundary parameters of z -> d(p, z)
    from .traveltime import OracleOptions, _RowSolver
    L = domain.length
    sz = L * np.arange(boundary_samples) / boundary_samples
    rs = _RowSolver(spec, domain, domain.t_of_s(sz), domain.point(sz), OracleOptions())
    row = rs.row(p, False)
    ext = np.concatenate([row[-1:], row, row[:1]])
    d2 = ext[2:] + ext[:-2] - 2 * ext[1:-1]
    thr2 = max(spike_kappa * np.median(np.abs(d2)), 1e-8)
    spikes = np.flatnonzero(-d2 > thr2)
    groups = []
    for k in spikes:
        if groups and (k - groups[-1][-1]) <= 2:
            groups[-1].append(k)
        else:
            groups.append([k])
    if len(groups) > 1 and groups[0][0] == 0 and groups[-1][-1] >= boundary_samples - 2:
        groups[0] = groups.pop() + groups[0]
    nons = np.array([sz[g[int(np.argmax(-d2[g]))]] for g in groups])
    if counts["typical"] + counts["conjugate"] + counts["atypical"] == 0:
        a1 = a2 = 0.0
    else:
        a1 = _ridge_area(spec, domain, p, h)
        a2 = _ridge_area(spec, domain, p, h / 2)
    return CutLocusReport(p, n_directions, counts, typ, conj, cl, sep, thr, poly, pgap, trans,
                          nons, a1, a2, h)
