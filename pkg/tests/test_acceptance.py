"""Acceptance criteria 1-10.  Each test records one PASS/FAIL line (shown in
the terminal summary) and then asserts the same condition."""

import numpy as np
import pytest

from geotime.config import load_config
from geotime.distance import distance_eikonal, distance_shooting, eikonal_grid
from geotime.geodesic import UnitVectorAt, conjugate_time
from geotime.manifold import circle_domain, metric_constant_curvature, metric_euclidean
from geotime.reconstruct import recover_gamma_metric
from geotime.traveltime import boundary_arc_bound
from geotime.verify import (boundary_confusion, counterexample_horseshoe, cutlocus_report,
                            embedding_check, isometry_compare, sigma_cut_consistency)

from conftest import CONFIGS

CONVEX = ["disk", "disk_rotated", "bump_mild", "bump_far", "cap", "lens"]


def _interior_points(rng, n, radius):
    r = radius * np.sqrt(rng.uniform(0, 1, n))
    a = rng.uniform(0, 2 * np.pi, n)
    return np.stack([r * np.cos(a), r * np.sin(a)], -1)


def test_c01_oracle_agreement(criterion):
    h = 1 / 128
    tol = max(5e-3, 3 * h)
    worst = {}
    for name, spec, dom in [("euclidean", metric_euclidean(), circle_domain(1.0)),
                            ("constant_curvature", metric_constant_curvature(1.0), circle_domain(0.6))]:
        rng = np.random.default_rng(2024)
        R = float(np.max(np.hypot(*dom.polygon.T)))
        P, Q = _interior_points(rng, 200, 0.9 * R), _interior_points(rng, 200, 0.9 * R)
        grid = eikonal_grid(dom, h)
        err = [abs(distance_eikonal(spec, dom, p, h, grid=grid).at(q)[0] - distance_shooting(spec, dom, p, q)[0])
               for p, q in zip(P, Q)]
        worst[name] = max(err)
    ok = all(w <= tol for w in worst.values())
    criterion(1, ok, "max |eikonal - shooting| over 200 pairs: " +
              ", ".join(f"{k} {v:.3g}" for k, v in worst.items()) + f" (tol {tol:.3g})")
    assert ok


def test_c02_conjugate_time_sphere(criterion):
    spec = metric_constant_curvature(1.0, chart=(-100, 100, -100, 100))
    th = (np.arange(32) + 0.5) * 2 * np.pi / 32
    err = max(abs(conjugate_time(spec, None, UnitVectorAt.from_angle(spec, (0.5, 0.0), t), t_max=4.0) - np.pi)
              for t in th)
    ok = err <= 1e-6
    criterion(2, ok, f"K=1, 32 directions: max |t_conj - pi| = {err:.3g} (tol 1e-6)")
    assert ok


@pytest.mark.slow
def test_c03_sigma_equals_cut_time(runs, criterion):
    parts, ok = [], True
    for name in ("disk", "bump_mild"):
        run = runs.get(name)
        out = sigma_cut_consistency(run.ds, run.truth, run.spec, run.domain, n_sensors=16, opts=run.opts)
        ok &= out["passed"]
        parts.append(f"{name} {len(out['rows'])} (j, v): max |T - cut| = {out['max_error']:.3g} "
                     f"(tol_T {out['tol_T']:.3g})")
    criterion(3, ok, "; ".join(parts))
    assert ok


@pytest.mark.slow
def test_c04_boundary_determination(runs, criterion):
    parts, ok = [], True
    for name in CONVEX:
        c = boundary_confusion(runs.get(name).recon, runs.get(name).truth)
        s, a = c["strict"], c["all"]
        good = (s["precision"] == 1.0 and s["recall"] == 1.0 and a["precision"] >= 0.95
                and a["recall"] >= 0.95)
        ok &= good
        parts.append(f"{name} strict {s['precision']:.3f}/{s['recall']:.3f} all {a['precision']:.3f}/"
                     f"{a['recall']:.3f}")
    criterion(4, ok, "precision/recall: " + "; ".join(parts))
    assert ok


@pytest.mark.slow
def test_c05_gamma_arc_length(runs, criterion):
    parts, ok = [], True
    for name in ("disk", "bump_far"):
        run = runs.get(name)
        gg = recover_gamma_metric(run.ds, run.opts)
        S = np.asarray(run.truth.meta["sensor_s"])
        true = np.array([0.0] + [boundary_arc_bound(run.domain, run.spec, S[0], s) for s in S[1:]])
        j, k = np.triu_indices(S.size, 1)
        rel = np.abs((gg.arclength[k] - gg.arclength[j]) - (true[k] - true[j])) / (true[k] - true[j])
        ok &= bool(rel.max() <= 0.01)
        parts.append(f"{name} max rel error {rel.max():.3g} over {rel.size} pairs")
    criterion(5, ok, "; ".join(parts) + " (tol 1%)")
    assert ok


@pytest.mark.slow
def test_c06_metric_recovery(runs, criterion):
    parts, ok = [], True
    for name, key, need in (("disk", "frac_metric_le_2pct", 0.9), ("bump_mild", "frac_metric_le_5pct", 0.9)):
        run = runs.get(name)
        s = isometry_compare(run.recon, run.truth, run.spec, run.domain, ds=run.ds).summary()
        ok &= s[key] >= need
        parts.append(f"{name} {key} = {s[key]:.3f} of {s['interior_sources']} interior "
                     f"(median error {s['metric_error_median']:.3g})")
    criterion(6, ok, "; ".join(parts) + " (need >= 0.90)")
    assert ok


@pytest.mark.slow
def test_c07_data_level_uniqueness(runs, criterion):
    parts, ok = [], True
    for name in CONVEX:
        run = runs.get(name)
        st = embedding_check(run.ds, run.truth, run.spec, run.domain)
        ok &= st.min_gap > 0 and st.violations == 0
        parts.append(f"{name} min gap {st.min_gap:.3g}, violations {st.violations}/{st.pairs_checked}")
    criterion(7, ok, "; ".join(parts))
    assert ok


@pytest.mark.slow
def test_c08_isometry_transport(runs, criterion):
    a, b = runs.get("disk"), runs.get("disk_rotated")
    rep = isometry_compare(a.recon, a.truth, a.spec, a.domain, other=(b.ds, b.recon, b.truth), ds=a.ds)
    s = rep.summary()
    bd, st = s["boundary"], s["sigma_transport"]
    ok = (s["matched"] > 0 and bd["strict_agree"] == bd["strict_total"] and st["tested"] > 0
          and st["violations"] == 0 and bool(s["gamma_consistent"]))
    criterion(8, ok, f"matched {s['matched']}/{a.ds.N}, strict flags {bd['strict_agree']}/{bd['strict_total']}, "
                     f"sigma transport {st['tested']} tested / {st['violations']} violations "
                     f"({st['edge_cases']} at the tube edge)")
    assert ok


@pytest.mark.slow
def test_c09_nonconvex_collapse(criterion):
    rep = counterexample_horseshoe()
    ok = rep.collapsed and rep.full_boundary_separates and rep.convex_separates
    criterion(9, ok, f"data diameter {rep.data_diameter:.3g} (<= {rep.eps_collapse:g}), geodesic diameter "
                     f"{rep.geodesic_diameter:.3g} (>= {rep.d_sep:g}), full-boundary diameter "
                     f"{rep.full_boundary_diameter:.3g}, convex disk min gap {rep.convex_min_gap:.3g}")
    assert ok


@pytest.mark.slow
def test_c10_cut_locus_structure(criterion):
    cfg = load_config(CONFIGS / "lens.cfg")
    rep = cutlocus_report(cfg.metric_spec(), cfg.domain(), cfg.cutlocus_point, cfg.cutlocus_directions)
    c = rep.counts
    checks = {
        "typical >> conjugate": c["typical"] >= 4 * max(c["conjugate"], 1),
        "conjugate isolated": rep.conjugate_min_separation > rep.separation_threshold,
        "continuous polyline": len(rep.polyline) >= 3 and rep.polyline_max_gap <= 0.05,
        "transversal": rep.transversality_deg >= 5.0,
        "finite non-smooth set": len(rep.boundary_nonsmooth) <= 16,
        "area ratio": rep.area_ratio <= 0.6,
    }
    ok = all(checks.values())
    criterion(10, ok, f"typical {c['typical']}, conjugate {c['conjugate']}, clusters "
                      f"{len(rep.conjugate_clusters)}, polyline gap {rep.polyline_max_gap:.3g}, "
                      f"transversality {rep.transversality_deg:.3g} deg, non-smooth {len(rep.boundary_nonsmooth)}, "
                      f"area ratio {rep.area_ratio:.3g}"
                      + ("" if ok else " failed: " + ", ".join(k for k, v in checks.items() if not v)))
    assert ok
