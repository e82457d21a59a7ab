import numpy as np
import pytest

from geotime.errors import DataError
from geotime.manifold import circle_domain, metric_euclidean, metric_mild_bump
from geotime.reconstruct import reconstruct_all
from geotime.traveltime import SensorPlan, SourcePlan, TravelTimeDataset, generate_dataset
from geotime.verify import (CollapseReport, boundary_confusion, correspondence, cutlocus_report,
                            embedding_check, isometry_compare, metric_errors, sigma_cut_consistency,
                            sigma_transport, truth_setup)


def _permuted(ds, seed=1):
    perm = np.random.default_rng(seed).permutation(ds.N)
    return TravelTimeDataset(ds.u, ds.times[perm], ds.ids[perm], ds.mask[perm]), perm


# --------------------------------------------------------------- embedding

def test_embedding_disk_closed_form(runs):
    run = runs.get("disk")
    st = embedding_check(run.ds, run.truth)
    assert st.min_gap > 0 and not st.duplicate_pairs
    assert st.violations == 0 and st.max_excess <= 1e-6
    assert st.pairs_checked == run.ds.N * (run.ds.N - 1) // 2


def test_embedding_screened_by_fast_marching():
    spec, dom = metric_mild_bump(), circle_domain(1.0)
    ds, truth = generate_dataset(spec, dom, SourcePlan(h_src=0.3), SensorPlan(m=16), seed=2)
    st = embedding_check(ds, truth, spec, dom)
    assert st.violations == 0 and st.min_gap > 0


def test_embedding_reports_duplicate_rows():
    rng = np.random.default_rng(0)
    T = rng.random((6, 5))
    T[4] = T[1]
    ds = TravelTimeDataset(np.linspace(0, 1, 5), T, np.arange(6, dtype=np.int64), np.ones(6, np.uint8))
    st = embedding_check(ds)
    assert st.min_gap == 0.0 and st.duplicate_pairs == [(1, 4)]


def test_truth_setup_roundtrip(runs):
    spec, dom = truth_setup(runs.get("disk").truth)
    assert spec.catalog_id == "euclidean" and dom.length == pytest.approx(2 * np.pi)


# ---------------------------------------------------------- correspondence

def test_correspondence_recovers_permutation(runs):
    ds = runs.get("disk").ds
    shuf, perm = _permuted(ds)
    c = correspondence(shuf, ds)
    assert np.array_equal(c.psi, perm) and not c.ambiguous and not c.unmatched


def test_correspondence_ambiguous_and_unmatched():
    T = np.array([[0.0, 1.0, 2.0], [1.0, 0.0, 1.0], [2.0, 1.0, 0.0]])
    ds1 = TravelTimeDataset(np.linspace(0, 1, 3), T, np.arange(3, dtype=np.int64), np.ones(3, np.uint8))
    T2 = np.concatenate([T, T[1:2] + 5e-7])  # runner-up inside the tie tolerance
    T2[2] += 1e-3                            # beyond the match tolerance
    ds2 = TravelTimeDataset(ds1.u, T2, np.arange(4, dtype=np.int64), np.ones(4, np.uint8))
    c = correspondence(ds1, ds2)
    assert c.psi[0] == 0 and c.ambiguous == [1] and [r for r, _ in c.unmatched] == [2]
    with pytest.raises(DataError):
        correspondence(ds1, TravelTimeDataset(np.array([0, 0.3, 1.0]), T, ds1.ids, ds1.mask))


def test_sigma_transport_under_permutation(runs):
    run = runs.get("disk")
    shuf, _ = _permuted(run.ds)
    c = correspondence(run.ds, shuf)
    st = sigma_transport(run.ds, shuf, c, run.opts, n_sensors=6)
    assert st["tested"] > 0 and st["violations"] == 0


# --------------------------------------------------------------- isometry

def test_self_comparison_is_identity(runs):
    run = runs.get("disk")
    rep = isometry_compare(run.recon, run.truth, run.spec, run.domain, ds=run.ds)
    assert np.array_equal(rep.correspondence.psi, np.arange(run.ds.N))
    assert rep.boundary_agreement == boundary_confusion(run.recon, run.truth)
    s = rep.summary()
    assert s["matched"] == run.ds.N and s["ambiguous"] == 0
    assert np.median(rep.distance_errors) <= 0.05


def test_comparison_with_permuted_copy(runs):
    run = runs.get("disk")
    shuf, perm = _permuted(run.ds)
    recon2 = reconstruct_all(shuf, run.opts)
    from geotime.traveltime import Truth
    meta = dict(run.truth.meta)
    for k in ("kinds", "depth"):
        meta[k] = list(np.asarray(meta[k])[perm])
    truth2 = Truth(run.truth.positions[perm], meta)
    rep = isometry_compare(run.recon, run.truth, run.spec, run.domain, other=(shuf, recon2, truth2),
                           ds=run.ds)
    s = rep.summary()
    assert s["boundary"]["all_agree"] == s["boundary"]["all_total"] == run.ds.N
    assert s["gamma_consistent"] and s["sigma_transport"]["violations"] == 0
    assert s["frac_cross_le_5pct"] == pytest.approx(np.mean(rep.cross_metric_errors <= 0.05))
    assert np.mean(rep.cross_metric_errors <= 1e-9) >= 0.95


def test_comparison_needs_first_dataset(runs):
    run = runs.get("disk")
    with pytest.raises(DataError):
        isometry_compare(run.recon, run.truth, run.spec, run.domain,
                         other=(run.ds, run.recon, run.truth))


def test_boundary_confusion_counts(runs):
    run = runs.get("disk")
    c = boundary_confusion(run.recon, run.truth)["all"]
    ok = run.recon.status != "masked"
    assert c["tp"] + c["fn"] == int(np.sum(run.truth.kinds[ok] == "boundary"))
    assert c["tp"] + c["fp"] + c["fn"] + c["tn"] == int(ok.sum())


@pytest.mark.slow
@pytest.mark.parametrize("name", ["disk", "bump_mild"])
def test_fidelity_improves_with_density(runs, name):
    med = []
    for h in (0.1, 0.05):
        run = runs.get(name, h_src=h)
        err = metric_errors(run.recon, run.truth, run.spec, run.domain)
        interior = run.truth.kinds != "boundary"
        e = err[interior & np.isfinite(err)]
        med.append(np.median(e))
    assert med[1] < med[0]


# ------------------------------------------------------ sigma and cut time

def test_sigma_cut_consistency_one_sensor(runs):
    run = runs.get("disk")
    out = sigma_cut_consistency(run.ds, run.truth, run.spec, run.domain, sensors=[32], opts=run.opts)
    assert len(out["rows"]) == run.opts.n_dirs
    assert out["passed"] and out["max_error"] <= out["tol_T"]
    assert all(r[4] == "boundary_hit" for r in out["rows"])


# ---------------------------------------------------------- reports

def test_collapse_report_flags():
    rep = CollapseReport(np.zeros((16, 2)), 0.005, 0.75, 0.6, 0.2, 1e-3, 2.0, 1e-2, 0.5, 1 / 512, 32)
    assert rep.collapsed and rep.full_boundary_separates and rep.convex_separates
    bad = CollapseReport(np.zeros((16, 2)), 0.05, 0.75, 0.1, 0.001, 1e-3, 2.0, 1e-2, 0.5, 1 / 512, 32)
    assert not (bad.collapsed or bad.full_boundary_separates or bad.convex_separates)
    assert any("collapse reproduced: True" in ln for ln in rep.lines())


def test_cutlocus_report_euclidean_empty():
    rep = cutlocus_report(metric_euclidean(), circle_domain(1.0), (0.2, -0.3), n_directions=64)
    assert rep.empty and rep.area_ratio == 0.0
    assert rep.boundary_nonsmooth.size == 0
    assert "cut locus empty" in rep.lines()[-1]
