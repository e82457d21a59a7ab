import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geotime.errors import DataError, DomainError
from geotime.reconstruct import (GammaGeometry, ReconOptions, alpha_coords, beta_coords,
                                 boundary_gradient, build_sigma, classify_boundary, estimate_H,
                                 fit_cosphere, reconstruct_all, recover_gamma_metric, write_report)
from geotime.traveltime import TravelTimeDataset, read_dataset
from geotime.verify import _truth_alpha_metric
from geotime.manifold import boundary_frames


def euclid_dataset(extra, m=65, s_of_u=lambda u: np.pi * u):
    """Exact Euclidean travel times on the unit disk; Gamma is ``s_of_u([0, 1])``.

    Rows ``0..m-1`` are the sources on the sensors, the rest are ``extra``."""
    u = np.linspace(0.0, 1.0, m)
    s = s_of_u(u)
    Z = np.stack([np.cos(s), np.sin(s)], -1)
    P = np.concatenate([Z, np.asarray(extra, dtype=np.float64).reshape(-1, 2)])
    T = np.hypot(*(P[:, None, :] - Z[None]).transpose(2, 0, 1))
    T[np.arange(m), np.arange(m)] = 0.0
    N = P.shape[0]
    return TravelTimeDataset(u, T, np.arange(N, dtype=np.int64), np.ones(N, dtype=np.uint8)), P, Z, s


def disk_lattice(h, r_max):
    g = np.arange(-1.0, 1.0 + h / 2, h)
    X, Y = np.meshgrid(g, g, indexing="ij")
    P = np.stack([X.ravel(), Y.ravel()], -1)
    return P[np.hypot(*P.T) <= r_max]


# ------------------------------------------------------------ Gamma metric

def test_gamma_speed_euclidean_half_circle():
    ds, *_ = euclid_dataset(np.zeros((0, 2)))
    gg = recover_gamma_metric(ds)
    assert np.allclose(gg.lam, np.pi, rtol=1e-3)
    assert gg.arclength[-1] == pytest.approx(np.pi, rel=1e-3)
    assert np.array_equal(gg.gamma_rows, np.arange(65))


def test_gamma_arc_invariant_under_sensor_warp():
    warp = lambda u: np.pi * (u + 0.4 * np.sin(2 * np.pi * u) / (2 * np.pi))
    ds, _, _, s = euclid_dataset(np.zeros((0, 2)), m=48, s_of_u=warp)
    gg = recover_gamma_metric(ds)
    for j, k in [(0, 47), (3, 20), (10, 11), (25, 40)]:
        assert gg.arc_between(j, k) == pytest.approx(abs(s[k] - s[j]), rel=1e-2)


def test_gamma_deficit_reported():
    ds, *_ = euclid_dataset(np.zeros((0, 2)), m=20)
    keep = np.arange(20) >= 12  # only 8 sensor sources remain
    thin = TravelTimeDataset(ds.u, ds.times[keep], ds.ids[keep], ds.mask[keep])
    with pytest.raises(DataError, match="deficit 2"):
        recover_gamma_metric(thin)


# -------------------------------------------------------- boundary gradient

def test_gradient_zero_on_normal_ray():
    m = 65
    js = [16, 32, 45]
    u = np.linspace(0, 1, m)
    extra = [0.5 * np.array([np.cos(np.pi * u[j]), np.sin(np.pi * u[j])]) for j in js]
    ds, *_ = euclid_dataset(extra, m)
    gg = recover_gamma_metric(ds)
    for k, j in enumerate(js):
        val, smooth = boundary_gradient(ds, gg, m + k, j)
        assert smooth and abs(val) <= 1e-3


def test_gradient_tends_to_unit_on_tangential_approach():
    m, j = 65, 32
    s = np.pi * 0.5
    z = np.array([np.cos(s), np.sin(s)])
    t, n_in = np.array([-np.sin(s), np.cos(s)]), -z
    betas = np.array([1.2, 0.9, 0.6, 0.45, 0.35])
    extra = [z + 0.3 * (np.cos(b) * t + np.sin(b) * n_in) for b in betas]
    ds, *_ = euclid_dataset(extra, m)
    gg = recover_gamma_metric(ds)
    vals = np.array([boundary_gradient(ds, gg, m + k, j)[0] for k in range(betas.size)])
    assert np.allclose(vals, -np.cos(betas), atol=5e-3)  # d/ds |p - z(s)| = -cos(beta)
    assert np.all(np.diff(np.abs(vals)) > 0)


def test_gradient_flags_kink_of_sensor_source():
    ds, *_ = euclid_dataset(np.zeros((0, 2)))
    gg = recover_gamma_metric(ds)
    assert boundary_gradient(ds, gg, 32, 32)[1] is False
    assert boundary_gradient(ds, gg, 32, 10)[1] is True
    with pytest.raises(DomainError):
        boundary_gradient(ds, gg, 0, 0)


def test_gradient_flags_cut_point_on_gamma():
    """Behind the lens the distance from a source on the symmetry axis has a
    crease where the two minimizers around the bump meet on the boundary."""
    from geotime.distance import distance_shooting
    from geotime.manifold import circle_domain, metric_lens
    spec, dom = metric_lens(), circle_domain(1.0)
    m = 41
    u = np.linspace(0, 1, m)
    s = np.pi * u
    Z = np.stack([np.cos(s), np.sin(s)], -1)
    p = np.array([0.0, -0.6])
    row = np.array([distance_shooting(spec, dom, p, z)[0] for z in Z])
    ds = TravelTimeDataset(u, row[None], np.zeros(1, dtype=np.int64), np.ones(1, dtype=np.uint8))
    # the speed enters only the value, never the flag; take the exact one
    from scipy.interpolate import CubicSpline
    lam = np.pi * spec.conformal_factor(Z)
    gg = GammaGeometry(u, lam, np.full(m, -1), np.concatenate([[0], np.cumsum(lam[1:]) * (u[1] - u[0])]),
                       CubicSpline(u, lam))
    flags = np.array([boundary_gradient(ds, gg, 0, j)[1] for j in range(1, m - 1)])
    mid = m // 2
    assert not flags[mid - 1]                   # the crease at the top of the disk
    assert flags[: mid - 4].all() and flags[mid + 3:].all()


# ---------------------------------------------------------------- co-sphere

def test_fit_cosphere_identity():
    r = np.sqrt(0.5)
    g, res, _ = fit_cosphere([[1, 0], [0, 1], [r, r]])
    assert np.allclose(g, np.eye(2), atol=1e-12) and res <= 1e-12


def test_fit_cosphere_diagonal():
    # unit covectors of g = diag(4, 1): xi^T g^-1 xi = 1
    g, _, _ = fit_cosphere([[2, 0], [0, 1], [np.sqrt(2), np.sqrt(0.5)]])
    assert np.allclose(g, np.diag([4.0, 1.0]), atol=1e-12)


def test_fit_cosphere_noisy_spd():
    rng = np.random.default_rng(4)
    A = rng.normal(size=(2, 2))
    g = A @ A.T + 0.5 * np.eye(2)
    th = rng.uniform(0, 2 * np.pi, 20)
    d = np.stack([np.cos(th), np.sin(th)], -1)
    xi = d / np.sqrt(np.einsum("ki,ij,kj->k", d, np.linalg.inv(g), d))[:, None]
    xi = xi * (1 + 1e-3 * rng.normal(size=(20, 1)))
    gf, res, _ = fit_cosphere(xi)
    assert np.linalg.norm(gf - g) / np.linalg.norm(g) <= 1e-2
    assert res <= 1e-2


def test_fit_cosphere_rank_deficient():
    with pytest.raises(DomainError, match="rank-deficient"):
        fit_cosphere([[1, 0], [0, 1]])
    with pytest.raises(DomainError, match="rank-deficient"):
        fit_cosphere([[1, 0], [1, 0.01], [1, 0.02], [-1, 0.0]])


@given(st.floats(0.2, 5.0), st.floats(0.2, 5.0), st.floats(0, np.pi))
@settings(max_examples=50, deadline=None)
def test_fit_cosphere_exact_property(a, b, rot):
    R = np.array([[np.cos(rot), -np.sin(rot)], [np.sin(rot), np.cos(rot)]])
    g = R @ np.diag([a, b]) @ R.T
    th = np.linspace(0, np.pi, 7)[:-1]
    d = np.stack([np.cos(th), np.sin(th)], -1)
    xi = d / np.sqrt(np.einsum("ki,ij,kj->k", d, np.linalg.inv(g), d))[:, None]
    gf, res, _ = fit_cosphere(xi)
    assert np.allclose(gf, g, rtol=1e-8, atol=1e-10) and res <= 1e-10


# ---------------------------------------------------------------- charts

@pytest.fixture(scope="module")
def euclid_lattice():
    return euclid_dataset(disk_lattice(0.1, 0.95))


def test_alpha_examples():
    ds, *_ = euclid_dataset(np.concatenate([[[0.0, 0.0], [0.0, 0.5]], disk_lattice(0.2, 0.9)]))
    gg = recover_gamma_metric(ds)
    # sensor 32 sits at (0, 1); the inward normal points at the origin
    assert np.allclose(alpha_coords(ds, gg, 65, 32), (0.0, 1.0), atol=1e-3)
    assert np.allclose(alpha_coords(ds, gg, 66, 32), (0.0, 0.5), atol=1e-3)
    with pytest.raises(DomainError, match="chart unavailable"):
        alpha_coords(ds, gg, 32, 32)


def test_alpha_matches_polar_coordinates_and_is_injective(euclid_lattice):
    ds, P, Z, _ = euclid_lattice
    gg = recover_gamma_metric(ds)
    j0 = 20
    t0 = np.array([-Z[j0, 1], Z[j0, 0]])
    got, want = [], []
    for i in range(65, ds.N):
        try:
            got.append(alpha_coords(ds, gg, i, j0))
        except DomainError:
            continue
        d = P[i] - Z[j0]
        want.append((d @ t0 / np.hypot(*d), np.hypot(*d)))
    got, want = np.array(got), np.array(want)
    assert got.shape[0] >= 0.9 * (ds.N - 65)
    assert np.abs(got - want).max() <= 5e-3
    D = np.hypot(*(got[:, None] - got[None]).transpose(2, 0, 1))
    np.fill_diagonal(D, np.inf)
    assert D.min() > 1e-3


def test_sigma_value_is_chord(runs):
    run = runs.get("disk")
    gg = recover_gamma_metric(run.ds)
    tol = run.opts.h_src
    for j in (16, 32, 48):
        for v in (-0.6, 0.0, 0.5):
            sig = build_sigma(run.ds, gg, j, v, opts=run.opts)
            assert not sig.thin and gg.gamma_rows[j] in sig.members
            assert abs(sig.T_value - 2 * np.sqrt(1 - v * v)) <= tol



@pytest.mark.slow
def test_sigma_value_reaches_exit_when_tube_misses_sources(runs):
    # near-normal ray on the mild bump that passes between lattice rows: every
    # source along it lies just outside the tube, the exit pair included
    from geotime.distance import cut_time
    from geotime.geodesic import UnitVectorAt, unproject_scalar
    from geotime.manifold import boundary_frame
    run = runs.get("bump_mild")
    gg = recover_gamma_metric(run.ds, run.opts)
    j, v = 38, -0.060625
    sig = build_sigma(run.ds, gg, j, v, opts=run.opts)
    fr = boundary_frame(run.domain, run.spec, float(run.truth.meta["sensor_s"][j]))
    want = cut_time(run.spec, run.domain, UnitVectorAt(fr.point, unproject_scalar(fr, v))).cut_time
    assert run.ds.times[sig.members, j].max() < want - run.opts.h_src
    assert abs(sig.T_value - want) <= run.opts.h_src

def test_sigma_rejects_tangential_direction(runs):
    run = runs.get("disk")
    gg = recover_gamma_metric(run.ds)
    with pytest.raises(DomainError):
        build_sigma(run.ds, gg, 10, 1.0)


def _nearest(truth, q, kind=None):
    d = np.hypot(*(truth.positions - np.asarray(q)).T)
    if kind is not None:
        d = np.where(np.asarray(truth.kinds) == kind, d, np.inf)
    return int(np.argmin(d))


def test_classify_examples(runs):
    run = runs.get("disk")
    ds, truth = run.ds, run.truth
    gg = recover_gamma_metric(ds)
    assert classify_boundary(ds, gg, _nearest(truth, (0, 0)), run.opts) == "interior"
    assert classify_boundary(ds, gg, _nearest(truth, (0, -1), "boundary"), run.opts) == "boundary"
    assert classify_boundary(ds, gg, int(gg.gamma_rows[40]), run.opts) == "boundary"
    assert classify_boundary(ds, gg, _nearest(truth, (0.8, 0.0), "collar"), run.opts) == "interior"


def test_beta_examples(runs):
    run = runs.get("disk")
    ds, truth = run.ds, run.truth
    gg = recover_gamma_metric(ds)
    j0 = 32
    z0 = np.asarray(truth.meta["sensor_points"])[j0]
    tol = run.opts.h_src
    i = _nearest(truth, -z0, "boundary")
    eta, tau, closed = beta_coords(ds, gg, i, j0, run.opts)
    assert abs(tau) <= tol and closed
    i = _nearest(truth, -0.8 * z0, "collar")
    depth = float(truth.depth[i])
    eta, tau, _ = beta_coords(ds, gg, i, j0, run.opts)
    assert abs(tau - depth) <= tol


def test_covectors_unit_under_truth_metric(runs):
    run = runs.get("disk")
    ds, truth = run.ds, run.truth
    gg = recover_gamma_metric(ds)
    frames = boundary_frames(run.domain, run.spec, np.asarray(truth.meta["sensor_s"]))
    rng = np.random.default_rng(0)
    interior = np.flatnonzero(np.asarray(truth.kinds) == "lattice")
    norms = []
    for i in rng.choice(interior, 20, replace=False):
        try:
            cov, J, j0 = estimate_H(ds, gg, int(i), opts=run.opts)
        except DomainError:
            continue
        v, r = alpha_coords(ds, gg, int(i), j0, run.opts)
        ginv = np.linalg.inv(_truth_alpha_metric(run.spec, run.domain, frames[j0], v, r))
        norms.extend(np.sqrt(np.einsum("ki,ij,kj->k", cov, ginv, cov)))
    norms = np.array(norms)
    assert norms.size >= 100
    assert np.abs(norms - 1).max() <= 0.03


def test_estimate_H_duplicate_sensor(runs):
    run = runs.get("disk")
    gg = recover_gamma_metric(run.ds)
    i = _nearest(run.truth, (0.1, 0.3))
    cov, J, _ = estimate_H(run.ds, gg, i, J=[20, 20, 40], opts=run.opts)
    assert np.array_equal(cov[0], cov[1]) and list(J) == [20, 20, 40]


# --------------------------------------------------------------- pipeline

def test_reconstruct_all_disk(runs):
    recon = runs.get("disk").recon
    ok = recon.status == "ok"
    assert ok.mean() >= 0.95
    ev = np.linalg.eigvalsh(recon.g_fit[ok])
    assert np.all(ev > 0)
    assert np.all(recon.chart_j[ok] >= 1) and np.all(recon.chart_j[ok] <= recon.gamma.u.size - 2)
    assert np.all(np.isfinite(recon.beta[recon.boundary]))
    assert np.all(np.isnan(recon.beta[~recon.boundary]))
    assert recon.diagnostics["gamma_rows"] == 64


def test_report_blind_and_deterministic(runs, tmp_path):
    run = runs.get("disk")
    blind = read_dataset(run.path, blind=True)
    a = write_report(reconstruct_all(blind, run.opts), tmp_path / "a")
    b = write_report(run.recon, tmp_path / "b")
    for pa, pb in zip(a, b):
        assert open(pa, "rb").read() == open(pb, "rb").read()
    text = open(a[0]).read()
    assert "truth" not in text and "position" not in text


def test_reconstruct_is_blind_to_source_order(runs):
    run = runs.get("disk")
    ds = run.ds
    perm = np.random.default_rng(1).permutation(ds.N)
    shuf = TravelTimeDataset(ds.u, ds.times[perm], ds.ids[perm], ds.mask[perm])
    a, b = run.recon, reconstruct_all(shuf, run.opts)
    assert np.array_equal(a.boundary[perm], b.boundary)
    ok = (a.status[perm] == "ok") & (b.status == "ok")
    assert np.allclose(a.g_fit[perm][ok], b.g_fit[ok], rtol=1e-6, atol=1e-9)


def test_pipeline_error_without_sensor_sources():
    ds, *_ = euclid_dataset(disk_lattice(0.2, 0.9), m=20)
    keep = np.arange(ds.N) >= 20
    bare = TravelTimeDataset(ds.u, ds.times[keep], ds.ids[keep], ds.mask[keep])
    from geotime.errors import PipelineError
    with pytest.raises(PipelineError, match="boundary metric"):
        reconstruct_all(bare, ReconOptions(h_src=0.2))
