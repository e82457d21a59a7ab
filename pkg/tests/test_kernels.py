"""The compiled kernels and their pure-Python twins agree on identical inputs."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geotime import _pykernels, kernels
from geotime.geodesic import DEFAULT_OPTIONS
from geotime.manifold import (MetricSpec, circle_domain, ellipse_domain, metric_at, metric_bump,
                              metric_constant_curvature, metric_euclidean, metric_lens)

ck = pytest.importorskip("geotime._ckernels")

SPD = MetricSpec("custom_spd", (), (-2, 2, -2, 2), tables=(
    np.array([[1.0, 0.0], [0.2, 0.0]]), np.array([[0.0, 0.1], [0.0, 0.0]]), np.array([[1.5, 0.0], [0.0, 0.3]])))
SPECS = [metric_euclidean(), metric_lens(), metric_bump((0.3, -0.1), -0.3, 0.4),
         metric_constant_curvature(1.0), SPD]


def _run(mod, spec, domain, y0, jacobi=True, record=True, target=None):
    o = DEFAULT_OPTIONS
    return mod.integrate(spec.kind, spec.kernel_params, None if domain is None else domain.kernel_curve,
                         np.asarray(y0, dtype=np.float64), 10.0, o.rtol, o.atol, o.h_max, o.h_init,
                         jacobi, record, False, np.array(spec.chart, dtype=np.float64), o.event_tol,
                         None if target is None else np.asarray(target, dtype=np.float64), False)


def test_backend_name():
    assert kernels.BACKEND in ("cython", "python")


@pytest.mark.parametrize("k", range(len(SPECS)))
def test_integrate_equivalent(k):
    spec = SPECS[k]
    dom = circle_domain(0.9)
    rng = np.random.default_rng(k)
    for _ in range(6):
        p = rng.uniform(-0.5, 0.5, 2)
        th = rng.uniform(0, 2 * np.pi)
        v = np.array([np.cos(th), np.sin(th)])
        v /= np.sqrt(v @ metric_at(spec, p) @ v)
        a = _run(ck, spec, dom, np.r_[p, v])
        b = _run(_pykernels, spec, dom, np.r_[p, v])
        assert a[0] == b[0]
        assert a[1] == pytest.approx(b[1], abs=1e-12)
        assert np.allclose(a[2], b[2], atol=1e-12)
        assert (a[3] == b[3]) or abs(a[3] - b[3]) <= 1e-10
        assert a[5] == b[5]
        assert np.allclose(a[7], b[7], atol=1e-12)


def test_integrate_equivalent_ellipse_with_target():
    dom = ellipse_domain(1.2, 0.7)
    spec = metric_lens()
    n = float(spec.conformal_factor(np.array([[-0.5, 0.1]]))[0])
    y0 = np.array([-0.5, 0.1, 1.0 / n, 0.0])
    a = _run(ck, spec, dom, y0, target=(0.6, 0.2))
    b = _run(_pykernels, spec, dom, y0, target=(0.6, 0.2))
    assert a[0] == b[0] and a[1] == pytest.approx(b[1], abs=1e-12)
    assert np.allclose(a[6], b[6], atol=1e-12)


@given(st.floats(-0.8, 0.8), st.floats(-0.8, 0.8), st.sampled_from(range(len(SPECS))))
@settings(max_examples=60, deadline=None)
def test_gauss_curvature_equivalent(x, y, k):
    spec = SPECS[k]
    a = ck.gauss_curvature_at(spec.kind, spec.kernel_params, x, y)
    b = _pykernels.gauss_curvature_at(spec.kind, spec.kernel_params, x, y)
    assert a == pytest.approx(b, rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("order", [1, 2])
def test_fast_march_identical(order):
    spec = metric_lens()
    n = 48
    h = 2.0 / n
    xs = -1.0 + h * np.arange(n + 1)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    slow = np.ascontiguousarray(spec.conformal_factor(np.stack([X, Y], -1)))
    mask = np.ascontiguousarray((X ** 2 + Y ** 2 <= 1).astype(np.uint8))
    seed = np.array([np.ravel_multi_index((n // 2, n // 2), X.shape)], dtype=np.int64)
    a = ck.fast_march(slow, mask, h, seed, np.zeros(1), order)
    b = _pykernels.fast_march(slow, mask, h, seed, np.zeros(1), order)
    assert np.array_equal(np.isfinite(a), np.isfinite(b))
    fin = np.isfinite(a)
    assert np.abs(a[fin] - b[fin]).max() <= 1e-13
