"""Geodesic shooting, exponential map, exit and conjugate times.

All integration runs through :mod:`geotime.kernels` (Dormand-Prince 5(4) with
event location).  Velocities are unit speed w.r.t. ``g``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DomainError, IntegrationError
from .manifold import (BoundaryFrame, DomainSpec, MetricSpec, default_extension, g_inner,
                       g_norm, metric_at)

INF = float("inf")
STATUS = {
    kernels.ST_EXITED: "exited",
    kernels.ST_HORIZON: "trapped_horizon_reached",
    kernels.ST_CHART: "left_chart",
    kernels.ST_TARGET: "target_reached",
}


@dataclass(frozen=True)
class IntegratorOptions:
    rtol: float = 1e-10
    atol: float = 1e-10
    h_max: float = 0.05
    h_init: float = 1e-3
    event_tol: float = 1e-12
    boundary_tol: float = 1e-9


DEFAULT_OPTIONS = IntegratorOptions()


@dataclass(frozen=True, eq=False)
class UnitVectorAt:
    """Point of the unit sphere bundle: ``base`` with a ``g``-unit ``direction``."""

    base: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "base", np.asarray(self.base, dtype=np.float64).reshape(2))
        object.__setattr__(self, "direction", np.asarray(self.direction, dtype=np.float64).reshape(2))

    @classmethod
    def normalized(cls, spec: MetricSpec, base, direction) -> "UnitVectorAt":
        base = np.asarray(base, dtype=np.float64)
        v = np.asarray(direction, dtype=np.float64)
        n = float(g_norm(metric_at(spec, base), v))
        if n == 0:
            raise DomainError("zero direction")
        return cls(base, v / n)

    @classmethod
    def from_angle(cls, spec: MetricSpec, base, theta: float) -> "UnitVectorAt":
        return cls.normalized(spec, base, (np.cos(theta), np.sin(theta)))

    def g_norm(self, spec: MetricSpec) -> float:
        return float(g_norm(metric_at(spec, self.base), self.direction))


@dataclass(frozen=True, eq=False)
class GeodesicRecord:
    """Result of one shot.

    ``samples`` rows are ``(t, x, y, vx, vy)``; ``jacobi`` rows ``(t, j, jdot)``
    when the Jacobi field was integrated.
    """

    initial: UnitVectorAt
    samples: np.ndarray
    exit_time: float
    conjugate_time: float
    status: str
    end_time: float
    end_state: np.ndarray
    exit_param: float = -1.0
    nsteps: int = 0
    jacobi: np.ndarray | None = None
    cut_time: float | None = None
    minimizer_count: int | None = None

    @property
    def exit_point(self):
        return self.end_state[:2] if self.status == "exited" else None

    def speed_error(self, spec: MetricSpec) -> float:
        from .manifold import metric_field
        g = metric_field(spec, self.samples[:, 1:3])
        return float(np.max(np.abs(g_norm(g, self.samples[:, 3:5]) - 1.0)))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "y", "vx", "vy"])
            for row in self.samples:
                w.writerow([repr(float(v)) for v in row])


def _chart(spec: MetricSpec):
    return np.array(spec.chart, dtype=np.float64)


def _start_kind(domain: DomainSpec | None, spec: MetricSpec, init: UnitVectorAt, tol: float):
    """Classify the base point; returns ``from_boundary`` and validates direction."""
    if domain is None:
        return False
    depth = float(domain.depth(init.base[None])[0])
    if depth < -tol:
        raise DomainError(f"base point {init.base.tolist()} lies outside the domain")
    if depth > tol:
        return False
    from .manifold import boundary_frame
    _, t = domain.closest_boundary(init.base[None])
    fr = boundary_frame(domain, spec, float(domain.s_of_t(t)[0]))
    if g_inner(fr.metric, init.direction, fr.inward_normal) <= 0:
        raise DomainError("direction at a boundary point must point strictly inward")
    return True


def integrate_raw(spec: MetricSpec, domain: DomainSpec | None, base, direction, t_max: float, *,
                  jacobi=False, record=False, from_boundary=False, target=None,
                  stop_at_target=False, opts: IntegratorOptions = DEFAULT_OPTIONS):
    """Thin wrapper over the kernel; no validation (hot path)."""
    curve = domain.kernel_curve if domain is not None else None
    y0 = np.array([base[0], base[1], direction[0], direction[1]], dtype=np.float64)
    res = kernels.integrate(spec.kind, spec.kernel_params, curve, y0, float(t_max), opts.rtol,
                            opts.atol, opts.h_max, opts.h_init, bool(jacobi), bool(record),
                            bool(from_boundary), _chart(spec), opts.event_tol,
                            None if target is None else np.asarray(target, dtype=np.float64),
                            bool(stop_at_target))
    if res[0] == kernels.ST_UNDERFLOW:
        raise IntegrationError(f"step size underflow at t={res[1]:.6g}, state={res[2][:4].tolist()}")
    return res


def shoot(spec: MetricSpec, domain: DomainSpec | None, init: UnitVectorAt, t_max: float = 50.0,
          opts: IntegratorOptions = DEFAULT_OPTIONS, jacobi: bool = True) -> GeodesicRecord:
    """Integrate the geodesic from ``init`` until it leaves ``domain`` or ``t_max``.

    A base point on the boundary needs a strictly inward direction; the exit
    event is then armed only after the curve has entered the interior.
    """
    if t_max <= 0:
        raise DomainError("t_max must be positive")
    spec._check(init.base)
    if abs(init.g_norm(spec) - 1.0) > 1e-10:
        raise DomainError("initial direction is not g-unit")
    fb = _start_kind(domain, spec, init, opts.boundary_tol)
    res = integrate_raw(spec, domain, init.base, init.direction, t_max, jacobi=jacobi, record=True,
                        from_boundary=fb, opts=opts)
    status, t_end, state, t_conj, exit_param, nsteps, _, samples = res
    st = STATUS[status]
    return GeodesicRecord(
        initial=init,
        samples=np.ascontiguousarray(samples[:, :5]),
        exit_time=float(t_end) if st == "exited" else INF,
        conjugate_time=float(t_conj) if jacobi else INF,
        status=st,
        end_time=float(t_end),
        end_state=state,
        exit_param=float(exit_param),
        nsteps=int(nsteps),
        jacobi=np.ascontiguousarray(samples[:, [0, 5, 6]]) if jacobi else None,
    )


def exit_time(spec, domain, init: UnitVectorAt, t_max=50.0, opts=DEFAULT_OPTIONS) -> float:
    fb = _start_kind(domain, spec, init, opts.boundary_tol)
    res = integrate_raw(spec, domain, init.base, init.direction, t_max, from_boundary=fb, opts=opts)
    return float(res[1]) if res[0] == kernels.ST_EXITED else INF


def exp_map(spec: MetricSpec, domain: DomainSpec | None, p, w,
            opts: IntegratorOptions = DEFAULT_OPTIONS) -> np.ndarray:
    """``exp_p(w)``; ``w`` must not be longer than the exit time in its direction."""
    p = spec._check(np.asarray(p, dtype=np.float64))
    w = np.asarray(w, dtype=np.float64)
    L = float(g_norm(metric_at(spec, p), w))
    if L == 0.0:
        return p.copy()
    init = UnitVectorAt(p, w / L)
    fb = _start_kind(domain, spec, init, opts.boundary_tol)
    res = integrate_raw(spec, domain, p, w / L, L, from_boundary=fb, opts=opts)
    if res[0] == kernels.ST_EXITED and res[1] < L * (1 - 1e-12) - 1e-12:
        raise DomainError(f"|w|_g = {L:.12g} exceeds the exit time {res[1]:.12g}")
    if res[0] == kernels.ST_CHART:
        raise DomainError("geodesic left the chart rectangle before |w|_g")
    return res[2][:2].copy()


def conjugate_time(spec: MetricSpec, domain: DomainSpec | None, init: UnitVectorAt,
                   t_max: float = 50.0, opts: IntegratorOptions = DEFAULT_OPTIONS,
                   extended: DomainSpec | None = None) -> float:
    """First zero of the scalar Jacobi field ``j'' + K j = 0``, ``j(0)=0, j'(0)=1``.

    The search horizon is ``t_max`` capped by the exit from the extended
    domain (``extended`` or the canonical collar of ``domain``); ``inf`` when
    no zero is found.  ``domain=None`` integrates in the whole chart.
    """
    ext = None
    if domain is not None:
        ext = extended if extended is not None else default_extension(domain, spec)
        _start_kind(domain, spec, init, opts.boundary_tol)
    res = integrate_raw(spec, ext, init.base, init.direction, t_max, jacobi=True, opts=opts)
    return float(res[3])


# ------------------------------------------------------ boundary projection h

def tangential_component(frame: BoundaryFrame, v) -> float:
    """``<v, T>_g``: scalar coordinate of ``h(z, v)`` along the boundary tangent."""
    return float(g_inner(frame.metric, np.asarray(v, dtype=np.float64), frame.tangent))


def project_h(frame: BoundaryFrame, v) -> np.ndarray:
    """Tangential part ``v - <v, nu>_g nu`` of an inward unit vector."""
    v = np.asarray(v, dtype=np.float64)
    c = float(g_inner(frame.metric, v, frame.inward_normal))
    if c <= 0:
        raise DomainError("vector is not strictly inward pointing")
    if abs(float(g_norm(frame.metric, v)) - 1.0) > 1e-8:
        raise DomainError("vector is not g-unit")
    return v - c * frame.inward_normal


def unproject_h(frame: BoundaryFrame, h) -> np.ndarray:
    """Inverse of :func:`project_h`: add the inward normal component ``sqrt(1 - |h|^2)``."""
    h = np.asarray(h, dtype=np.float64)
    n2 = float(g_inner(frame.metric, h, h))
    if n2 >= 1.0:
        raise DomainError("|h|_g must be < 1")
    return h + np.sqrt(1.0 - n2) * frame.inward_normal


def unproject_scalar(frame: BoundaryFrame, a: float) -> np.ndarray:
    """Inward unit vector with tangential coordinate ``a in (-1, 1)``."""
    if not -1.0 < a < 1.0:
        raise DomainError("tangential coordinate must lie in (-1, 1)")
    return a * frame.tangent + np.sqrt(1.0 - a * a) * frame.inward_normal
