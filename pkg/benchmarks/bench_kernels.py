"""Compare the compiled kernels with their pure-Python twins.

Usage::

    python3 benchmarks/bench_kernels.py [--shots 40] [--grid 64] [--repeat 3] [--json out.json]

Both backends run on identical inputs; the script reports wall time per call,
the speed-up, and the largest output discrepancy.
"""

from __future__ import annotations

import argparse
import json
import time

import numpy as np

from geotime import _pykernels
from geotime.geodesic import DEFAULT_OPTIONS
from geotime.manifold import circle_domain, metric_lens

try:
    from geotime import _ckernels
except ImportError:
    _ckernels = None


def _shots(mod, spec, domain, n, jacobi):
    o = DEFAULT_OPTIONS
    chart = np.array(spec.chart, dtype=np.float64)
    out = []
    for th in np.linspace(0.0, 2.0 * np.pi, n, endpoint=False):
        y0 = np.array([-0.5, 0.2, np.cos(th), np.sin(th)])
        y0[2:] /= float(spec.conformal_factor(y0[None, :2])[0])
        r = mod.integrate(spec.kind, spec.kernel_params, domain.kernel_curve, y0, 50.0, o.rtol, o.atol,
                          o.h_max, o.h_init, jacobi, False, False, chart, o.event_tol, None, False)
        out.append((r[1], r[3]))
    out = np.array(out)
    return np.where(np.isfinite(out), out, -1.0)


def _march(mod, spec, n):
    h = 2.0 / n
    xs = -1.0 + h * np.arange(n + 1)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    P = np.stack([X, Y], -1)
    slow = np.ascontiguousarray(spec.conformal_factor(P))
    mask = np.ascontiguousarray((X ** 2 + Y ** 2 <= 1.0).astype(np.uint8))
    seed = np.array([np.ravel_multi_index((n // 2, n // 2), X.shape)], dtype=np.int64)
    return mod.fast_march(slow, mask, h, seed, np.zeros(1), 2)


def _time(fn, repeat):
    best, out = np.inf, None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def run(shots=40, grid=64, repeat=3):
    spec, domain = metric_lens(), circle_domain(1.0)
    cases = {
        "integrate (exit + Jacobi)": lambda m: _shots(m, spec, domain, shots, True),
        "fast_march (2nd order)": lambda m: np.where(np.isfinite(r := _march(m, spec, grid)), r, 0.0),
    }
    rows = []
    for name, fn in cases.items():
        tp, op = _time(lambda: fn(_pykernels), repeat)
        row = {"kernel": name, "python_s": tp, "cython_s": None, "speedup": None, "max_abs_diff": None}
        if _ckernels is not None:
            tc, oc = _time(lambda: fn(_ckernels), repeat)
            row.update(cython_s=tc, speedup=tp / tc, max_abs_diff=float(np.max(np.abs(op - oc))))
        rows.append(row)
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--shots", type=int, default=40)
    ap.add_argument("--grid", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--json")
    a = ap.parse_args(argv)
    rows = run(a.shots, a.grid, a.repeat)
    print(f"{'kernel':28s} {'python [s]':>11s} {'cython [s]':>11s} {'speed-up':>9s} {'max |diff|':>11s}")
    for r in rows:
        c = "n/a" if r["cython_s"] is None else f"{r['cython_s']:.4f}"
        s = "n/a" if r["speedup"] is None else f"{r['speedup']:.1f}x"
        d = "n/a" if r["max_abs_diff"] is None else f"{r['max_abs_diff']:.1e}"
        print(f"{r['kernel']:28s} {r['python_s']:11.4f} {c:>11s} {s:>9s} {d:>11s}")
    if a.json:
        with open(a.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
