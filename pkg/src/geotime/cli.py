"""Command line interface: ``geotime simulate | reconstruct | verify | cutlocus | counterexample``.

Every command writes one run directory holding its artifacts and a
``manifest.json`` (config hash, package versions, tolerances, artifact
digests).  Outputs carry no timestamps, so identical inputs give identical
bytes.  Exit codes: 0 ok, 2 config error, 3 data error, 4 pipeline failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import platform
import sys
import tempfile

import numpy as np
import scipy

from . import __version__, kernels
from .config import GeoConfig, load_config
from .errors import (ConfigError, DataError, DomainError, GeotimeError, IntegrationError,
                     OracleError, PipelineError)
from .manifold import HorseshoeGeometry, check_strict_convexity
from .reconstruct import ReconOptions, reconstruct_all, write_report
from .svg import Canvas
from .traveltime import generate_dataset, read_dataset, write_dataset

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_PIPELINE = 0, 2, 3, 4


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _versions():
    return {"geotime": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version(), "kernels": kernels.BACKEND}


def _write_manifest(out, command, cfg: GeoConfig | None, args, tolerances, artifacts, extra=None):
    man = {
        "format": "geotime-manifest v1",
        "command": command,
        "config": None if cfg is None else {"name": cfg.name, "sha256": cfg.digest},
        "seed": None if cfg is None else cfg.seed,
        "blind": bool(getattr(args, "blind", False)),
        "overrides": {"h_src": args.h_src, "sensors": args.sensors},
        "versions": _versions(),
        "tolerances": tolerances,
        "artifacts": {os.path.basename(p): _sha256(p) for p in artifacts},
    }
    if extra:
        man.update(extra)
    p = os.path.join(out, "manifest.json")
    with open(p, "w") as fh:
        json.dump(man, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")
    return p


def _jsonable(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"cannot serialise {type(x).__name__}")


def _out_dir(args, default):
    out = args.out or os.path.join("runs", default)
    os.makedirs(out, exist_ok=True)
    return out


def _config(args) -> GeoConfig:
    if not args.config:
        raise ConfigError("--config is required for this command")
    return load_config(args.config).with_overrides(args.h_src, args.sensors, args.seed)


def _threads(args):
    return args.threads if args.threads else (os.cpu_count() or 1)


# ---------------------------------------------------------------- commands

def cmd_simulate(args) -> int:
    cfg = _config(args)
    spec, dom = cfg.metric_spec(), cfg.domain()
    conv = check_strict_convexity(dom, spec, margin_floor=cfg.margin_floor)
    if not conv and not args.allow_nonconvex:
        raise ConfigError(f"boundary is not strictly convex: max second fundamental form "
                          f"{conv.max_pi:.6g} at s = {conv.s_at_max:.6g} is not below "
                          f"-{cfg.margin_floor:g}; pass --allow-nonconvex to simulate anyway")
    oracle = cfg.oracle_options(_threads(args))
    if not dom.star_shaped and oracle.method != "eikonal":
        raise ConfigError("the shooting oracle needs a star-shaped boundary; set "
                          "oracle.method = eikonal for this domain", cfg.lines.get("boundary"))
    out = _out_dir(args, cfg.name)
    ds, truth = generate_dataset(spec, dom, cfg.source_plan(), cfg.sensor_plan(), oracle,
                                 seed=cfg.seed, config_text=cfg.text,
                                 extra_sources=cfg.extra_sources())
    path = os.path.join(out, "dataset.gtd")
    write_dataset(ds, path, truth)
    sep, pair = ds.row_separation()
    tol = {"oracle_method": oracle.method, "root_tol": oracle.root_tol, "n_fan": oracle.n_fan,
           "max_exit_gap": oracle.max_exit_gap, "integrator_rtol": oracle.integrator.rtol,
           "integrator_atol": oracle.integrator.atol, "eikonal_h": oracle.eikonal_h,
           "h_src": cfg.h_src, "delta_collar": cfg.source_plan().delta_collar}
    lines = [
        "geotime-simulate v1",
        f"config = {cfg.name} ({cfg.digest[:12]})",
        f"N = {ds.N}  m = {ds.m}  masked rows = {int(np.sum(ds.mask == 0))}",
        f"oracle = {oracle.method}, root tol = {oracle.root_tol:g}, integrator rtol = "
        f"{oracle.integrator.rtol:g}",
        f"convexity: max second fundamental form = {conv.max_pi:.6g} "
        f"({'strictly convex' if conv else 'NOT convex'})",
        f"min row separation = {sep:.6g}",
    ]
    summ = os.path.join(out, "summary.txt")
    with open(summ, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    _write_manifest(out, "simulate", cfg, args, tol, [path, path + ".truth", summ],
                    {"convexity_max_pi": conv.max_pi})
    print("\n".join(lines[1:]))
    print(f"wrote {path}")
    return EXIT_OK


def _recon_options(args) -> tuple:
    cfg = None
    if args.config:
        cfg = load_config(args.config)
        opts = cfg.recon_options(args.h_src)
    else:
        opts = ReconOptions(h_src=args.h_src)
    return cfg, opts


def cmd_reconstruct(args) -> int:
    cfg, opts = _recon_options(args)
    ds = read_dataset(args.dataset, blind=args.blind)
    recon = reconstruct_all(ds, opts)
    out = _out_dir(args, os.path.splitext(os.path.basename(args.dataset))[0] + "-recon")
    paths = write_report(recon, out)
    _write_manifest(out, "reconstruct", cfg, args, recon.tolerances, paths,
                    {"dataset": os.path.abspath(args.dataset),
                     "dataset_sha256": _sha256(args.dataset)})
    d = recon.diagnostics
    print(f"N = {d['N']}  m = {d['m']}  boundary = {d['boundary_count']}  "
          f"interior = {d['interior_count']}")
    print("status: " + ", ".join(f"{k} {v}" for k, v in sorted(d["status"].items())))
    for w in recon.warnings:
        print(f"warning: {w}")
    print(f"wrote {out}")
    return EXIT_OK


def _load_run(run):
    p = os.path.join(run, "manifest.json")
    try:
        with open(p) as fh:
            man = json.load(fh)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read run manifest {p}: {exc}") from None
    if man.get("command") != "reconstruct":
        raise DataError(f"{run} is not a reconstruction run")
    return man


def _rerun(run, man):
    """Recompute the reconstruction of a run and check it matches the saved report."""
    ds, truth = read_dataset(man["dataset"], with_truth=True)
    if truth is None:
        raise DataError(f"no ground-truth sidecar next to {man['dataset']}")
    t = man["tolerances"]
    opts = ReconOptions(h_src=t["h_src"], n_dirs=t["n_dirs"], v_max=t["v_max"],
                        kappa_spike=t["kappa_spike"], kappa_cont=t["kappa_cont"],
                        k_cont=t["k_cont"], k_fit=t["k_fit"], tol_grad=t["tol_grad"],
                        tol_T=t["tol_T"])
    recon = reconstruct_all(ds, opts)
    saved = man.get("artifacts", {}).get("sources.csv")
    with tempfile.TemporaryDirectory() as tmp:
        write_report(recon, tmp)
        now = _sha256(os.path.join(tmp, "sources.csv"))
    if saved is not None and saved != now:
        raise DataError(f"re-running the reconstruction of {run} does not reproduce its "
                        f"sources.csv; the dataset or package changed since")
    return ds, truth, recon, opts


def cmd_verify(args) -> int:
    from .verify import embedding_check, isometry_compare, sigma_cut_consistency, truth_setup
    man = _load_run(args.run)
    ds, truth, recon, opts = _rerun(args.run, man)
    spec, dom = truth_setup(truth)
    other = None
    if args.against:
        man2 = _load_run(args.against)
        ds2, truth2, recon2, _ = _rerun(args.against, man2)
        other = (ds2, recon2, truth2)
    rep = isometry_compare(recon, truth, spec, dom, other=other, ds=ds)
    emb = embedding_check(ds, truth, spec, dom)
    out = _out_dir(args, os.path.basename(os.path.normpath(args.run)) + "-verify")
    s = rep.summary()
    b = rep.boundary_agreement
    lines = ["geotime-verify v1", f"run = {args.run}", ""]
    lines += ["[metric]",
              f"interior sources = {s['interior_sources']}",
              f"relative Frobenius error: median = {s['metric_error_median']:.6g}, "
              f"p90 = {s['metric_error_p90']:.6g}",
              f"fraction <= 2% = {s['frac_metric_le_2pct']:.4f}",
              f"fraction <= 5% = {s['frac_metric_le_5pct']:.4f}",
              f"neighbour distance error median = {s['distance_error_median']:.6g}", ""]
    if other is None:
        lines.append("[boundary confusion]")
        for name in ("strict", "all"):
            c = b[name]
            lines.append(f"{name:6s} tp = {c['tp']} fp = {c['fp']} fn = {c['fn']} tn = {c['tn']} "
                         f"precision = {c['precision']:.4f} recall = {c['recall']:.4f}")
    else:
        lines += ["[transport]",
                  f"matched = {s['matched']} ambiguous = {s['ambiguous']} "
                  f"unmatched = {s['unmatched']}",
                  f"boundary flags agree (strict) = {b['strict_agree']}/{b['strict_total']}",
                  f"boundary flags agree (all) = {b['all_agree']}/{b['all_total']}",
                  f"gamma rows map to the same sensor = {s['gamma_consistent']}",
                  f"sigma transport: tested = {s['sigma_transport']['tested']} violations = "
                  f"{s['sigma_transport']['violations']} edge cases = "
                  f"{s['sigma_transport']['edge_cases']}",
                  f"metrics agree within 5% = {s['frac_cross_le_5pct']:.4f}"]
    lines += ["", "[embedding]", f"min row gap = {emb.min_gap:.6g}",
              f"pairs checked = {emb.pairs_checked} violations = {emb.violations} "
              f"max excess = {emb.max_excess:.3g}"]
    if args.sigma_cut:
        sc = sigma_cut_consistency(ds, truth, spec, dom, opts=opts)
        lines += ["", "[sigma / cut time]", f"max |T - cut| = {sc['max_error']:.6g} "
                  f"(tol_T = {sc['tol_T']:.6g}) passed = {sc['passed']}"]
    txt = os.path.join(out, "verify.txt")
    with open(txt, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    csv = os.path.join(out, "metric_errors.csv")
    with open(csv, "w") as fh:
        fh.write("id,kind,depth,status,error\n")
        for i in np.argsort(recon.ids, kind="stable"):
            fh.write(f"{int(recon.ids[i])},{truth.kinds[i]},{truth.depth[i]!r},{recon.status[i]},"
                     f"{float(rep.metric_errors[i])!r}\n")
    _write_manifest(out, "verify", None, args, man["tolerances"], [txt, csv],
                    {"run": os.path.abspath(args.run)})
    print("\n".join(lines[2:]))
    return EXIT_OK


def cmd_cutlocus(args) -> int:
    from .verify import cutlocus_report
    cfg = _config(args)
    spec, dom = cfg.metric_spec(), cfg.domain()
    p = args.point if args.point is not None else cfg.cutlocus_point
    if p is None:
        raise ConfigError("give the source point with --point X Y or cutlocus.point")
    n = args.directions or cfg.cutlocus_directions
    rep = cutlocus_report(spec, dom, np.asarray(p, dtype=np.float64), n)
    out = _out_dir(args, cfg.name + "-cutlocus")
    txt = os.path.join(out, "cutlocus.txt")
    with open(txt, "w") as fh:
        fh.write("geotime-cutlocus v1\n" + "\n".join(rep.lines()) + "\n")
    csv = os.path.join(out, "cutlocus.csv")
    with open(csv, "w") as fh:
        fh.write("x,y\n")
        for q in rep.polyline:
            fh.write(f"{q[0]!r},{q[1]!r}\n")
    svg = os.path.join(out, "cutlocus.svg")
    c = Canvas(dom.bbox())
    c.polyline(dom.polygon, closed=True)
    if len(rep.polyline):
        c.polyline(rep.polyline, color="crimson", width=1.5)
    if len(rep.conjugate_points):
        c.points(rep.conjugate_points, color="navy", r=3)
    c.points(rep.p, color="darkgreen", r=3)
    c.text("cut locus (red), conjugate samples (blue), source (green)")
    c.write(svg)
    _write_manifest(out, "cutlocus", cfg, args, {"directions": n, "h": rep.h}, [txt, csv, svg])
    print("\n".join(rep.lines()))
    return EXIT_OK


def cmd_counterexample(args) -> int:
    from .verify import counterexample_horseshoe
    cfg = load_config(args.config) if args.config else None
    kw = {}
    if cfg is not None:
        kw = {"geom": HorseshoeGeometry(*cfg.horseshoe_radii), "gamma_angles": cfg.gamma_angles}
    rep = counterexample_horseshoe(**kw)
    out = _out_dir(args, "counterexample")
    txt = os.path.join(out, "collapse.txt")
    with open(txt, "w") as fh:
        fh.write("geotime-collapse v1\n" + "\n".join(rep.lines()) + "\n")
    csv = os.path.join(out, "collapse.csv")
    with open(csv, "w") as fh:
        fh.write("x,y\n")
        for q in rep.involute:
            fh.write(f"{q[0]!r},{q[1]!r}\n")
    geom = kw.get("geom") or HorseshoeGeometry()
    svg = os.path.join(out, "collapse.svg")
    c = Canvas((-geom.outer, geom.outer, -geom.outer, geom.outer))
    c.polyline(geom.polyline(1024), closed=True)
    c.points(rep.involute, color="crimson", r=2.5)
    c.points(geom.x0, color="navy", r=3.5)
    c.text(f"involute set (red), wrap point x0 (blue); data diameter {rep.data_diameter:.3g}")
    c.write(svg)
    _write_manifest(out, "counterexample", cfg, args,
                    {"h": rep.h, "eps_collapse": rep.eps_collapse, "d_sep": rep.d_sep},
                    [txt, csv, svg])
    print("\n".join(rep.lines()))
    return EXIT_OK if rep.collapsed else EXIT_PIPELINE


# ------------------------------------------------------------------ parser

def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration file")
    common.add_argument("--out", help="output directory (default runs/<name>)")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--blind", action="store_true", help="never read ground-truth sidecars")
    common.add_argument("--threads", type=int, default=0,
                        help="worker processes (default: logical cores)")
    common.add_argument("--allow-nonconvex", action="store_true",
                        help="simulate even if the boundary is not strictly convex")
    common.add_argument("--h-src", type=float, help="override the source lattice spacing")
    common.add_argument("--sensors", type=int, help="override the sensor count")
    ap = argparse.ArgumentParser(prog="geotime", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=f"geotime {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="generate a travel-time dataset")
    r = sub.add_parser("reconstruct", parents=[common], help="reconstruct from a dataset")
    r.add_argument("dataset")
    v = sub.add_parser("verify", parents=[common], help="compare a reconstruction with truth")
    v.add_argument("run", help="reconstruction run directory")
    v.add_argument("--against", help="second reconstruction run (isometry transport)")
    v.add_argument("--sigma-cut", action="store_true",
                   help="also check sigma-set suprema against cut times")
    c = sub.add_parser("cutlocus", parents=[common], help="cut-locus structure report")
    c.add_argument("--point", type=float, nargs=2, metavar=("X", "Y"))
    c.add_argument("--directions", type=int)
    sub.add_parser("counterexample", parents=[common], help="non-convex collapse report")
    return ap


_COMMANDS = {"simulate": cmd_simulate, "reconstruct": cmd_reconstruct, "verify": cmd_verify,
             "cutlocus": cmd_cutlocus, "counterexample": cmd_counterexample}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (PipelineError, OracleError, IntegrationError, DomainError) as exc:
        print(f"pipeline failure: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    except GeotimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE


if __name__ == "__main__":
    sys.exit(main())
