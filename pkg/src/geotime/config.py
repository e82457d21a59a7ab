"""Run configuration files (``geotime-config v1``).

Line oriented; ``#`` starts a comment.  After the header every line is either
``key = value`` or a table row::

    geotime-config v1
    name = disk
    metric = conformal_bump
    metric.params = 0 0 0.2 0.3
    chart = -10 10 -10 10
    boundary = circle 1.0            # circle R | ellipse a b | fourier | horseshoe
    gamma.fraction = 0 0.5           # or: gamma = s_a s_b  (arc length)
    sensors = 64
    h_src = 0.1

Fourier boundaries list ``fourier k ax bx ay by`` rows (with
``boundary.center = x y``); ``custom_spd`` metrics list ``spd g11|g12|g22 i j c``
rows for the monomial ``c x^i y^j``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, GeotimeError
from .geodesic import IntegratorOptions
from .manifold import (DomainSpec, FourierCurve, HorseshoeGeometry, MetricSpec, circle_domain,
                       ellipse_domain, horseshoe_domain)
from .traveltime import OracleOptions, SensorPlan, SourcePlan

HEADER = "geotime-config v1"

_FLOAT = {
    "h_src", "collar", "sensors.warp", "integrator.rtol", "integrator.atol", "integrator.h_max",
    "oracle.max_exit_gap", "recon.tol_grad", "recon.tol_T", "recon.kappa_spike",
    "recon.kappa_cont", "recon.v_max", "convexity.margin_floor", "extension.fraction",
    "collar.spacing", "oracle.root_tol", "oracle.eikonal_h",
}
_INT = {"sensors", "seed", "oracle.n_fan", "oracle.max_depth", "cutlocus.directions", "recon.n_dirs", "recon.k_fit", "recon.k_cont",
        "horseshoe.modes", "sources.ring_refine"}
_VEC = {"metric.params", "chart", "gamma", "gamma.fraction", "gamma.angles", "boundary.center",
        "horseshoe.radii", "cutlocus.point", "sources.involute"}
_STR = {"name", "metric", "boundary", "sources.boundary", "sources.lattice", "description",
        "oracle.method"}


@dataclass
class GeoConfig:
    text: str = ""
    name: str = "unnamed"
    metric: str = "euclidean"
    metric_params: tuple = ()
    chart: tuple = (-10.0, 10.0, -10.0, 10.0)
    boundary: tuple = ("circle", 1.0)
    boundary_center: tuple = (0.0, 0.0)
    fourier: dict = field(default_factory=dict)
    spd: dict = field(default_factory=dict)
    gamma: tuple | None = None
    gamma_fraction: tuple | None = None
    gamma_angles: tuple = (95.0, 130.0)
    horseshoe_radii: tuple = (0.3, 1.0)
    horseshoe_modes: int = 256
    sensors: int = 64
    sensors_warp: float = 0.0
    h_src: float = 0.1
    collar: float | None = None
    collar_spacing: float | None = None
    ring_refine: int = 2
    lattice: bool = True
    seed: int = 0
    integrator: dict = field(default_factory=dict)
    oracle: dict = field(default_factory=dict)
    recon: dict = field(default_factory=dict)
    margin_floor: float = 1e-6
    extension_fraction: float = 0.1
    cutlocus_point: tuple | None = None
    involute: tuple | None = None
    cutlocus_directions: int = 256
    lines: dict = field(default_factory=dict)

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()

    def _line(self, key):
        return self.lines.get(key)

    # ------------------------------------------------------------ builders
    def metric_spec(self) -> MetricSpec:
        try:
            if self.metric == "custom_spd":
                tabs = []
                for comp in ("g11", "g12", "g22"):
                    entries = self.spd.get(comp, {})
                    deg = max([max(i, j) for i, j in entries] + [0])
                    t = np.zeros((deg + 1, deg + 1))
                    for (i, j), c in entries.items():
                        t[i, j] = c
                    tabs.append(t)
                return MetricSpec("custom_spd", (), self.chart, tuple(tabs))
            return MetricSpec(self.metric, self.metric_params, self.chart)
        except GeotimeError as exc:
            raise ConfigError(str(exc), self._line("metric")) from None

    def domain(self) -> DomainSpec:
        kind = self.boundary[0]
        try:
            if kind == "circle":
                dom = circle_domain(float(self.boundary[1]), self.boundary_center, name=self.name)
            elif kind == "ellipse":
                dom = ellipse_domain(float(self.boundary[1]), float(self.boundary[2]),
                                     self.boundary_center, name=self.name)
            elif kind == "fourier":
                if not self.fourier:
                    raise ConfigError("fourier boundary needs 'fourier k ax bx ay by' rows",
                                      self._line("boundary"))
                n = max(self.fourier)
                co = np.zeros((4, n))
                for k, row in self.fourier.items():
                    co[:, k - 1] = row
                curve = FourierCurve(self.boundary_center, co)
                # provisional Gamma; the configured arc is applied below
                dom = DomainSpec(curve, (0.0, 0.5 * curve.length), self.name,
                                 pole=self.boundary_center)
            elif kind == "horseshoe":
                geom = HorseshoeGeometry(*self.horseshoe_radii)
                return horseshoe_domain(geom, self.gamma_angles, self.horseshoe_modes, self.name)
            else:
                raise ConfigError(f"unknown boundary kind {kind!r}", self._line("boundary"))
        except ConfigError:
            raise
        except GeotimeError as exc:
            raise ConfigError(str(exc), self._line("boundary")) from None
        L = dom.length
        if self.gamma is not None:
            arc = self.gamma
            key = "gamma"
        else:
            f = self.gamma_fraction if self.gamma_fraction is not None else (0.0, 0.5)
            arc = (f[0] * L, f[1] * L)
            key = "gamma.fraction"
        try:
            return DomainSpec(dom.curve, (float(arc[0]), float(arc[1])), self.name, dom.pole)
        except GeotimeError as exc:
            raise ConfigError(str(exc), self._line(key)) from None

    def sensor_plan(self) -> SensorPlan:
        try:
            return SensorPlan(self.sensors, self.sensors_warp)
        except GeotimeError as exc:
            raise ConfigError(str(exc), self._line("sensors")) from None

    def source_plan(self) -> SourcePlan:
        return SourcePlan(self.h_src, self.collar, self.ring_refine, self.collar_spacing,
                          self.lattice)

    def integrator_options(self) -> IntegratorOptions:
        return IntegratorOptions(**self.integrator)

    def oracle_options(self, threads=1) -> OracleOptions:
        return OracleOptions(integrator=self.integrator_options(), threads=threads, **self.oracle)

    def extra_sources(self):
        """Involute points of the horseshoe (``None`` otherwise)."""
        if self.involute is None:
            return None
        ell0, th, n = self.involute
        return HorseshoeGeometry(*self.horseshoe_radii).involute(ell0, th, int(n))

    def recon_options(self, h_src=None):
        """Reconstruction settings; ``h_src`` is the declared lattice spacing
        (an acquisition parameter, not ground truth)."""
        from .reconstruct import ReconOptions
        kw = dict(self.recon)
        for k in ("n_dirs", "k_fit", "k_cont"):
            if k in kw:
                kw[k] = int(kw[k])
        return ReconOptions(h_src=self.h_src if h_src is None else h_src, **kw)

    def with_overrides(self, h_src=None, sensors=None, seed=None) -> "GeoConfig":
        kw = {}
        if h_src is not None:
            if h_src <= 0:
                raise ConfigError("--h-src must be positive")
            kw["h_src"] = float(h_src)
        if sensors is not None:
            if sensors < 8:
                raise ConfigError("--sensors must be at least 8")
            kw["sensors"] = int(sensors)
        if seed is not None:
            kw["seed"] = int(seed)
        return replace(self, **kw)


def _floats(val, n, lineno, key):
    try:
        out = tuple(float(t) for t in val.split())
    except ValueError:
        raise ConfigError(f"{key}: expected numbers, got {val!r}", lineno) from None
    if n is not None and len(out) != n:
        raise ConfigError(f"{key}: expected {n} values, got {len(out)}", lineno)
    return out


def parse_config(text: str) -> GeoConfig:
    """Parse configuration text; errors carry the offending line number."""
    lines = text.splitlines()
    if not lines or lines[0].strip() != HEADER:
        raise ConfigError(f"first line must be {HEADER!r}", 1)
    cfg = GeoConfig(text=text)
    seen = {}
    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            toks = line.split()
            if toks[0] == "fourier":
                if len(toks) != 6:
                    raise ConfigError("fourier row needs: fourier k ax bx ay by", lineno)
                try:
                    k = int(toks[1])
                except ValueError:
                    raise ConfigError(f"fourier mode must be an integer, got {toks[1]!r}", lineno) from None
                if k < 1:
                    raise ConfigError("fourier mode index must be >= 1", lineno)
                cfg.fourier[k] = _floats(" ".join(toks[2:]), 4, lineno, "fourier")
                continue
            if toks[0] == "spd":
                if len(toks) != 5 or toks[1] not in ("g11", "g12", "g22"):
                    raise ConfigError("spd row needs: spd g11|g12|g22 i j c", lineno)
                try:
                    i, j = int(toks[2]), int(toks[3])
                except ValueError:
                    raise ConfigError("spd exponents must be integers", lineno) from None
                if i < 0 or j < 0:
                    raise ConfigError("spd exponents must be non-negative", lineno)
                cfg.spd.setdefault(toks[1], {})[(i, j)] = _floats(toks[4], 1, lineno, "spd")[0]
                continue
            raise ConfigError(f"cannot parse line {raw.strip()!r}", lineno)
        key, val = (t.strip() for t in line.split("=", 1))
        if key in seen:
            raise ConfigError(f"duplicate key {key!r} (first on line {seen[key]})", lineno)
        seen[key] = lineno
        if key in _INT:
            try:
                v = int(val)
            except ValueError:
                raise ConfigError(f"{key}: expected an integer, got {val!r}", lineno) from None
        elif key in _FLOAT:
            v = _floats(val, 1, lineno, key)[0]
        elif key in _VEC:
            v = _floats(val, None, lineno, key)
        elif key in _STR:
            v = val
        else:
            raise ConfigError(f"unknown key {key!r}", lineno)
        _assign(cfg, key, v, val, lineno)
    cfg.lines = seen
    _validate(cfg)
    return cfg


def _assign(cfg, key, v, raw, lineno):
    if key == "name":
        cfg.name = v
    elif key == "description":
        pass
    elif key == "metric":
        cfg.metric = v
    elif key == "metric.params":
        cfg.metric_params = v
    elif key == "chart":
        if len(v) != 4 or v[0] >= v[1] or v[2] >= v[3]:
            raise ConfigError("chart needs xmin xmax ymin ymax with min < max", lineno)
        cfg.chart = v
    elif key == "boundary":
        toks = raw.split()
        kind = toks[0]
        need = {"circle": 1, "ellipse": 2, "fourier": 0, "horseshoe": 0}
        if kind not in need:
            raise ConfigError(f"unknown boundary kind {kind!r}", lineno)
        if len(toks) - 1 != need[kind]:
            raise ConfigError(f"boundary {kind} takes {need[kind]} parameters", lineno)
        nums = _floats(" ".join(toks[1:]), need[kind], lineno, key)
        if any(x <= 0 for x in nums):
            raise ConfigError("boundary sizes must be positive", lineno)
        cfg.boundary = (kind,) + nums
    elif key == "boundary.center":
        if len(v) != 2:
            raise ConfigError("boundary.center needs x y", lineno)
        cfg.boundary_center = v
    elif key == "gamma":
        if len(v) != 2:
            raise ConfigError("gamma needs s_a s_b", lineno)
        cfg.gamma = v
    elif key == "gamma.fraction":
        if len(v) != 2 or not 0.0 <= v[0] < v[1] <= 1.0:
            raise ConfigError("gamma.fraction needs 0 <= a < b <= 1", lineno)
        cfg.gamma_fraction = v
    elif key == "gamma.angles":
        if len(v) != 2:
            raise ConfigError("gamma.angles needs two angles in degrees", lineno)
        cfg.gamma_angles = v
    elif key == "horseshoe.radii":
        if len(v) != 2 or not 0 < v[0] < v[1]:
            raise ConfigError("horseshoe.radii needs 0 < inner < outer", lineno)
        cfg.horseshoe_radii = v
    elif key == "horseshoe.modes":
        cfg.horseshoe_modes = v
    elif key == "sensors":
        if v < 8:
            raise ConfigError("sensors must be at least 8", lineno)
        cfg.sensors = v
    elif key == "sensors.warp":
        if not -1.0 < v < 1.0:
            raise ConfigError("sensors.warp must lie in (-1, 1)", lineno)
        cfg.sensors_warp = v
    elif key == "h_src":
        if v <= 0:
            raise ConfigError("h_src must be positive", lineno)
        cfg.h_src = v
    elif key == "collar":
        if v <= 0:
            raise ConfigError("collar must be positive", lineno)
        cfg.collar = v
    elif key == "collar.spacing":
        cfg.collar_spacing = v
    elif key == "sources.ring_refine":
        if v < 1:
            raise ConfigError("sources.ring_refine must be >= 1", lineno)
        cfg.ring_refine = v
    elif key == "sources.boundary":
        if raw.lower() not in ("yes", "true", "1"):
            raise ConfigError("sources on Gamma are required: the boundary metric is recovered "
                              "from their travel times", lineno)
    elif key == "sources.lattice":
        cfg.lattice = raw.lower() in ("yes", "true", "1")
    elif key == "seed":
        cfg.seed = v
    elif key.startswith("integrator."):
        cfg.integrator[key.split(".", 1)[1]] = v
    elif key == "oracle.method":
        if v not in ("shooting", "eikonal"):
            raise ConfigError("oracle.method must be 'shooting' or 'eikonal'", lineno)
        cfg.oracle["method"] = v
    elif key.startswith("oracle."):
        cfg.oracle[key.split(".", 1)[1]] = v
    elif key.startswith("recon."):
        cfg.recon[key.split(".", 1)[1]] = v
    elif key == "convexity.margin_floor":
        cfg.margin_floor = v
    elif key == "extension.fraction":
        cfg.extension_fraction = v
    elif key == "sources.involute":
        if len(v) != 3 or v[0] <= 0 or v[1] <= 0 or v[2] < 2:
            raise ConfigError("sources.involute needs ell0 theta_max count", lineno)
        cfg.involute = v
    elif key == "cutlocus.point":
        if len(v) != 2:
            raise ConfigError("cutlocus.point needs x y", lineno)
        cfg.cutlocus_point = v
    elif key == "cutlocus.directions":
        if v < 8:
            raise ConfigError("cutlocus.directions must be at least 8", lineno)
        cfg.cutlocus_directions = v


def _validate(cfg: GeoConfig):
    from .manifold import CATALOG
    if cfg.metric not in CATALOG:
        raise ConfigError(f"unknown metric {cfg.metric!r}; expected one of {', '.join(CATALOG)}",
                          cfg.lines.get("metric"))
    if cfg.metric == "custom_spd" and not cfg.spd:
        raise ConfigError("custom_spd needs 'spd' coefficient rows", cfg.lines.get("metric"))
    if cfg.boundary[0] == "fourier" and not cfg.fourier:
        raise ConfigError("fourier boundary needs 'fourier k ax bx ay by' rows",
                          cfg.lines.get("boundary"))
    if cfg.involute is not None and cfg.boundary[0] != "horseshoe":
        raise ConfigError("sources.involute needs boundary = horseshoe",
                          cfg.lines.get("sources.involute"))
    if cfg.gamma is not None and cfg.gamma_fraction is not None:
        raise ConfigError("give either gamma or gamma.fraction, not both", cfg.lines.get("gamma"))
    cfg.metric_spec()


def load_config(path) -> GeoConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text)
