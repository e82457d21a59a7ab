from pathlib import Path

import numpy as np
import pytest

from geotime.config import HEADER, load_config, parse_config
from geotime.errors import ConfigError
from geotime.manifold import check_strict_convexity

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
CONVEX = ["disk", "disk_rotated", "bump_mild", "bump_far", "cap", "lens"]


@pytest.mark.parametrize("name", CONVEX + ["horseshoe"])
def test_shipped_configs_parse(name):
    cfg = load_config(CONFIGS / f"{name}.cfg")
    assert cfg.name == name
    dom = cfg.domain()
    assert dom.gamma_arc[0] < dom.gamma_arc[1]
    conv = check_strict_convexity(dom, cfg.metric_spec())
    assert conv.passed == (name != "horseshoe")


def test_digest_stable_and_sensitive():
    a = parse_config(f"{HEADER}\nname = a\nh_src = 0.1\n")
    b = parse_config(f"{HEADER}\nname = a\nh_src = 0.1\n")
    c = parse_config(f"{HEADER}\nname = a\nh_src = 0.2\n")
    assert a.digest == b.digest != c.digest


def test_header_required():
    with pytest.raises(ConfigError, match="line 1"):
        parse_config("name = x\n")


@pytest.mark.parametrize("body, line, match", [
    ("name = x\nbogus = 1\n", 3, "unknown key"),
    ("sensors = 4\n", 2, "at least 8"),
    ("name = x\nname = y\n", 3, "duplicate"),
    ("h_src = -1\n", 2, "positive"),
    ("sources.boundary = no\n", 2, "Gamma"),
    ("gamma.fraction = 0.6 0.2\n", 2, "gamma.fraction"),
    ("metric = riemann\n", 2, "unknown metric"),
    ("boundary = triangle 1\n", 2, "unknown boundary"),
    ("oracle.method = magic\n", 2, "oracle.method"),
    ("sensors = many\n", 2, "integer"),
    ("this line has no equals\n", 2, "cannot parse"),
])
def test_errors_carry_line_numbers(body, line, match):
    with pytest.raises(ConfigError, match=match) as exc:
        parse_config(f"{HEADER}\n{body}")
    assert exc.value.line == line
    assert str(exc.value).startswith(f"line {line}:")


def test_involute_needs_horseshoe():
    with pytest.raises(ConfigError, match="horseshoe"):
        parse_config(f"{HEADER}\nsources.involute = 0.8 1.35 16\n")


def test_overrides():
    cfg = load_config(CONFIGS / "disk.cfg").with_overrides(0.05, 32, 9)
    assert cfg.h_src == 0.05 and cfg.sensors == 32 and cfg.seed == 9
    assert cfg.sensor_plan().m == 32
    with pytest.raises(ConfigError):
        cfg.with_overrides(sensors=3)


def test_plans_and_options():
    cfg = load_config(CONFIGS / "horseshoe.cfg")
    assert cfg.oracle_options().method == "eikonal"
    ex = cfg.extra_sources()
    assert ex.shape == (16, 2)
    assert np.all(cfg.domain().depth(ex) > 0)
    ro = load_config(CONFIGS / "disk.cfg").recon_options()
    assert ro.h_src == pytest.approx(0.1) and isinstance(ro.n_dirs, int)


def test_custom_spd_config():
    text = (f"{HEADER}\nmetric = custom_spd\nchart = -2 2 -2 2\nboundary = circle 1\n"
            "spd g11 0 0 1\nspd g22 0 0 2\nspd g22 2 0 0.5\n")
    spec = parse_config(text).metric_spec()
    g = np.array([[1.0, 0.0], [0.0, 2.5]])
    from geotime.manifold import metric_at
    assert np.allclose(metric_at(spec, (1.0, 0.0)), g)


def test_fourier_boundary_config():
    text = (f"{HEADER}\nboundary = fourier\nfourier 1 1.0 0 0 0.8\nfourier 3 0.02 0 0 0\n"
            "gamma.fraction = 0 0.4\n")
    dom = parse_config(text).domain()
    assert dom.is_simple()


def test_missing_file():
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(CONFIGS / "does_not_exist.cfg")
