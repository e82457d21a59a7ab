"""Shared fixtures: datasets generated once per session from the shipped configs."""

from __future__ import annotations

from pathlib import Path

import pytest

from geotime.config import load_config
from geotime.reconstruct import reconstruct_all
from geotime.traveltime import generate_dataset, read_dataset, write_dataset

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"


class Run:
    """Dataset, truth, reconstruction and geometry for one config."""

    def __init__(self, cfg, ds, truth, path):
        self.cfg = cfg
        self.spec = cfg.metric_spec()
        self.domain = cfg.domain()
        self.ds = ds
        self.truth = truth
        self.path = path
        self._recon = None

    @property
    def opts(self):
        return self.cfg.recon_options()

    @property
    def recon(self):
        if self._recon is None:
            self._recon = reconstruct_all(self.ds, self.opts)
        return self._recon


class RunCache:
    def __init__(self, root):
        self.root = Path(root)
        self._runs = {}

    def get(self, name, h_src=None, sensors=None) -> Run:
        key = (name, h_src, sensors)
        if key not in self._runs:
            cfg = load_config(CONFIGS / f"{name}.cfg").with_overrides(h_src, sensors, None)
            path = self.root / f"{name}_{h_src}_{sensors}.gtd"
            ds, truth = generate_dataset(cfg.metric_spec(), cfg.domain(), cfg.source_plan(),
                                         cfg.sensor_plan(), cfg.oracle_options(1), seed=cfg.seed,
                                         config_text=cfg.text, extra_sources=cfg.extra_sources())
            write_dataset(ds, path, truth)
            ds, truth = read_dataset(path, with_truth=True)
            self._runs[key] = Run(cfg, ds, truth, path)
        return self._runs[key]


@pytest.fixture(scope="session")
def runs(tmp_path_factory):
    return RunCache(tmp_path_factory.mktemp("datasets"))


_CRITERIA: dict = {}


@pytest.fixture
def criterion():
    """Record and print one PASS/FAIL line for an acceptance criterion."""
    def record(number, passed, detail):
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        _CRITERIA[number] = line
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[k])
