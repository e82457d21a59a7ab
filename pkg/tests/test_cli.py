import json
import os
from pathlib import Path

import pytest

from geotime.cli import EXIT_CONFIG, EXIT_DATA, EXIT_OK, main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
SMALL = ["--h-src", "0.3", "--sensors", "24"]


@pytest.fixture(scope="module")
def sim(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "sim"
    assert main(["simulate", "--config", str(CONFIGS / "disk.cfg"), "--out", str(out)] + SMALL) == EXIT_OK
    return out


def test_simulate_writes_artifacts(sim):
    for name in ("dataset.gtd", "dataset.gtd.truth", "summary.txt", "manifest.json"):
        assert (sim / name).is_file()
    man = json.loads((sim / "manifest.json").read_text())
    assert man["command"] == "simulate" and man["seed"] == 1
    assert man["overrides"] == {"h_src": 0.3, "sensors": 24}
    assert set(man["artifacts"]) == {"dataset.gtd", "dataset.gtd.truth", "summary.txt"}


def test_simulate_byte_identical(sim, tmp_path):
    out = tmp_path / "again"
    assert main(["simulate", "--config", str(CONFIGS / "disk.cfg"), "--out", str(out)] + SMALL) == EXIT_OK
    for name in ("dataset.gtd", "dataset.gtd.truth", "summary.txt"):
        assert (out / name).read_bytes() == (sim / name).read_bytes()


def test_horseshoe_needs_flag(tmp_path, capsys):
    rc = main(["simulate", "--config", str(CONFIGS / "horseshoe.cfg"), "--out", str(tmp_path)])
    assert rc == EXIT_CONFIG
    assert "not strictly convex" in capsys.readouterr().err


def test_horseshoe_degeneracy_warning(tmp_path, capsys):
    cfg = str(CONFIGS / "horseshoe.cfg")
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "s"), "--allow-nonconvex"]) == EXIT_OK
    assert main(["reconstruct", str(tmp_path / "s" / "dataset.gtd"), "--config", cfg,
                 "--out", str(tmp_path / "r")]) == EXIT_OK
    assert "warning: data degeneracy" in capsys.readouterr().out
    assert "data degeneracy" in (tmp_path / "r" / "report.txt").read_text()


def test_missing_config(tmp_path):
    assert main(["simulate", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["simulate", "--config", str(tmp_path / "nope.cfg")]) == EXIT_CONFIG


def test_truncated_dataset(sim, tmp_path, capsys):
    raw = (sim / "dataset.gtd").read_bytes()
    bad = tmp_path / "bad.gtd"
    bad.write_bytes(raw[: len(raw) // 2])
    assert main(["reconstruct", str(bad), "--out", str(tmp_path / "r")]) == EXIT_DATA
    assert "byte offset" in capsys.readouterr().err


def test_blind_reconstruction_matches_sighted(sim, tmp_path):
    ds = str(sim / "dataset.gtd")
    cfg = str(CONFIGS / "disk.cfg")
    assert main(["reconstruct", ds, "--config", cfg, "--out", str(tmp_path / "a"), "--blind"]) == EXIT_OK
    assert main(["reconstruct", ds, "--config", cfg, "--out", str(tmp_path / "b")]) == EXIT_OK
    for name in ("report.txt", "gamma.csv", "sources.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["blind"] is True
    text = "".join((tmp_path / "a" / n).read_text() for n in ("report.txt", "sources.csv"))
    for word in ("truth", "depth", "kind", "position"):
        assert word not in text


def test_verify_run(sim, tmp_path, capsys):
    rdir = tmp_path / "r"
    assert main(["reconstruct", str(sim / "dataset.gtd"), "--h-src", "0.3", "--out", str(rdir)]) == EXIT_OK
    capsys.readouterr()
    assert main(["verify", str(rdir), "--out", str(tmp_path / "v")]) == EXIT_OK
    out = capsys.readouterr().out
    assert "[boundary confusion]" in out and "violations = 0" in out
    assert (tmp_path / "v" / "metric_errors.csv").is_file()


def test_verify_rejects_non_run(tmp_path):
    assert main(["verify", str(tmp_path)]) == EXIT_DATA


def test_cutlocus_euclidean_empty(tmp_path, capsys):
    rc = main(["cutlocus", "--config", str(CONFIGS / "disk.cfg"), "--point", "0.1", "0.2",
               "--directions", "32", "--out", str(tmp_path)])
    assert rc == EXIT_OK
    assert "cut locus empty" in capsys.readouterr().out
    assert (tmp_path / "cutlocus.svg").read_text().startswith("<svg")


def test_cutlocus_needs_point(tmp_path):
    assert main(["cutlocus", "--config", str(CONFIGS / "disk.cfg"), "--out", str(tmp_path)]) == EXIT_CONFIG


@pytest.mark.slow
def test_counterexample(tmp_path, capsys):
    assert main(["counterexample", "--config", str(CONFIGS / "horseshoe.cfg"),
                 "--out", str(tmp_path)]) == EXIT_OK
    assert "collapse reproduced: True" in capsys.readouterr().out
    assert (tmp_path / "collapse.csv").read_text().count("\n") == 17


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert capsys.readouterr().out.startswith("geotime ")


def test_default_out_dir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(["cutlocus", "--config", str(CONFIGS / "disk.cfg"), "--point", "0", "0",
                 "--directions", "16"]) == EXIT_OK
    assert os.path.isfile(tmp_path / "runs" / "disk-cutlocus" / "cutlocus.txt")
