import csv
import json

import pytest

from fryumqkd import cli
from fryumqkd.fryum import Segmentation

FAST = ["--set", "rules.epsilonMode=fast", "--quiet"]


def run(tmp_path, *argv):
    return cli.main([*argv, "--out-dir", str(tmp_path)])


def test_bad_config_file(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{ not json")
    assert run(tmp_path, "tiling", "--config", str(bad)) == cli.EXIT_CONFIG
    assert run(tmp_path, "tiling", "--config", str(tmp_path / "missing.json")) == cli.EXIT_CONFIG


@pytest.mark.parametrize("override", ["nonsense.key=1", "rules.bandMultiplier=-1", "source.K=0.5",
                                      "rules.Nrange=[3,2]", "detector.efficiency=2", "justtext"])
def test_invalid_overrides(tmp_path, override):
    assert run(tmp_path, "optimize", "--set", override, "--quiet") == cli.EXIT_CONFIG


def test_unknown_subcommand_and_flag(tmp_path):
    assert cli.main(["paint"]) == cli.EXIT_CONFIG
    assert run(tmp_path, "tiling", "--bogus") == cli.EXIT_CONFIG


def test_empty_sweep_exit_code(tmp_path):
    assert run(tmp_path, "optimize", *FAST, "--set", "rules.Nrange=[8,9]") == cli.EXIT_EMPTY
    with open(tmp_path / "sweep.csv") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 1
    doc = json.loads((tmp_path / "sweep.json").read_text())
    assert doc["emptyN"] == [8, 9]


def test_optimize_single_n(tmp_path):
    assert run(tmp_path, "optimize", *FAST, "--set", "rules.Nrange=[2,2]", "--set", "detector.pitch_um=0.05",
               "--dump-all") == cli.EXIT_OK
    with open(tmp_path / "sweep.csv") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 2 and rows[1][0] == "2"
    for name in ("sweep.json", "best_segmentation.json", "summary.txt", "candidates.json", "best_labels.pgm",
                 "best_labels.csv"):
        assert (tmp_path / name).exists()
    doc = json.loads((tmp_path / "best_segmentation.json").read_text())
    seg = Segmentation.load(tmp_path / "best_segmentation.json")
    assert seg.geometry_hash() == doc["geometryHash"] and doc["seed"] == 0


def test_simulate_round_trips_optimized_segmentation(tmp_path):
    opt = tmp_path / "opt"
    assert run(opt, "optimize", *FAST, "--set", "rules.Nrange=[2,2]") == cli.EXIT_OK
    sim = tmp_path / "sim"
    assert run(sim, "simulate", "--segmentation", str(opt / "best_segmentation.json"),
               "--set", "detector.frames=20000", "--quiet") == cli.EXIT_OK
    rep = json.loads((sim / "report.json").read_text())
    best = json.loads((opt / "best_segmentation.json").read_text())
    assert rep["geometryHash"] == best["geometryHash"]
    for key in ("xx", "xp", "px", "pp"):
        assert (sim / f"error_matrix_{key}.csv").exists()


def test_simulate_rejects_mismatched_dimension(tmp_path):
    opt = tmp_path / "opt"
    assert run(opt, "optimize", *FAST, "--set", "rules.Nrange=[2,2]") == cli.EXIT_OK
    code = run(tmp_path, "simulate", "--segmentation", str(opt / "best_segmentation.json"),
               "--set", "segmentation.A=[1,6,8,21]", "--set", "detector.frames=1000")
    assert code == cli.EXIT_CONFIG


def test_simulate_tiny_run_warns(tmp_path, capsys):
    assert run(tmp_path, "simulate", "--set", "detector.frames=10") == cli.EXIT_OK
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["diagnostics"]["wideUncertainty"] is True
    assert "wide uncertainty" in capsys.readouterr().out


def test_dark_counts_change_the_report(tmp_path):
    quiet, noisy = tmp_path / "q", tmp_path / "n"
    common = ["--set", "detector.frames=50000", "--set", "segmentation.A=[1,6]"]
    assert run(quiet, "simulate", *common) == cli.EXIT_OK
    assert run(noisy, "simulate", *common, "--set", "detector.darkRate=1") == cli.EXIT_OK
    q = json.loads((quiet / "report.json").read_text())
    n = json.loads((noisy / "report.json").read_text())
    assert n["siftedKey"]["ditErrorRate"] > q["siftedKey"]["ditErrorRate"]
    assert n["diagnostics"]["qderStderr"]["x"] > q["diagnostics"]["qderStderr"]["x"]


def test_tiling_outputs(tmp_path):
    assert run(tmp_path, "tiling", "--n-max", "12") == cli.EXIT_OK
    with open(tmp_path / "packing.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 11
    doc = json.loads((tmp_path / "tiling.json").read_text())
    assert doc["latticeCounts"]["8"]["containment"] > doc["latticeCounts"]["8"]["shells"]
    assert run(tmp_path, "tiling", "--n-max", "1") == cli.EXIT_CONFIG


def test_border_error_bundled_and_custom(tmp_path):
    assert run(tmp_path, "border-error") == cli.EXIT_OK
    doc = json.loads((tmp_path / "border_error.json").read_text())
    assert doc["cases"]["epsilon"] == pytest.approx(0.16, abs=0.005)
    assert doc["borderDiscard"]["Rmod"] == pytest.approx(0.8889, abs=1e-4)
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    assert run(tmp_path, "border-error", str(empty)) == cli.EXIT_CONFIG
    assert run(tmp_path, "border-error", str(tmp_path / "nope.csv")) == cli.EXIT_CONFIG


def test_sample(tmp_path):
    assert run(tmp_path, "sample", "--n", "2000", "--set", "seed=5") == cli.EXIT_OK
    with open(tmp_path / "samples.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["aliceX", "aliceY", "bobX", "bobY"] and len(rows) == 2001
    doc = json.loads((tmp_path / "sample.json").read_text())
    assert doc["seed"] == 5 and doc["conditionalWidthEstimate"] == pytest.approx(doc["alice"]["sigmaCond"], rel=0.1)


def test_config_file_and_override_precedence(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"seed": 1, "sample": {"n": 50}}))
    assert run(tmp_path, "sample", "--config", str(cfg), "--set", "seed=2") == cli.EXIT_OK
    doc = json.loads((tmp_path / "sample.json").read_text())
    assert doc["seed"] == 2 and doc["n"] == 50


def test_version(capsys):
    assert cli.main(["--version"]) == cli.EXIT_OK
