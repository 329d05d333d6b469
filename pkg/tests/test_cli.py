import json
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from epical.cli import main
from epical.simulate import Dataset

ROOT = Path(__file__).resolve().parents[1]
GRID = ROOT / "configs" / "grid-small.json"


@pytest.fixture
def work(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("EPICAL_SEED", raising=False)
    return tmp_path


def _simulate(path, *extra):
    assert main(["simulate", "--model", "sir", "--beta", "0.3", "--gamma", "0.1",
                 "--out", str(path), *extra]) == 0


def test_simulate_csv_structure_and_repeatability(work, capsys):
    _simulate(work / "a.csv")
    _simulate(work / "b.csv")
    assert (work / "a.csv").read_bytes() == (work / "b.csv").read_bytes()
    lines = (work / "a.csv").read_text().splitlines()
    assert lines[0] == "day,S,I,R"
    assert len(lines) == 1 + 176
    assert "peak day of I: 50" in capsys.readouterr().out


def test_simulate_noisy_output_differs(work):
    _simulate(work / "t.csv", "--noise-sigma", "50", "--noisy-out", str(work / "n.csv"), "--seed", "3")
    clean = Dataset.from_csv(work / "t.csv")
    noisy = Dataset.from_csv(work / "n.csv")
    col = clean.observed.index("I")
    differ = np.mean(clean.values[:, col] != noisy.values[:, col])
    assert differ > 0.9


def test_simulate_rejects_missing_rate(work, capsys):
    assert main(["simulate", "--model", "sird", "--beta", "0.3", "--gamma", "0.1"]) == 2
    assert "mu" in capsys.readouterr().err


def test_calibrate_recovers_truth(work):
    _simulate(work / "d.csv")
    assert main(["calibrate", "--data", "d.csv", "--method", "powell", "--x0", "0.5,0.5",
                 "--out", "fit.json", "--plot", "fit.svg"]) == 0
    doc = json.loads((work / "fit.json").read_text())
    np.testing.assert_allclose(doc["params"], [0.3, 0.1], atol=1e-3)
    assert doc["param_names"] == ["beta", "gamma"] and doc["train_days"] == 50
    assert (work / "fit.svg").read_text().startswith("<svg")


def test_calibrate_usage_errors(work, capsys):
    _simulate(work / "d.csv")
    assert main(["calibrate", "--data", "d.csv", "--method", "shgo"]) == 2
    assert "unimplemented by design" in capsys.readouterr().err
    assert main(["calibrate", "--data", "d.csv", "--method", "bogus"]) == 2
    assert "nelder-mead" in capsys.readouterr().err
    assert main(["calibrate", "--data", "d.csv", "--method", "powell", "--train-days", "0"]) == 2
    assert main(["calibrate", "--data", "missing.csv", "--method", "powell"]) == 2
    assert main(["calibrate", "--data", "d.csv"]) == 2


def test_bench_small_grid(work):
    start = time.perf_counter()
    assert main(["bench", "--grid", str(GRID), "--out", "out", "--jobs", "2"]) == 0
    assert time.perf_counter() - start < 60
    for name in ("report.csv", "report.json", "table3.txt", "table3.csv"):
        assert (work / "out" / name).is_file()
    assert len((work / "out/report.csv").read_text().splitlines()) == 1 + 2 * 3 * 2
    assert len(list((work / "out/plots").glob("*.svg"))) == 6
    assert main(["bench", "--grid", str(GRID), "--out", "again", "--no-plots"]) == 0
    for name in ("report.csv", "report.json", "table3.txt", "table3.csv"):
        assert (work / "out" / name).read_bytes() == (work / "again" / name).read_bytes()


def test_bench_empty_grid(work):
    (work / "g.json").write_text(json.dumps({"scenarios": []}))
    assert main(["bench", "--grid", "g.json"]) == 2
    assert main(["bench", "--grid", "nope.json"]) == 2


def test_bench_seed_flag_overrides_grid_seed(work):
    assert main(["bench", "--grid", str(GRID), "--out", "s7", "--seed", "7", "--no-plots"]) == 0
    doc = json.loads((work / "s7/report.json").read_text())
    assert doc["provenance"]["master_seed"] == 7


def test_rl_warm_start_and_repeatability(work):
    _simulate(work / "d.csv")
    assert main(["calibrate", "--data", "d.csv", "--method", "powell", "--x0", "0.5,0.5"]) == 0
    assert main(["rl", "--data", "d.csv", "--warm-start-from", "fit.json", "--threshold", "1e-3",
                 "--steps", "2000", "--out", "warm.json", "--weights", "warm.bin"]) == 0
    warm = json.loads((work / "warm.json").read_text())
    assert warm["best_mae"] <= 1e-3
    assert warm["steps"] < 2000
    runs = []
    for tag in ("a", "b"):
        assert main(["rl", "--data", "d.csv", "--steps", "600", "--rollout", "200",
                     "--episode-steps", "50", "--seed", "5",
                     "--out", f"{tag}.json", "--weights", f"{tag}.bin"]) == 0
        runs.append(((work / f"{tag}.json").read_bytes(), (work / f"{tag}.bin").read_bytes()))
    assert runs[0] == runs[1]


def test_rl_missing_dataset(work):
    assert main(["rl", "--data", "absent.csv"]) == 2


def test_config_file_and_flag_precedence(work):
    (work / "c.json").write_text(json.dumps({"model": "sir", "beta": 0.3, "gamma": 0.2, "days": 30}))
    assert main(["simulate", "--config", "c.json", "--gamma", "0.1", "--out", "x.csv"]) == 0
    ref = work / "ref.csv"
    assert main(["simulate", "--beta", "0.3", "--gamma", "0.1", "--days", "30", "--out", str(ref)]) == 0
    assert (work / "x.csv").read_bytes() == ref.read_bytes()
    (work / "bad.json").write_text(json.dumps({"colour": 1}))
    assert main(["simulate", "--config", "bad.json"]) == 2


def test_env_seed(work, monkeypatch):
    monkeypatch.setenv("EPICAL_SEED", "11")
    _simulate(work / "t.csv", "--noise-sigma", "50", "--noisy-out", str(work / "e.csv"))
    _simulate(work / "t.csv", "--noise-sigma", "50", "--noisy-out", str(work / "f.csv"), "--seed", "11")
    assert (work / "e.csv").read_bytes() == (work / "f.csv").read_bytes()


@pytest.mark.parametrize("command", ["simulate", "calibrate", "bench", "rl"])
def test_help_lists_units(command):
    out = subprocess.run([sys.executable, "-m", "epical.cli", command, "--help"],
                         capture_output=True, text=True, check=True).stdout
    assert "--seed" in out and "--config" in out
    if command in ("simulate", "calibrate", "rl"):
        assert "per day" in out or "people" in out
