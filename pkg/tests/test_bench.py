import json
import math
import xml.etree.ElementTree as ET
from pathlib import Path

import jsonschema
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import epical.bench.grid as grid_mod
from conftest import make_problem
from epical.bench import (BenchmarkReport, Scenario, build_cell, load_grid, rank_methods,
                          render_fit_plot, render_table, report_csv, report_json, run_grid,
                          table_csv, table_text, write_report)
from epical.bench.report import LEFT, PLOT_W
from epical.errors import UnimplementedByDesign, ValidationError
from epical.optim import FitOptions, fit

ROOT = Path(__file__).resolve().parents[1]
SVG = "{http://www.w3.org/2000/svg}"


def _sc(**kw):
    base = {"model": "sir", "methods": ["nelder-mead"], "seeds": [0]}
    base.update(kw)
    return Scenario.from_dict(base)


def test_single_cell_equals_direct_fit():
    sc = _sc(methods=["powell"])
    report = run_grid([sc], 1, master_seed=9)
    cell = build_cell(sc, 0, 9)
    direct = fit(cell.problem, "powell", cell.x0, FitOptions(seed=cell.opt_seed % 2 ** 63))
    assert abs(report.rows[0]["mae"] - direct.mae_full_horizon) <= 1e-12
    assert report.rows[0]["params"] == direct.params.tolist()


def test_parallelism_does_not_change_the_report():
    scenarios = [_sc(name="a", methods=["nelder-mead", "powell", "cg"], seeds=[0, 1]),
                 _sc(name="b", model="sird", regime="high", noise_sigma=100.0,
                     methods=["nelder-mead", "levenberg-marquardt", "trf"], seeds=[0, 1])]
    one = run_grid(scenarios, 1)
    eight = run_grid(scenarios, 8)
    assert len(one.rows) == 12
    assert report_csv(one) == report_csv(eight)
    assert report_json(one) == report_json(eight)


def test_cell_seeds_are_shared_across_methods_and_differ_across_seeds():
    sc = _sc(noise_sigma=50.0, seeds=[0, 1])
    a, b = build_cell(sc, 0), build_cell(sc, 1)
    np.testing.assert_array_equal(build_cell(sc, 0).x0, a.x0)
    assert not np.array_equal(a.x0, b.x0)
    assert not np.array_equal(a.problem.dataset.values, b.problem.dataset.values)


def test_regime_cutoffs():
    low = build_cell(_sc(), 0)
    high = build_cell(_sc(regime="high"), 0)
    assert low.train_days == low.peak_day == 50
    assert high.train_days == 90
    assert build_cell(_sc(train_cutoff=58), 0).train_days == 58


def _row(method, seed, mae, evals=10, status="Converged"):
    return {"scenario": "s", "method": method, "seed": seed, "mae": mae, "evaluations": evals,
            "status": status}


@given(st.lists(st.tuples(st.sampled_from(["a", "b", "c", "d"]), st.floats(0, 100),
                          st.integers(1, 100), st.sampled_from(["Converged", "PenaltyRegion", "Error"])),
                min_size=1, max_size=20))
def test_ranking_properties(entries):
    rows = [_row(m, i, mae, ev, status) for i, (m, mae, ev, status) in enumerate(entries)]
    ranked = rank_methods(rows)
    assert sorted(r["method"] for r in ranked) == sorted({m for m, *_ in entries})
    meds = [r["median_mae"] for r in ranked]
    assert meds == sorted(meds)


def test_ranking_tie_breaks():
    rows = [_row("powell", 0, 1.0, 50), _row("cg", 0, 1.0, 50), _row("bfgs", 0, 1.0, 20),
            _row("trf", 0, math.nan, 5, "Error")]
    assert [r["method"] for r in rank_methods(rows)] == ["bfgs", "cg", "powell", "trf"]


def _report(ranking, model="sir", regime="low", sigma=0.0):
    sc = Scenario.from_dict({"name": "s", "model": model, "regime": regime, "noise_sigma": sigma,
                             "methods": [r[0] for r in ranking]}).to_dict()
    rows = [_row(m, 0, mae) for m, mae in ranking]
    return BenchmarkReport(rows, {"s": rank_methods(rows)}, [sc], {"master_seed": 0})


def test_table_row_from_quoted_ranking():
    rows = render_table(_report([("nelder-mead", 0.1), ("powell", 0.2),
                                 ("levenberg-marquardt", 0.3), ("cg", 0.4)]))
    assert len(rows) == 1
    assert rows[0]["Top 3 calibration methods"] == "Nelder-Mead, Powell, Least-squares"
    assert rows[0]["Model Complexity"] == "SIR"
    assert rows[0]["Amount of Data for training"] == "Low"
    assert rows[0]["Presence of Noise"] == "No"
    assert rows[0]["Population subgroups considered?"] == "No"


def test_table_shortfall_marker_and_renderings():
    rows = render_table(_report([("powell", 0.2), ("trf", 0.1)], regime="high", sigma=5.0))
    cell = rows[0]["Top 3 calibration methods"]
    assert cell == "Trust-region reflective, Powell (only 2 of 3)"
    text = table_text(rows)
    assert "Note:" in text and "box bounds" in text
    assert table_csv(rows).splitlines()[0].startswith("Model Complexity,")


def test_scenario_validation():
    with pytest.raises(ValidationError):
        Scenario.from_dict({"model": "sir", "subgroups": True})
    assert Scenario.from_dict({"model": "sir-subgroups"}).subgroups
    with pytest.raises(UnimplementedByDesign):
        Scenario.from_dict({"model": "sir", "methods": ["shgo"]})
    with pytest.raises(ValidationError):
        Scenario.from_dict({"model": "sir", "colour": "red"})
    with pytest.raises(ValidationError):
        Scenario.from_dict({"model": "sir", "truth": [0.3]})
    with pytest.raises(ValidationError):
        run_grid([], 1)


def test_failure_isolation(monkeypatch):
    sc = _sc(methods=["nelder-mead", "powell"], seeds=[0, 1])
    clean = run_grid([sc], 1)
    real = grid_mod.fit_one

    def flaky(problem, method, x0, options):
        if method == "powell":
            raise RuntimeError("injected")
        return real(problem, method, x0, options)

    monkeypatch.setattr(grid_mod, "fit_one", flaky)
    broken = run_grid([sc], 1)
    for a, b in zip(clean.rows, broken.rows):
        if a["method"] == "powell":
            assert b["status"] == "Error" and "injected" in b["error"]
        else:
            assert a == b
    assert broken.top3(sc.name) == ["nelder-mead"]
    assert broken.failed_scenarios() == []


def test_failed_scenario_detection(monkeypatch):
    monkeypatch.setattr(grid_mod, "fit_one", lambda *a: (_ for _ in ()).throw(RuntimeError("x")))
    report = run_grid([_sc()], 1)
    assert report.failed_scenarios() == [report.scenarios[0]["name"]]
    assert "none (only 0 of 3)" in table_text(render_table(report))


def _parse(path):
    root = ET.parse(path).getroot()
    return root, root.findall(f"{SVG}polyline")


def test_fit_plot_structure_and_perfect_fit(tmp_path):
    p = make_problem("sir")
    res = fit(p, "levenberg-marquardt", [0.3, 0.1])
    out = render_fit_plot(p, res, tmp_path / "fit.svg")
    root, lines = _parse(out)
    assert len(lines) == 1 and lines[0].get("class") == "prediction"
    title = root.find(f"{SVG}text").text
    assert title.endswith("MAE=0.0000")
    pts = [tuple(map(float, s.split(","))) for s in lines[0].get("points").split()]
    marks = root.find(f"{SVG}path[@class='observed']").get("d")
    # each mark is "M x-3 y h6 M x y-3 v6": recover its centre
    centres = [(float(a) + 3, float(b)) for a, b in
               (seg.split()[:2] for seg in marks.replace("h6", "").split("M")[1::2])]
    width = float(lines[0].get("stroke-width"))
    assert len(centres) == len(pts) == 176
    for (x, y), (cx, cy) in zip(pts, centres):
        assert abs(x - cx) <= 1e-3 and abs(y - cy) <= width / 2


def test_fit_plot_cutoff_position(tmp_path):
    p = make_problem("sir")
    from epical.objective import CalibrationProblem
    q = CalibrationProblem(p.spec, p.dataset.with_cutoff(58))
    res = fit(q, "powell", [0.3, 0.1])
    root, _ = _parse(render_fit_plot(q, res, tmp_path / "c.svg"))
    line = root.find(f"{SVG}line[@class='cutoff']")
    assert line.get("stroke-dasharray")
    left = float(root.get("data-left"))
    width = float(root.get("data-plot-width"))
    horizon = float(root.get("data-horizon"))
    x = float(line.get("x1"))
    assert (x - left) / width * horizon == pytest.approx(58, abs=1e-3)
    assert left == LEFT and width == PLOT_W


def test_fit_plot_unwritable_path(tmp_path):
    p = make_problem("sir")
    res = fit(p, "powell", [0.3, 0.1])
    with pytest.raises(OSError):
        render_fit_plot(p, res, tmp_path / "missing-dir" / "x.svg")


def test_write_report_files(tmp_path):
    report = run_grid([_sc(methods=["nelder-mead", "powell"], seeds=[0, 1])], 1)
    written = write_report(report, tmp_path)
    names = sorted(Path(w).name for w in written)
    assert {"report.csv", "report.json", "table3.txt", "table3.csv"} <= set(names)
    assert len(list((tmp_path / "plots").glob("*.svg"))) == 2
    doc = json.loads((tmp_path / "report.json").read_text())
    assert doc["provenance"]["seeds"] == [0, 1]
    assert len(doc["provenance"]["config_hash"]) == 64
    csv_rows = (tmp_path / "report.csv").read_text().splitlines()
    assert len(csv_rows) == 1 + 2 * 2


def test_shipped_grid_matches_schema():
    schema = json.loads((ROOT / "src/epical/schemas/grid.schema.json").read_text())
    doc = json.loads((ROOT / "configs/grid-small.json").read_text())
    jsonschema.validate(doc, schema)
    scenarios, seed = load_grid(ROOT / "configs/grid-small.json")
    assert len(scenarios) == 2 and seed == 0
    assert all(len(s.methods) == 3 and len(s.seeds) == 2 for s in scenarios)
    with pytest.raises(ValidationError):
        load_grid({"scenarios": [], "extra": 1})
