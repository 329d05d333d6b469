"""Report rendering: method-selection table, per-fit SVG plots, CSV/JSON files."""
from __future__ import annotations

import csv
import io
import json
import math
import os
from xml.sax.saxutils import escape

import numpy as np

from ..optim import Method
from .grid import SUCCESS, Scenario, build_cell

TABLE_COLUMNS = ("Model Complexity", "Amount of Data for training", "Presence of Noise",
                 "Population subgroups considered?", "Top 3 calibration methods")
TABLE_NOTE = ("Trust-region reflective handles box bounds only; it stands in for "
              "constrained trust-region minimization.")
CSV_COLUMNS = ("scenario", "method", "seed", "status", "mae", "loss", "evaluations", "iterations",
               "peak_day", "train_days", "params", "x0", "error")

_MODEL_LABEL = {"sir": "SIR", "sird": "SIRD", "sirvd": "SIRVD", "sir-subgroups": "SIR"}


def _fmt(v) -> str:
    if isinstance(v, float):
        return "%.17g" % v
    if isinstance(v, (list, tuple)):
        return ";".join(_fmt(float(x)) for x in v)
    return str(v)


def display_name(method: str) -> str:
    return Method.parse(method).display


def render_table(report) -> list:
    """One row per scenario with up to three best methods by display name.

    A scenario with fewer than three successful methods gets a trailing
    ``(only k of 3)`` marker.
    """
    rows = []
    for sc in report.scenarios:
        top = [display_name(m) for m in report.top3(sc["name"])]
        cell = ", ".join(top) if top else "none"
        if len(top) < 3:
            cell += f" (only {len(top)} of 3)"
        rows.append({
            TABLE_COLUMNS[0]: _MODEL_LABEL[sc["model"]],
            TABLE_COLUMNS[1]: sc["regime"].capitalize(),
            TABLE_COLUMNS[2]: "Yes" if sc["noise_sigma"] > 0 else "No",
            TABLE_COLUMNS[3]: "Yes" if sc["subgroups"] else "No",
            TABLE_COLUMNS[4]: cell,
        })
    return rows


def table_text(rows) -> str:
    widths = [max([len(c)] + [len(r[c]) for r in rows]) for c in TABLE_COLUMNS]
    line = lambda cells: " | ".join(s.ljust(w) for s, w in zip(cells, widths)).rstrip()
    out = [line(TABLE_COLUMNS), "-+-".join("-" * w for w in widths)]
    out += [line([r[c] for c in TABLE_COLUMNS]) for r in rows]
    if any("Trust-region reflective" in r[TABLE_COLUMNS[4]] for r in rows):
        out += ["", "Note: " + TABLE_NOTE]
    return "\n".join(out) + "\n"


def table_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=TABLE_COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def report_csv(report) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in report.rows:
        w.writerow([_fmt(r[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def report_json(report) -> str:
    return json.dumps(_jsonable(report.to_dict()), indent=2, sort_keys=True) + "\n"


# -- SVG ------------------------------------------------------------------------
WIDTH, HEIGHT = 640, 400
LEFT, RIGHT, TOP, BOTTOM = 64, 16, 40, 48
PLOT_W = WIDTH - LEFT - RIGHT
PLOT_H = HEIGHT - TOP - BOTTOM


def _nice_max(v):
    if v <= 0 or not math.isfinite(v):
        return 1.0
    mag = 10 ** math.floor(math.log10(v))
    for m in (1, 2, 2.5, 5, 10):
        if m * mag >= v:
            return m * mag
    return 10 * mag


def render_fit_plot(problem, fit, path, title=None) -> str:
    """Write an SVG of observed infections ('+'), the fitted curve and the cutoff.

    The x axis maps day ``d`` to ``LEFT + d / horizon * PLOT_W``; the root
    element carries ``data-left``, ``data-plot-width`` and ``data-horizon`` so
    the transform can be recovered from the file.
    """
    observed = np.asarray(problem.eval_observed, dtype=float)
    pred = problem.predict(fit.params)
    pred = np.full_like(observed, np.nan) if pred is None else np.asarray(pred, dtype=float)
    mae = problem.mae(fit.params)
    horizon = len(observed) - 1
    ymax = _nice_max(np.nanmax(np.concatenate([observed, pred[np.isfinite(pred)], [0.0]])))

    def px(day):
        return LEFT + day / horizon * PLOT_W

    def py(v):
        return TOP + (1.0 - v / ymax) * PLOT_H

    label = title or display_name(fit.method if isinstance(fit.method, str) else fit.method.value)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" data-left="{LEFT}" data-plot-width="{PLOT_W}" '
        f'data-horizon="{horizon}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.1f}" y="24" text-anchor="middle" font-family="sans-serif" '
        f'font-size="15">{escape(label)}: MAE={mae:.4f}</text>',
        f'<g stroke="black" stroke-width="1"><line x1="{LEFT}" y1="{TOP + PLOT_H}" '
        f'x2="{LEFT + PLOT_W}" y2="{TOP + PLOT_H}"/><line x1="{LEFT}" y1="{TOP}" '
        f'x2="{LEFT}" y2="{TOP + PLOT_H}"/></g>',
    ]
    ticks = ['<g font-family="sans-serif" font-size="11">']
    for i in range(6):
        d = horizon * i / 5
        ticks.append(f'<text x="{px(d):.3f}" y="{TOP + PLOT_H + 16}" text-anchor="middle">{d:g}</text>')
        v = ymax * i / 5
        ticks.append(f'<text x="{LEFT - 6}" y="{py(v) + 4:.3f}" text-anchor="end">{v:g}</text>')
    ticks.append(f'<text x="{LEFT + PLOT_W / 2:.1f}" y="{HEIGHT - 8}" text-anchor="middle">day</text>')
    ticks.append("</g>")
    parts += ticks
    marks = " ".join(f"M{px(d) - 3:.3f} {py(v):.3f}h6M{px(d):.3f} {py(v) - 3:.3f}v6"
                     for d, v in enumerate(observed) if math.isfinite(v))
    parts.append(f'<path class="observed" d="{marks}" stroke="black" stroke-width="1" fill="none"/>')
    pts = " ".join(f"{px(d):.3f},{py(v):.3f}" for d, v in enumerate(pred) if math.isfinite(v))
    parts.append(f'<polyline class="prediction" points="{pts}" stroke="#1f77b4" '
                 f'stroke-width="2" fill="none"/>')
    cx = px(problem.train_days)
    parts.append(f'<line class="cutoff" x1="{cx:.3f}" y1="{TOP}" x2="{cx:.3f}" y2="{TOP + PLOT_H}" '
                 f'stroke="black" stroke-width="1" stroke-dasharray="2,3"/>')
    parts.append("</svg>")
    text = "\n".join(parts) + "\n"
    with open(path, "w") as fh:
        fh.write(text)
    return str(path)


class _Fit:
    def __init__(self, method, params):
        self.method = method
        self.params = np.asarray(params, dtype=float)


def _best_rows(report):
    best = {}
    for r in report.rows:
        if r["status"] not in SUCCESS or not math.isfinite(r["mae"]):
            continue
        key = (r["scenario"], r["method"])
        if key not in best or (r["mae"], r["seed"]) < (best[key]["mae"], best[key]["seed"]):
            best[key] = r
    return [best[k] for k in sorted(best)]


def write_report(report, outdir, plots: bool = True) -> list:
    """Write report.csv, report.json, table3.txt, table3.csv and plots/.

    Plots show the best seed of each (scenario, method).  Returns the
    written paths.
    """
    os.makedirs(outdir, exist_ok=True)
    rows = render_table(report)
    files = {"report.csv": report_csv(report), "report.json": report_json(report),
             "table3.txt": table_text(rows), "table3.csv": table_csv(rows)}
    written = []
    for name, text in files.items():
        p = os.path.join(outdir, name)
        with open(p, "w", newline="") as fh:
            fh.write(text)
        written.append(p)
    if plots:
        pdir = os.path.join(outdir, "plots")
        os.makedirs(pdir, exist_ok=True)
        scenarios = {s["name"]: Scenario.from_dict(s) for s in report.scenarios}
        master = report.provenance["master_seed"]
        for r in _best_rows(report):
            cell = build_cell(scenarios[r["scenario"]], r["seed"], master)
            p = os.path.join(pdir, f"{r['scenario']}__{r['method']}.svg")
            written.append(render_fit_plot(cell.problem, _Fit(r["method"], r["params"]), p))
    return written


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#7f7f7f")


def render_series_plot(series: dict, path, title: str) -> str:
    """Line plot of named daily series (one polyline each) with a legend."""
    horizon = max(len(v) for v in series.values()) - 1
    ymax = _nice_max(max(float(np.max(v)) for v in series.values()))

    def px(day):
        return LEFT + day / horizon * PLOT_W

    def py(v):
        return TOP + (1.0 - v / ymax) * PLOT_H

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.1f}" y="24" text-anchor="middle" font-family="sans-serif" '
        f'font-size="15">{escape(title)}</text>',
        f'<g stroke="black" stroke-width="1"><line x1="{LEFT}" y1="{TOP + PLOT_H}" '
        f'x2="{LEFT + PLOT_W}" y2="{TOP + PLOT_H}"/><line x1="{LEFT}" y1="{TOP}" '
        f'x2="{LEFT}" y2="{TOP + PLOT_H}"/></g>',
        '<g font-family="sans-serif" font-size="11">',
    ]
    for i in range(6):
        parts.append(f'<text x="{px(horizon * i / 5):.3f}" y="{TOP + PLOT_H + 16}" '
                     f'text-anchor="middle">{horizon * i / 5:g}</text>')
        parts.append(f'<text x="{LEFT - 6}" y="{py(ymax * i / 5) + 4:.3f}" '
                     f'text-anchor="end">{ymax * i / 5:g}</text>')
    parts.append("</g>")
    for k, (name, values) in enumerate(series.items()):
        color = _PALETTE[k % len(_PALETTE)]
        pts = " ".join(f"{px(d):.3f},{py(v):.3f}" for d, v in enumerate(values))
        parts.append(f'<polyline class="series" data-name="{escape(name)}" points="{pts}" '
                     f'stroke="{color}" stroke-width="2" fill="none"/>')
        parts.append(f'<text x="{LEFT + PLOT_W - 40}" y="{TOP + 14 + 14 * k}" fill="{color}" '
                     f'font-family="sans-serif" font-size="12">{escape(name)}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
    return str(path)
