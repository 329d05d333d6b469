"""Benchmark grid over models, data regimes, noise and methods."""
from .grid import (DEFAULT_TRUTH, SUCCESS, BenchmarkReport, Cell, Regime, Scenario, build_cell,
                   derive_seed, fit_one, load_grid, rank_methods, run_grid)
from .report import (TABLE_COLUMNS, render_fit_plot, render_table, report_csv, report_json,
                     render_series_plot, table_csv, table_text, write_report)

__all__ = [
    "Scenario", "Regime", "Cell", "BenchmarkReport", "DEFAULT_TRUTH", "SUCCESS",
    "build_cell", "derive_seed", "fit_one", "load_grid", "rank_methods", "run_grid",
    "TABLE_COLUMNS", "render_table", "table_text", "table_csv", "report_csv", "report_json",
    "render_fit_plot", "render_series_plot", "write_report",
]
