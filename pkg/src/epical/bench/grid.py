"""Scenario grid: generate data, fit every method from shared starts, rank by MAE."""
from __future__ import annotations

import enum
import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .. import __version__
from ..errors import ValidationError
from ..models import ModelKind, ModelSpec
from ..objective import CalibrationProblem
from ..optim import OUT_OF_SCOPE, FitOptions, Method, Status, fit, make_x0
from ..simulate import DEFAULT_HORIZON, HIGH_MARGIN, add_noise, find_peak, integrate

DEFAULT_TRUTH = {"beta": 0.3, "gamma": 0.1, "mu": 0.02, "nu": 0.05}
DEFAULT_METHODS = tuple(m.value for m in Method)
DEFAULT_SEEDS = (0, 1, 2, 3, 4)
SUCCESS = (Status.CONVERGED.value, Status.BUDGET_EXHAUSTED.value, Status.STALLED.value)


class Regime(str, enum.Enum):
    LOW = "low"
    HIGH = "high"


@dataclass(frozen=True)
class Scenario:
    """One (model, regime, noise, subgroups) cell family of the grid.

    ``noise_sigma`` is in people (absolute counts).  ``train_cutoff``
    overrides the regime rule (days strictly before the peak for ``low``,
    ``high_margin`` days later for ``high``).
    """

    name: str
    model: ModelKind
    regime: Regime = Regime.LOW
    noise_sigma: float = 0.0
    subgroups: bool = False
    truth: tuple = ()
    methods: tuple = DEFAULT_METHODS
    seeds: tuple = DEFAULT_SEEDS
    horizon: int = DEFAULT_HORIZON
    population: int = 10_000
    infected: float = 1.0
    high_margin: int = HIGH_MARGIN
    train_cutoff: int | None = None
    max_evaluations: int = 20_000
    options: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d, defaults=None) -> Scenario:
        data = dict(defaults or {})
        data.update(d)
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValidationError(f"unknown scenario keys: {unknown}")
        if "model" not in data:
            raise ValidationError("scenario needs a 'model'")
        model = ModelKind(data["model"])
        regime = Regime(data.get("regime", "low"))
        sigma = float(data.get("noise_sigma", 0.0))
        subgroups = bool(data.get("subgroups", model.grouped))
        name = data.get("name") or "-".join(
            [model.value, regime.value, "noisy" if sigma else "clean"] + (["subgroups"] if subgroups else []))
        kw = {k: data[k] for k in ("horizon", "population", "infected", "high_margin",
                                   "train_cutoff", "max_evaluations") if k in data}
        sc = cls(name, model, regime, sigma, subgroups,
                 tuple(float(v) for v in data.get("truth", ())),
                 tuple(Method.parse(m).value if m not in OUT_OF_SCOPE else m
                       for m in data.get("methods", DEFAULT_METHODS)),
                 tuple(int(s) for s in data.get("seeds", DEFAULT_SEEDS)),
                 options=dict(data.get("options", {})), **kw)
        sc.validate()
        return sc

    def validate(self):
        if self.subgroups != self.model.grouped:
            raise ValidationError(f"{self.name}: subgroups=true requires model 'sir-subgroups' and vice versa")
        for m in self.methods:
            Method.parse(m)   # raises for unknown and out-of-scope names
        if not self.methods or not self.seeds:
            raise ValidationError(f"{self.name}: methods and seeds must be non-empty")
        if len(set(self.methods)) != len(self.methods) or len(set(self.seeds)) != len(self.seeds):
            raise ValidationError(f"{self.name}: duplicate methods or seeds")
        if self.noise_sigma < 0:
            raise ValidationError(f"{self.name}: noise_sigma must be >= 0")
        n = len(self.spec().params)
        if self.truth and len(self.truth) != n:
            raise ValidationError(f"{self.name}: truth needs {n} values")
        FitOptions(max_evaluations=self.max_evaluations, **self.options)

    def spec(self) -> ModelSpec:
        return ModelSpec.default(self.model, self.population, self.infected)

    def truth_vector(self) -> tuple:
        if self.truth:
            return self.truth
        return tuple(DEFAULT_TRUTH[p.name] for p in self.spec().params)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.value
        d["regime"] = self.regime.value
        d["truth"] = list(self.truth_vector())
        d["methods"] = list(self.methods)
        d["seeds"] = list(self.seeds)
        return d


def derive_seed(*parts) -> int:
    """64-bit seed from a hash of ``parts`` (stable across runs and platforms)."""
    blob = json.dumps([str(p) for p in parts]).encode()
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "little")


@dataclass(frozen=True)
class Cell:
    """Data and starting point shared by every method for one (scenario, seed)."""

    problem: CalibrationProblem
    x0: np.ndarray
    opt_seed: int
    peak_day: int
    train_days: int


def build_cell(scenario: Scenario, seed: int, master_seed: int = 0) -> Cell:
    cell_seed = derive_seed(master_seed, scenario.name, seed)
    spec = scenario.spec()
    traj = integrate(spec, scenario.truth_vector(), scenario.horizon)
    split = find_peak(traj, "I", scenario.high_margin)
    if scenario.train_cutoff is not None:
        cutoff = scenario.train_cutoff
    else:
        cutoff = split.low_cutoff if scenario.regime is Regime.LOW else split.high_cutoff
    data = add_noise(traj, scenario.noise_sigma, derive_seed(cell_seed, "noise")).with_cutoff(cutoff)
    problem = CalibrationProblem(spec, data)
    x0 = make_x0(problem, "seeded-uniform", derive_seed(cell_seed, "x0"))
    return Cell(problem, x0, derive_seed(cell_seed, "opt"), split.peak_day, cutoff)


def fit_one(problem, method, x0, options):
    return fit(problem, method, x0, options)


def _run_item(item):
    scenario, method, seed, master_seed = item
    row = {"scenario": scenario.name, "method": method, "seed": seed}
    try:
        cell = build_cell(scenario, seed, master_seed)
        row.update(peak_day=cell.peak_day, train_days=cell.train_days)
        options = FitOptions(max_evaluations=scenario.max_evaluations, seed=cell.opt_seed % (2 ** 63),
                             **scenario.options)
        res = fit_one(cell.problem, method, cell.x0, options)
        row.update(status=res.status.value, params=[float(v) for v in res.params], loss=res.loss,
                   mae=res.mae_full_horizon, evaluations=res.evaluations,
                   iterations=res.iterations, x0=[float(v) for v in cell.x0], error="")
    except Exception as exc:  # one failing fit must not sink the grid
        row.update(status="Error", params=[], loss=math.nan, mae=math.nan, evaluations=0,
                   iterations=0, error=f"{type(exc).__name__}: {exc}")
        row.setdefault("peak_day", -1)
        row.setdefault("train_days", -1)
        row.setdefault("x0", [])
    return row


@dataclass
class BenchmarkReport:
    rows: list
    rankings: dict          # scenario name -> list of per-method summaries, best first
    scenarios: list
    provenance: dict

    def top3(self, scenario_name) -> list:
        return [r["method"] for r in self.rankings[scenario_name] if r["successes"] > 0][:3]

    def failed_scenarios(self) -> list:
        return [s["name"] for s in self.scenarios
                if not any(r["status"] in SUCCESS for r in self.rows if r["scenario"] == s["name"])]

    def to_dict(self) -> dict:
        return {"provenance": self.provenance, "scenarios": self.scenarios,
                "rankings": self.rankings, "rows": self.rows}


def rank_methods(rows) -> list:
    """Order methods by median MAE over successful seeds.

    Ties go to fewer total evaluations, then to the method name.  Methods
    without a single successful fit rank last with ``median_mae = inf``.
    """
    by_method = {}
    for r in rows:
        by_method.setdefault(r["method"], []).append(r)
    out = []
    for method, rs in by_method.items():
        ok = [r for r in rs if r["status"] in SUCCESS and math.isfinite(r["mae"])]
        med = float(np.median([r["mae"] for r in ok])) if ok else math.inf
        out.append({"method": method, "median_mae": med, "successes": len(ok), "attempts": len(rs),
                    "evaluations": int(sum(r["evaluations"] for r in rs))})
    out.sort(key=lambda s: (s["median_mae"], s["evaluations"], s["method"]))
    return out


def _canonical_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def run_grid(scenarios, parallelism: int = 1, master_seed: int = 0) -> BenchmarkReport:
    """Fit every (scenario, method, seed) and rank methods per scenario.

    Work items are independent, so the report does not depend on
    ``parallelism``; rows are sorted by (scenario, method, seed).
    """
    scenarios = [s if isinstance(s, Scenario) else Scenario.from_dict(s) for s in scenarios]
    if not scenarios:
        raise ValidationError("the grid has no scenarios")
    names = [s.name for s in scenarios]
    if len(set(names)) != len(names):
        raise ValidationError(f"scenario names must be unique: {names}")
    for s in scenarios:
        s.validate()
    items = [(s, m, seed, master_seed) for s in scenarios for m in s.methods for seed in s.seeds]
    if parallelism <= 1 or len(items) == 1:
        rows = [_run_item(it) for it in items]
    else:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            rows = list(pool.map(_run_item, items, chunksize=1))
    order = {n: i for i, n in enumerate(names)}
    rows.sort(key=lambda r: (order[r["scenario"]], r["method"], r["seed"]))
    rankings = {s.name: rank_methods([r for r in rows if r["scenario"] == s.name]) for s in scenarios}
    sc_dicts = [s.to_dict() for s in scenarios]
    provenance = {
        "config_hash": _canonical_hash({"master_seed": master_seed, "scenarios": sc_dicts}),
        "version": __version__,
        "master_seed": master_seed,
        "seeds": sorted({seed for s in scenarios for seed in s.seeds}),
    }
    return BenchmarkReport(rows, rankings, sc_dicts, provenance)


def load_grid(path_or_dict):
    """Read a grid config: ``{"seed": int, "defaults": {...}, "scenarios": [...]}``."""
    if isinstance(path_or_dict, dict):
        data = path_or_dict
    else:
        with open(path_or_dict) as fh:
            data = json.load(fh)
    if not isinstance(data, dict) or "scenarios" not in data:
        raise ValidationError("grid config needs a 'scenarios' list")
    unknown = sorted(set(data) - {"seed", "defaults", "scenarios", "$schema", "description"})
    if unknown:
        raise ValidationError(f"unknown grid keys: {unknown}")
    defaults = data.get("defaults", {})
    scenarios = [Scenario.from_dict(s, defaults) for s in data["scenarios"]]
    return scenarios, int(data.get("seed", 0))
