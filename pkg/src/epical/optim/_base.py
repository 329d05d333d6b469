"""Registry, options, results and evaluation bookkeeping for the optimizers."""
from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..errors import UnimplementedByDesign, ValidationError
from ..objective import PENALTY


class Method(str, enum.Enum):
    NELDER_MEAD = "nelder-mead"
    POWELL = "powell"
    CG = "cg"
    BFGS = "bfgs"
    LBFGSB = "l-bfgs-b"
    LEVENBERG_MARQUARDT = "levenberg-marquardt"
    TRF = "trf"
    DIFFERENTIAL_EVOLUTION = "differential-evolution"
    BASIN_HOPPING = "basin-hopping"
    DUAL_ANNEALING = "dual-annealing"
    BRUTE_FORCE = "brute-force"

    @classmethod
    def parse(cls, name) -> Method:
        if isinstance(name, Method):
            return name
        key = str(name).strip().lower().replace("_", "-")
        key = _ALIASES.get(key, key)
        if key in OUT_OF_SCOPE:
            raise UnimplementedByDesign(f"method {key!r} is unimplemented by design: {OUT_OF_SCOPE[key]}")
        try:
            return cls(key)
        except ValueError:
            raise ValidationError(
                f"unknown method {name!r}; available: {', '.join(m.value for m in cls)}; "
                f"unimplemented by design: {', '.join(OUT_OF_SCOPE)}") from None

    @property
    def display(self) -> str:
        return _DISPLAY[self]


LOCAL_METHODS = (Method.NELDER_MEAD, Method.POWELL, Method.CG, Method.BFGS, Method.LBFGSB)
LSQ_METHODS = (Method.LEVENBERG_MARQUARDT, Method.TRF)
GLOBAL_METHODS = (Method.DIFFERENTIAL_EVOLUTION, Method.BASIN_HOPPING,
                  Method.DUAL_ANNEALING, Method.BRUTE_FORCE)

_DISPLAY = {
    Method.NELDER_MEAD: "Nelder-Mead",
    Method.POWELL: "Powell",
    Method.CG: "CG",
    Method.BFGS: "BFGS",
    Method.LBFGSB: "L-BFGS-B",
    Method.LEVENBERG_MARQUARDT: "Least-squares",
    Method.TRF: "Trust-region reflective",
    Method.DIFFERENTIAL_EVOLUTION: "Differential Evolution",
    Method.BASIN_HOPPING: "Basinhopping",
    Method.DUAL_ANNEALING: "Dual Annealing",
    Method.BRUTE_FORCE: "Brute force",
}
_ALIASES = {
    "nm": "nelder-mead", "neldermead": "nelder-mead", "lbfgsb": "l-bfgs-b",
    "lm": "levenberg-marquardt", "leastsq": "levenberg-marquardt",
    "least-squares": "levenberg-marquardt", "trust-region-reflective": "trf",
    "de": "differential-evolution", "basinhopping": "basin-hopping",
    "brute": "brute-force", "truncated-newton": "tnc",
}
OUT_OF_SCOPE = {
    "amp": "adaptive memory programming is outside the implemented method set",
    "shgo": "simplicial homology global optimization is outside the implemented method set",
    "slsqp": "sequential least squares programming is outside the implemented method set",
    "tnc": "truncated Newton is outside the implemented method set",
    "trust-constr": "general constrained trust-region is not implemented; "
                    "'trf' (bounded trust-region reflective) covers box-bounded problems",
}


class Status(str, enum.Enum):
    CONVERGED = "Converged"
    BUDGET_EXHAUSTED = "BudgetExhausted"
    STALLED = "Stalled"
    PENALTY_REGION = "PenaltyRegion"


@dataclass(frozen=True)
class FitOptions:
    """Evaluation budget, tolerances, seed and per-method knobs.

    Defaults follow common literature values; every knob can be overridden.
    """

    max_evaluations: int = 20_000
    tolerance: float = 1e-10
    seed: int = 0
    gtol: float = 1e-8
    simplex_scale: float = 0.1      # initial simplex edge, fraction of bound width
    nm_restarts: int = 2
    memory: int = 10                # L-BFGS-B history
    lm_lambda0: float = 1e-3
    population_factor: int = 15     # DE population = factor * dim
    de_mutation: float = 0.7
    de_crossover: float = 0.9
    hops: int = 100
    step_scale: float = 0.1         # basin-hopping hop sd, fraction of bound width
    temperature: float = 1.0        # basin-hopping Metropolis temperature
    da_initial_temp: float = 5230.0
    da_restart_ratio: float = 2e-5
    da_visit: float = 2.62
    da_accept: float = -5.0
    da_maxiter: int = 1000
    grid_points: int = 21
    local_max_evaluations: int = 2_000

    def __post_init__(self):
        if self.max_evaluations < 10:
            raise ValidationError("max_evaluations must be >= 10")
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in ("seed", "da_accept", "nm_restarts"):
                continue
            if not v > 0:
                raise ValidationError(f"option {f.name} must be positive, got {v}")
        if self.nm_restarts < 0:
            raise ValidationError("nm_restarts must be >= 0")
        if not 0 < self.de_crossover <= 1:
            raise ValidationError("de_crossover must lie in (0, 1]")
        if not 1 < self.da_visit <= 3:
            raise ValidationError("da_visit must lie in (1, 3]")

    def replace(self, **kw) -> FitOptions:
        d = asdict(self)
        d.update(kw)
        return FitOptions(**d)


@dataclass
class FitResult:
    method: str
    params: np.ndarray
    loss: float
    mae_full_horizon: float
    evaluations: int
    iterations: int
    status: Status
    message: str = ""
    trace: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "params": [float(v) for v in self.params],
            "loss": self.loss,
            "mae_full_horizon": self.mae_full_horizon,
            "evaluations": self.evaluations,
            "iterations": self.iterations,
            "status": self.status.value,
            "message": self.message,
            "trace": [float(v) for v in self.trace],
            "info": _jsonable(self.info),
        }

    @classmethod
    def from_dict(cls, d) -> FitResult:
        return cls(d["method"], np.asarray(d["params"], dtype=float), d["loss"],
                   d["mae_full_horizon"], d["evaluations"], d["iterations"],
                   Status(d["status"]), d.get("message", ""), d.get("trace", []),
                   d.get("info", {}))


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, float)):
        return float(v)
    if isinstance(v, (np.integer, int)) and not isinstance(v, bool):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


class BudgetSpent(Exception):
    """Raised by :class:`Tracker` when the evaluation budget is used up."""


class Tracker:
    """Counts evaluations, enforces the budget and remembers the best point.

    Every evaluation goes through here; the best point is always the clipped
    (feasible) location, scored by the unpenalized loss.
    """

    def __init__(self, problem, max_evaluations):
        self.problem = problem
        self.max = int(max_evaluations)
        self.n = 0
        self.best_x = None
        self.best_f = math.inf
        self.trace = []
        self.lower = np.asarray(problem.lower, dtype=np.float64)
        self.upper = np.asarray(problem.upper, dtype=np.float64)
        self.width = self.upper - self.lower

    @property
    def remaining(self):
        return self.max - self.n

    def _tick(self):
        if self.n >= self.max:
            raise BudgetSpent
        self.n += 1

    def _record(self, c, f):
        if not math.isfinite(f):
            f = PENALTY
        if f < self.best_f or self.best_x is None:
            self.best_f = f
            self.best_x = c.copy()
        return f

    def clip(self, x):
        return np.minimum(np.maximum(x, self.lower), self.upper)

    def raw(self, x) -> float:
        """Loss at ``clip(x)``."""
        self._tick()
        c = self.clip(np.asarray(x, dtype=np.float64))
        return self._record(c, self.problem.objective(c))

    def penalized(self, x) -> float:
        """Loss at ``clip(x)`` plus a quadratic penalty on the distance outside.

        The penalty is scaled by ``1 + |loss|`` and measured in bound widths,
        so it dominates regardless of the loss magnitude.
        """
        x = np.asarray(x, dtype=np.float64)
        self._tick()
        c = self.clip(x)
        f = self._record(c, self.problem.objective(c))
        if np.any(c != x):
            d2 = float(np.sum(((x - c) / self.width) ** 2))
            f = f + (1.0 + abs(f)) * d2
        return f

    def residuals(self, x) -> np.ndarray:
        self._tick()
        c = self.clip(np.asarray(x, dtype=np.float64))
        r = self.problem.residual_vector(c)
        self._record(c, float(np.dot(r, r)))
        return r

    def mark(self):
        self.trace.append(self.best_f)


def check_x0(problem, x0) -> np.ndarray:
    x0 = np.asarray(x0, dtype=np.float64)
    lower, upper = np.asarray(problem.lower), np.asarray(problem.upper)
    if x0.shape != lower.shape:
        raise ValidationError(f"x0 must have {lower.size} entries, got {x0.shape}")
    if not np.all(np.isfinite(x0)) or np.any(x0 < lower) or np.any(x0 > upper):
        raise ValidationError(f"x0 {x0.tolist()} lies outside bounds [{lower.tolist()}, {upper.tolist()}]")
    return x0


def finish(problem, method, tracker, status, iterations, message="", info=None) -> FitResult:
    """Audit the best point with one fresh evaluation and package the result."""
    x = tracker.best_x
    loss_value = float(problem.objective(x))
    if not math.isfinite(loss_value):
        loss_value = PENALTY
    if loss_value >= PENALTY:
        status = Status.PENALTY_REGION
    mae = float(problem.mae(x))
    trace = tracker.trace or [tracker.best_f]
    return FitResult(method.value, x.copy(), loss_value, mae, tracker.n + 1, iterations,
                     status, message, list(trace), info or {})
