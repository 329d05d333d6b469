"""Calibration loss, residuals, MAE and finite-difference derivatives.

The loss is the unweighted sum of squared residuals ``simulated - observed``
over the fitted slots and the training days ``[0, train_days)``.  The MAE is
scored on a single evaluation compartment over the whole dataset horizon,
so held-out days count.

Every simulation increments the problem's evaluation counter exactly once;
optimizers use it for budget accounting.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .errors import IntegrationError, StructuralError, ValidationError
from .models import ModelSpec
from .simulate import DEFAULT_STEPS_PER_DAY, MIN_TRAIN_DAYS, Dataset, _run

PENALTY = 1e18


class EvalCounter:
    """Thread-safe monotone counter."""

    def __init__(self):
        self._n = 0
        self._lock = threading.Lock()

    def increment(self) -> int:
        with self._lock:
            self._n += 1
            return self._n

    @property
    def value(self) -> int:
        return self._n


@dataclass(frozen=True)
class LossValue:
    ssr: float
    evaluations: int
    clamped: bool = False
    penalized: bool = False


@dataclass(frozen=True)
class Derivative:
    value: np.ndarray
    one_sided: np.ndarray  # bool mask: coordinates differenced on one side only


class CalibrationProblem:
    """A model spec bound to a dataset, a training window and a metric.

    Parameters
    ----------
    spec : ModelSpec
    dataset : Dataset
        Its observed slots must be slots of ``spec``.
    train_days : int, optional
        Number of leading dataset rows used by the loss.  Defaults to the
        dataset's ``train_cutoff_day``, else every row.
    fit_compartments : sequence of str, optional
        Slots (or bare compartments, expanded over groups) entering the loss.
        Defaults to every observed slot.
    eval_compartment : str
        Slot or bare compartment scored by :func:`mae`.
    """

    def __init__(self, spec: ModelSpec, dataset: Dataset, train_days: int | None = None,
                 fit_compartments=None, eval_compartment: str = "I",
                 steps_per_day: int = DEFAULT_STEPS_PER_DAY, method: str = "rk4"):
        self.spec = spec
        self.dataset = dataset
        self.steps_per_day = int(steps_per_day)
        self.method = method
        self.counter = EvalCounter()
        rows = dataset.values.shape[0]
        if train_days is None:
            train_days = dataset.train_cutoff_day or rows
        train_days = int(train_days)
        if not (MIN_TRAIN_DAYS <= train_days <= rows):
            raise ValidationError(f"train_days must lie in [{MIN_TRAIN_DAYS}, {rows}], got {train_days}")
        self.train_days = train_days

        unknown = [s for s in dataset.observed if s not in spec.slots]
        if unknown:
            raise StructuralError(f"dataset columns {unknown} are not slots of {spec.kind.value}")
        if fit_compartments is None:
            fit_slots = list(dataset.observed)
        else:
            fit_slots = []
            for name in fit_compartments:
                fit_slots.extend(spec.slots[k] for k in spec.slot_indices(name))
        if not fit_slots:
            raise ValidationError("fit_compartments is empty")
        missing = [s for s in fit_slots if s not in dataset.observed]
        if missing:
            raise ValidationError(f"fit compartments {missing} are not observed")
        self.fit_slots = tuple(fit_slots)
        self._fit_sim = [spec.slots.index(s) for s in fit_slots]
        self._fit_obs = np.ascontiguousarray(
            dataset.values[:train_days, [dataset.observed.index(s) for s in fit_slots]])

        eval_sim = spec.slot_indices(eval_compartment)
        eval_slots = [spec.slots[k] for k in eval_sim]
        missing = [s for s in eval_slots if s not in dataset.observed]
        if missing:
            raise ValidationError(f"eval compartment slots {missing} are not observed")
        self.eval_compartment = eval_compartment
        self._eval_sim = eval_sim
        self._eval_obs = dataset.values[:, [dataset.observed.index(s) for s in eval_slots]].sum(axis=1)

    # -- plumbing shared with the optimizers ------------------------------
    @property
    def lower(self) -> np.ndarray:
        return self.spec.lower

    @property
    def upper(self) -> np.ndarray:
        return self.spec.upper

    @property
    def n_params(self) -> int:
        return len(self.spec.params)

    @property
    def n_residuals(self) -> int:
        return self._fit_obs.size

    @property
    def evaluations(self) -> int:
        return self.counter.value

    has_residuals = True

    def clip(self, x):
        x = np.asarray(x, dtype=np.float64)
        c = np.minimum(np.maximum(x, self.lower), self.upper)
        return c, bool(np.any(c != x))

    def _simulate(self, x, days):
        self.counter.increment()
        try:
            out = _run(self.spec, x, days, self.steps_per_day, self.method)
        except IntegrationError:
            return None
        if not np.all(np.isfinite(out)):
            return None
        return out

    def residual_vector(self, x) -> np.ndarray:
        """Residuals ``simulated - observed``, day-major then slot."""
        x, _ = self.clip(x)
        out = self._simulate(x, self.train_days - 1)
        if out is None:
            return np.full(self.n_residuals, np.sqrt(PENALTY / self.n_residuals))
        pred = np.maximum(out[:, self._fit_sim], 0.0)
        return (pred - self._fit_obs).ravel()

    def objective(self, x) -> float:
        r = self.residual_vector(x)
        return float(np.dot(r, r))

    def predict(self, x) -> np.ndarray | None:
        """Evaluation-compartment series over the full horizon."""
        x, _ = self.clip(x)
        out = self._simulate(x, self.dataset.horizon)
        if out is None:
            return None
        return np.maximum(out[:, self._eval_sim], 0.0).sum(axis=1)

    def mae(self, x) -> float:
        pred = self.predict(x)
        if pred is None:
            return PENALTY
        return float(np.mean(np.abs(pred - self._eval_obs)))

    @property
    def eval_observed(self) -> np.ndarray:
        return self._eval_obs


class FunctionProblem:
    """Box-bounded analytic objective with the optimizer-facing interface.

    ``residuals``, when given, returns a vector whose squared norm is the
    objective; ``fun`` then defaults to that squared norm.
    """

    def __init__(self, fun=None, lower=None, upper=None, residuals=None, name="function"):
        if fun is None and residuals is None:
            raise ValueError("need fun or residuals")
        self._fun = fun
        self._res = residuals
        self.lower = np.asarray(lower, dtype=np.float64)
        self.upper = np.asarray(upper, dtype=np.float64)
        self.name = name
        self.counter = EvalCounter()

    @property
    def has_residuals(self):
        return self._res is not None

    @property
    def n_params(self):
        return len(self.lower)

    @property
    def evaluations(self):
        return self.counter.value

    def clip(self, x):
        x = np.asarray(x, dtype=np.float64)
        c = np.minimum(np.maximum(x, self.lower), self.upper)
        return c, bool(np.any(c != x))

    def residual_vector(self, x):
        if self._res is None:
            raise TypeError(f"{self.name} has no residual form")
        self.counter.increment()
        return np.asarray(self._res(self.clip(x)[0]), dtype=np.float64)

    def objective(self, x):
        if self._fun is None:
            r = self.residual_vector(x)
            return float(np.dot(r, r))
        self.counter.increment()
        return float(self._fun(self.clip(x)[0]))

    def mae(self, x):
        return float("nan")


def loss(problem, params) -> LossValue:
    """Sum of squared training residuals at ``params``.

    Out-of-bounds parameters are clamped (``clamped=True``); a blown-up
    integration yields ``ssr = PENALTY`` with ``penalized=True`` so callers
    that search blindly can keep going.
    """
    x, clamped = problem.clip(params)
    ssr = problem.objective(x)
    return LossValue(ssr, problem.evaluations, clamped, ssr >= PENALTY)


def residuals(problem, params) -> np.ndarray:
    return problem.residual_vector(params)


def mae(problem, params) -> float:
    return problem.mae(params)


def _steps(x, h):
    return h * np.maximum(1.0, np.abs(x))


def _fd_columns(fun, x, lower, upper, h, f0=None):
    """Central differences of ``fun`` (scalar or vector valued) at ``x``.

    Coordinates within ``h`` of a bound fall back to a one-sided difference
    pointing into the box.
    """
    x = np.asarray(x, dtype=np.float64)
    steps = _steps(x, h)
    cols = []
    one_sided = np.zeros(len(x), dtype=bool)
    for i, hi in enumerate(steps):
        up = x.copy()
        dn = x.copy()
        can_up = x[i] + hi <= upper[i]
        can_dn = x[i] - hi >= lower[i]
        if can_up and can_dn:
            up[i] += hi
            dn[i] -= hi
            cols.append((np.asarray(fun(up)) - np.asarray(fun(dn))) / (up[i] - dn[i]))
            continue
        one_sided[i] = True
        if f0 is None:
            f0 = np.asarray(fun(x))
        if can_up or not can_dn:
            up[i] += hi
            cols.append((np.asarray(fun(up)) - f0) / (up[i] - x[i]))
        else:
            dn[i] -= hi
            cols.append((f0 - np.asarray(fun(dn))) / (x[i] - dn[i]))
    return cols, one_sided


def _bounds_of(problem, n):
    lower = getattr(problem, "lower", None)
    upper = getattr(problem, "upper", None)
    lower = np.full(n, -np.inf) if lower is None else np.asarray(lower, dtype=np.float64)
    upper = np.full(n, np.inf) if upper is None else np.asarray(upper, dtype=np.float64)
    return lower, upper


def finite_difference_gradient(problem, params, h: float = 1e-6) -> Derivative:
    """Gradient of the loss (or of a plain callable) by central differences.

    Steps are relative: ``h * max(1, |x_i|)``.
    """
    if h <= 0:
        raise ValidationError("h must be > 0")
    x = np.asarray(params, dtype=np.float64)
    fun = problem.objective if hasattr(problem, "objective") else problem
    lower, upper = _bounds_of(problem, len(x))
    cols, one_sided = _fd_columns(fun, x, lower, upper, h)
    return Derivative(np.array(cols, dtype=np.float64), one_sided)


def finite_difference_jacobian(problem, params, h: float = 1e-6) -> Derivative:
    """Jacobian of :func:`residuals`, shape ``(n_residuals, n_params)``."""
    if h <= 0:
        raise ValidationError("h must be > 0")
    x = np.asarray(params, dtype=np.float64)
    fun = problem.residual_vector if hasattr(problem, "residual_vector") else problem
    lower, upper = _bounds_of(problem, len(x))
    cols, one_sided = _fd_columns(fun, x, lower, upper, h)
    return Derivative(np.column_stack(cols), one_sided)
