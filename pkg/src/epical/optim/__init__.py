"""Calibration optimizers behind one dispatch interface.

Every method counts evaluations through a shared :class:`Tracker`, stops
when ``options.max_evaluations`` is spent, and returns the best feasible
point it saw, re-scored with one final audit evaluation.

>>> from epical.objective import FunctionProblem
>>> p = FunctionProblem(lambda x: float(x @ x), [0, 0], [1, 1])
>>> r = fit(p, "nelder-mead", x0=[0.7, 0.7])
>>> r.loss < 1e-12
True
"""
from __future__ import annotations

import enum

import numpy as np

from ..errors import ValidationError
from . import globalopt, local, lsq
from ._base import (GLOBAL_METHODS, LOCAL_METHODS, LSQ_METHODS, OUT_OF_SCOPE, BudgetSpent,
                    FitOptions, FitResult, Method, Status, Tracker, check_x0, finish)

__all__ = [
    "Method", "Status", "FitOptions", "FitResult", "X0Strategy", "OUT_OF_SCOPE",
    "LOCAL_METHODS", "LSQ_METHODS", "GLOBAL_METHODS",
    "fit", "minimize_local", "least_squares", "minimize_global", "make_x0",
]


class X0Strategy(str, enum.Enum):
    SEEDED_UNIFORM = "seeded-uniform"
    CENTER = "center"
    GIVEN = "given"


def make_x0(problem, strategy="seeded-uniform", seed: int = 0, given=None) -> np.ndarray:
    """Starting point: uniform draw within bounds, bound midpoints, or ``given``."""
    strategy = X0Strategy(strategy)
    lower = np.asarray(problem.lower, dtype=np.float64)
    upper = np.asarray(problem.upper, dtype=np.float64)
    if strategy is X0Strategy.CENTER:
        return 0.5 * (lower + upper)
    if strategy is X0Strategy.GIVEN:
        if given is None:
            raise ValidationError("strategy 'given' needs a starting vector")
        return check_x0(problem, given)
    rng = np.random.default_rng(seed)
    return lower + rng.random(len(lower)) * (upper - lower)


def _run(problem, method, options, body):
    tracker = Tracker(problem, options.max_evaluations)
    info = {}
    try:
        _, _, its, status, *extra = body(tracker, info)
        message = ""
    except BudgetSpent:
        its = len(tracker.trace)
        status = Status.BUDGET_EXHAUSTED
        message = f"evaluation budget of {options.max_evaluations} spent"
    if tracker.best_x is None:
        raise ValidationError("budget too small to evaluate a single point")
    if method is Method.TRF:
        info["active_bounds"] = lsq.active_bounds(tracker.best_x, tracker.lower, tracker.upper).tolist()
        info["stand_in_for"] = "trust-region constrained minimization (box bounds only)"
    return finish(problem, method, tracker, status, its, message, info)


def minimize_local(problem, method, x0, options: FitOptions | None = None) -> FitResult:
    """Nelder-Mead, Powell, CG, BFGS or L-BFGS-B from ``x0``."""
    method = Method.parse(method)
    if method not in LOCAL_METHODS:
        raise ValidationError(f"{method.value} is not a local method")
    options = options or FitOptions()
    x0 = check_x0(problem, x0)
    algo = {
        Method.NELDER_MEAD: local.nelder_mead,
        Method.POWELL: local.powell,
        Method.CG: local.conjugate_gradient,
        Method.BFGS: local.bfgs,
        Method.LBFGSB: local.lbfgsb,
    }[method]

    def body(t, info):
        f = t.raw if method is Method.LBFGSB else t.penalized
        return algo(f, x0, t.lower, t.upper, options, on_iter=t.mark)

    return _run(problem, method, options, body)


def least_squares(problem, method, x0, options: FitOptions | None = None) -> FitResult:
    """Levenberg-Marquardt or trust-region reflective on the residual vector."""
    method = Method.parse(method)
    if method not in LSQ_METHODS:
        raise ValidationError(f"{method.value} is not a least-squares method")
    if not getattr(problem, "has_residuals", False):
        raise ValidationError(f"{method.value} needs a residual vector")
    options = options or FitOptions()
    x0 = check_x0(problem, x0)
    algo = lsq.levenberg_marquardt if method is Method.LEVENBERG_MARQUARDT else lsq.trust_region_reflective

    def body(t, info):
        return algo(t.residuals, x0, t.lower, t.upper, options, on_iter=t.mark)

    return _run(problem, method, options, body)


def minimize_global(problem, method, options: FitOptions | None = None, x0=None) -> FitResult:
    """Differential evolution, basin hopping, dual annealing or brute force.

    ``x0`` is used by basin hopping and dual annealing when given; otherwise
    they draw one from ``options.seed``.
    """
    method = Method.parse(method)
    if method not in GLOBAL_METHODS:
        raise ValidationError(f"{method.value} is not a global method")
    options = options or FitOptions()
    lower = np.asarray(problem.lower, dtype=np.float64)
    upper = np.asarray(problem.upper, dtype=np.float64)
    if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
        raise ValidationError(f"{method.value} needs finite bounds on every parameter")
    rng = np.random.default_rng(options.seed)
    if x0 is not None:
        x0 = check_x0(problem, x0)
    elif method in (Method.BASIN_HOPPING, Method.DUAL_ANNEALING):
        x0 = lower + rng.random(len(lower)) * (upper - lower)

    def body(t, info):
        if method is Method.DIFFERENTIAL_EVOLUTION:
            return globalopt.differential_evolution(t.raw, t.lower, t.upper, options, rng, on_iter=t.mark)
        if method is Method.BASIN_HOPPING:
            return globalopt.basin_hopping(t.penalized, x0, t.lower, t.upper, options, rng, on_iter=t.mark)
        if method is Method.DUAL_ANNEALING:
            return globalopt.dual_annealing(t.raw, x0, t.lower, t.upper, options, rng, on_iter=t.mark)
        out = globalopt.brute_force(t.penalized, t.lower, t.upper, options, on_iter=t.mark)
        info["grid_best"] = out[4].tolist()
        info["grid_best_loss"] = out[5]
        return out[:4]

    return _run(problem, method, options, body)


def fit(problem, method, x0=None, options: FitOptions | None = None) -> FitResult:
    """Dispatch ``method`` by name.

    Local and least-squares methods start from ``x0`` (default: bound
    midpoints); global methods ignore it except basin hopping and dual
    annealing.
    """
    method = Method.parse(method)
    if method in GLOBAL_METHODS:
        return minimize_global(problem, method, options, x0=x0)
    if x0 is None:
        x0 = make_x0(problem, "center")
    if method in LSQ_METHODS:
        return least_squares(problem, method, x0, options)
    return minimize_local(problem, method, x0, options)
