"""Population, annealing, hopping and grid search over a finite box."""
from __future__ import annotations

import itertools
import math

import numpy as np

from ..errors import BudgetExplosionError
from ._base import Status
from .local import lbfgsb, nelder_mead


def _latin_hypercube(rng, n_points, lower, upper):
    dim = len(lower)
    seg = (np.arange(n_points)[:, None] + rng.random((n_points, dim))) / n_points
    for j in range(dim):
        seg[:, j] = seg[rng.permutation(n_points), j]
    return lower + seg * (upper - lower)


def differential_evolution(f, lower, upper, options, rng, on_iter=None):
    """DE/rand/1/bin with immediate replacement.

    Mutant coordinates that leave the box are redrawn uniformly inside it.
    Stops when the population's losses agree to ``tolerance`` (relative) or
    its spread in every coordinate falls below ``tolerance`` bound widths.
    """
    dim = len(lower)
    width = upper - lower
    size = max(5, options.population_factor * dim)
    F, CR = options.de_mutation, options.de_crossover
    pop = _latin_hypercube(rng, size, lower, upper)
    fit = np.array([f(p) for p in pop])
    gens = 0
    others = np.arange(size)
    while True:
        gens += 1
        for i in range(size):
            choices = rng.choice(others[others != i], 3, replace=False)
            a, b, c = pop[choices]
            mutant = a + F * (b - c)
            out = (mutant < lower) | (mutant > upper)
            if np.any(out):
                mutant[out] = lower[out] + rng.random(int(out.sum())) * width[out]
            cross = rng.random(dim) < CR
            cross[rng.integers(dim)] = True
            trial = np.where(cross, mutant, pop[i])
            ft = f(trial)
            if ft <= fit[i]:
                pop[i], fit[i] = trial, ft
        if on_iter:
            on_iter()
        spread = np.ptp(pop, axis=0)
        if np.std(fit) <= options.tolerance * abs(np.mean(fit)) or np.all(spread <= options.tolerance * width):
            k = int(np.argmin(fit))
            return pop[k].copy(), float(fit[k]), gens, Status.CONVERGED


def basin_hopping(f, x0, lower, upper, options, rng, on_iter=None):
    """Gaussian hops polished by Nelder-Mead, accepted by the Metropolis rule.

    The hop size starts at ``step_scale`` bound widths and adapts every ten
    hops towards a 50% acceptance rate.
    """
    width = upper - lower
    local_opts = options.replace(nm_restarts=0)

    def polish(x):
        xl, fl, _, _ = nelder_mead(f, x, lower, upper, local_opts)
        return np.minimum(np.maximum(xl, lower), upper), fl

    x, fx = polish(np.asarray(x0, dtype=np.float64))
    step = options.step_scale * width
    T = options.temperature
    accepted_window = 0
    for hop in range(1, options.hops + 1):
        trial = np.minimum(np.maximum(x + rng.normal(size=len(x)) * step, lower), upper)
        xt, ft = polish(trial)
        u = rng.random()
        if ft < fx or (math.isfinite(ft) and u < math.exp(-(ft - fx) / T)):
            x, fx = xt, ft
            accepted_window += 1
        if hop % 10 == 0:
            factor = 1 / 0.9 if accepted_window > 5 else 0.9
            step = np.minimum(step * factor, width)
            accepted_window = 0
        if on_iter:
            on_iter()
    return x, fx, options.hops, Status.CONVERGED


class _Visiting:
    """Distorted Cauchy-Lorentz visiting distribution of generalized annealing."""

    TAIL_LIMIT = 1e8
    MIN_VISIT_BOUND = 1e-10

    def __init__(self, lower, upper, qv, rng):
        self.lower, self.upper, self.qv, self.rng = lower, upper, qv, rng
        self.width = upper - lower
        self._factor2 = math.exp((4.0 - qv) * math.log(qv - 1.0))
        self._factor3 = math.exp((2.0 - qv) * math.log(2.0) / (qv - 1.0))
        self._factor4p = math.sqrt(math.pi) * self._factor2 / (self._factor3 * (3.0 - qv))
        self._factor5 = 1.0 / (qv - 1.0) - 0.5
        self._d1 = 2.0 - self._factor5
        self._factor6 = math.pi * (1.0 - self._factor5) / math.sin(math.pi * (1.0 - self._factor5)) \
            / math.exp(math.lgamma(self._d1))

    def draw(self, temperature, dim):
        qv = self.qv
        x, y = self.rng.normal(size=(2, dim))
        factor1 = math.exp(math.log(temperature) / (qv - 1.0))
        factor4 = self._factor4p * factor1
        x = x * math.exp(-(qv - 1.0) * math.log(self._factor6 / factor4) / (3.0 - qv))
        den = np.exp((qv - 1.0) * np.log(np.abs(y)) / (3.0 - qv))
        return x / den

    def _wrap(self, v, lo, w):
        return np.fmod(np.fmod(v - lo, w) + w, w) + lo

    def visit(self, x, step, temperature):
        dim = len(x)
        if step < dim:
            visits = self.draw(temperature, dim)
            up, low = self.rng.random(2)
            visits[visits > self.TAIL_LIMIT] = self.TAIL_LIMIT * up
            visits[visits < -self.TAIL_LIMIT] = -self.TAIL_LIMIT * low
            xv = self._wrap(visits + x, self.lower, self.width)
            xv[np.abs(xv - self.lower) < self.MIN_VISIT_BOUND] += 1e-10
            return xv
        xv = x.copy()
        k = step - dim
        v = self.draw(temperature, 1)[0]
        if v > self.TAIL_LIMIT:
            v = self.TAIL_LIMIT * self.rng.random()
        elif v < -self.TAIL_LIMIT:
            v = -self.TAIL_LIMIT * self.rng.random()
        xv[k] = self._wrap(np.array([v + x[k]]), self.lower[k:k + 1], self.width[k:k + 1])[0]
        if abs(xv[k] - self.lower[k]) < self.MIN_VISIT_BOUND:
            xv[k] += self.MIN_VISIT_BOUND
        return xv


def dual_annealing(f, x0, lower, upper, options, rng, on_iter=None):
    """Generalized simulated annealing with periodic L-BFGS-B polish.

    Each outer iteration runs a Markov chain of ``2 * dim`` visits drawn
    from the distorted Cauchy-Lorentz distribution at the current
    temperature, accepts uphill moves with the generalized Metropolis rule,
    then polishes the best point when the chain improved it.  After ``dim``
    chains in a row without improvement the chain's own best point is
    polished instead.  The temperature follows ``T0 * (2^(qv-1) - 1) /
    ((k+1)^(qv-1) - 1)``; the search restarts from a random point when it
    drops below ``restart_ratio * T0``.
    """
    dim = len(lower)
    qv, qa = options.da_visit, options.da_accept
    T0 = options.da_initial_temp
    T_restart = T0 * options.da_restart_ratio
    visiting = _Visiting(lower, upper, qv, rng)
    local_opts = options
    local_iters = max(100, 10 * dim)
    stale, stale_limit = 0, dim

    def local(x):
        xl, fl, _, _ = lbfgsb(f, x, lower, upper, local_opts, max_iter=local_iters)
        return xl, fl

    def random_point():
        return lower + rng.random(dim) * (upper - lower)

    x_cur = np.asarray(x0, dtype=np.float64) if x0 is not None else random_point()
    e_cur = f(x_cur)
    x_best, e_best = x_cur.copy(), e_cur
    t1 = math.exp((qv - 1) * math.log(2.0)) - 1.0
    iteration = 0
    while iteration < options.da_maxiter:
        for i in range(options.da_maxiter):
            if iteration >= options.da_maxiter:
                break
            s = float(i) + 2.0
            t2 = math.exp((qv - 1) * math.log(s)) - 1.0
            temperature = T0 * t1 / t2
            if temperature < T_restart:
                x_cur = random_point()
                e_cur = f(x_cur)
                break
            t_step = temperature / float(i + 1)
            improved = i == 0
            x_min, e_min = x_cur.copy(), e_cur
            for j in range(2 * dim):
                xv = visiting.visit(x_cur, j, temperature)
                e = f(xv)
                if e < e_cur:
                    x_cur, e_cur = xv, e
                    if e < e_best:
                        x_best, e_best = xv.copy(), e
                        improved = True
                else:
                    r = rng.random()
                    pqv_temp = 1.0 - (1.0 - qa) * (e - e_cur) / t_step
                    pqv = 0.0 if pqv_temp <= 0 else math.exp(math.log(pqv_temp) / (1.0 - qa))
                    if r <= pqv:
                        x_cur, e_cur = xv, e
                if e_cur < e_min:
                    x_min, e_min = x_cur.copy(), e_cur
            if improved:
                xl, el = local(x_best)
                if el < e_best:
                    x_best, e_best = xl.copy(), el
                x_cur, e_cur = x_best.copy(), e_best
            stale = 0 if improved else stale + 1
            if stale >= stale_limit:
                xl, el = local(x_min)
                if el < e_best:
                    x_best, e_best = xl.copy(), el
                    x_cur, e_cur = xl.copy(), el
                stale = 0
            iteration += 1
            if on_iter:
                on_iter()
    return x_best, e_best, iteration, Status.CONVERGED


def brute_force(f, lower, upper, options, on_iter=None):
    """Evaluate a uniform grid (``grid_points`` per dimension), then polish.

    Returns ``(x, fx, iterations, status, grid_best, grid_best_loss)``.
    """
    dim = len(lower)
    if dim > 3:
        raise BudgetExplosionError(
            f"brute force refuses {dim} dimensions ({options.grid_points}^{dim} grid points); max is 3")
    axes = [np.linspace(lo, hi, options.grid_points) for lo, hi in zip(lower, upper)]
    best_x, best_f = None, math.inf
    for point in itertools.product(*axes):
        p = np.array(point)
        fp = f(p)
        if fp < best_f:
            best_x, best_f = p, fp
    if on_iter:
        on_iter()
    x, fx, its, status = nelder_mead(f, best_x, lower, upper, options.replace(nm_restarts=0))
    if fx > best_f:
        x, fx = best_x, best_f
    return x, fx, its + 1, status, best_x, best_f
