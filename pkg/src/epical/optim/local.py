"""Derivative-free and quasi-Newton local minimizers on a box.

Nelder-Mead, Powell, CG and BFGS see the loss through
:meth:`Tracker.penalized` (clamp-with-penalty), so they may step outside the
box but only ever record feasible points.  L-BFGS-B projects every step onto
the box instead.  Gradients are finite differences of whatever function the
method minimizes.
"""
from __future__ import annotations

import math

import numpy as np

from ..objective import _fd_columns
from ._base import Status

_GOLD = 0.5 * (3.0 - math.sqrt(5.0))
_SQRT_EPS = math.sqrt(np.finfo(float).eps)


def _fd_gradient(f, x, lower, upper, f0=None, h=1e-7):
    cols, _ = _fd_columns(f, x, lower, upper, h, f0)
    return np.array(cols, dtype=np.float64)


# -- Nelder-Mead ---------------------------------------------------------

def nelder_mead(f, x0, lower, upper, options, *, restarts=None, on_iter=None):
    """Simplex search with reflection 1, expansion 2, contraction and shrink 0.5.

    Returns ``(x, fx, iterations, status)``.  After convergence the simplex is
    rebuilt around the best vertex up to ``restarts`` times; a restart that
    does not improve the loss ends the search.
    """
    restarts = options.nm_restarts if restarts is None else restarts
    tol = options.tolerance
    width = upper - lower
    x = np.asarray(x0, dtype=np.float64)
    fx = None
    total = 0
    status = Status.CONVERGED
    for attempt in range(restarts + 1):
        x_new, f_new, its, status = _nm_once(f, x, fx, lower, upper, width, options, on_iter)
        total += its
        improved = fx is None or f_new < fx - tol * abs(fx)
        if fx is None or f_new < fx:
            x, fx = x_new, f_new
        if not improved or status is not Status.CONVERGED:
            break
    return x, fx, total, status


def _nm_once(f, x0, f0, lower, upper, width, options, on_iter):
    n = len(x0)
    step = options.simplex_scale * width
    sim = np.empty((n + 1, n))
    sim[0] = x0
    for i in range(n):
        v = x0.copy()
        v[i] = x0[i] + step[i] if x0[i] + step[i] <= upper[i] else x0[i] - step[i]
        sim[i + 1] = v
    fs = np.empty(n + 1)
    fs[0] = f(sim[0]) if f0 is None else f0
    for i in range(1, n + 1):
        fs[i] = f(sim[i])
    xtol = options.tolerance * width
    its = 0
    while True:
        order = np.argsort(fs, kind="stable")
        sim, fs = sim[order], fs[order]
        fspread = np.max(np.abs(fs[1:] - fs[0]))
        xspread = np.max(np.abs(sim[1:] - sim[0]), axis=0)
        if fspread <= options.tolerance * abs(fs[0]) or np.all(xspread <= xtol):
            return sim[0].copy(), float(fs[0]), its, Status.CONVERGED
        its += 1
        centroid = sim[:-1].mean(axis=0)
        worst = sim[-1]
        xr = centroid + (centroid - worst)
        fr = f(xr)
        if fr < fs[0]:
            xe = centroid + 2.0 * (centroid - worst)
            fe = f(xe)
            if fe < fr:
                sim[-1], fs[-1] = xe, fe
            else:
                sim[-1], fs[-1] = xr, fr
        elif fr < fs[-2]:
            sim[-1], fs[-1] = xr, fr
        else:
            if fr < fs[-1]:
                xc = centroid + 0.5 * (xr - centroid)
                fc = f(xc)
                accept = fc <= fr
            else:
                xc = centroid + 0.5 * (worst - centroid)
                fc = f(xc)
                accept = fc < fs[-1]
            if accept:
                sim[-1], fs[-1] = xc, fc
            else:
                for i in range(1, n + 1):
                    sim[i] = sim[0] + 0.5 * (sim[i] - sim[0])
                    fs[i] = f(sim[i])
        if on_iter:
            on_iter()


# -- Powell --------------------------------------------------------------

def _feasible_interval(x, d, lower, upper):
    lo, hi = -math.inf, math.inf
    for xi, di, l, u in zip(x, d, lower, upper):
        if di > 0:
            lo, hi = max(lo, (l - xi) / di), min(hi, (u - xi) / di)
        elif di < 0:
            lo, hi = max(lo, (u - xi) / di), min(hi, (l - xi) / di)
    return lo, hi


def bounded_brent(phi, a, b, xatol, maxiter=500):
    """Golden-section search with parabolic steps on ``[a, b]``.

    Returns ``(t, phi(t))`` for the best point visited.
    """
    v = w = xf = a + _GOLD * (b - a)
    fv = fw = fx = phi(xf)
    d = e = 0.0
    for _ in range(maxiter):
        m = 0.5 * (a + b)
        tol1 = _SQRT_EPS * abs(xf) + xatol / 3.0
        tol2 = 2.0 * tol1
        if abs(xf - m) <= tol2 - 0.5 * (b - a):
            break
        golden = True
        if abs(e) > tol1:
            r = (xf - w) * (fx - fv)
            q = (xf - v) * (fx - fw)
            p = (xf - v) * q - (xf - w) * r
            q = 2.0 * (q - r)
            if q > 0:
                p = -p
            q = abs(q)
            r, e = e, d
            if abs(p) < abs(0.5 * q * r) and q * (a - xf) < p < q * (b - xf):
                d = p / q
                u = xf + d
                if u - a < tol2 or b - u < tol2:
                    d = math.copysign(tol1, m - xf)
                golden = False
        if golden:
            e = (b - xf) if xf < m else (a - xf)
            d = _GOLD * e
        u = xf + (d if abs(d) >= tol1 else math.copysign(tol1, d))
        fu = phi(u)
        if fu <= fx:
            if u < xf:
                b = xf
            else:
                a = xf
            v, fv, w, fw, xf, fx = w, fw, xf, fx, u, fu
        else:
            if u < xf:
                a = u
            else:
                b = u
            if fu <= fw or w == xf:
                v, fv, w, fw = w, fw, u, fu
            elif fu <= fv or v == xf or v == w:
                v, fv = u, fu
    return xf, fx


def _line_min(f, x, fx, d, lower, upper, width):
    lo, hi = _feasible_interval(x, d, lower, upper)
    if not (hi > lo) or not math.isfinite(lo) or not math.isfinite(hi):
        return x, fx, False
    scale = np.max(np.abs(d) / width)
    if scale == 0:
        return x, fx, False
    xatol = max(1e-12, 1e-10 / scale)
    t, ft = bounded_brent(lambda t: f(x + t * d), lo, hi, xatol)
    if ft < fx:
        return x + t * d, ft, True
    return x, fx, False


def powell(f, x0, lower, upper, options, on_iter=None):
    """Powell's conjugate-direction method with bounded Brent line searches.

    Each line search is restricted to the segment of the direction that stays
    inside the box.  The direction of largest decrease is replaced by the net
    displacement when the usual extrapolation test allows it.
    """
    width = upper - lower
    n = len(x0)
    dirs = np.diag(width.astype(np.float64))
    x = np.asarray(x0, dtype=np.float64)
    fx = f(x)
    its = 0
    tol = options.tolerance
    while True:
        its += 1
        x_start, f_start = x.copy(), fx
        big_drop, big_idx = 0.0, 0
        for i in range(n):
            f_before = fx
            x, fx, _ = _line_min(f, x, fx, dirs[i], lower, upper, width)
            if f_before - fx > big_drop:
                big_drop, big_idx = f_before - fx, i
        if on_iter:
            on_iter()
        if 2.0 * (f_start - fx) <= tol * (abs(f_start) + abs(fx)) + 1e-300:
            return x, fx, its, Status.CONVERGED
        d_new = x - x_start
        if np.all(np.abs(d_new) <= tol * width):
            return x, fx, its, Status.CONVERGED
        x_ext = np.minimum(np.maximum(x + d_new, lower), upper)
        f_ext = f(x_ext)
        if f_start > f_ext:
            t = 2.0 * (f_start - 2.0 * fx + f_ext) * (f_start - fx - big_drop) ** 2
            t -= big_drop * (f_start - f_ext) ** 2
            if t < 0.0:
                x, fx, _ = _line_min(f, x, fx, d_new, lower, upper, width)
                dirs[big_idx] = dirs[-1]
                dirs[-1] = d_new


# -- Wolfe line search (CG, BFGS) -----------------------------------------

def _interp(a_lo, f_lo, g_lo, a_hi, f_hi):
    """Minimizer of the quadratic through (a_lo, f_lo, g_lo) and (a_hi, f_hi)."""
    da = a_hi - a_lo
    denom = 2.0 * (f_hi - f_lo - g_lo * da)
    if denom <= 0 or not math.isfinite(denom):
        return a_lo + 0.5 * da
    return a_lo - g_lo * da * da / denom


def wolfe_search(f, grad, x, fx, gx, d, alpha0, c1=1e-4, c2=0.9, maxiter=25):
    """Strong-Wolfe line search by bracketing and zoom.

    Returns ``(alpha, f_new, g_new)`` or ``None`` if no acceptable step was
    found.  The gradient is only evaluated once the sufficient-decrease test
    passes.
    """
    g0d = float(np.dot(gx, d))
    if not g0d < 0:
        return None

    def zoom(a_lo, f_lo, dp_lo, a_hi, f_hi):
        for _ in range(maxiter):
            lo, hi = min(a_lo, a_hi), max(a_lo, a_hi)
            a = _interp(a_lo, f_lo, dp_lo, a_hi, f_hi)
            margin = 0.1 * (hi - lo)
            if not (lo + margin <= a <= hi - margin):
                a = 0.5 * (lo + hi)
            if hi - lo < 1e-16 * max(1.0, hi):
                return None
            fa = f(x + a * d)
            if fa > fx + c1 * a * g0d or fa >= f_lo:
                a_hi, f_hi = a, fa
                continue
            ga = grad(x + a * d, fa)
            dpa = float(np.dot(ga, d))
            if abs(dpa) <= -c2 * g0d:
                return a, fa, ga
            if dpa * (a_hi - a_lo) >= 0:
                a_hi, f_hi = a_lo, f_lo
            a_lo, f_lo, dp_lo = a, fa, dpa
        return None

    a_prev, f_prev, dp_prev = 0.0, fx, g0d
    a = alpha0
    for i in range(maxiter):
        fa = f(x + a * d)
        if fa > fx + c1 * a * g0d or (i > 0 and fa >= f_prev):
            return zoom(a_prev, f_prev, dp_prev, a, fa)
        ga = grad(x + a * d, fa)
        dpa = float(np.dot(ga, d))
        if abs(dpa) <= -c2 * g0d:
            return a, fa, ga
        if dpa >= 0:
            return zoom(a, fa, dpa, a_prev, f_prev)
        a_prev, f_prev, dp_prev = a, fa, dpa
        a *= 2.0
    return None


def _first_step(d, width):
    # first trial moves at most a tenth of the box along any coordinate
    scale = np.max(np.abs(d) / width)
    return 1.0 if scale == 0 else min(1.0, 0.1 / scale)


def conjugate_gradient(f, x0, lower, upper, options, on_iter=None):
    """Polak-Ribiere (PR+) nonlinear conjugate gradients with restarts."""
    width = upper - lower
    free_lo = np.full_like(lower, -np.inf)
    free_hi = np.full_like(upper, np.inf)

    def grad(x, fx=None):
        return _fd_gradient(f, x, free_lo, free_hi, fx)

    n = len(x0)
    x = np.asarray(x0, dtype=np.float64)
    fx = f(x)
    g = grad(x, fx)
    d = -g
    alpha = _first_step(d, width)
    small = 0
    its = 0
    since_restart = 0
    while True:
        if np.max(np.abs(g)) <= options.gtol:
            return x, fx, its, Status.CONVERGED
        found = wolfe_search(f, grad, x, fx, g, d, alpha, c2=0.1)
        if found is None:
            if since_restart == 0:
                return x, fx, its, Status.STALLED
            d = -g
            since_restart = 0
            alpha = _first_step(d, width)
            continue
        its += 1
        since_restart += 1
        a, f_new, g_new = found
        x_new = x + a * d
        drop = fx - f_new
        small = small + 1 if drop <= options.tolerance * max(abs(fx), abs(f_new), 1e-300) else 0
        gd_old = float(np.dot(g, d))
        beta = max(0.0, float(np.dot(g_new, g_new - g)) / float(np.dot(g, g)))
        d_new = -g_new + beta * d
        if since_restart >= n or float(np.dot(g_new, d_new)) >= 0:
            d_new = -g_new
            since_restart = 0
        x, fx, g, d = x_new, f_new, g_new, d_new
        if on_iter:
            on_iter()
        if small >= 2:
            return x, fx, its, Status.CONVERGED
        gd_new = float(np.dot(g, d))
        alpha = min(1.0, a * gd_old / gd_new) if gd_new < 0 else 1.0
        if since_restart == 0:
            alpha = max(alpha, _first_step(d, width) * 1e-3)


def bfgs(f, x0, lower, upper, options, on_iter=None):
    """BFGS on the inverse Hessian with a Shanno-Phua scaled start."""
    width = upper - lower
    n = len(x0)
    free_lo = np.full_like(lower, -np.inf)
    free_hi = np.full_like(upper, np.inf)

    def grad(x, fx=None):
        return _fd_gradient(f, x, free_lo, free_hi, fx)

    x = np.asarray(x0, dtype=np.float64)
    fx = f(x)
    g = grad(x, fx)
    H = np.eye(n)
    first = True
    small = 0
    its = 0
    while True:
        if np.max(np.abs(g)) <= options.gtol:
            return x, fx, its, Status.CONVERGED
        d = -H @ g
        alpha = _first_step(d, width) if first else 1.0
        found = wolfe_search(f, grad, x, fx, g, d, alpha, c2=0.9)
        if found is None:
            if first:
                return x, fx, its, Status.STALLED
            H = np.eye(n)
            first = True
            continue
        its += 1
        a, f_new, g_new = found
        s = a * d
        y = g_new - g
        sy = float(np.dot(s, y))
        if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
            if first:
                H = np.eye(n) * (sy / float(np.dot(y, y)))
            rho = 1.0 / sy
            V = np.eye(n) - rho * np.outer(s, y)
            H = V @ H @ V.T + rho * np.outer(s, s)
        first = False
        drop = fx - f_new
        small = small + 1 if drop <= options.tolerance * max(abs(fx), abs(f_new), 1e-300) else 0
        x, fx, g = x + s, f_new, g_new
        if on_iter:
            on_iter()
        if small >= 2:
            return x, fx, its, Status.CONVERGED


# -- projected L-BFGS-B ----------------------------------------------------

def _two_loop(g, S, Y):
    q = g.copy()
    alphas = []
    for s, y in zip(reversed(S), reversed(Y)):
        rho = 1.0 / float(np.dot(y, s))
        a = rho * float(np.dot(s, q))
        alphas.append((rho, a))
        q -= a * y
    if S:
        q *= float(np.dot(S[-1], Y[-1])) / float(np.dot(Y[-1], Y[-1]))
    for (s, y), (rho, a) in zip(zip(S, Y), reversed(alphas)):
        b = rho * float(np.dot(y, q))
        q += (a - b) * s
    return q


def lbfgsb(f, x0, lower, upper, options, on_iter=None, max_iter=None):
    """Limited-memory BFGS with gradient projection onto the box.

    Variables held at a bound by the gradient are frozen for the step; the
    quasi-Newton direction is computed on the free variables and the trial
    point is projected back into the box with Armijo backtracking.
    """
    width = upper - lower
    m = options.memory
    x = np.minimum(np.maximum(np.asarray(x0, dtype=np.float64), lower), upper)
    fx = f(x)
    g = _fd_gradient(f, x, lower, upper, fx)
    S, Y = [], []
    small = 0
    its = 0
    while max_iter is None or its < max_iter:
        pg = x - np.minimum(np.maximum(x - g, lower), upper)
        if np.max(np.abs(pg)) <= options.gtol:
            return x, fx, its, Status.CONVERGED
        free = ~(((x <= lower) & (g > 0)) | ((x >= upper) & (g < 0)))
        gf = np.where(free, g, 0.0)
        Sf = [np.where(free, s, 0.0) for s in S]
        Yf = [np.where(free, y, 0.0) for y in Y]
        usable = [(s, y) for s, y in zip(Sf, Yf) if np.dot(s, y) > 0]
        d = -_two_loop(gf, [u[0] for u in usable], [u[1] for u in usable])
        d = np.where(free, d, 0.0)
        if not np.dot(g, d) < 0:
            S, Y = [], []
            d = -gf
        alpha = 1.0 if usable else _first_step(d, width)
        accepted = False
        for k in range(40):
            xt = np.minimum(np.maximum(x + alpha * d, lower), upper)
            ft = f(xt)
            if ft <= fx + 1e-4 * float(np.dot(g, xt - x)) and ft <= fx:
                accepted = True
                break
            alpha *= 0.5
        # the loss still falls almost linearly: the step was too short
        while accepted and k == 0 and fx - ft > -0.75 * float(np.dot(g, xt - x)):
            alpha *= 2.0
            x2 = np.minimum(np.maximum(x + alpha * d, lower), upper)
            if np.array_equal(x2, xt):
                break
            f2 = f(x2)
            if not f2 < ft:
                break
            xt, ft = x2, f2
        if not accepted:
            if S:
                S, Y = [], []
                continue
            return x, fx, its, Status.STALLED
        its += 1
        gt = _fd_gradient(f, xt, lower, upper, ft)
        s, y = xt - x, gt - g
        if float(np.dot(s, y)) > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
            S.append(s)
            Y.append(y)
            if len(S) > m:
                S.pop(0)
                Y.pop(0)
        drop = fx - ft
        small = small + 1 if drop <= options.tolerance * max(abs(fx), abs(ft), 1e-300) else 0
        tiny_step = np.all(np.abs(s) <= options.tolerance * width)
        x, fx, g = xt, ft, gt
        if on_iter:
            on_iter()
        if small >= 2 or tiny_step:
            return x, fx, its, Status.CONVERGED
    return x, fx, its, Status.CONVERGED
