"""Bounded nonlinear least squares: Levenberg-Marquardt and trust-region reflective."""
from __future__ import annotations

import math

import numpy as np

from ..objective import _fd_columns
from ._base import Status

_EPS = np.finfo(float).eps


def _jacobian(res, x, lower, upper, r0, h=1e-7):
    cols, _ = _fd_columns(res, x, lower, upper, h, r0)
    return np.column_stack(cols)


def levenberg_marquardt(res, x0, lower, upper, options, on_iter=None):
    """Damped Gauss-Newton with diagonal (Marquardt) scaling.

    Solves ``(J^T J + lam * diag(J^T J)) delta = -J^T r``; ``lam`` is divided
    by 10 after an accepted step and multiplied by 10 after a rejected one.
    Trial points are projected onto the box.  Five consecutive singular or
    non-finite solves end the run as ``Stalled``.

    Returns ``(x, cost, iterations, status)`` with ``cost = r.r``.
    """
    tol = options.tolerance
    x = np.asarray(x0, dtype=np.float64)
    r = res(x)
    cost = float(r @ r)
    J = _jacobian(res, x, lower, upper, r)
    lam = options.lm_lambda0
    its = 0
    failures = 0
    while True:
        A = J.T @ J
        g = J.T @ r
        if not np.any(g):
            return x, cost, its, Status.CONVERGED
        diag = np.diag(A).copy()
        floor = 1e-12 * max(float(diag.max()), 1e-300)
        diag[diag < floor] = floor
        try:
            delta = np.linalg.solve(A + lam * np.diag(diag), -g)
            ok = np.all(np.isfinite(delta))
        except np.linalg.LinAlgError:
            ok = False
        if not ok:
            failures += 1
            lam *= 10.0
            if failures >= 5:
                return x, cost, its, Status.STALLED
            continue
        failures = 0
        x_new = np.minimum(np.maximum(x + delta, lower), upper)
        step = x_new - x
        small_step = np.linalg.norm(step) <= tol * (np.linalg.norm(x) + tol)
        r_new = res(x_new)
        cost_new = float(r_new @ r_new)
        if cost_new < cost:
            drop = cost - cost_new
            x, r, cost = x_new, r_new, cost_new
            lam = max(lam / 10.0, 1e-300)
            its += 1
            if on_iter:
                on_iter()
            if drop <= tol * (cost + drop) or small_step:
                return x, cost, its, Status.CONVERGED
            J = _jacobian(res, x, lower, upper, r)
        else:
            if small_step:
                return x, cost, its, Status.CONVERGED
            lam *= 10.0
            if lam > 1e20:
                return x, cost, its, Status.STALLED


# -- trust-region reflective ------------------------------------------------

def _scaling_vector(x, g, lb, ub):
    """Coleman-Li scaling: distance to the bound the gradient pushes towards."""
    v = np.ones_like(x)
    dv = np.zeros_like(x)
    m = (g < 0) & np.isfinite(ub)
    v[m] = ub[m] - x[m]
    dv[m] = -1.0
    m = (g > 0) & np.isfinite(lb)
    v[m] = x[m] - lb[m]
    dv[m] = 1.0
    return v, dv


def _step_to_bound(x, s, lb, ub):
    steps = np.full_like(x, np.inf)
    nz = s != 0
    with np.errstate(divide="ignore", invalid="ignore"):
        steps[nz] = np.maximum((lb - x)[nz] / s[nz], (ub - x)[nz] / s[nz])
    t = float(np.min(steps))
    return t, (steps == t) * np.sign(s).astype(int)


def _intersect_ball(p, s, radius):
    a = float(s @ s)
    b = float(p @ s)
    c = float(p @ p) - radius * radius
    d = math.sqrt(max(b * b - a * c, 0.0))
    q = -(b + math.copysign(d, b))
    t1, t2 = q / a, (c / q if q != 0 else 0.0)
    return (t1, t2) if t1 <= t2 else (t2, t1)


def _quad(J, g, s, diag):
    Js = J @ s
    return 0.5 * (float(Js @ Js) + float(s * diag @ s)) + float(g @ s)


def _quad_1d(J, g, s, diag, s0=None):
    """Coefficients of ``t -> a t^2 + b t + c`` for the model along ``s0 + t s``."""
    v = J @ s
    a = 0.5 * (float(v @ v) + float(s * diag @ s))
    b = float(g @ s)
    c = 0.0
    if s0 is not None:
        u = J @ s0
        b += float(u @ v) + float(s0 * diag @ s)
        c = 0.5 * (float(u @ u) + float(s0 * diag @ s0)) + float(g @ s0)
    return a, b, c


def _min_quad_1d(a, b, c, lo, hi):
    ts = [lo, hi]
    if a != 0:
        t = -0.5 * b / a
        if lo < t < hi:
            ts.append(t)
    vals = [t * (a * t + b) + c for t in ts]
    k = int(np.argmin(vals))
    return ts[k], vals[k]


def _solve_subproblem(n, m, uf, s, V, radius, alpha0, rtol=0.01, max_iter=10):
    """Exact trust-region step from the SVD of the scaled Jacobian."""
    suf = s * uf

    def phi(alpha):
        denom = s ** 2 + alpha
        pn = float(np.linalg.norm(suf / denom))
        return pn - radius, -float(np.sum(suf ** 2 / denom ** 3)) / pn

    full_rank = m >= n and s[-1] > _EPS * m * s[0]
    if full_rank:
        p = -V @ (uf / s)
        if np.linalg.norm(p) <= radius:
            return p, 0.0
    hi = float(np.linalg.norm(suf)) / radius
    if full_rank:
        v, dv = phi(0.0)
        lo = -v / dv
    else:
        lo = 0.0
    if alpha0 is None or (not full_rank and alpha0 == 0):
        alpha = max(1e-3 * hi, math.sqrt(lo * hi))
    else:
        alpha = alpha0
    for _ in range(max_iter):
        if alpha < lo or alpha > hi:
            alpha = max(1e-3 * hi, math.sqrt(lo * hi))
        v, dv = phi(alpha)
        if v < 0:
            hi = alpha
        ratio = v / dv
        lo = max(lo, alpha - ratio)
        alpha -= (v + radius) * ratio / radius
        if abs(v) < rtol * radius:
            break
    p = -V @ (suf / (s ** 2 + alpha))
    p *= radius / np.linalg.norm(p)
    return p, alpha


def _select_step(x, Jh, diag_h, gh, p, ph, d, radius, lb, ub, theta):
    """Pick the best of the truncated, reflected and scaled-gradient steps."""
    if np.all((x + p >= lb) & (x + p <= ub)):
        return p, ph, -_quad(Jh, gh, ph, diag_h)
    p_stride, hits = _step_to_bound(x, p, lb, ub)
    rh = ph.copy()
    rh[hits.astype(bool)] *= -1
    r = d * rh
    p = p * p_stride
    ph = ph * p_stride
    x_on = x + p
    _, to_tr = _intersect_ball(ph, rh, radius)
    to_bound, _ = _step_to_bound(x_on, r, lb, ub)
    r_stride = min(to_bound, to_tr)
    if r_stride > 0:
        r_lo = (1 - theta) * p_stride / r_stride
        r_hi = theta * to_bound if r_stride == to_bound else to_tr
    else:
        r_lo, r_hi = 0.0, -1.0
    if r_lo <= r_hi:
        a, b, c = _quad_1d(Jh, gh, rh, diag_h, s0=ph)
        t, r_value = _min_quad_1d(a, b, c, r_lo, r_hi)
        rh = ph + t * rh
        r = d * rh
    else:
        r_value = math.inf
    p = p * theta
    ph = ph * theta
    p_value = _quad(Jh, gh, ph, diag_h)
    agh = -gh
    ag = d * agh
    to_tr = radius / np.linalg.norm(agh)
    to_bound, _ = _step_to_bound(x, ag, lb, ub)
    ag_stride = theta * to_bound if to_bound < to_tr else to_tr
    a, b, _ = _quad_1d(Jh, gh, agh, diag_h)
    t, ag_value = _min_quad_1d(a, b, 0.0, 0.0, ag_stride)
    agh, ag = agh * t, ag * t
    if p_value < r_value and p_value < ag_value:
        return p, ph, -p_value
    if r_value < p_value and r_value < ag_value:
        return r, rh, -r_value
    return ag, agh, -ag_value


def _strictly_feasible(x, lb, ub, rstep=1e-10):
    x = x.copy()
    lo_t = rstep * np.maximum(1.0, np.abs(lb))
    hi_t = rstep * np.maximum(1.0, np.abs(ub))
    at_lo = x - lb <= np.minimum(lo_t, ub - x)
    at_hi = ub - x <= np.minimum(hi_t, x - lb)
    if rstep == 0:
        x[at_lo] = np.nextafter(lb[at_lo], ub[at_lo])
        x[at_hi] = np.nextafter(ub[at_hi], lb[at_hi])
    else:
        x[at_lo] = lb[at_lo] + lo_t[at_lo]
        x[at_hi] = ub[at_hi] - hi_t[at_hi]
    tight = (x < lb) | (x > ub)
    x[tight] = 0.5 * (lb[tight] + ub[tight])
    return x


def active_bounds(x, lb, ub, rtol=1e-6):
    """-1 / +1 where a coordinate sits within ``rtol * width`` of lower / upper, else 0."""
    w = ub - lb
    out = np.zeros(len(x), dtype=int)
    out[x - lb <= rtol * w] = -1
    out[ub - x <= rtol * w] = 1
    return out


def trust_region_reflective(res, x0, lower, upper, options, on_iter=None):
    """Coleman-Li trust-region reflective least squares on a box.

    Iterates stay strictly inside the box.  Each step solves the scaled
    trust-region subproblem exactly, then chooses between the truncated
    Gauss-Newton step, its reflection off the first bound hit, and a
    scaled steepest-descent step.  The radius doubles when the agreement
    ratio exceeds 0.75 on a step reaching the boundary and shrinks to a
    quarter of the step when it falls below 0.25.

    Returns ``(x, cost, iterations, status)`` with ``cost = r.r``.
    """
    ftol = xtol = options.tolerance
    lb, ub = lower, upper
    x = _strictly_feasible(np.asarray(x0, dtype=np.float64), lb, ub)
    f = res(x)
    m, n = f.size, x.size
    cost = 0.5 * float(f @ f)
    J = _jacobian(res, x, lb, ub, f)
    g = J.T @ f
    v, _ = _scaling_vector(x, g, lb, ub)
    radius = float(np.linalg.norm(x / np.sqrt(v)))
    if radius == 0:
        radius = 1.0
    alpha = 0.0
    its = 0
    while True:
        v, dv = _scaling_vector(x, g, lb, ub)
        g_norm = float(np.max(np.abs(g * v)))
        if g_norm < options.gtol:
            return x, 2 * cost, its, Status.CONVERGED
        d = np.sqrt(v)
        diag_h = g * dv
        gh = d * g
        Jh = J * d
        J_aug = np.vstack([Jh, np.diag(np.sqrt(diag_h))])
        f_aug = np.concatenate([f, np.zeros(n)])
        U, s, Vt = np.linalg.svd(J_aug, full_matrices=False)
        V = Vt.T
        uf = U.T @ f_aug
        theta = max(0.995, 1 - g_norm)
        actual = -1.0
        done = False
        while actual <= 0:
            ph, alpha = _solve_subproblem(n, m, uf, s, V, radius, alpha)
            p = d * ph
            step, step_h, predicted = _select_step(x, Jh, diag_h, gh, p, ph, d, radius, lb, ub, theta)
            x_new = _strictly_feasible(x + step, lb, ub, rstep=0)
            f_new = res(x_new)
            step_h_norm = float(np.linalg.norm(step_h))
            if not np.all(np.isfinite(f_new)):
                radius = 0.25 * step_h_norm
                continue
            cost_new = 0.5 * float(f_new @ f_new)
            actual = cost - cost_new
            if predicted > 0:
                ratio = actual / predicted
            elif predicted == actual == 0:
                ratio = 1.0
            else:
                ratio = 0.0
            new_radius = radius
            if ratio < 0.25:
                new_radius = 0.25 * step_h_norm
            elif ratio > 0.75 and step_h_norm > 0.95 * radius:
                new_radius = 2.0 * radius
            step_norm = float(np.linalg.norm(step))
            f_ok = actual < ftol * cost and ratio > 0.25
            x_ok = step_norm < xtol * (xtol + float(np.linalg.norm(x)))
            if f_ok or x_ok:
                done = True
                break
            if new_radius == 0:
                done = True
                break
            alpha *= radius / new_radius
            radius = new_radius
        if actual > 0:
            x, f, cost = x_new, f_new, cost_new
            its += 1
            if on_iter:
                on_iter()
            if done:
                return x, 2 * cost, its, Status.CONVERGED
            J = _jacobian(res, x, lb, ub, f)
            g = J.T @ f
        elif done:
            return x, 2 * cost, its, Status.CONVERGED
