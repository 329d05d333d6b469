"""Pure-Python twin of ``_kernels.pyx``.

Same signatures, same state layouts, same floating-point operation order,
so both backends agree to the last bit on IEEE hardware without FMA
contraction.  Scalar float arithmetic beats numpy here: the states hold
three to fifteen numbers.
"""
import math

import numpy as np


def _flat_rhs(beta, gamma, mu, nu, norm, y):
    s = y[0]
    i = y[1]
    inf = beta * s * i / norm
    return [-inf - nu * s, inf - gamma * i - mu * i, gamma * i, nu * s, mu * i]


def flat(beta, gamma, mu, nu, norm, y0, days, steps_per_day, euler=False):
    h = 1.0 / steps_per_day
    half = 0.5 * h
    h6 = h / 6.0
    y = [float(v) for v in y0]
    samples = np.empty((days + 1, 5), dtype=np.float64)
    samples[0] = y
    fail = -1
    for d in range(1, days + 1):
        for _ in range(steps_per_day):
            k1 = _flat_rhs(beta, gamma, mu, nu, norm, y)
            if euler:
                y = [y[c] + h * k1[c] for c in range(5)]
                continue
            k2 = _flat_rhs(beta, gamma, mu, nu, norm, [y[c] + half * k1[c] for c in range(5)])
            k3 = _flat_rhs(beta, gamma, mu, nu, norm, [y[c] + half * k2[c] for c in range(5)])
            k4 = _flat_rhs(beta, gamma, mu, nu, norm, [y[c] + h * k3[c] for c in range(5)])
            y = [y[c] + h6 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]) for c in range(5)]
        samples[d] = y
        if not all(math.isfinite(v) for v in y):
            fail = d
            break
    return samples, fail


def _group_rhs(beta, gamma, mix, norms, g, y):
    dy = [0.0] * (3 * g)
    for i in range(g):
        force = 0.0
        row = mix[i]
        for j in range(g):
            force = force + row[j] * y[g + j] / norms[j]
        inf = beta * y[i] * force
        dy[i] = -inf
        dy[g + i] = inf - gamma * y[g + i]
        dy[2 * g + i] = gamma * y[g + i]
    return dy


def grouped(beta, gamma, mix, norms, y0, days, steps_per_day, euler=False):
    g = len(mix)
    m = 3 * g
    mix = [[float(v) for v in row] for row in np.asarray(mix)]
    norms = [float(v) for v in norms]
    h = 1.0 / steps_per_day
    half = 0.5 * h
    h6 = h / 6.0
    y = [float(v) for v in y0]
    samples = np.empty((days + 1, m), dtype=np.float64)
    samples[0] = y
    fail = -1
    for d in range(1, days + 1):
        for _ in range(steps_per_day):
            k1 = _group_rhs(beta, gamma, mix, norms, g, y)
            if euler:
                y = [y[c] + h * k1[c] for c in range(m)]
                continue
            k2 = _group_rhs(beta, gamma, mix, norms, g, [y[c] + half * k1[c] for c in range(m)])
            k3 = _group_rhs(beta, gamma, mix, norms, g, [y[c] + half * k2[c] for c in range(m)])
            k4 = _group_rhs(beta, gamma, mix, norms, g, [y[c] + h * k3[c] for c in range(m)])
            y = [y[c] + h6 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]) for c in range(m)]
        samples[d] = y
        if not all(math.isfinite(v) for v in y):
            fail = d
            break
    return samples, fail
