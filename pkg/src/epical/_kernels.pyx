# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled fixed-step integrators for the compartmental models.

The flat kernel always integrates the five-slot SIRVD layout
``(S, I, R, V, D)``; SIR and SIRD are the special cases ``nu = mu = 0``,
which leaves every floating-point operation unchanged.  The grouped kernel
integrates subgroup SIR with state laid out compartment-major
``(S_0..S_{G-1}, I_0.., R_0..)``.

Both kernels return ``(samples, fail_day)`` where ``samples`` holds one row
per integer day and ``fail_day`` is ``-1`` or the first day whose state is
not finite.  The operation order mirrors ``_kernels_py`` exactly.
"""
import numpy as np
from libc.math cimport isfinite


cdef inline void _flat_rhs(double beta, double gamma, double mu, double nu,
                           double norm, double* y, double* dy) noexcept nogil:
    cdef double s = y[0]
    cdef double i = y[1]
    cdef double inf = beta * s * i / norm
    dy[0] = -inf - nu * s
    dy[1] = inf - gamma * i - mu * i
    dy[2] = gamma * i
    dy[3] = nu * s
    dy[4] = mu * i


def flat(double beta, double gamma, double mu, double nu, double norm,
         double[::1] y0, int days, int steps_per_day, bint euler=False):
    cdef double[:, ::1] out
    cdef double y[5]
    cdef double tmp[5]
    cdef double k1[5]
    cdef double k2[5]
    cdef double k3[5]
    cdef double k4[5]
    cdef double h = 1.0 / steps_per_day
    cdef double half = 0.5 * h
    cdef double h6 = h / 6.0
    cdef int d, n, c
    cdef int fail = -1

    samples = np.empty((days + 1, 5), dtype=np.float64)
    out = samples
    for c in range(5):
        y[c] = y0[c]
        out[0, c] = y[c]

    with nogil:
        for d in range(1, days + 1):
            for n in range(steps_per_day):
                _flat_rhs(beta, gamma, mu, nu, norm, y, k1)
                if euler:
                    for c in range(5):
                        y[c] = y[c] + h * k1[c]
                    continue
                for c in range(5):
                    tmp[c] = y[c] + half * k1[c]
                _flat_rhs(beta, gamma, mu, nu, norm, tmp, k2)
                for c in range(5):
                    tmp[c] = y[c] + half * k2[c]
                _flat_rhs(beta, gamma, mu, nu, norm, tmp, k3)
                for c in range(5):
                    tmp[c] = y[c] + h * k3[c]
                _flat_rhs(beta, gamma, mu, nu, norm, tmp, k4)
                for c in range(5):
                    y[c] = y[c] + h6 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c])
            for c in range(5):
                out[d, c] = y[c]
                if not isfinite(y[c]):
                    fail = d
            if fail >= 0:
                break
    return samples, fail


cdef void _group_rhs(double beta, double gamma, double[:, ::1] mix,
                     double[::1] norms, int g, double[::1] y,
                     double[::1] dy) noexcept nogil:
    cdef int i, j
    cdef double force, inf
    for i in range(g):
        force = 0.0
        for j in range(g):
            force = force + mix[i, j] * y[g + j] / norms[j]
        inf = beta * y[i] * force
        dy[i] = -inf
        dy[g + i] = inf - gamma * y[g + i]
        dy[2 * g + i] = gamma * y[g + i]


def grouped(double beta, double gamma, double[:, ::1] mix, double[::1] norms,
            double[::1] y0, int days, int steps_per_day, bint euler=False):
    cdef int g = mix.shape[0]
    cdef int m = 3 * g
    cdef double h = 1.0 / steps_per_day
    cdef double half = 0.5 * h
    cdef double h6 = h / 6.0
    cdef int d, n, c
    cdef int fail = -1
    cdef double[::1] y = np.array(y0, dtype=np.float64)
    cdef double[::1] tmp = np.empty(m)
    cdef double[::1] k1 = np.empty(m)
    cdef double[::1] k2 = np.empty(m)
    cdef double[::1] k3 = np.empty(m)
    cdef double[::1] k4 = np.empty(m)
    cdef double[:, ::1] out

    samples = np.empty((days + 1, m), dtype=np.float64)
    out = samples
    for c in range(m):
        out[0, c] = y[c]

    with nogil:
        for d in range(1, days + 1):
            for n in range(steps_per_day):
                _group_rhs(beta, gamma, mix, norms, g, y, k1)
                if euler:
                    for c in range(m):
                        y[c] = y[c] + h * k1[c]
                    continue
                for c in range(m):
                    tmp[c] = y[c] + half * k1[c]
                _group_rhs(beta, gamma, mix, norms, g, tmp, k2)
                for c in range(m):
                    tmp[c] = y[c] + half * k2[c]
                _group_rhs(beta, gamma, mix, norms, g, tmp, k3)
                for c in range(m):
                    tmp[c] = y[c] + h * k3[c]
                _group_rhs(beta, gamma, mix, norms, g, tmp, k4)
                for c in range(m):
                    y[c] = y[c] + h6 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c])
            for c in range(m):
                out[d, c] = y[c]
                if not isfinite(y[c]):
                    fail = d
            if fail >= 0:
                break
    return samples, fail
