# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled particle and Picard kernels (same contract as ``_pykernels``)."""
from libc.math cimport sin, pow, sqrt, fabs

import numpy as np
cimport numpy as cnp

cnp.import_array()

DEF REFLECT = 0
DEF ABSORB = 1
DEF FREE = 2
DEF MAX_FOLDS = 64


cdef inline double _mu(double x, int kind, double param, int clip) noexcept nogil:
    if clip:
        if x < 0.0:
            x = 0.0
        elif x > 1.0:
            x = 1.0
    cdef int j, n
    cdef double r
    if kind == 1:
        n = <int>param
        if n == param and 0 <= n <= 16:
            # small integer powers by repeated multiplication
            r = 1.0
            for j in range(n):
                r = r * x
            return r
        return pow(x, param)
    if kind == 2:
        return sin(param * x)
    return 0.0


def em_chunk(double[::1] x, unsigned char[::1] alive, const double[::1] incr, const double[:, ::1] normals,
             double sqrt2dt, int regime, int kind, double param, int clip=1, x_start=None, sup_sq=None,
             sup_dev=None, drift=None):
    if drift is not None:
        raise ValueError("the compiled kernel supports only built-in drift families")
    cdef Py_ssize_t n = x.shape[0], m = incr.shape[0], i, k
    cdef long long reflections = 0, absorptions = 0, excess = 0
    cdef int folds
    cdef double y, d
    cdef bint track = sup_sq is not None
    cdef double[::1] xs, ss, sd
    if track:
        xs = x_start
        ss = sup_sq
        sd = sup_dev
    with nogil:
        for k in range(m):
            for i in range(n):
                if regime == ABSORB and not alive[i]:
                    continue
                y = x[i] + (incr[k] * _mu(x[i], kind, param, clip) + sqrt2dt * normals[k, i])
                if regime == REFLECT:
                    folds = 0
                    while (y < 0.0 or y > 1.0) and folds < MAX_FOLDS:
                        if y < 0.0:
                            y = -y
                            folds += 1
                        if y > 1.0:
                            y = 2.0 - y
                            folds += 1
                    reflections += folds
                    if folds > 2:
                        excess += 1
                elif regime == ABSORB:
                    if y < 0.0 or y > 1.0:
                        alive[i] = 0
                        absorptions += 1
                x[i] = y
                if track:
                    if y * y > ss[i]:
                        ss[i] = y * y
                    d = (y - xs[i]) * (y - xs[i])
                    if d > sd[i]:
                        sd[i] = d
    return int(reflections), int(absorptions), int(excess)


def picard_distances(double x0, const double[::1] incr, const double[::1] W, int kind, double param,
                     int clip, int iterations, drift=None):
    if drift is not None:
        raise ValueError("the compiled kernel supports only built-in drift families")
    cdef Py_ssize_t m = incr.shape[0], k
    cdef int it
    cdef double acc, root2 = sqrt(2.0), best, y
    X = np.full(W.shape[0], x0)
    Y = np.empty(W.shape[0])
    out = np.empty(iterations)
    cdef double[::1] xv = X, yv = Y, ov = out
    with nogil:
        for it in range(iterations):
            acc = 0.0
            yv[0] = x0
            best = 0.0
            for k in range(m):
                acc = acc + incr[k] * _mu(xv[k], kind, param, clip)
                y = x0 + acc + root2 * W[k + 1]
                yv[k + 1] = y
                if fabs(y - xv[k + 1]) > best:
                    best = fabs(y - xv[k + 1])
            ov[it] = best
            for k in range(m + 1):
                xv[k] = yv[k]
    return out
