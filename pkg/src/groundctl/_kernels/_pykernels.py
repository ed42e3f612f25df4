"""Numpy implementations of the particle and Picard kernels.

These mirror ``_ckernels.pyx`` operation for operation and are used when
the compiled extension is unavailable or ``GROUNDCTL_KERNELS=python``.
"""
from __future__ import annotations

import numpy as np

REFLECT, ABSORB, FREE = 0, 1, 2
DRIFT_ZERO, DRIFT_POWER, DRIFT_SIN = 0, 1, 2
MAX_FOLDS = 64


def drift_values(x, kind: int, param: float, clip: int = 1):
    """``mu(clip(x, 0, 1))`` (or ``mu(x)`` with ``clip=0``) for the built-in drift families."""
    y = np.clip(x, 0.0, 1.0) if clip else np.asarray(x, dtype=float)
    if kind == DRIFT_ZERO:
        return np.zeros_like(y)
    if kind == DRIFT_POWER:
        n = int(param)
        if n == param and 0 <= n <= 16:
            # same multiplication order as the compiled kernel
            r = np.ones_like(y)
            for _ in range(n):
                r = r * y
            return r
        return y ** param
    if kind == DRIFT_SIN:
        return np.sin(param * y)
    raise ValueError(f"unknown drift kind {kind}")


def _fold(x):
    """Mirror ``x`` into ``[0, 1]``; returns the folded array and fold counts."""
    folds = np.zeros(x.shape, dtype=np.int64)
    for _ in range(MAX_FOLDS):
        lo = x < 0.0
        hi = x > 1.0
        if not (lo.any() or hi.any()):
            break
        x = np.where(lo, -x, x)
        x = np.where(hi, 2.0 - x, x)
        folds += lo
        folds += hi
    return x, folds


def em_chunk(x, alive, incr, normals, sqrt2dt, regime, kind, param, clip=1, x_start=None, sup_sq=None,
             sup_dev=None, drift=None):
    """Advance one chunk of particles through ``len(incr)`` steps in place.

    Parameters
    ----------
    x : ndarray, float64, shape (n,)
    alive : ndarray, uint8, shape (n,)
    incr : ndarray, shape (m,)
        ``int p`` over each step.
    normals : ndarray, shape (m, n)
        Standard normal draws.
    sqrt2dt : float
        ``sqrt(2 dt)``.
    regime : int
        ``REFLECT``, ``ABSORB`` or ``FREE``.
    kind, param, clip
        Built-in drift family and whether its argument is clipped to
        ``[0, 1]``; ignored when ``drift`` (a callable) is given.
    x_start, sup_sq, sup_dev : ndarray, optional
        When given, running maxima of ``x^2`` and ``(x - x_start)^2``.

    Returns
    -------
    tuple of int
        ``(reflections, absorptions, excess_folds)`` where the last counts
        particle-steps needing more than two folds.
    """
    reflections = absorptions = excess = 0
    track = sup_sq is not None
    for k in range(incr.shape[0]):
        mu = drift(x) if drift is not None else drift_values(x, kind, param, clip)
        step = incr[k] * mu + sqrt2dt * normals[k]
        if regime == ABSORB:
            live = alive.astype(bool)
            xn = x + step
            out = live & ((xn < 0.0) | (xn > 1.0))
            x[live] = xn[live]
            alive[out] = 0
            absorptions += int(out.sum())
        else:
            xn = x + step
            if regime == REFLECT:
                xn, folds = _fold(xn)
                reflections += int(folds.sum())
                excess += int((folds > 2).sum())
            x[:] = xn
        if track:
            np.maximum(sup_sq, x * x, out=sup_sq)
            d = x - x_start
            np.maximum(sup_dev, d * d, out=sup_dev)
    return reflections, absorptions, excess


def picard_distances(x0, incr, W, kind, param, clip, iterations, drift=None):
    """Sup distances ``d_m = max_k |X_{m+1}(t_k) - X_m(t_k)|`` of the Picard map.

    ``X_{m+1}(t_k) = x0 + sum_{i<k} incr_i mu(X_m(t_i)) + sqrt(2) W_k`` with
    ``X_0 = x0``; ``W`` holds the Brownian path at the ``len(incr) + 1`` grid
    times, ``W[0] = 0``.
    """
    X = np.full(W.shape[0], float(x0))
    out = np.empty(iterations)
    root2 = np.sqrt(2.0)
    for m in range(iterations):
        mu = drift(X[:-1]) if drift is not None else drift_values(X[:-1], kind, param, clip)
        Y = np.empty_like(X)
        Y[0] = x0
        Y[1:] = x0 + np.cumsum(incr * mu) + root2 * W[1:]
        out[m] = float(np.max(np.abs(Y - X)))
        X = Y
    return out
