"""Bessel functions of the first kind and their positive zeros.

Real order, real non-negative argument, vectorised over the argument.
Three regimes are stitched together: the ascending power series for
small arguments, Miller's backward recurrence in the middle range and
Hankel's asymptotic expansion for large arguments.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DomainError

__all__ = ["besselj", "besselj_prime", "bessel_zeros", "BesselTable", "bessel_table"]

_SERIES_CUTOFF = 4.0
_TINY = 1e-300
_HUGE = 1e200


def _series(nu: float, x: np.ndarray) -> np.ndarray:
    # (x/2)^nu * sum_k (-x^2/4)^k / (k! Gamma(k + nu + 1))
    q = -0.25 * x * x
    term = np.full_like(x, 1.0 / math.gamma(nu + 1.0))
    total = term.copy()
    for k in range(1, 80):
        term = term * q / (k * (k + nu))
        total += term
        if np.all(np.abs(term) <= 1e-17 * np.abs(total)):
            break
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.power(0.5 * x, nu)
    return scale * total


def _hankel(nu: float, x: np.ndarray) -> np.ndarray:
    mu = 4.0 * nu * nu
    p = np.ones_like(x)
    q = np.zeros_like(x)
    term = np.ones_like(x)
    prev = np.full_like(x, np.inf)
    active = np.ones(x.shape, dtype=bool)
    for k in range(1, 60):
        term = term * (mu - (2 * k - 1) ** 2) / (k * 8.0 * x)
        mag = np.abs(term)
        # stop each element once the asymptotic terms begin to grow
        active &= mag < prev
        if not active.any():
            break
        sign = -1.0 if (k // 2) % 2 else 1.0
        contrib = np.where(active, sign * term, 0.0)
        if k % 2:
            q += contrib
        else:
            p += contrib
        prev = mag
        if np.all(mag[active] < 1e-17):
            break
    chi = x - (0.5 * nu + 0.25) * math.pi
    return np.sqrt(2.0 / (math.pi * x)) * (p * np.cos(chi) - q * np.sin(chi))


def _miller_weights(nu0: float, kmax: int) -> np.ndarray:
    # coefficients of sum_k a_k J_{nu0+2k}(x) = (x/2)^nu0
    a = np.empty(kmax + 1)
    a[0] = math.gamma(nu0 + 1.0)
    for k in range(1, kmax + 1):
        a[k] = (nu0 + 2 * k) * math.exp(math.lgamma(nu0 + k) - math.lgamma(k + 1.0))
    return a


def _miller(nu: float, x: np.ndarray) -> np.ndarray:
    shift = math.floor(nu)
    nu0 = nu - shift
    target = int(shift)
    xmax = float(x.max())
    top = int(xmax + 12.0 * xmax ** (1.0 / 3.0) + 2.0 * abs(nu) + 30)
    top += top % 2
    weights = _miller_weights(nu0, top // 2)

    f_next = np.zeros_like(x)
    f_cur = np.full_like(x, 1e-30)
    total = np.zeros_like(x)
    captured = np.zeros_like(x)
    f0 = f1 = None
    for n in range(top, -1, -1):
        if n % 2 == 0:
            total += weights[n // 2] * f_cur
        if n == target:
            captured = f_cur.copy()
        if n == 1:
            f1 = f_cur.copy()
        if n == 0:
            f0 = f_cur.copy()
            break
        f_prev = (2.0 * (nu0 + n) / x) * f_cur - f_next
        big = np.abs(f_prev) > _HUGE
        if big.any():
            s = np.where(big, 1.0 / _HUGE, 1.0)
            f_prev *= s
            f_cur *= s
            total *= s
            captured *= s
            if f1 is not None:
                f1 *= s
        f_next, f_cur = f_cur, f_prev
    if target == -1:
        captured = (2.0 * nu0 / x) * f0 - f1
    return captured * np.power(0.5 * x, nu0) / total


def besselj(nu: float, x) -> np.ndarray:
    """Bessel function of the first kind :math:`J_\\nu(x)`.

    Parameters
    ----------
    nu : float
        Real order, ``nu >= -1`` unless ``nu`` is a negative integer.
    x : array_like
        Non-negative arguments.

    Returns
    -------
    ndarray
        Values with the shape of ``x``.
    """
    nu = float(nu)
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    if np.any(x < 0):
        raise DomainError("besselj requires non-negative arguments")
    if nu < 0 and nu == math.floor(nu):
        out = besselj(-nu, x) * (-1.0) ** int(-nu)
        return out[0] if scalar else out
    if nu < -1:
        raise DomainError("orders below -1 are not supported")
    out = np.empty_like(x)
    x_asym = max(25.0, 2.0 * nu * nu)
    small = x < max(_SERIES_CUTOFF, 0.5 * nu)
    large = x >= x_asym
    mid = ~(small | large)
    if small.any():
        out[small] = _series(nu, x[small])
    if large.any():
        out[large] = _hankel(nu, x[large])
    if mid.any():
        out[mid] = _miller(nu, x[mid])
    return out[0] if scalar else out


def besselj_prime(nu: float, x) -> np.ndarray:
    """Derivative :math:`J_\\nu'(x) = (J_{\\nu-1}(x) - J_{\\nu+1}(x)) / 2`."""
    return 0.5 * (besselj(nu - 1.0, x) - besselj(nu + 1.0, x))


def _mcmahon(nu: float, k: np.ndarray) -> np.ndarray:
    mu = 4.0 * nu * nu
    beta = (k + 0.5 * nu - 0.25) * math.pi
    return beta - (mu - 1.0) / (8.0 * beta) - 4.0 * (mu - 1.0) * (7.0 * mu - 31.0) / (3.0 * (8.0 * beta) ** 3)


def bessel_zeros(nu: float, count: int) -> np.ndarray:
    """First ``count`` positive zeros of :math:`J_\\nu`, ``nu >= 0``.

    Sign changes are located on a grid reaching past the McMahon estimate
    of the last requested zero, then every bracket is bisected to
    machine precision at once.
    """
    nu = float(nu)
    if nu < 0:
        raise DomainError("bessel_zeros requires nu >= 0")
    if count < 1:
        raise DomainError("count must be positive")
    upper = float(_mcmahon(nu, np.array([count + 1.0]))[0]) + math.pi
    lower = max(nu, 0.5)
    while True:
        grid = np.arange(lower, upper, 0.05)
        vals = besselj(nu, grid)
        idx = np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)[0]
        if idx.size >= count:
            break
        upper += 4.0 * math.pi
    lo = grid[idx[:count]].copy()
    hi = grid[idx[:count] + 1].copy()
    flo = besselj(nu, lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = besselj(nu, mid)
        left = np.sign(fm) == np.sign(flo)
        lo = np.where(left, mid, lo)
        flo = np.where(left, fm, flo)
        hi = np.where(left, hi, mid)
        if np.all(hi - lo <= 4.0 * np.spacing(hi)):
            break
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class BesselTable:
    """Cached zeros of one Bessel order.

    Attributes
    ----------
    order : float
    zeros : ndarray
        Increasing positive zeros.
    """

    order: float
    zeros: np.ndarray


@lru_cache(maxsize=64)
def _zeros_cached(nu: float, count: int) -> tuple:
    return tuple(bessel_zeros(nu, count))


def bessel_table(order: float, count: int) -> BesselTable:
    """Return (and memoise) a :class:`BesselTable` of ``count`` zeros."""
    zeros = np.array(_zeros_cached(float(order), int(count)))
    zeros.setflags(write=False)
    return BesselTable(order=float(order), zeros=zeros)
