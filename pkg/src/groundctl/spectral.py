"""Truncated eigensystems, graded norms and the explicit bound constants.

States are plain coefficient vectors ``u`` in the orthonormal eigenbasis,
``u = sum_k u[k] phi_k``.  The coupling matrix stores
``b_matrix[m, k] = <B phi_m, phi_k>`` so that the operator acting on
coefficient vectors is ``b_matrix.T``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Optional

import numpy as np

from .errors import DimensionError, DomainError

__all__ = [
    "EigenSystem",
    "norm_s",
    "inner_s",
    "estimate_CB",
    "BoundConstants",
    "compute_bound_constants",
]

BasisFn = Callable[[int, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class EigenSystem:
    """A truncated spectral model of ``u' + A u + p(t) B u = 0``.

    Parameters
    ----------
    eigenvalues : ndarray, shape (K,)
        Non-decreasing eigenvalues of ``A``.
    b_matrix : ndarray, shape (K, K)
        ``b_matrix[m, k] = <B phi_m, phi_k>``.
    labels : ndarray of int, optional
        Mode labels (``0..K-1`` for Neumann problems, ``1..K`` for
        Dirichlet ones).  Defaults to ``arange(K)``.
    ground_index : int
        Position of the ground mode, normally 0.
    basis, basis_derivative : callable, optional
        ``basis(i, x)`` evaluates the eigenfunction at position ``i``.
    spec : object, optional
        Problem descriptor this system was built from.
    shift : float
        Amount already subtracted from the eigenvalues by :meth:`shifted`.
    """

    eigenvalues: np.ndarray
    b_matrix: np.ndarray
    labels: Optional[np.ndarray] = None
    ground_index: int = 0
    basis: Optional[BasisFn] = field(default=None, repr=False, compare=False)
    basis_derivative: Optional[BasisFn] = field(default=None, repr=False, compare=False)
    spec: Any = None
    shift: float = 0.0

    def __post_init__(self):
        lam = np.asarray(self.eigenvalues, dtype=float)
        b = np.asarray(self.b_matrix, dtype=float)
        if lam.ndim != 1 or lam.size == 0:
            raise DimensionError("eigenvalues must be a non-empty 1-D array")
        if b.shape != (lam.size, lam.size):
            raise DimensionError(f"b_matrix must be {lam.size}x{lam.size}, got {b.shape}")
        if np.any(np.diff(lam) < 0):
            raise DomainError("eigenvalues must be non-decreasing")
        labels = np.arange(lam.size) if self.labels is None else np.asarray(self.labels, dtype=int)
        if labels.shape != lam.shape:
            raise DimensionError("labels must match eigenvalues")
        if not 0 <= self.ground_index < lam.size:
            raise DimensionError("ground_index out of range")
        for name, arr in (("eigenvalues", lam), ("b_matrix", b), ("labels", labels)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def size(self) -> int:
        return int(self.eigenvalues.size)

    @property
    def operator(self) -> np.ndarray:
        """Matrix of ``B`` acting on coefficient vectors."""
        return self.b_matrix.T

    @property
    def ground_couplings(self) -> np.ndarray:
        """``b_k = <B phi_g, phi_k>`` for every mode."""
        return self.b_matrix[self.ground_index]

    @property
    def ground_eigenvalue(self) -> float:
        return float(self.eigenvalues[self.ground_index])

    def ground_state(self) -> np.ndarray:
        e = np.zeros(self.size)
        e[self.ground_index] = 1.0
        return e

    def shifted(self) -> "EigenSystem":
        """Return the system with the ground eigenvalue moved to zero."""
        lg = self.ground_eigenvalue
        if lg == 0.0:
            return self
        return replace(self, eigenvalues=self.eigenvalues - lg, shift=self.shift + lg)

    def truncated(self, size: int) -> "EigenSystem":
        """Keep the first ``size`` modes."""
        if not self.ground_index < size <= self.size:
            raise DimensionError("invalid truncation size")
        return replace(
            self,
            eigenvalues=self.eigenvalues[:size],
            b_matrix=self.b_matrix[:size, :size],
            labels=self.labels[:size],
        )

    def gap(self) -> float:
        """Smallest consecutive difference of ``sqrt(lambda_k)``."""
        root = np.sqrt(np.maximum(self.eigenvalues + self.shift, 0.0))
        return float(np.min(np.diff(root))) if self.size > 1 else math.inf

    def evaluate(self, coeffs, x) -> np.ndarray:
        """Evaluate ``sum_k coeffs[k] phi_k(x)`` (requires ``basis``)."""
        if self.basis is None:
            raise DomainError("this eigensystem carries no basis functions")
        coeffs = _check(coeffs, self)
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for i, c in enumerate(coeffs):
            if c != 0.0:
                out += c * self.basis(i, x)
        return out


def _check(u, es: EigenSystem) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != es.size:
        raise DimensionError(f"state has {u.shape[-1]} coefficients, eigensystem has {es.size}")
    return u


def _weights(es: EigenSystem, s: float) -> np.ndarray:
    # s = 0 is the plain L2 norm of the coefficients
    if s == 0:
        return np.ones(es.size)
    return 1.0 + np.maximum(es.eigenvalues, 0.0) ** (2.0 * s)


def norm_s(u, s: float, es: EigenSystem) -> np.ndarray:
    """Graded norm ``sqrt(sum_k (1 + lambda_k^{2s}) u_k^2)`` for ``s > 0``.

    ``s = 0`` gives the Euclidean norm of the coefficients.  Broadcasts
    over leading axes of ``u``.
    """
    u = _check(u, es)
    return np.sqrt(np.sum(_weights(es, s) * u * u, axis=-1))


def inner_s(u, v, s: float, es: EigenSystem) -> np.ndarray:
    """Inner product associated with :func:`norm_s`."""
    u = _check(u, es)
    v = _check(v, es)
    return np.sum(_weights(es, s) * u * v, axis=-1)


def estimate_CB(es: EigenSystem) -> float:
    """Estimate ``C_B`` with ``||B u|| <= C_B ||u||_{1/2}`` on the truncation.

    Computed as the largest singular value of ``B diag(1 + lambda)^{-1/2}``.
    This is a lower bound for the constant of the full operator and is
    non-decreasing in the truncation size.
    """
    scale = 1.0 / np.sqrt(1.0 + np.maximum(es.eigenvalues, 0.0))
    return float(np.linalg.norm(es.operator * scale[None, :], 2))


@dataclass(frozen=True)
class BoundConstants:
    """Explicit constants of the staged local controllability argument.

    Construct through :func:`compute_bound_constants`.

    Attributes
    ----------
    C_B, nu, lam1, horizon, T0 : float
        Inputs: embedding constant, control-cost exponent, first
        eigenvalue, requested horizon and cost-law range.
    D : float
        Amplification constant of the stage error recursion.
    Gamma0 : float
        ``2 nu + max(log D, 0)``.
    T_f : float
        Final time actually used, ``min(T, pi^2/6, pi^2 T0 / 6)``.
    T1 : float
        First stage length ``6 T_f / pi^2``.
    R_T : float
        Radius of the ball of admissible initial errors.
    """

    C_B: float
    nu: float
    lam1: float
    horizon: float
    T0: float
    D: float
    Gamma0: float
    T_f: float
    T1: float
    R_T: float

    def N(self, T: float) -> float:
        """Cost-law bound ``exp(nu / T)``."""
        return _safe_exp(self.nu / T)

    def C2(self, T: float, p_norm: float) -> float:
        cb = self.C_B
        return 2.0 * cb * math.sqrt(T) * p_norm + cb * cb * p_norm * p_norm + T

    def C3(self, T: float, p_norm: float) -> float:
        return 1.5 * self.C_B ** 2 * p_norm ** 2 + self.C2(T, p_norm)

    def C11(self, T: float, r: float) -> float:
        """Energy-bound constant for a stage of length ``T`` and error ``r``."""
        cb, n = self.C_B, self.N(T)
        g = (1.0 + math.sqrt(self.lam1)) ** 2
        expo = cb * n * (2.5 * cb * n * r + 2.0 * math.sqrt(T)) * r + T
        poly = 1.0 + 2.5 * cb * cb * g * n * n + 1.5 * cb * cb * n * n * (cb * cb * g * n * n + 1.0) * r * r
        return _safe_exp(expo) * poly

    def C4(self, T: float) -> float:
        cb = self.C_B
        return cb * (2.5 * cb + 2.0 * math.sqrt(T)) + 2.0 * T

    def C5(self, T: float) -> float:
        cb, n = self.C_B, self.N(T)
        g = (1.0 + math.sqrt(self.lam1)) ** 2
        return 1.0 + 2.5 * cb * cb * g * n * n + 1.5 * cb * cb * (cb * cb * g * n * n + 1.0)

    def K(self, T: float) -> float:
        """Quadratic-remainder constant ``K(T)``."""
        n = self.N(T)
        return math.sqrt(2.0 * _safe_exp(self.C4(T)) * self.C_B ** 2 * n * n * self.C5(T))

    def stage_length(self, j: int) -> float:
        return self.T1 / (j * j)

    def stage_endpoint(self, n: int) -> float:
        return sum(self.T1 / (j * j) for j in range(1, n + 1))

    def stage_ceiling(self, n: int) -> float:
        """Theoretical ceiling on the error after stage ``n``."""
        s = sum(2.0 ** (n - j) * j * j for j in range(1, n + 1))
        return _safe_exp((s - 6.0 * 2.0 ** n) * self.Gamma0 / self.T1)

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _safe_exp(x: float) -> float:
    return math.exp(x) if x < 709.0 else math.inf


def amplification_constant(C_B: float, lam1: float) -> float:
    """The constant ``D`` of the stage recursion."""
    cb = C_B
    inner = max(1.0 + 1.5 * cb * cb, 0.5 * cb * cb * (1.0 + math.sqrt(lam1)) ** 2 * (5.0 + 3.0 * cb * cb))
    return 2.0 * math.sqrt(2.0) * cb * _safe_exp(cb * (1.25 * cb + 1.0) + 1.0) * math.sqrt(inner)


def compute_bound_constants(C_B: float, nu: float, lam1: float, T: float, T0: float = 1.0) -> BoundConstants:
    """Evaluate every explicit constant for horizon ``T``.

    Parameters
    ----------
    C_B : float
        Embedding constant, ``C_B >= 1``.
    nu : float
        Exponent of the control-cost law ``N(T) <= exp(nu / T)``, positive.
    lam1 : float
        First eigenvalue of the (shifted) operator, non-negative.
    T : float
        Requested horizon, positive.
    T0 : float
        Upper end of the range where the cost law holds.

    Raises
    ------
    DomainError
        On non-positive ``T``, ``T0`` or ``nu``, negative ``lam1`` or ``C_B < 1``.
    """
    for name, val in (("T", T), ("T0", T0), ("nu", nu)):
        if not (val > 0 and math.isfinite(val)):
            raise DomainError(f"{name} must be positive and finite, got {val}")
    if not C_B >= 1.0:
        raise DomainError(f"C_B must be at least 1, got {C_B}")
    if lam1 < 0:
        raise DomainError("lam1 must be non-negative")
    D = amplification_constant(C_B, lam1)
    gamma0 = 2.0 * nu + max(math.log(D), 0.0)
    basel = math.pi ** 2 / 6.0
    T_f = min(T, basel, basel * T0)
    T1 = T_f / basel
    R_T = math.exp(-6.0 * gamma0 / T1)
    return BoundConstants(
        C_B=float(C_B), nu=float(nu), lam1=float(lam1), horizon=float(T), T0=float(T0),
        D=D, Gamma0=gamma0, T_f=T_f, T1=T1, R_T=R_T,
    )
