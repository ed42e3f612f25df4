"""Catalogue of one-dimensional instances of the abstract bilinear problem.

Every instance lives on ``x in (0, 1)``:

``fp_neumann``
    Fokker-Planck with no-flux diffusion, ``A = -d2/dx2`` (Neumann),
    ``B u = (mu u)'``.  Modes ``k = 0, 1, ...``, ``phi_k = sqrt(2) cos(k pi x)``.
``fp_dirichlet``
    Same operator pair with absorbing ends.  Modes ``k = 1, 2, ...``,
    ``phi_k = sqrt(2) sin(k pi x)``.
``heat_neumann_drift``
    Neumann heat operator with ``B u = mu (u' + u)``.
``degenerate_dirichlet``
    ``A u = -(x^alpha u')'`` with ``B u = x u'``; Bessel spectrum.
``degenerate_neumann``
    ``A u = -(x^alpha u')'`` with no-flux ends and ``B u = x^{2-alpha}(u' + u)``.

The drift ``mu`` is ``x**n`` (``mu_power``) or ``sin(a x)`` (``mu_freq``)
for the first three kinds and fixed for the degenerate ones.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .bessel import bessel_table, besselj
from .errors import DomainError, RankConditionError, UnsupportedClosedForm, ValidationError
from .quadrature import adaptive_integrate, composite_rule, graded_edges
from .spectral import EigenSystem

__all__ = [
    "KINDS",
    "ProblemSpec",
    "build_problem",
    "b_coeff_closed_form",
    "b_coeff_quadrature",
    "verify_hypotheses",
    "HypothesisReport",
    "required_gap",
]

KINDS = ("fp_neumann", "fp_dirichlet", "heat_neumann_drift", "degenerate_dirichlet", "degenerate_neumann")
_NEUMANN = ("fp_neumann", "heat_neumann_drift", "degenerate_neumann")
_DEFAULT_POWER = {"fp_neumann": 3.0, "fp_dirichlet": 1.0, "heat_neumann_drift": 2.0}
RANK_TOL = 1e-12


@dataclass(frozen=True)
class ProblemSpec:
    """Description of one catalogue instance.

    Parameters
    ----------
    kind : str
        One of :data:`KINDS`.
    truncation : int
        Number of retained modes ``K``.
    mu_power, mu_freq : float, optional
        Drift ``x**mu_power`` or ``sin(mu_freq * x)``; at most one may be
        set, and neither for degenerate kinds.  ``mu_freq = 0`` is the zero
        drift.
    alpha : float
        Degeneracy exponent of the degenerate kinds.
    """

    kind: str
    truncation: int = 32
    mu_power: Optional[float] = None
    mu_freq: Optional[float] = None
    alpha: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown problem kind {self.kind!r}; expected one of {KINDS}")
        if int(self.truncation) != self.truncation or self.truncation < 2:
            raise ValidationError("truncation must be an integer >= 2")
        object.__setattr__(self, "truncation", int(self.truncation))
        degenerate = self.kind.startswith("degenerate")
        if degenerate:
            if self.mu_power is not None or self.mu_freq is not None:
                raise ValidationError(f"{self.kind} has a fixed drift; mu_power/mu_freq not allowed")
            hi = 4.0 / 3.0 if self.kind == "degenerate_neumann" else 2.0
            ok = 0.0 <= self.alpha <= hi if self.kind == "degenerate_neumann" else 0.0 <= self.alpha < hi
            if not ok:
                raise ValidationError(f"alpha={self.alpha} outside the admissible range of {self.kind}")
        else:
            if self.alpha != 0.0:
                raise ValidationError(f"alpha is only meaningful for degenerate kinds")
            if self.mu_power is not None and self.mu_freq is not None:
                raise ValidationError("give either mu_power or mu_freq, not both")
            if self.mu_power is None and self.mu_freq is None:
                object.__setattr__(self, "mu_power", _DEFAULT_POWER[self.kind])
            if self.mu_power is not None and self.mu_power < 0:
                raise ValidationError("mu_power must be non-negative")

    @property
    def neumann(self) -> bool:
        return self.kind in _NEUMANN

    @property
    def first_label(self) -> int:
        return 0 if self.neumann else 1

    def drift(self) -> tuple[Callable, Callable]:
        """Return ``(mu, mu')`` as vectorised callables on [0, 1]."""
        if self.kind == "degenerate_dirichlet":
            return (lambda x: np.asarray(x, float)), (lambda x: np.ones_like(np.asarray(x, float)))
        if self.kind == "degenerate_neumann":
            e = 2.0 - self.alpha
            return (lambda x: np.power(x, e)), (lambda x: e * np.power(x, e - 1.0))
        if self.mu_freq is not None:
            a = float(self.mu_freq)
            return (lambda x: np.sin(a * np.asarray(x, float))), (lambda x: a * np.cos(a * np.asarray(x, float)))
        n = float(self.mu_power)
        if n == 0:
            return (lambda x: np.ones_like(np.asarray(x, float))), (lambda x: np.zeros_like(np.asarray(x, float)))
        return (lambda x: np.power(x, n)), (lambda x: n * np.power(x, n - 1.0))

    def describe(self) -> str:
        if self.kind.startswith("degenerate"):
            return f"{self.kind}(alpha={self.alpha:g}, K={self.truncation})"
        mu = f"x^{self.mu_power:g}" if self.mu_freq is None else f"sin({self.mu_freq:g}x)"
        return f"{self.kind}(mu={mu}, K={self.truncation})"


# ---------------------------------------------------------------------------
# eigenpairs


@dataclass(frozen=True)
class _Modes:
    labels: np.ndarray
    eigenvalues: np.ndarray
    phi: Callable[[int, np.ndarray], np.ndarray]
    dphi: Callable[[int, np.ndarray], np.ndarray]
    extra: dict = field(default_factory=dict)


def _trig_modes(spec: ProblemSpec) -> _Modes:
    K = spec.truncation
    r2 = math.sqrt(2.0)
    if spec.neumann:
        labels = np.arange(K)

        def phi(i, x):
            k = labels[i]
            return np.ones_like(np.asarray(x, float)) if k == 0 else r2 * np.cos(k * math.pi * np.asarray(x, float))

        def dphi(i, x):
            k = labels[i]
            return -r2 * k * math.pi * np.sin(k * math.pi * np.asarray(x, float))
    else:
        labels = np.arange(1, K + 1)

        def phi(i, x):
            return r2 * np.sin(labels[i] * math.pi * np.asarray(x, float))

        def dphi(i, x):
            k = labels[i]
            return r2 * k * math.pi * np.cos(k * math.pi * np.asarray(x, float))
    return _Modes(labels, (labels * math.pi) ** 2.0, phi, dphi)


def _bessel_profile(x, a: float, nu: float, kappa: float, j: float):
    """``x^a J_nu(j x^kappa)`` and its derivative in ``x``."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = j * np.power(x, kappa)
        jn = besselj(nu, z)
        jn1 = besselj(nu + 1.0, z)
        val = np.power(x, a) * jn
        der = np.power(x, a - 1.0) * ((a + kappa * nu) * jn - kappa * z * jn1)
    return val, der


def _degenerate_params(alpha: float, neumann: bool):
    kappa = (2.0 - alpha) / 2.0
    a = (1.0 - alpha) / 2.0
    if neumann:
        nu = (alpha - 1.0) / (2.0 - alpha)
        zero_order = nu + 1.0
    else:
        nu = abs(1.0 - alpha) / (2.0 - alpha)
        zero_order = nu
    return kappa, a, nu, zero_order


def _degenerate_mesh(K: int):
    edges = graded_edges(0.0, 1.0, K + 8, 2.0 ** -60, "left")
    return composite_rule(edges, 24)


def _degenerate_dirichlet_modes(spec: ProblemSpec) -> _Modes:
    K, alpha = spec.truncation, spec.alpha
    kappa, a, nu, order = _degenerate_params(alpha, neumann=False)
    zeros = bessel_table(order, K).zeros
    norms = math.sqrt(2.0 * kappa) / np.abs(besselj(nu + 1.0, zeros))
    labels = np.arange(1, K + 1)

    def phi(i, x):
        return norms[i] * _bessel_profile(x, a, nu, kappa, zeros[i])[0]

    def dphi(i, x):
        return norms[i] * _bessel_profile(x, a, nu, kappa, zeros[i])[1]

    extra = dict(kappa=kappa, nu=nu, zeros=zeros, normalizers=norms)
    return _Modes(labels, kappa ** 2 * zeros ** 2, phi, dphi, extra)


def _degenerate_neumann_modes(spec: ProblemSpec) -> _Modes:
    K, alpha = spec.truncation, spec.alpha
    kappa, a, nu, order = _degenerate_params(alpha, neumann=True)
    zeros = np.concatenate([[0.0], bessel_table(order, K - 1).zeros])
    # normalisers fixed by unit L2 norm under a graded composite rule
    xq, wq = _degenerate_mesh(K)
    norms = np.ones(K)
    for i in range(1, K):
        v = _bessel_profile(xq, a, nu, kappa, zeros[i])[0]
        norms[i] = 1.0 / math.sqrt(float(np.sum(wq * v * v)))
    labels = np.arange(K)

    def phi(i, x):
        if i == 0:
            return np.ones_like(np.asarray(x, float))
        return norms[i] * _bessel_profile(x, a, nu, kappa, zeros[i])[0]

    def dphi(i, x):
        if i == 0:
            return np.zeros_like(np.asarray(x, float))
        return norms[i] * _bessel_profile(x, a, nu, kappa, zeros[i])[1]

    extra = dict(kappa=kappa, nu=nu, zeros=zeros, normalizers=norms)
    return _Modes(labels, kappa ** 2 * zeros ** 2, phi, dphi, extra)


def _modes(spec: ProblemSpec) -> _Modes:
    if spec.kind == "degenerate_dirichlet":
        return _degenerate_dirichlet_modes(spec)
    if spec.kind == "degenerate_neumann":
        return _degenerate_neumann_modes(spec)
    return _trig_modes(spec)


def _apply_B(spec: ProblemSpec, modes: _Modes, i: int, x):
    """Pointwise ``(B phi_i)(x)``."""
    mu, dmu = spec.drift()
    x = np.asarray(x, dtype=float)
    if spec.kind in ("fp_neumann", "fp_dirichlet"):
        return dmu(x) * modes.phi(i, x) + mu(x) * modes.dphi(i, x)
    if spec.kind == "degenerate_dirichlet":
        return x * modes.dphi(i, x)
    return mu(x) * (modes.dphi(i, x) + modes.phi(i, x))


# ---------------------------------------------------------------------------
# coupling coefficients


def _degenerate_dirichlet_matrix(modes: _Modes) -> np.ndarray:
    kappa, j = modes.extra["kappa"], modes.extra["zeros"]
    K = j.size
    m = np.arange(K)[:, None]
    k = np.arange(K)[None, :]
    sign = np.where((m + k) % 2 == 0, -1.0, 1.0)  # (-1)^{m+k+1} with 1-based labels
    with np.errstate(divide="ignore", invalid="ignore"):
        out = 2.0 * kappa * j[:, None] * j[None, :] * sign / (j[None, :] ** 2 - j[:, None] ** 2)
    np.fill_diagonal(out, -0.5)
    return out


def _quadrature_matrix(spec: ProblemSpec, modes: _Modes) -> np.ndarray:
    K = spec.truncation
    if spec.kind.startswith("degenerate"):
        xq, wq = _degenerate_mesh(K)
    else:
        xq, wq = composite_rule(np.linspace(0.0, 1.0, K + 9), 24)
    xq, wq = xq.ravel(), wq.ravel()
    phi = np.array([modes.phi(i, xq) for i in range(K)])
    bphi = np.array([_apply_B(spec, modes, i, xq) for i in range(K)])
    return (bphi * wq) @ phi.T


def build_problem(spec: ProblemSpec, check_rank: bool = True) -> EigenSystem:
    """Assemble the truncated eigensystem of a catalogue instance.

    Parameters
    ----------
    spec : ProblemSpec
    check_rank : bool
        Raise when a ground coupling vanishes.

    Returns
    -------
    EigenSystem
        ``labels`` carry the mode numbering of the instance, the ground
        mode sits at position 0.

    Raises
    ------
    RankConditionError
        If some ``<B phi_ground, phi_k>`` is zero to within ``1e-12``
        relative to the largest coupling.
    """
    modes = _modes(spec)
    if spec.kind == "degenerate_dirichlet":
        bm = _degenerate_dirichlet_matrix(modes)
    else:
        bm = _quadrature_matrix(spec, modes)
    es = EigenSystem(
        eigenvalues=modes.eigenvalues,
        b_matrix=bm,
        labels=modes.labels,
        ground_index=0,
        basis=modes.phi,
        basis_derivative=modes.dphi,
        spec=spec,
    )
    if check_rank:
        b = es.ground_couplings
        scale = max(float(np.max(np.abs(b))), 1e-300)
        bad = np.nonzero(np.abs(b) <= RANK_TOL * scale)[0]
        if bad.size:
            raise RankConditionError(int(es.labels[bad[0]]), float(b[bad[0]]))
    return es


def b_coeff_closed_form(spec: ProblemSpec, k: int) -> float:
    """Closed-form ground coupling ``<B phi_ground, phi_k>`` for mode label ``k``.

    Available for: ``fp_dirichlet`` with ``mu = x``; ``fp_neumann`` with
    ``mu = x^3`` or ``mu = sin(a x)``; ``heat_neumann_drift`` with
    ``mu = x^2``; both degenerate kinds.  The ``k = 0`` entry of the
    Neumann drift problems is ``mu(1) - mu(0)`` resp. ``int mu``.

    Raises
    ------
    UnsupportedClosedForm
        For any other combination.
    DomainError
        If ``k`` is not a valid label.
    """
    k = int(k)
    if k < spec.first_label:
        raise DomainError(f"invalid mode label {k} for {spec.kind}")
    pi = math.pi
    r2 = math.sqrt(2.0)
    sgn = -1.0 if k % 2 else 1.0
    if spec.kind == "fp_dirichlet" and spec.mu_freq is None and spec.mu_power == 1.0:
        return 0.5 if k == 1 else sgn * 2.0 * k / (k * k - 1.0)
    if spec.kind == "fp_neumann":
        if spec.mu_freq is not None:
            a = spec.mu_freq
            if k == 0:
                return math.sin(a)
            return r2 * a * a * math.sin(a) * sgn / (a * a - (k * pi) ** 2)
        if spec.mu_power == 3.0:
            return 1.0 if k == 0 else 6.0 * r2 * sgn / (k * pi) ** 2
    if spec.kind == "heat_neumann_drift" and spec.mu_freq is None and spec.mu_power == 2.0:
        return 1.0 / 3.0 if k == 0 else 2.0 * r2 * sgn / (k * pi) ** 2
    if spec.kind == "degenerate_dirichlet":
        kappa, _, nu, order = _degenerate_params(spec.alpha, neumann=False)
        j = bessel_table(order, k).zeros
        if k == 1:
            return -0.5
        return 2.0 * kappa * j[0] * j[k - 1] * sgn / (j[k - 1] ** 2 - j[0] ** 2)
    if spec.kind == "degenerate_neumann":
        alpha = spec.alpha
        if k == 0:
            return 1.0 / (3.0 - alpha)
        kappa, _, nu, order = _degenerate_params(alpha, neumann=True)
        j = bessel_table(order, k).zeros[k - 1]
        lam = (kappa * j) ** 2
        # phi_k(1) = sqrt(2 - alpha) * sign(J_nu(j_k))
        phi1 = math.sqrt(2.0 - alpha) * math.copysign(1.0, float(besselj(nu, j)))
        return (2.0 - alpha) * phi1 / lam
    raise UnsupportedClosedForm(f"no closed form for {spec.describe()} at k={k}")


def b_coeff_quadrature(spec: ProblemSpec, m: int, k: int, tol: Optional[float] = None) -> float:
    """Adaptive-quadrature value of ``<B phi_m, phi_k>`` for mode labels ``m, k``.

    Independent of :func:`build_problem`'s fixed composite rule; used as
    the oracle for the closed forms.  Degenerate kinds start from a mesh
    graded toward ``x = 0``.

    Parameters
    ----------
    tol : float, optional
        Absolute tolerance; ``1e-12`` (``1e-8`` for degenerate kinds) by
        default.

    Raises
    ------
    QuadratureError
        When adaptive refinement fails to reach ``tol``.
    """
    degenerate = spec.kind.startswith("degenerate")
    if tol is None:
        tol = 1e-8 if degenerate else 1e-12
    big = max(m, k) + 1
    modes = _modes(ProblemSpec(spec.kind, max(big + 1, 2), spec.mu_power, spec.mu_freq, spec.alpha))
    im, ik = m - spec.first_label, k - spec.first_label
    if im < 0 or ik < 0:
        raise DomainError("mode labels below the first label of this kind")

    def integrand(x):
        return _apply_B(spec, modes, im, x) * modes.phi(ik, x)

    value, _ = adaptive_integrate(integrand, 0.0, 1.0, tol, initial=max(8, big), grade_left=degenerate)
    return value


# ---------------------------------------------------------------------------
# hypotheses


def required_gap(spec: ProblemSpec) -> float:
    """Lower bound on ``sqrt(lambda_{k+1}) - sqrt(lambda_k)`` for this kind."""
    if spec.kind == "degenerate_dirichlet":
        return 7.0 * math.pi / 16.0 if spec.alpha < 1.0 else (2.0 - spec.alpha) * math.pi / 2.0
    if spec.kind == "degenerate_neumann":
        return (2.0 - spec.alpha) * math.pi / 2.0
    return math.pi


@dataclass(frozen=True)
class HypothesisReport:
    """Measured gap and rank data of a truncated eigensystem.

    Attributes
    ----------
    gap, gap_required : float
        Smallest consecutive ``sqrt``-eigenvalue difference and the bound
        it must respect (``nan`` if unknown).
    rank_q, rank_b, rank_r2 : float
        Power-law fit ``|lambda_k - lambda_g|^q |b_k| >= b`` and its R^2.
    min_coupling : float
        Smallest ``|b_k|`` over the truncation, attained at ``min_label``.
    ground_diagonal : float
        ``<B phi_g, phi_g>``.
    """

    gap: float
    gap_required: float
    gap_ok: bool
    rank_q: float
    rank_b: float
    rank_r2: float
    min_coupling: float
    min_label: int
    rank_ok: bool
    ground_diagonal: float

    @property
    def ok(self) -> bool:
        return self.gap_ok and self.rank_ok

    def as_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["ok"] = self.ok
        return d


def verify_hypotheses(es: EigenSystem, q: Optional[float] = None) -> HypothesisReport:
    """Check the spectral gap and the rank condition over the truncation.

    Parameters
    ----------
    es : EigenSystem
    q : float, optional
        Fixed exponent for the rank condition; fitted when omitted.
    """
    spec = es.spec
    gap = es.gap()
    req = required_gap(spec) if isinstance(spec, ProblemSpec) else float("nan")
    gap_ok = bool(gap >= req * (1.0 - 1e-12)) if math.isfinite(req) else bool(gap > 0)

    g = es.ground_index
    b = es.ground_couplings
    absb = np.abs(b)
    i_min = int(np.argmin(absb))
    scale = max(float(absb.max()), 1e-300)
    rank_ok = bool(absb[i_min] > RANK_TOL * scale)

    others = np.array([i for i in range(es.size) if i != g and es.eigenvalues[i] > es.eigenvalues[g]])
    q_fit = b_fit = r2 = float("nan")
    if others.size >= 2 and rank_ok:
        xs = np.log(es.eigenvalues[others] - es.eigenvalues[g])
        ys = np.log(absb[others])
        slope, icept = np.polyfit(xs, ys, 1)
        resid = ys - (slope * xs + icept)
        ss = float(np.sum((ys - ys.mean()) ** 2))
        r2 = 1.0 - float(np.sum(resid ** 2)) / ss if ss > 0 else 1.0
        q_fit = -float(slope) if q is None else float(q)
        b_fit = float(np.min(np.exp(q_fit * xs) * absb[others]))
    return HypothesisReport(
        gap=gap, gap_required=req, gap_ok=gap_ok,
        rank_q=q_fit, rank_b=b_fit, rank_r2=r2,
        min_coupling=float(absb[i_min]), min_label=int(es.labels[i_min]), rank_ok=rank_ok,
        ground_diagonal=float(b[g]),
    )
