"""Time integration of the bilinear Galerkin system and its auxiliaries.

All systems handled here are linear for a given control and have the form

    x'(t) = -(L + p(t) G) x(t),      L = diag(l),

with a constant matrix ``G``.  They are advanced by the fourth-order
commutator Magnus scheme

    Omega = -(h/2) (2 L + (p1 + p2) G) + (sqrt(3)/12) h^2 (p1 - p2) [L, G],
    x <- expm(Omega) x,

with ``p1, p2`` the control at the two Gauss points of each substep.  The
scheme is exact on the diagonal (stiff) part and is applied on substeps
nested inside the control panels; outside the control's support the
propagation is the exact diagonal exponential.  The number of substeps per
panel is doubled until two successive results agree.

Auxiliary systems:

* ``v = u - psi_g`` with ``psi_g(t) = exp(-lambda_g (t - t0)) phi_g`` solves
  ``v' + A v + p B v + p B psi_g = 0``; the ground factor is carried as an
  extra coordinate ``c`` with ``c' = -lambda_g c``.
* ``w`` solves ``w' + A w + p B v = 0`` with ``w(t0) = 0``.  It is
  integrated jointly with ``v`` after rescaling ``v`` and ``p`` by
  ``eps = ||v(t0)||_{1/2}``, so that ``w / eps^2`` is of order one and is
  resolved to relative accuracy.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.linalg import expm

from .errors import DomainError, IntegrationError
from .signal import ControlSignal
from .spectral import EigenSystem, _check, norm_s

__all__ = [
    "TrajectoryRecord",
    "integrate_bilinear",
    "integrate_v_system",
    "integrate_w_system",
    "StageIntegration",
    "integrate_stage",
    "propagate_linear",
]

_SQ3 = math.sqrt(3.0)
_CHUNK = 1024


@dataclass(frozen=True)
class TrajectoryRecord:
    """States of an integrated system at the control's panel boundaries.

    Attributes
    ----------
    times : ndarray, shape (N,)
    states : ndarray, shape (N, K)
    norm0, norm_half : ndarray, shape (N,)
        ``norm_s`` of each stored state for ``s = 0`` and ``s = 1/2``.
    control : ControlSignal or None
    substeps : int
        Magnus substeps per panel at convergence.
    achieved : float
        Final successive-refinement difference (s = 1/2 norm).
    extra : dict
        System-specific diagnostics.
    """

    times: np.ndarray
    states: np.ndarray
    norm0: np.ndarray
    norm_half: np.ndarray
    control: Optional[ControlSignal] = field(default=None, repr=False)
    substeps: int = 0
    achieved: float = 0.0
    extra: dict = field(default_factory=dict, repr=False)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def rows(self, es: EigenSystem, target: Optional[np.ndarray] = None):
        """Per-node rows ``t, ||u||_0, ||u - target||_{1/2}, p(t)``."""
        p = self.control(self.times) if self.control is not None else np.zeros_like(self.times)
        dev = norm_s(self.states - target, 0.5, es) if target is not None else self.norm_half
        return [
            {"t": float(t), "norm0": float(a), "dev_half": float(b), "p": float(c)}
            for t, a, b, c in zip(self.times, self.norm0, dev, p)
        ]


def _breakpoints(p: Optional[ControlSignal], t0: float, t1: float) -> np.ndarray:
    pts = [t0, t1]
    if p is not None:
        pts.extend(e for e in p.edges if t0 < e < t1)
    return np.unique(np.array(pts, dtype=float))


def _advance(x0, ldiag, G, comm, p, bps, m):
    """One sweep with ``m`` Magnus substeps per controlled interval."""
    x = np.array(x0, dtype=float)
    out = [x.copy()]
    lo, hi = (p.t0, p.t1) if p is not None else (math.inf, -math.inf)
    for a, b in zip(bps[:-1], bps[1:]):
        mid = 0.5 * (a + b)
        if p is None or mid < lo or mid > hi:
            x = np.exp(-ldiag * (b - a)) * x
            out.append(x.copy())
            continue
        h = (b - a) / m
        starts = a + h * np.arange(m)
        c = starts + 0.5 * h
        d = 0.5 * h / _SQ3
        p1 = p(c - d)
        p2 = p(c + d)
        for s in range(0, m, _CHUNK):
            q1, q2 = p1[s:s + _CHUNK], p2[s:s + _CHUNK]
            om = (-0.5 * h) * (2.0 * np.diag(ldiag)[None] + (q1 + q2)[:, None, None] * G[None])
            om += (_SQ3 / 12.0) * h * h * (q1 - q2)[:, None, None] * comm[None]
            props = expm(om)
            with np.errstate(over="ignore", invalid="ignore"):
                for P in props:
                    x = P @ x
        out.append(x.copy())
    return np.array(out)


def propagate_linear(
    x0,
    ldiag,
    G,
    p: Optional[ControlSignal],
    t0: float,
    t1: float,
    converged: Callable[[np.ndarray, np.ndarray], tuple],
    m0: int = 2,
    m_max: int = 4096,
):
    """Integrate ``x' = -(diag(ldiag) + p G) x`` on ``[t0, t1]`` with refinement.

    Parameters
    ----------
    converged : callable
        ``converged(coarse_final, fine_final) -> (ok, achieved)``.

    Returns
    -------
    states : ndarray
        State at every breakpoint.
    times : ndarray
    m : int
        Substeps per interval at convergence.
    achieved : float

    Raises
    ------
    IntegrationError
        If ``m_max`` substeps per panel do not reach the tolerance.
    """
    if not t1 > t0:
        raise DomainError("integration interval must have positive length")
    ldiag = np.asarray(ldiag, dtype=float)
    G = np.asarray(G, dtype=float)
    comm = ldiag[:, None] * G - G * ldiag[None, :]
    bps = _breakpoints(p, t0, t1)
    controlled = p is not None and np.any(p.values != 0.0)
    if not controlled:
        return _advance(x0, ldiag, G, comm, None, bps, 1), bps, 1, 0.0
    m = m0
    prev = _advance(x0, ldiag, G, comm, p, bps, m)
    achieved = math.inf
    while m < m_max:
        m *= 2
        cur = _advance(x0, ldiag, G, comm, p, bps, m)
        if not np.all(np.isfinite(cur[-1])):
            raise IntegrationError("integration produced non-finite values", math.inf)
        ok, achieved = converged(prev[-1], cur[-1])
        if ok:
            return cur, bps, m, achieved
        prev = cur
    raise IntegrationError(f"no convergence with {m_max} substeps per panel", achieved)


def _half_weights(es: EigenSystem) -> np.ndarray:
    return np.sqrt(1.0 + np.maximum(es.eigenvalues, 0.0))


def _span(p: Optional[ControlSignal], t_span) -> tuple:
    if t_span is not None:
        t0, t1 = (float(v) for v in t_span)
    elif p is not None:
        t0, t1 = p.t0, p.t1
    else:
        raise DomainError("t_span is required without a control")
    return t0, t1


def _record(times, states, es, p, m, achieved, extra=None) -> TrajectoryRecord:
    states = np.asarray(states)
    return TrajectoryRecord(
        times=times, states=states, norm0=norm_s(states, 0, es), norm_half=norm_s(states, 0.5, es),
        control=p, substeps=m, achieved=achieved, extra=extra or {},
    )


def integrate_bilinear(
    u0,
    p: Optional[ControlSignal],
    es: EigenSystem,
    t_span: Optional[Sequence[float]] = None,
    atol: float = 1e-10,
    rtol: float = 0.0,
    m_max: int = 4096,
) -> TrajectoryRecord:
    """Solve ``u_k' = -lambda_k u_k - p(t) sum_m B[m, k] u_m``.

    Refinement stops when successive results differ by at most
    ``atol + rtol ||u(t1)||_{1/2}`` in the ``s = 1/2`` norm.  The control
    is taken as zero outside its support.

    Raises
    ------
    IntegrationError
        When ``m_max`` substeps per panel are not enough.
    """
    u0 = _check(u0, es)
    t0, t1 = _span(p, t_span)
    wts = _half_weights(es)

    def conv(a, b):
        d = float(np.linalg.norm(wts * (a - b)))
        return d <= atol + rtol * float(np.linalg.norm(wts * b)), d

    states, times, m, ach = propagate_linear(u0, es.eigenvalues, es.operator, p, t0, t1, conv, m_max=m_max)
    return _record(times, states, es, p, m, ach)


def _v_system(es: EigenSystem):
    K = es.size
    ldiag = np.concatenate([es.eigenvalues, [es.ground_eigenvalue]])
    G = np.zeros((K + 1, K + 1))
    G[:K, :K] = es.operator
    G[:K, K] = es.ground_couplings
    return ldiag, G


def integrate_v_system(
    v0,
    p: Optional[ControlSignal],
    es: EigenSystem,
    t_span: Optional[Sequence[float]] = None,
    atol: float = 1e-10,
    rtol: float = 0.0,
    m_max: int = 4096,
) -> TrajectoryRecord:
    """Deviation ``v = u - psi_g`` from the free ground solution started at ``t0``.

    Solves ``v' + A v + p B v + p B psi_g = 0`` with
    ``psi_g(t) = exp(-lambda_g (t - t0)) phi_g``.
    """
    v0 = _check(v0, es)
    t0, t1 = _span(p, t_span)
    wts = _half_weights(es)
    ldiag, G = _v_system(es)
    x0 = np.concatenate([v0, [1.0]])

    def conv(a, b):
        d = float(np.linalg.norm(wts * (a[:-1] - b[:-1])))
        return d <= atol + rtol * float(np.linalg.norm(wts * b[:-1])), d

    states, times, m, ach = propagate_linear(x0, ldiag, G, p, t0, t1, conv, m_max=m_max)
    return _record(times, states[:, :-1], es, p, m, ach)


@dataclass(frozen=True)
class StageIntegration:
    """Joint integration of ``v`` and the remainder ``w`` over one stage.

    Attributes
    ----------
    v : TrajectoryRecord
        The deviation ``v`` at panel boundaries.
    w : TrajectoryRecord
        The remainder ``w`` at panel boundaries.
    sup_v_half : float
        ``max ||v(t)||_{1/2}`` over the recorded nodes.
    """

    v: TrajectoryRecord
    w: TrajectoryRecord
    sup_v_half: float


def integrate_stage(
    v0,
    p: ControlSignal,
    es: EigenSystem,
    t_span: Optional[Sequence[float]] = None,
    w_rtol: float = 1e-7,
    v_rtol: float = 1e-10,
    m_max: int = 4096,
) -> StageIntegration:
    """Integrate ``v`` and ``w`` together, both with relative accuracy.

    With ``eps = ||v0||_{1/2}`` the rescaled unknowns ``v / eps``,
    ``w / eps^2`` and the control ``p / eps`` give an order-one system

        vt' = -A vt - pt (eps B vt + B psi_g),   wt' = -A wt - pt B vt,

    so the remainder, which is quadratic in ``eps``, does not drown in the
    rounding error of ``v``.  Convergence requires successive refinements
    to agree to ``v_rtol`` on ``v`` and ``w_rtol`` on ``w`` (relative,
    ``s = 1/2`` norm).
    """
    v0 = _check(v0, es)
    t0, t1 = _span(p, t_span)
    K = es.size
    eps = float(norm_s(v0, 0.5, es))
    if eps == 0.0:
        eps = 1.0
    ldiag = np.concatenate([es.eigenvalues, [es.ground_eigenvalue], es.eigenvalues])
    G = np.zeros((2 * K + 1, 2 * K + 1))
    G[:K, :K] = eps * es.operator
    G[:K, K] = es.ground_couplings
    G[K + 1:, :K] = es.operator
    x0 = np.concatenate([v0 / eps, [1.0], np.zeros(K)])
    pt = p.scaled(1.0 / eps)
    wts = _half_weights(es)

    def conv(a, b):
        dv = float(np.linalg.norm(wts * (a[:K] - b[:K])))
        dw = float(np.linalg.norm(wts * (a[K + 1:] - b[K + 1:])))
        nv = float(np.linalg.norm(wts * b[:K]))
        nw = float(np.linalg.norm(wts * b[K + 1:]))
        ok = dv <= v_rtol * max(nv, 1.0) and dw <= w_rtol * nw + 1e-14
        return ok, max(dv / max(nv, 1.0), dw / max(nw, 1e-300))

    states, times, m, ach = propagate_linear(x0, ldiag, G, pt, t0, t1, conv, m_max=m_max)
    v_states = states[:, :K] * eps
    w_states = states[:, K + 1:] * eps * eps
    v_rec = _record(times, v_states, es, p, m, ach)
    w_rec = _record(times, w_states, es, p, m, ach, {"scale": eps})
    return StageIntegration(v_rec, w_rec, float(np.max(v_rec.norm_half)))


def integrate_w_system(
    v_traj: TrajectoryRecord,
    p: ControlSignal,
    es: EigenSystem,
    w_rtol: float = 1e-7,
) -> TrajectoryRecord:
    """Remainder ``w' + A w + p B v = 0``, ``w(t0) = 0``, along ``v_traj``.

    ``v`` is re-integrated jointly from ``v_traj``'s initial state (the
    source needs ``v`` inside every substep, not just at stored nodes).
    ``extra["v_mismatch"]`` reports the distance between the jointly
    integrated final ``v`` and ``v_traj``'s final state.
    """
    t_span = (float(v_traj.times[0]), float(v_traj.times[-1]))
    st = integrate_stage(v_traj.states[0], p, es, t_span, w_rtol=w_rtol)
    mismatch = float(norm_s(st.v.final - v_traj.final, 0.5, es))
    w = st.w
    return TrajectoryRecord(w.times, w.states, w.norm0, w.norm_half, p, w.substeps, w.achieved,
                            {**w.extra, "v_mismatch": mismatch})
