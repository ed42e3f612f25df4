"""Staged steering of the bilinear system to the ground-state solution.

The local strategy splits ``[0, T_f]`` into stages of length
``T_j = T_1 / j^2``.  On each stage the deviation ``v = u - psi_g`` is
treated by the least-norm null control of the linearised system; the
nonlinear remainder ``w`` is quadratic in the stage's initial deviation, so
the error is roughly squared per stage.  All computations happen in the
shifted frame where the ground eigenvalue is zero and ``psi_g`` is the
constant ``phi_g``; the control is the same in both frames.

Two semi-global variants wrap the local loop: a free-decay dwell for
states with a large orthogonal part (strip) and a normalisation by the
ground projection for states in a cone around the ground ray.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .errors import (
    DivergenceError,
    DomainError,
    IntegrationError,
    LoopFailure,
    PreconditionError,
    SolverError,
)
from .moment import assemble_moment_problem, linear_final_state, solve_min_norm, truncated_control_cost
from .quadrature import adaptive_integrate
from .signal import ControlSignal
from .simulate import integrate_stage, integrate_v_system
from .spectral import BoundConstants, EigenSystem, _check, compute_bound_constants, estimate_CB, norm_s

__all__ = [
    "StageSchedule",
    "make_schedule",
    "StageRecord",
    "LoopTrace",
    "run_local_loop",
    "SemiglobalResult",
    "run_semiglobal_strip",
    "run_semiglobal_cone",
    "dwell_time",
    "second_eigenvalue",
    "cone_ratio",
    "cone_ratio_function",
    "derive_constants",
    "total_norm_bound",
]

_BASEL = math.pi ** 2 / 6.0


@dataclass(frozen=True)
class StageSchedule:
    """Dyadic schedule ``T_j = T_1 / j^2``, ``tau_n = sum_{j<=n} T_j``.

    Attributes
    ----------
    T_f : float
        Limit of ``tau_n``, equal to ``(pi^2 / 6) T_1``.
    T1 : float
    n_max : int
        Stage cap.
    """

    T_f: float
    T1: float
    n_max: int

    def length(self, j: int) -> float:
        if j < 1:
            raise DomainError("stages are numbered from 1")
        return self.T1 / (j * j)

    def endpoint(self, n: int) -> float:
        return math.fsum(self.T1 / (j * j) for j in range(1, n + 1))

    @property
    def lengths(self) -> np.ndarray:
        return self.T1 / np.arange(1, self.n_max + 1) ** 2

    @property
    def endpoints(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.lengths)])

    def tail(self, n: int) -> float:
        """``T_f - tau_n``."""
        return self.T_f - self.endpoint(n)


def make_schedule(T: float, T0: float = 1.0, n_max: int = 12) -> StageSchedule:
    """Schedule for horizon ``T`` with ``T_f = min(T, pi^2/6, pi^2 T0 / 6)``."""
    if not (T > 0 and T0 > 0):
        raise DomainError("T and T0 must be positive")
    if n_max < 1:
        raise DomainError("n_max must be at least 1")
    T_f = min(T, _BASEL, _BASEL * T0)
    return StageSchedule(T_f=T_f, T1=T_f / _BASEL, n_max=int(n_max))


@dataclass
class StageRecord:
    """Diagnostics of one stage; norms are taken in the shifted frame.

    ``n_trunc`` is the exact control cost of the truncated linear problem on
    the stage, ``certificate`` whether ``n_trunc ||v_{n-1}||_{1/2} <= 1``.
    The ``*_ok`` entries compare against the analytic a-priori bounds and
    are ``None`` when the bound's hypotheses fail or no constants are given.
    """

    n: int
    tau_start: float
    tau_end: float
    length: float
    v_prev_norm0: float
    v_prev_half: float
    v_norm0: float
    v_half: float
    p_norm: float
    linear_residual: float
    w_half: float
    sup_v_half: float
    k_emp: float
    contraction: float
    n_ratio: float
    n_trunc: float
    certificate: bool
    precision: str
    substeps: int
    ceiling: Optional[float] = None
    ceiling_ok: Optional[bool] = None
    nt_holds: Optional[bool] = None
    v0_holds: Optional[bool] = None
    c11_bound: Optional[float] = None
    c11_ok: Optional[bool] = None
    k_bound: Optional[float] = None
    k_ok: Optional[bool] = None


@dataclass
class LoopTrace:
    """Stage-by-stage history of a loop run.

    Attributes
    ----------
    stages : list of StageRecord
    v0_half : float
        ``||v_0||_{1/2}`` in the shifted frame.
    schedule : StageSchedule
    shift : float
        Ground eigenvalue removed before the loop.
    t_offset : float
        Start time of the loop (non-zero after a dwell phase).
    converged : bool
        ``||v_n||_{1/2} <= stop_tol`` was reached.
    failure : dict or None
        ``{"stage": n, "error": message}`` when the loop broke off.
    summary : dict
        Whole-run checks (total control norm, support, re-integration).
    final_v : ndarray or None
        Shifted-frame deviation after the last stage.
    """

    stages: List[StageRecord] = field(default_factory=list)
    v0_half: float = 0.0
    schedule: Optional[StageSchedule] = None
    shift: float = 0.0
    t_offset: float = 0.0
    converged: bool = False
    failure: Optional[dict] = None
    summary: dict = field(default_factory=dict)
    final_v: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def final_residual(self) -> float:
        """Last ``||v_n||_{1/2}`` (``v0_half`` when no stage ran)."""
        return self.stages[-1].v_half if self.stages else self.v0_half

    @property
    def total_control_norm(self) -> float:
        return math.sqrt(math.fsum(s.p_norm ** 2 for s in self.stages))

    def bound_violations(self) -> list:
        """``(stage, check)`` pairs whose applicable a-priori bound failed."""
        out = []
        for s in self.stages:
            for name in ("c11_ok", "k_ok"):
                if getattr(s, name) is False:
                    out.append((s.n, name))
        return out

    def rows(self) -> list:
        return [asdict(s) for s in self.stages]

    def to_csv(self, path) -> None:
        rows = self.rows()
        names = list(StageRecord.__dataclass_fields__)
        with open(path, "w", newline="") as fh:
            wr = csv.DictWriter(fh, fieldnames=names)
            wr.writeheader()
            for r in rows:
                wr.writerow({k: ("" if r[k] is None else r[k]) for k in names})

    def to_dict(self) -> dict:
        return {
            "v0_half": self.v0_half,
            "schedule": asdict(self.schedule) if self.schedule else None,
            "shift": self.shift,
            "t_offset": self.t_offset,
            "converged": self.converged,
            "failure": self.failure,
            "final_residual": self.final_residual,
            "total_control_norm": self.total_control_norm,
            "summary": self.summary,
            "stages": self.rows(),
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(_jsonable(self.to_dict()), fh, indent=2)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def derive_constants(es: EigenSystem, T: float, T0: float = 1.0, nu: Optional[float] = None,
                     C_B: Optional[float] = None, n_max: int = 12, points: int = 24) -> BoundConstants:
    """Bound constants for the truncation ``es`` on horizon ``T``.

    ``C_B`` defaults to :func:`~groundctl.spectral.estimate_CB` of the
    shifted system (raised to one if smaller).  ``nu`` defaults to the
    smallest value with ``N(tau) <= exp(nu / tau)`` for the exact truncated
    cost on a geometric grid from the shortest stage length to ``T0``.
    """
    ess = es.shifted()
    if C_B is None:
        C_B = max(1.0, estimate_CB(ess))
    if nu is None:
        sched = make_schedule(T, T0, n_max)
        taus = np.geomspace(sched.length(n_max), T0, points)
        costs = np.array([truncated_control_cost(ess, t) for t in taus])
        nu = max(float(np.max(taus * np.log(np.maximum(costs, 1.0)))), 1e-12)
    lam1 = float(ess.ground_eigenvalue)
    return compute_bound_constants(C_B, nu, lam1, T, T0)


def total_norm_bound(constants: BoundConstants) -> float:
    """Right side of the closed-form bound on ``||p||^2`` of a full local run."""
    g, tf = constants.Gamma0, constants.T_f
    denom = math.expm1(2.0 * math.pi ** 2 * g / (3.0 * tf))
    return math.exp(-math.pi ** 2 * g / tf) / denom if denom > 0 else math.inf


def _bound_checks(rec: StageRecord, c: BoundConstants, T: float, v_prev_0: float) -> None:
    r = rec.v_prev_half
    N = c.N(T)
    slack = 1.0 + 1e-9
    rec.nt_holds = bool(rec.p_norm <= N * v_prev_0 * slack)
    rec.v0_holds = bool(N * r <= 1.0)
    if rec.nt_holds:
        rec.c11_bound = float(c.C11(T, r) * r * r)
        rec.c11_ok = bool(rec.sup_v_half ** 2 <= rec.c11_bound * slack)
    if rec.nt_holds and rec.v0_holds:
        rec.k_bound = float(c.K(T) * r * r)
        rec.k_ok = bool(rec.w_half <= rec.k_bound * slack)


def run_local_loop(
    u0,
    es: EigenSystem,
    T: float,
    constants: Optional[BoundConstants] = None,
    stop_tol: float = 1e-10,
    n_max: int = 12,
    mode: str = "empirical",
    T0: float = 1.0,
    t_offset: float = 0.0,
    moment_rtol: float = 1e-8,
    w_rtol: float = 1e-7,
    reintegrate: bool = True,
    callback: Optional[Callable[[StageRecord], None]] = None,
):
    """Steer ``u0`` to the ground-state solution with the staged scheme.

    Parameters
    ----------
    u0 : array_like
        Initial coefficients in ``es``'s eigenbasis.
    es : EigenSystem
        Shifted internally when its ground eigenvalue is non-zero.
    T : float
        Requested horizon; the schedule uses ``T_f <= T``.
    constants : BoundConstants, optional
        Enables the analytic bound checks; required for
        ``mode="theoretical"``.
    stop_tol : float
        Stop once ``||v_n||_{1/2} <= stop_tol``.
    mode : {"empirical", "theoretical"}
        In theoretical mode every stage must start below the analytic
        ceiling (``R_T`` for the first one) or
        :class:`~groundctl.errors.PreconditionError` is raised.
    t_offset : float
        Absolute start time; the returned control lives on
        ``[t_offset, t_offset + T]``.

    Returns
    -------
    control : ControlSignal
        Concatenated stage controls, extended by zero to ``t_offset + T``.
    trace : LoopTrace

    Raises
    ------
    DivergenceError
        When ``||v_n||_{1/2}`` grows in two consecutive stages.
    LoopFailure
        When a stage's solve or integration fails; ``trace`` holds the
        completed stages and ``trace.failure`` the failing one.
    """
    if mode not in ("empirical", "theoretical"):
        raise DomainError(f"unknown loop mode {mode!r}")
    if mode == "theoretical" and constants is None:
        raise DomainError("theoretical mode needs bound constants")
    if not stop_tol > 0:
        raise DomainError("stop_tol must be positive")
    u0 = _check(u0, es).astype(float)
    shift = es.ground_eigenvalue
    ess = es.shifted()
    sched = make_schedule(T, T0, n_max) if constants is None else StageSchedule(constants.T_f, constants.T1, n_max)
    v = u0 - ess.ground_state()
    v0 = v.copy()
    trace = LoopTrace(v0_half=float(norm_s(v, 0.5, ess)), schedule=sched, shift=shift, t_offset=float(t_offset))

    if mode == "theoretical" and not trace.v0_half < constants.R_T:
        raise PreconditionError(
            f"||v0||_1/2 = {trace.v0_half:.3e} is not below R_T = {constants.R_T:.3e}"
        )

    parts: List[ControlSignal] = []
    grew = 0
    tau = 0.0
    for n in range(1, n_max + 1):
        v_prev_half = float(norm_s(v, 0.5, ess))
        if v_prev_half <= stop_tol:
            trace.converged = True
            break
        if mode == "theoretical" and n > 1:
            ceil = constants.stage_ceiling(n - 1)
            if v_prev_half > ceil:
                trace.failure = {"stage": n, "error": "stage start above the analytic ceiling"}
                raise PreconditionError(f"stage {n} starts at {v_prev_half:.3e} above ceiling {ceil:.3e}")
        Tn = sched.length(n)
        t_start = t_offset + tau
        try:
            sol = solve_min_norm(assemble_moment_problem(v, ess, Tn), rtol=moment_rtol, full_output=True)
            p_local = sol.control
            p_abs = p_local.shifted(t_start)
            y_T = linear_final_state(p_abs, v, ess, Tn, t0=t_start)
            # v only drives w here, so it needs no more accuracy than w
            st = integrate_stage(v, p_abs, ess, (t_start, t_start + Tn), w_rtol=w_rtol, v_rtol=w_rtol)
            n_trunc = truncated_control_cost(ess, Tn)
        except (SolverError, IntegrationError) as exc:
            trace.failure = {"stage": n, "error": f"{type(exc).__name__}: {exc}"}
            raise LoopFailure(f"stage {n} failed: {exc}", trace) from exc

        w_T = st.w.final
        v_new = y_T + w_T
        v_prev_0 = float(norm_s(v, 0, ess))
        v_half = float(norm_s(v_new, 0.5, ess))
        p_norm = p_local.l2_norm()
        rec = StageRecord(
            n=n,
            tau_start=t_start,
            tau_end=t_start + Tn,
            length=Tn,
            v_prev_norm0=v_prev_0,
            v_prev_half=v_prev_half,
            v_norm0=float(norm_s(v_new, 0, ess)),
            v_half=v_half,
            p_norm=p_norm,
            linear_residual=float(np.linalg.norm(y_T) / v_prev_0) if v_prev_0 > 0 else 0.0,
            w_half=float(norm_s(w_T, 0.5, ess)),
            sup_v_half=st.sup_v_half,
            k_emp=v_half / v_prev_half ** 2,
            contraction=v_half / v_prev_half,
            n_ratio=p_norm / v_prev_0 if v_prev_0 > 0 else 0.0,
            n_trunc=n_trunc,
            certificate=bool(n_trunc * v_prev_half <= 1.0),
            precision=sol.precision,
            substeps=st.v.substeps,
        )
        if constants is not None:
            rec.ceiling = constants.stage_ceiling(n)
            rec.ceiling_ok = bool(v_half <= rec.ceiling)
            _bound_checks(rec, constants, Tn, v_prev_0)
        trace.stages.append(rec)
        parts.append(p_abs)
        if callback is not None:
            callback(rec)
        tau += Tn
        v = v_new

        if not math.isfinite(v_half):
            trace.failure = {"stage": n, "error": "non-finite state"}
            raise DivergenceError(f"stage {n} produced a non-finite state", trace)
        grew = grew + 1 if v_half > v_prev_half else 0
        if grew >= 2:
            trace.failure = {"stage": n, "error": "deviation grew in two consecutive stages"}
            raise DivergenceError(f"deviation grew in stages {n - 1} and {n}", trace)
    else:
        trace.converged = float(norm_s(v, 0.5, ess)) <= stop_tol

    end = t_offset + T
    if parts:
        control = ControlSignal.concatenate(parts).extended(end)
    else:
        control = ControlSignal.zero(t_offset, end)

    summary = {
        "stages": len(trace.stages),
        "tau_final": tau,
        "support_length": control.support_length(),
        "T_f": sched.T_f,
        "total_control_norm": trace.total_control_norm,
        "concatenated_norm": control.l2_norm(),
        "final_half": trace.final_residual,
        "bound_violations": trace.bound_violations(),
    }
    if constants is not None:
        bound = total_norm_bound(constants)
        summary["total_norm_sq_bound"] = bound
        applicable = trace.v0_half < constants.R_T
        summary["total_norm_bound_applicable"] = applicable
        summary["total_norm_bound_ok"] = (trace.total_control_norm ** 2 <= bound) if applicable else None
    if reintegrate and parts:
        # independent whole-horizon integration of the v-system
        try:
            rec_v = integrate_v_system(v0, control, ess, (t_offset, t_offset + tau), atol=1e-13)
        except IntegrationError as exc:
            summary["reintegrated_half"] = math.nan
            summary["reintegration_gap"] = math.nan
            summary["reintegration_error"] = str(exc)
        else:
            summary["reintegrated_half"] = float(rec_v.norm_half[-1])
            summary["reintegration_gap"] = float(norm_s(rec_v.final - v, 0.5, ess))
    trace.summary = summary
    trace.final_v = v
    return control, trace


def second_eigenvalue(es: EigenSystem, tol: float = 1e-12) -> float:
    """Smallest eigenvalue of the shifted operator strictly above zero."""
    lam = es.shifted().eigenvalues
    pos = lam[lam > tol * max(1.0, float(lam.max()))]
    if pos.size == 0:
        raise DomainError("no eigenvalue above the ground level")
    return float(pos.min())


def dwell_time(R: float, r1: float, lam2: float) -> float:
    """Free-decay time ``max(0, log(R^2 / r1^2) / lambda_2)``."""
    if not (R > 0 and r1 > 0 and lam2 > 0):
        raise DomainError("R, r1 and lambda_2 must be positive")
    return max(0.0, math.log(R * R / (r1 * r1)) / lam2)


@dataclass
class SemiglobalResult:
    """Outcome of a semi-global run.

    Attributes
    ----------
    control : ControlSignal
        On ``[0, T_R]``; zero during the dwell.
    trace : LoopTrace
        Trace of the local phase.
    T_R : float
        Dwell plus local horizon.
    T_dwell : float
    r1 : float
    after_dwell_half : float
        Orthogonal part ``||(I - P_g) u(T_dwell)||_{1/2}`` (shifted frame).
    scale : float
        Ground projection used for normalisation (1 for the strip).
    final_state : ndarray
        Shifted-frame state at ``T_R`` built from the loop's ``v``.
    """

    control: ControlSignal
    trace: LoopTrace
    T_R: float
    T_dwell: float
    r1: float
    after_dwell_half: float
    scale: float = 1.0
    final_state: Optional[np.ndarray] = None

    def to_dict(self) -> dict:
        return _jsonable({
            "T_R": self.T_R, "T_dwell": self.T_dwell, "r1": self.r1,
            "after_dwell_half": self.after_dwell_half, "scale": self.scale,
            "trace": self.trace.to_dict(),
        })


def _split_ground(u, ess: EigenSystem):
    g = ess.ground_index
    a = float(u[g])  # shifted ground weight is 1 + 0
    orth = np.array(u, dtype=float)
    orth[g] = 0.0
    return a, orth


def run_semiglobal_strip(
    u0,
    es: EigenSystem,
    R: float,
    constants: Optional[BoundConstants] = None,
    r1: Optional[float] = None,
    local_horizon: float = 1.0,
    **loop_kw,
) -> SemiglobalResult:
    """Dwell with ``p = 0`` and then run the local loop on ``local_horizon``.

    ``r1`` defaults to the local radius ``constants.R_T`` at horizon one.

    Raises
    ------
    PreconditionError
        If the ground coefficient is not within ``r1`` of one or the
        orthogonal part exceeds ``R``.
    """
    if r1 is None:
        if constants is None:
            raise DomainError("r1 or bound constants are required")
        r1 = constants.R_T
    if not (R > 0 and r1 > 0):
        raise DomainError("R and r1 must be positive")
    u0 = _check(u0, es).astype(float)
    ess = es.shifted()
    a, orth = _split_ground(u0, ess)
    orth_half = float(norm_s(orth, 0.5, ess))
    if abs(a - 1.0) >= r1:
        raise PreconditionError(f"ground coefficient {a:.6g} is not within r1 = {r1:.3e} of 1")
    if orth_half > R * (1.0 + 1e-12):
        raise PreconditionError(f"orthogonal part {orth_half:.3e} exceeds R = {R:.3e}")

    lam2 = second_eigenvalue(es)
    t_dw = dwell_time(R, r1, lam2)
    u_dw = np.exp(-ess.eigenvalues * t_dw) * u0
    _, orth_dw = _split_ground(u_dw, ess)
    ctrl, trace = run_local_loop(u_dw, es, local_horizon, constants=constants, t_offset=t_dw, **loop_kw)
    T_R = t_dw + local_horizon
    if t_dw > 0:
        ctrl = ControlSignal.concatenate([ControlSignal.zero(0.0, t_dw, ctrl.order), ctrl])
    final = ess.ground_state() + trace.final_v
    trace.summary["T_R"] = T_R
    trace.summary["T_dwell"] = t_dw
    return SemiglobalResult(ctrl, trace, T_R, t_dw, float(r1), float(norm_s(orth_dw, 0.5, ess)), 1.0, final)


def run_semiglobal_cone(
    u0,
    es: EigenSystem,
    R: float,
    constants: Optional[BoundConstants] = None,
    r1: Optional[float] = None,
    **kw,
) -> SemiglobalResult:
    """Steer ``u0`` to ``a psi_g`` with ``a = <u0, phi_g>_{1/2}``.

    The normalised state ``u0 / a`` lies in the strip when ``u0`` satisfies
    the cone condition with ratio ``R``; the strip control steers it and,
    by homogeneity of the dynamics, steers ``u0`` to ``a psi_g``.

    Raises
    ------
    PreconditionError
        If ``a = 0`` or the cone condition fails.
    """
    u0 = _check(u0, es).astype(float)
    ess = es.shifted()
    a, _ = _split_ground(u0, ess)
    if a == 0.0:
        raise PreconditionError("initial state is orthogonal to the ground state")
    ratio = cone_ratio(u0, es)
    if ratio > R * (1.0 + 1e-12):
        raise PreconditionError(f"cone ratio {ratio:.3e} exceeds R = {R:.3e}")
    res = run_semiglobal_strip(u0 / a, es, R, constants, r1, **kw)
    res.scale = a
    res.final_state = a * res.final_state
    return res


def cone_ratio(u0, es: EigenSystem) -> float:
    """``||u0 - a phi_g||_{1/2} / |a|`` with ``a = <u0, phi_g>_{1/2}`` (shifted frame)."""
    u0 = _check(u0, es)
    ess = es.shifted()
    a, orth = _split_ground(u0, ess)
    if a == 0.0:
        return math.inf
    return float(norm_s(orth, 0.5, ess)) / abs(a)


def cone_ratio_function(u0: Callable, du0: Callable, alpha: float, tol: float = 1e-12) -> float:
    """Cone ratio of a function for the degenerate Neumann operator.

    Evaluates ``sqrt(int u0^2 - (int u0)^2 + int x^alpha u0'^2) / |int u0|``
    on ``[0, 1]``, where the ground state is the constant one.
    """
    m, _ = adaptive_integrate(u0, 0.0, 1.0, tol)
    sq, _ = adaptive_integrate(lambda x: u0(x) ** 2, 0.0, 1.0, tol)
    en, _ = adaptive_integrate(lambda x: x ** alpha * du0(x) ** 2, 0.0, 1.0, tol, grade_left=True)
    if m == 0.0:
        return math.inf
    return math.sqrt(max(sq - m * m + en, 0.0)) / abs(m)
