"""Minimum-norm null controls of the linearised system via the moment method.

For the linearisation ``y' + A y + p(t) B phi_g = 0`` the mode equations
read ``y_k' = -lambda_k y_k - b_k p`` with ``b_k = <B phi_g, phi_k>``.
Variation of constants gives

    y_k(T) = exp(-lambda_k T) * (y_k(0) - b_k * int_0^T exp(lambda_k s) p(s) ds),

so ``y(T) = 0`` exactly when ``int_0^T exp(lambda_k s) p(s) ds = m_k`` with
``m_k = y_k(0) / b_k``.  Numerically the equivalent, overflow-free form
``int_0^T exp(-lambda_k (T - s)) p(s) ds = exp(-lambda_k T) m_k`` is used.
The least-norm solution lies in the span of the kernels
``exp(-lambda_k (T - s))``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import qr, solve_triangular

from .errors import ConditioningError, DomainError, RankConditionError
from .quadrature import composite_rule, graded_edges
from .signal import ControlSignal
from .spectral import EigenSystem, _check

__all__ = [
    "MomentProblem",
    "MomentSolution",
    "assemble_moment_problem",
    "solve_min_norm",
    "stage_grid",
    "verify_linear_null",
    "LinearResidual",
    "linear_final_state",
    "estimate_control_cost",
    "CostEstimate",
    "optimality_check",
    "truncated_control_cost",
]

_COUPLING_TOL = 1e-12


@dataclass(frozen=True)
class MomentProblem:
    """Truncated moment problem on ``[0, T]``.

    Attributes
    ----------
    horizon : float
    indices : ndarray of int
        Positions (in the eigensystem) of the active constraints.
    rates : ndarray
        ``lambda_k`` of the active constraints.
    couplings : ndarray
        ``b_k`` of the active constraints.
    targets : ndarray
        ``m_k = y0_k / b_k``.
    y0 : ndarray
        Full initial state.
    labels : ndarray of int
        Mode labels of the active constraints.
    """

    horizon: float
    indices: np.ndarray
    rates: np.ndarray
    couplings: np.ndarray
    targets: np.ndarray
    y0: np.ndarray
    labels: np.ndarray

    @property
    def size(self) -> int:
        return int(self.indices.size)


def assemble_moment_problem(y0, es: EigenSystem, T: float, tol: float = _COUPLING_TOL) -> MomentProblem:
    """Build the moment problem steering ``y0`` to zero in time ``T``.

    Modes with ``b_k = 0`` are inactive; they must carry no initial data.

    Raises
    ------
    DomainError
        If ``T <= 0``.
    RankConditionError
        If an inactive mode has a non-zero initial coefficient.
    """
    if not T > 0:
        raise DomainError(f"horizon must be positive, got {T}")
    y0 = _check(y0, es).astype(float)
    b = es.ground_couplings
    scale = max(float(np.max(np.abs(b))), 1e-300)
    active = np.abs(b) > tol * scale
    y_scale = max(float(np.max(np.abs(y0))), 1e-300)
    bad = np.nonzero(~active & (np.abs(y0) > tol * y_scale))[0]
    if bad.size:
        raise RankConditionError(int(es.labels[bad[0]]), float(b[bad[0]]))
    idx = np.nonzero(active)[0]
    return MomentProblem(
        horizon=float(T), indices=idx, rates=es.eigenvalues[idx].copy(), couplings=b[idx].copy(),
        targets=y0[idx] / b[idx], y0=y0, labels=es.labels[idx].copy(),
    )


def stage_grid(T: float, rate_max: float, n_nodes: int = 12, uniform: int = 8, depth: float = 1e-4):
    """Panel edges on ``[0, T]``, geometrically refined toward ``T``.

    Refinement stops once the panel next to ``T`` is shorter than
    ``depth / rate_max``, which resolves every kernel
    ``exp(-lambda (T - s))`` up to ``lambda = rate_max``.
    """
    smallest = depth / rate_max if rate_max > 0 else T
    return graded_edges(0.0, T, uniform, min(smallest, T / uniform), "right")


@dataclass(frozen=True)
class MomentSolution:
    """Diagnostics of :func:`solve_min_norm`.

    Attributes
    ----------
    control : ControlSignal
    coefficients : ndarray
        ``p(s) = sum_k c_k exp(-lambda_k (T - s))`` over active constraints.
    residual : float
        ``||y(T)|| / ||y0||`` evaluated with the solver's own quadrature.
    rank : int
        Numerical rank of the weighted kernel matrix.
    condition : float
        Ratio of extreme diagonal entries of the pivoted triangular factor.
    dropped : ndarray of int
        Labels of constraints beyond the revealed rank.
    precision : str
        ``"double"`` or ``"extended"``.
    """

    control: ControlSignal
    coefficients: np.ndarray
    residual: float
    rank: int
    condition: float
    dropped: np.ndarray
    precision: str
    problem: MomentProblem = field(repr=False)


def _kernel(problem: MomentProblem, t: np.ndarray) -> np.ndarray:
    T = problem.horizon
    return np.exp(-problem.rates[None, :] * (T - t[:, None]))


def _rhs(problem: MomentProblem) -> np.ndarray:
    return np.exp(-problem.rates * problem.horizon) * problem.targets


def _solve_double(problem, edges, n, rank_rtol):
    nodes, weights = composite_rule(edges, n)
    t, w = nodes.ravel(), weights.ravel()
    sw = np.sqrt(w)
    E = sw[:, None] * _kernel(problem, t)
    r = _rhs(problem)
    Q, R, P = qr(E, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > rank_rtol * diag[0])) if diag.size and diag[0] > 0 else 0
    z = solve_triangular(R[:rank, :rank], r[P[:rank]], trans="T")
    p = (Q[:, :rank] @ z) / sw
    c = np.zeros(problem.size)
    c[P[:rank]] = solve_triangular(R[:rank, :rank], z)
    cond = float(diag[0] / diag[rank - 1]) if rank else math.inf
    dropped = problem.labels[P[rank:]]
    return p.reshape(nodes.shape), c, rank, cond, dropped


def _solve_extended(problem, edges, n, dps):
    import mpmath

    nodes, weights = composite_rule(edges, n)
    T = problem.horizon
    with mpmath.workdps(dps):
        lam = [mpmath.mpf(float(x)) for x in problem.rates]
        K = len(lam)
        t = [mpmath.mpf(float(x)) for x in nodes.ravel()]
        w = [mpmath.mpf(float(x)) for x in weights.ravel()]
        # kernel columns on the grid, as in the double-precision path
        E = [[mpmath.exp(-lam[k] * (T - tq)) for k in range(K)] for tq in t]
        G = mpmath.matrix(K, K)
        for i in range(K):
            for j in range(i, K):
                G[i, j] = G[j, i] = mpmath.fsum(wq * row[i] * row[j] for wq, row in zip(w, E))
        rhs = mpmath.matrix([mpmath.exp(-lam[i] * T) * mpmath.mpf(float(problem.targets[i])) for i in range(K)])
        c = mpmath.lu_solve(G, rhs)
        # the expansion cancels heavily, so it is summed before rounding
        p = np.array([float(mpmath.fsum(c[k] * row[k] for k in range(K))) for row in E])
        coeffs = np.array([float(x) for x in c])
    return p.reshape(nodes.shape), coeffs, K, float("nan"), np.array([], dtype=int)


def _residual(problem: MomentProblem, control: ControlSignal) -> float:
    # y(T) from the control's own quadrature, relative to ||y0||
    t, w = control.nodes.ravel(), control.weights.ravel()
    moments = (_kernel(problem, t) * (w * control.values.ravel())[:, None]).sum(axis=0)
    y_T = problem.couplings * (_rhs(problem) - moments)
    ref = float(np.linalg.norm(problem.y0))
    return float(np.linalg.norm(y_T) / ref) if ref > 0 else float(np.linalg.norm(y_T))


def solve_min_norm(
    problem: MomentProblem,
    edges: Optional[np.ndarray] = None,
    n_nodes: int = 12,
    precision: str = "auto",
    rtol: float = 1e-8,
    rank_rtol: float = 1e-15,
    dps: int = 60,
    full_output: bool = False,
):
    """Least-``L^2``-norm control satisfying every active moment constraint.

    The weighted kernel matrix ``sqrt(w_q) exp(-lambda_k (T - t_q))`` on the
    composite Gauss grid is factorised by QR with column pivoting, which
    orthogonalises the exponential family on the grid and reveals its
    numerical rank.  The control is ``Q z / sqrt(w)`` where
    ``R^T z = rhs`` on the retained columns.  The extended-precision path
    solves the exact Gram system with ``mpmath``.

    Parameters
    ----------
    problem : MomentProblem
    edges : ndarray, optional
        Panel edges; :func:`stage_grid` by default.
    precision : {"auto", "double", "extended"}
        ``"auto"`` tries double precision and falls back to extended
        precision when the residual or rank test fails.
    rtol : float
        Required relative residual ``||y(T)|| / ||y0||``.
    full_output : bool
        Return a :class:`MomentSolution` instead of the bare control.

    Raises
    ------
    ConditioningError
        If the residual stays above ``rtol``.
    """
    T = problem.horizon
    if edges is None:
        rmax = float(problem.rates.max()) if problem.size else 0.0
        edges = stage_grid(T, rmax, n_nodes)
    edges = np.asarray(edges, dtype=float)
    q = (edges.size - 1) * n_nodes
    if problem.size * 4 > q:
        raise DomainError(f"{problem.size} constraints need at least {4 * problem.size} grid nodes, got {q}")
    if precision not in ("auto", "double", "extended"):
        raise DomainError(f"unknown precision {precision!r}")

    if problem.size == 0 or not np.any(problem.targets):
        ctrl = ControlSignal(edges, np.zeros((edges.size - 1, n_nodes)))
        sol = MomentSolution(ctrl, np.zeros(problem.size), 0.0, problem.size, 1.0, np.array([], int), "double", problem)
        return sol if full_output else ctrl

    attempts = {"auto": ("double", "extended"), "double": ("double",), "extended": ("extended",)}[precision]
    sol = None
    for mode in attempts:
        if mode == "double":
            p, c, rank, cond, dropped = _solve_double(problem, edges, n_nodes, rank_rtol)
        else:
            p, c, rank, cond, dropped = _solve_extended(problem, edges, n_nodes, dps)
        ctrl = ControlSignal(edges, p)
        res = _residual(problem, ctrl)
        sol = MomentSolution(ctrl, c, res, rank, cond, dropped, mode, problem)
        if res <= rtol:
            break
    if sol.residual > rtol:
        raise ConditioningError(
            f"moment system with {problem.size} constraints on T={T:g} is too ill-conditioned", sol.residual
        )
    return sol if full_output else sol.control


@dataclass(frozen=True)
class LinearResidual:
    """Outcome of :func:`verify_linear_null`.

    Attributes
    ----------
    y_T : ndarray
        Final state of the linearised system.
    max_abs : float
        ``max_k |y_k(T)|``.
    relative : float
        ``||y(T)|| / ||y0||``.
    """

    y_T: np.ndarray
    max_abs: float
    relative: float


def linear_final_state(p: ControlSignal, y0, es: EigenSystem, T: float, t0: float = 0.0,
                       refine: int = 4, nodes: int = 24) -> np.ndarray:
    """``y(t0 + T)`` of ``y_k' = -lambda_k y_k - b_k p`` started at ``y(t0) = y0``.

    Exponential quadrature: each panel of ``p`` is split ``refine`` times
    and integrated against ``exp(-lambda_k (t0 + T - s))`` with a
    ``nodes``-point Gauss rule evaluated on the polynomial representation.
    """
    y0 = _check(y0, es)
    t1 = t0 + T
    lam, b = es.eigenvalues, es.ground_couplings
    y = np.exp(-lam * T) * y0
    lo, hi = max(p.t0, t0), min(p.t1, t1)
    if hi <= lo:
        return y
    sub = p.restrict(lo, hi).refined(refine) if refine > 1 else p.restrict(lo, hi)
    xs, ws = composite_rule(sub.edges, nodes)
    xs, ws = xs.ravel(), ws.ravel()
    vals = p(xs) * ws
    integral = np.exp(-lam[None, :] * (t1 - xs[:, None])).T @ vals
    return y - b * integral


def verify_linear_null(p: ControlSignal, y0, es: EigenSystem, T: float, refine: int = 4) -> LinearResidual:
    """Integrate every linear mode under ``p`` and report ``y(T)``.

    Uses a grid ``refine`` times finer than the control's own, with twice
    as many nodes per panel, so the check is independent of the solver's
    quadrature.
    """
    y0 = _check(y0, es)
    yT = linear_final_state(p, y0, es, T, refine=refine, nodes=2 * p.order)
    ref = float(np.linalg.norm(y0))
    rel = float(np.linalg.norm(yT) / ref) if ref > 0 else float(np.linalg.norm(yT))
    return LinearResidual(yT, float(np.max(np.abs(yT))), rel)


def optimality_check(solution: MomentSolution, trials: int = 32, step: float = 1e-3, seed: int = 0) -> dict:
    """First-order optimality tests of a least-norm solution.

    Two families of perturbation are applied:

    * coefficient perturbations ``c -> c + step * d`` followed by the
      ``L^2`` projection back onto the constraint set;
    * feasible perturbations ``p + q`` with ``q`` in the null space of the
      constraints, scaled to ``step * ||p||``.

    Neither may produce a smaller norm.  Rounding is tolerated at the
    level ``1e-10 ||p||`` plus ``64 eps`` times the norm of the perturbed
    kernel combination, whose size grows with the conditioning.

    Returns
    -------
    dict
        ``passed`` plus the smallest observed norm change of each family.
    """
    prob = solution.problem
    ctrl = solution.control
    t, w = ctrl.nodes.ravel(), ctrl.weights.ravel()
    sw = np.sqrt(w)
    E = sw[:, None] * _kernel(prob, t)
    r = _rhs(prob)
    Q, R, P = qr(E, mode="economic", pivoting=True)
    rank = solution.rank
    Q = Q[:, :rank]
    # the constraint set is {q : Q^T q = z} within the weighted grid space
    z = solve_triangular(R[:rank, :rank], r[P[:rank]], trans="T")
    base = ctrl.l2_norm()
    rng = np.random.default_rng(seed)
    tol = 1e-10 * max(base, 1e-300)

    def project(qv):
        return qv - Q @ (Q.T @ qv) + Q @ z

    worst_coef = math.inf
    coef_ok = True
    for _ in range(trials):
        d = rng.standard_normal(prob.size)
        d *= step * max(np.linalg.norm(solution.coefficients), 1.0) / np.linalg.norm(d)
        qv = E @ (solution.coefficients + d)
        # rounding floor of the projection scales with the perturbed vector
        floor = 64.0 * np.finfo(float).eps * float(np.linalg.norm(qv))
        change = float(np.linalg.norm(project(qv))) - base
        worst_coef = min(worst_coef, change)
        coef_ok &= change >= -(tol + floor)

    worst_null = math.inf
    psw = ctrl.values.ravel() * sw
    for _ in range(trials):
        g = rng.standard_normal(t.size)
        g -= Q @ (Q.T @ g)
        g *= step * base / np.linalg.norm(g)
        worst_null = min(worst_null, float(np.linalg.norm(psw + g)) - base)
    return {
        "passed": bool(coef_ok and worst_null >= -tol),
        "coefficient_min_change": worst_coef,
        "nullspace_min_change": worst_null,
    }


def truncated_control_cost(es: EigenSystem, T: float, edges=None, n_nodes: int = 12,
                           rank_rtol: float = 1e-15) -> float:
    """Operator norm of ``y0 -> p`` for the least-norm control on ``[0, T]``.

    With ``E = Q R P^T`` the pivoted QR of the weighted kernel matrix,
    ``||p|| = ||R^{-T} (S y0)[P]||`` where ``S = diag(exp(-lambda T) / b)``,
    so the cost is the largest singular value of ``R^{-T} S[P]``.  Inactive
    modes (``b_k = 0``) are excluded since they cannot be steered.
    """
    b = es.ground_couplings
    active = np.abs(b) > _COUPLING_TOL * max(float(np.max(np.abs(b))), 1e-300)
    dummy = np.where(active, 1.0, 0.0)
    prob = assemble_moment_problem(dummy, es, T)
    if edges is None:
        edges = stage_grid(T, float(prob.rates.max()), n_nodes)
    nodes, weights = composite_rule(np.asarray(edges, dtype=float), n_nodes)
    sw = np.sqrt(weights.ravel())
    E = sw[:, None] * _kernel(prob, nodes.ravel())
    _, R, P = qr(E, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > rank_rtol * diag[0]))
    S = np.diag(np.exp(-prob.rates * T) / prob.couplings)[P[:rank]]
    M = solve_triangular(R[:rank, :rank], S, trans="T")
    return float(np.linalg.norm(M, 2))


@dataclass(frozen=True)
class CostEstimate:
    """Empirical control cost over a grid of horizons.

    Attributes
    ----------
    horizons : ndarray
    n_emp : ndarray
        ``max ||p||`` over unit initial states (``nan`` where the solver failed).
    residuals : ndarray
        Worst relative residual per horizon.
    nu_hat, intercept, r2 : float
        Fit ``log N_emp(T) ~ nu_hat / T + intercept`` and its R^2.
    nu_envelope : float
        ``max_T T log N_emp(T)``: the smallest ``nu`` with
        ``N_emp(T) <= exp(nu / T)`` on the grid.
    tail : ndarray
        Truncation indicator ``exp(-lambda_K T)``.
    failures : dict
        Horizon -> error message for excluded horizons.
    n_trunc : ndarray
        Exact cost of the truncated problem (:func:`truncated_control_cost`).
    nu_trunc : float
        ``max_T T log n_trunc(T)``; an admissible ``nu`` for the truncation.
    """

    horizons: np.ndarray
    n_emp: np.ndarray
    residuals: np.ndarray
    nu_hat: float
    intercept: float
    r2: float
    nu_envelope: float
    tail: np.ndarray
    failures: dict
    n_trunc: np.ndarray = None
    nu_trunc: float = float("nan")

    def rows(self):
        nt = self.n_trunc if self.n_trunc is not None else np.full(self.horizons.size, np.nan)
        return [
            {"T": float(T), "N_emp": float(n), "N_trunc": float(c), "residual": float(r), "tail": float(tl)}
            for T, n, c, r, tl in zip(self.horizons, self.n_emp, nt, self.residuals, self.tail)
        ]


def _unit_states(es: EigenSystem, trials: int, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    y = rng.standard_normal((trials, es.size))
    return y / np.linalg.norm(y, axis=1, keepdims=True)


def _cost_at(es, T, states, precision):
    worst_norm = 0.0
    worst_res = 0.0
    for y0 in states:
        sol = solve_min_norm(assemble_moment_problem(y0, es, T), precision=precision, full_output=True)
        worst_norm = max(worst_norm, sol.control.l2_norm())
        worst_res = max(worst_res, sol.residual)
    return worst_norm, worst_res


def estimate_control_cost(
    es: EigenSystem,
    horizons: Sequence[float],
    trials: int = 16,
    seed=0,
    precision: str = "auto",
    executor=None,
) -> CostEstimate:
    """Measure ``N_emp(T)`` and fit the law ``N(T) ~ exp(nu / T)``.

    The same ``trials`` random unit states (uniform on the sphere) are used
    at every horizon.

    Parameters
    ----------
    executor : concurrent.futures.Executor, optional
        Horizons are solved concurrently when given.

    Raises
    ------
    DomainError
        If ``trials < 8``.
    """
    if trials < 8:
        raise DomainError("at least 8 trials are required")
    horizons = np.asarray(sorted(float(T) for T in horizons))
    states = _unit_states(es, trials, seed)
    n_emp = np.full(horizons.size, np.nan)
    res = np.full(horizons.size, np.nan)
    failures = {}
    if executor is not None:
        futures = [executor.submit(_cost_at, es, T, states, precision) for T in horizons]
        outcomes = []
        for f in futures:
            try:
                outcomes.append(f.result())
            except ConditioningError as exc:
                outcomes.append(exc)
    else:
        outcomes = []
        for T in horizons:
            try:
                outcomes.append(_cost_at(es, T, states, precision))
            except ConditioningError as exc:
                outcomes.append(exc)
    for i, out in enumerate(outcomes):
        if isinstance(out, Exception):
            failures[float(horizons[i])] = str(out)
        else:
            n_emp[i], res[i] = out
    ok = np.isfinite(n_emp) & (n_emp > 0)
    nu_hat = icept = r2 = float("nan")
    if ok.sum() >= 2:
        x = 1.0 / horizons[ok]
        y = np.log(n_emp[ok])
        nu_hat, icept = (float(v) for v in np.polyfit(x, y, 1))
        fit = nu_hat * x + icept
        ss = float(np.sum((y - y.mean()) ** 2))
        r2 = 1.0 - float(np.sum((y - fit) ** 2)) / ss if ss > 0 else 1.0
    env = float(np.max(horizons[ok] * np.log(n_emp[ok]))) if ok.any() else float("nan")
    tail = np.exp(-es.eigenvalues[-1] * horizons)
    n_trunc = np.array([truncated_control_cost(es, T) for T in horizons])
    nu_trunc = float(np.max(horizons * np.log(np.maximum(n_trunc, 1.0))))
    return CostEstimate(horizons, n_emp, res, nu_hat, icept, r2, env, tail, failures, n_trunc, nu_trunc)
