"""Particle realisation of the Fokker-Planck model and its cross-checks.

Particles follow ``dX = p(t) mu~(X) dt + sqrt(2) dW`` with the Euler-Maruyama
scheme.  The drift enters through the exact step integral of the control,
``(int_{t_k}^{t_{k+1}} p) mu~(X_k)``, since ``p`` is only square integrable.
``mu~`` extends ``mu`` by its boundary values outside ``[0, 1]``.

Random numbers come from independent PCG64 streams, one per fixed-size
particle chunk, spawned from a single seed; results therefore depend only
on the seed and the chunk size, not on the number of worker threads.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import _kernels as K
from .errors import DomainError, StepSizeError
from .quadrature import composite_rule
from .signal import ControlSignal
from .simulate import integrate_bilinear
from .spectral import EigenSystem, _check

__all__ = [
    "DriftExtension",
    "ParticleEnsemble",
    "REGIMES",
    "simulate_ensemble",
    "DensityEstimate",
    "estimate_density",
    "galerkin_density",
    "l1_distance",
    "sample_density",
    "AprioriReport",
    "check_apriori_bounds",
    "PicardResult",
    "picard_iterate_path",
    "mass_balance_check",
]

REGIMES = {"partial_reflect": K.REFLECT, "absorb": K.ABSORB, "free_line": K.FREE}
CHUNK = 4096
_BLOCK = 256
_EXCESS_FRACTION = 1e-3


@dataclass(frozen=True)
class DriftExtension:
    """Drift ``mu`` on ``[0, 1]`` extended by ``mu(0)`` below and ``mu(1)`` above.

    Parameters
    ----------
    kind : {"zero", "power", "sin", "callable"}
    param : float
        Exponent for ``"power"`` (``x**param``), frequency for ``"sin"``.
    func : callable, optional
        Vectorised ``mu`` on ``[0, 1]`` for ``"callable"``; only the numpy
        kernels accept it.
    extend : bool
        Freeze ``mu`` at its boundary values outside ``[0, 1]``.  Drifts
        that are Lipschitz on the whole line (``sin``) may be used
        unextended there.
    """

    kind: str = "zero"
    param: float = 0.0
    func: Optional[Callable] = field(default=None, compare=False, repr=False)
    extend: bool = True

    def __post_init__(self):
        if self.kind not in ("zero", "power", "sin", "callable"):
            raise DomainError(f"unknown drift kind {self.kind!r}")
        if self.kind == "callable" and self.func is None:
            raise DomainError("a callable drift needs func")
        if not self.extend and self.kind in ("power", "callable") and self.param != 1 and self.param != 0:
            raise DomainError("only sin and linear drifts are globally Lipschitz without extension")
        if self.kind == "power" and 0 < self.param < 1:
            # x**q with q < 1 is not Lipschitz at 0
            raise DomainError("power drifts need an exponent of 0 or at least 1")

    @classmethod
    def from_spec(cls, spec) -> "DriftExtension":
        """Drift of a Fokker-Planck :class:`~groundctl.problems.ProblemSpec`."""
        if spec.mu_freq is not None:
            return cls("sin", float(spec.mu_freq)) if spec.mu_freq != 0 else cls()
        return cls("power", float(spec.mu_power))

    @property
    def code(self) -> int:
        return {"zero": K.DRIFT_ZERO, "power": K.DRIFT_POWER, "sin": K.DRIFT_SIN}.get(self.kind, -1)

    @property
    def lipschitz(self) -> float:
        """Lipschitz constant on ``[0, 1]`` (hence on the real line)."""
        if self.kind == "power":
            return float(self.param)
        if self.kind == "sin":
            return abs(float(self.param))
        if self.kind == "zero":
            return 0.0
        xs = np.linspace(0.0, 1.0, 4097)
        return float(np.max(np.abs(np.diff(self.func(xs)) / np.diff(xs))))

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "callable":
            return np.asarray(self.func(np.clip(x, 0.0, 1.0) if self.extend else x), dtype=float)
        return K.drift_values(x, self.code, self.param, int(self.extend))


@dataclass
class ParticleEnsemble:
    """Particle positions with boundary bookkeeping.

    Attributes
    ----------
    positions : ndarray
    alive : ndarray of uint8
    seed : int
    time : float
    reflections, absorptions : int
        Fold and kill events so far.
    excess_folds : int
        Particle-steps that needed more than two folds.
    steps : int
        Particle-steps taken.
    initial_count : int
    """

    positions: np.ndarray
    alive: np.ndarray
    seed: int = 0
    time: float = 0.0
    reflections: int = 0
    absorptions: int = 0
    excess_folds: int = 0
    steps: int = 0
    initial_count: int = 0

    @classmethod
    def from_positions(cls, x, seed: int = 0) -> "ParticleEnsemble":
        x = np.array(x, dtype=np.float64).ravel()
        return cls(x, np.ones(x.size, dtype=np.uint8), int(seed), initial_count=int(x.size))

    @classmethod
    def uniform(cls, n: int, seed: int = 0) -> "ParticleEnsemble":
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0xD15,)))
        return cls.from_positions(rng.random(n), seed)

    @property
    def size(self) -> int:
        return int(self.positions.size)

    @property
    def alive_count(self) -> int:
        return int(self.alive.sum())

    def copy(self) -> "ParticleEnsemble":
        return ParticleEnsemble(self.positions.copy(), self.alive.copy(), self.seed, self.time, self.reflections,
                                self.absorptions, self.excess_folds, self.steps, self.initial_count)

    def manifest(self) -> dict:
        return {"seed": self.seed, "N_p": self.size, "time": self.time, "alive": self.alive_count,
                "reflections": self.reflections, "absorptions": self.absorptions,
                "excess_folds": self.excess_folds}


def _chunk_rng(seed: int, index: int, call: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(call, index))))


def simulate_ensemble(
    ensemble: ParticleEnsemble,
    p: Optional[ControlSignal],
    drift: DriftExtension,
    regime: str,
    dt: float,
    T: float,
    threads: int = 1,
    record_every: int = 0,
    track_sup: bool = False,
    backend: Optional[str] = None,
    call: int = 0,
    tracker: Optional[dict] = None,
):
    """Advance ``ensemble`` by ``T`` with step ``dt`` (in place).

    Parameters
    ----------
    p : ControlSignal or None
        Control in absolute time; zero outside its support.
    regime : {"partial_reflect", "absorb", "free_line"}
    threads : int
        Worker threads over particle chunks; results do not depend on it.
    record_every : int
        If positive, alive counts are recorded every that many steps.
    track_sup : bool
        Track running maxima of ``X^2`` and ``(X - X_0)^2`` per particle.
    tracker : dict, optional
        ``x_start``, ``sup_sq`` and ``sup_dev`` arrays from an earlier call,
        updated in place so maxima run over several calls.
    backend : {"cython", "python"}, optional
        Override the kernel selection.
    call : int
        Distinguishes the random streams of successive calls on one ensemble.

    Returns
    -------
    dict
        ``times`` and ``alive`` when recording, ``sup_sq``/``sup_dev`` when
        tracking.

    Raises
    ------
    StepSizeError
        If more than 0.1% of particle-steps needed more than two folds.
    """
    if regime not in REGIMES:
        raise DomainError(f"unknown regime {regime!r}")
    if not (dt > 0 and T > 0):
        raise DomainError("dt and T must be positive")
    nsteps = int(round(T / dt))
    if nsteps < 1 or abs(nsteps * dt - T) > 1e-9 * T:
        raise DomainError("T must be a whole number of steps")
    kern = K.get_backend(backend) if backend else K
    if drift.kind == "callable":
        kern = K.get_backend("python")
    code = REGIMES[regime]
    t0 = ensemble.time
    times = t0 + dt * np.arange(nsteps + 1)
    incr = p.increments(times) if p is not None else np.zeros(nsteps)
    sqrt2dt = math.sqrt(2.0 * dt)
    fn = drift if drift.kind == "callable" else None

    n = ensemble.size
    starts = list(range(0, n, CHUNK))
    rec_steps = list(range(record_every, nsteps + 1, record_every)) if record_every > 0 else []
    alive_hist = np.zeros((len(starts), len(rec_steps)), dtype=np.int64)
    sup_sq = sup_dev = x_start = None
    if track_sup:
        if tracker is None:
            x0 = ensemble.positions.copy()
            tracker = {"x_start": x0, "sup_sq": x0 * x0, "sup_dev": np.zeros(n)}
        x_start, sup_sq, sup_dev = tracker["x_start"], tracker["sup_sq"], tracker["sup_dev"]

    def work(ci):
        a = starts[ci]
        b = min(a + CHUNK, n)
        x = np.ascontiguousarray(ensemble.positions[a:b])
        al = np.ascontiguousarray(ensemble.alive[a:b])
        xs = ss = sd = None
        if track_sup:
            xs, ss, sd = x_start[a:b].copy(), sup_sq[a:b].copy(), sup_dev[a:b].copy()
        rng = _chunk_rng(ensemble.seed, ci, call)
        counts = np.zeros(3, dtype=np.int64)
        k = 0
        ri = 0
        while k < nsteps:
            m = min(_BLOCK, nsteps - k)
            if ri < len(rec_steps):
                m = min(m, rec_steps[ri] - k)
            z = rng.standard_normal((m, b - a))
            counts += kern.em_chunk(x, al, np.ascontiguousarray(incr[k:k + m]), z, sqrt2dt, code,
                                    drift.code, float(drift.param), int(drift.extend), xs, ss, sd, fn)
            k += m
            if ri < len(rec_steps) and k == rec_steps[ri]:
                alive_hist[ci, ri] = int(al.sum())
                ri += 1
        ensemble.positions[a:b] = x
        ensemble.alive[a:b] = al
        if track_sup:
            sup_sq[a:b], sup_dev[a:b] = ss, sd
        return counts

    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, range(len(starts))))
    else:
        results = [work(ci) for ci in range(len(starts))]
    total = np.sum(results, axis=0)
    ensemble.reflections += int(total[0])
    ensemble.absorptions += int(total[1])
    ensemble.excess_folds += int(total[2])
    ensemble.steps += n * nsteps
    ensemble.time = float(times[-1])
    if regime == "partial_reflect" and total[2] > _EXCESS_FRACTION * n * nsteps:
        raise StepSizeError(
            f"{int(total[2])} of {n * nsteps} particle-steps needed more than two folds; reduce dt",
            float(total[2]) / (n * nsteps),
        )
    out = {}
    if rec_steps:
        out["times"] = times[rec_steps]
        out["alive"] = alive_hist.sum(axis=0)
    if track_sup:
        out["tracker"] = tracker
        out["sup_sq"] = sup_sq
        out["sup_dev"] = sup_dev
    return out


@dataclass(frozen=True)
class DensityEstimate:
    """Histogram density on ``[0, 1]``.

    Attributes
    ----------
    edges, centers, density : ndarray
    counts : ndarray of int
    normalizer : int
        Particle count the density is normalised by.
    valid : bool
        At least 1000 alive particles contributed.
    warning : str or None
    """

    edges: np.ndarray
    centers: np.ndarray
    density: np.ndarray
    counts: np.ndarray
    normalizer: int
    valid: bool
    warning: Optional[str] = None

    def rows(self):
        return [{"bin_center": float(c), "density": float(d), "count": int(n)}
                for c, d, n in zip(self.centers, self.density, self.counts)]


def estimate_density(ensemble: ParticleEnsemble, bins: int = 20, regime: str = "partial_reflect",
                     min_alive: int = 1000) -> DensityEstimate:
    """Normalised histogram of the alive particles.

    The absorbing regime divides by the initial count so lost mass shows;
    other regimes divide by the alive count.
    """
    if bins < 1:
        raise DomainError("bins must be positive")
    edges = np.linspace(0.0, 1.0, bins + 1)
    x = ensemble.positions[ensemble.alive.astype(bool)]
    counts, _ = np.histogram(x, bins=edges)
    norm = ensemble.initial_count if regime == "absorb" else x.size
    width = 1.0 / bins
    dens = counts / (max(norm, 1) * width)
    valid = x.size >= min_alive
    msg = None if valid else f"only {x.size} alive particles; the histogram is not statistically reliable"
    if msg:
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return DensityEstimate(edges, 0.5 * (edges[:-1] + edges[1:]), dens, counts, int(norm), bool(valid), msg)


def galerkin_density(u, es: EigenSystem, edges, nodes: int = 16) -> np.ndarray:
    """Bin averages of ``sum_k u_k phi_k`` over the given bins."""
    u = _check(u, es)
    xs, ws = composite_rule(np.asarray(edges, dtype=float), nodes)
    vals = es.evaluate(u, xs)
    return np.sum(vals * ws, axis=1) / np.diff(edges)


def l1_distance(a, b, edges) -> float:
    """``sum_b |a_b - b_b| width_b`` for bin-wise densities."""
    return float(np.sum(np.abs(np.asarray(a) - np.asarray(b)) * np.diff(edges)))


def sample_density(u, es: EigenSystem, n: int, seed: int = 0, grid: int = 4096) -> np.ndarray:
    """Draw ``n`` points from the (non-negative) density ``sum_k u_k phi_k``.

    Inverse-CDF sampling on a fine piecewise-linear interpolation.

    Raises
    ------
    DomainError
        If the density is negative somewhere on the grid or has zero mass.
    """
    xs = np.linspace(0.0, 1.0, grid + 1)
    f = es.evaluate(u, xs)
    if np.any(f < -1e-12 * np.max(np.abs(f))):
        raise DomainError("initial density takes negative values")
    f = np.maximum(f, 0.0)
    # exact CDF of the piecewise-linear interpolant
    cell = 0.5 * (f[:-1] + f[1:]) * np.diff(xs)
    cdf = np.concatenate([[0.0], np.cumsum(cell)])
    total = cdf[-1]
    if total <= 0:
        raise DomainError("initial density has zero mass")
    cdf /= total
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0x5A,)))
    q = rng.random(n)
    i = np.clip(np.searchsorted(cdf, q, side="right") - 1, 0, grid - 1)
    h = xs[i + 1] - xs[i]
    fa, fb = f[i], f[i + 1]
    r = (q - cdf[i]) * total
    # solve fa s + (fb - fa) s^2 / (2 h) = r for s in [0, h]
    slope = (fb - fa) / h
    disc = np.sqrt(np.maximum(fa * fa + 2.0 * slope * r, 0.0))
    lin = np.abs(slope) < 1e-14 * np.maximum(fa, 1e-300)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(lin, r / np.where(fa > 0, fa, 1.0), 2.0 * r / (fa + disc))
    return np.clip(xs[i] + s, 0.0, 1.0)


@dataclass(frozen=True)
class AprioriReport:
    """Monte-Carlo moments along the free-line dynamics.

    Attributes
    ----------
    times : ndarray
    e_sup_sq : ndarray
        ``E sup_{s<=t} |X_s|^2``.
    e_sup_dev : ndarray
        ``E sup_{s<=t} |X_s - X_0|^2``.
    e_x0_sq : float
    slope, intercept : float
        Least-squares line of ``e_sup_dev`` against ``t``.
    ratio_spread : float
        ``max / min`` of ``e_sup_dev / t``; close to one for linear growth.
    linear : bool
        ``e_sup_dev / t`` stays within a factor of two over the grid.
    """

    times: np.ndarray
    e_sup_sq: np.ndarray
    e_sup_dev: np.ndarray
    e_x0_sq: float
    slope: float
    intercept: float
    ratio_spread: float
    linear: bool

    def rows(self):
        return [{"t": float(t), "E_sup_sq": float(a), "E_sup_dev": float(b)}
                for t, a, b in zip(self.times, self.e_sup_sq, self.e_sup_dev)]


def check_apriori_bounds(
    x0,
    p: Optional[ControlSignal],
    drift: DriftExtension,
    times,
    dt: float,
    seed: int = 0,
    threads: int = 1,
    backend: Optional[str] = None,
) -> AprioriReport:
    """Estimate the sup-moments on ``[0, t]`` for each ``t`` in ``times``.

    Runs the free-line dynamics from the given initial positions once,
    segment by segment, carrying the running maxima.
    """
    times = np.asarray(sorted(float(t) for t in times))
    if times[0] <= 0:
        raise DomainError("times must be positive")
    ens = ParticleEnsemble.from_positions(x0, seed)
    x_start = ens.positions.copy()
    tracker = None
    e_sq, e_dev = [], []
    prev = 0.0
    for call, t in enumerate(times):
        out = simulate_ensemble(ens, p, drift, "free_line", dt, t - prev, threads=threads, track_sup=True,
                                backend=backend, call=call, tracker=tracker)
        tracker = out["tracker"]
        e_sq.append(float(np.mean(tracker["sup_sq"])))
        e_dev.append(float(np.mean(tracker["sup_dev"])))
        prev = t
    e_dev = np.array(e_dev)
    slope, icept = (float(v) for v in np.polyfit(times, e_dev, 1))
    ratio = e_dev / times
    spread = float(ratio.max() / ratio.min()) if ratio.min() > 0 else math.inf
    return AprioriReport(times, np.array(e_sq), e_dev, float(np.mean(x_start ** 2)), slope, icept, spread,
                         bool(spread <= 2.0))


@dataclass(frozen=True)
class PicardResult:
    """Picard iterate distances on a batch of fixed Brownian paths.

    Attributes
    ----------
    sup_paths : ndarray, shape (paths, iterations)
        ``sup_t |X_{m+1}(t) - X_m(t)|`` per path.
    distances : ndarray
        Root-mean-square over paths of ``sup_paths`` (equal to it for one
        path); ``d_m`` for ``m = 0, 1, ...``.
    ratios : ndarray
        ``d_{m+1} / d_m``.
    bound : ndarray
        ``d_1^2 (R T)^{m-1} / (m-1)!`` for ``m >= 1`` (``nan`` at ``m = 0``),
        with ``R = (L ||p||_inf)^2 T``: the factorial envelope of the
        mean-square distances anchored at the first drift-driven iterate.
    superlinear : bool
        ``d_4 / d_3 < d_3 / d_2 < 1``.
    diverged : bool
        ``d_m`` increased three times in a row.
    """

    sup_paths: np.ndarray
    distances: np.ndarray
    ratios: np.ndarray
    bound: np.ndarray
    superlinear: bool
    diverged: bool

    def within_bound(self, slack: float = 1.0) -> bool:
        ms = self.distances ** 2
        ok = np.isfinite(self.bound)
        return bool(np.all(ms[ok] <= slack * self.bound[ok] * (1 + 1e-12)))


def picard_iterate_path(
    dW,
    dt: float,
    p: Optional[ControlSignal],
    drift: DriftExtension,
    x0: float = 0.0,
    iterations: int = 8,
    backend: Optional[str] = None,
) -> PicardResult:
    """Iterate the Picard map on fixed discretised Brownian paths.

    Parameters
    ----------
    dW : ndarray, shape (steps,) or (paths, steps)
        Brownian increments on the uniform grid of step ``dt``.

    Notes
    -----
    ``d_0`` compares the first iterate with the constant path and is
    dominated by the noise itself; the factorial decay governs the
    drift-driven differences from ``d_1`` on.
    """
    dW = np.atleast_2d(np.asarray(dW, dtype=float))
    if iterations < 5:
        raise DomainError("at least five iterations are needed for the ratio test")
    steps = dW.shape[1]
    times = dt * np.arange(steps + 1)
    incr = np.ascontiguousarray(p.increments(times) if p is not None else np.zeros(steps))
    kern = K.get_backend(backend) if backend else K
    fn = None
    if drift.kind == "callable":
        kern, fn = K.get_backend("python"), drift
    sups = np.empty((dW.shape[0], iterations))
    for i, row in enumerate(dW):
        W = np.concatenate([[0.0], np.cumsum(row)])
        sups[i] = kern.picard_distances(float(x0), incr, W, drift.code, float(drift.param), int(drift.extend),
                                        iterations, fn)
    d = np.sqrt(np.mean(sups ** 2, axis=0))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = d[1:] / d[:-1]
    T = times[-1]
    pmax = float(np.max(np.abs(incr)) / dt) if incr.size else 0.0
    rate = (drift.lipschitz * pmax) ** 2 * T * T
    bound = np.full(iterations, np.nan)
    m = np.arange(1, iterations)
    if rate > 0:
        bound[1:] = d[1] ** 2 * np.exp((m - 1) * math.log(rate) - np.array([math.lgamma(k) for k in m]))
    else:
        bound[1:] = np.where(m == 1, d[1] ** 2, 0.0)
    superlinear = bool(ratios[3] < ratios[2] < 1.0) if np.all(np.isfinite(ratios[2:4])) else False
    inc = np.diff(d) > 0
    diverged = bool(any(inc[i:i + 3].all() for i in range(max(inc.size - 2, 0))))
    return PicardResult(sups, d, ratios, bound, superlinear, diverged)


def mass_balance_check(u0, p: ControlSignal, es: EigenSystem, drift: DriftExtension, times=None) -> dict:
    """Compare ``d/dt int u`` with the boundary flux on the Galerkin side.

    For partially reflecting boundaries the mass obeys
    ``d/dt int u = -p(t) [mu u]_0^1``.  The mass is the ground-mode
    projection (``phi_0 = 1``); its derivative is taken by central
    differences of the integrated trajectory and the flux from the
    eigenfunction expansion at the end points.

    Returns
    -------
    dict
        ``times``, ``dmass``, ``flux`` and the relative error
        ``max |dmass - flux| / max |flux|``.
    """
    if es.basis is None:
        raise DomainError("the eigensystem carries no basis functions")
    if times is None:
        times = np.linspace(p.t0, p.t1, 11)[1:-1]
    times = np.asarray(times, dtype=float)
    h = 1e-4 * (p.t1 - p.t0)
    xs, ws = composite_rule(np.linspace(0.0, 1.0, 33), 16)
    # int phi_k for every mode
    weights = np.array([np.sum(es.basis(k, xs) * ws) for k in range(es.size)])
    dmass, flux = [], []
    for t in times:
        ts = [t - h, t + h]
        states = []
        for s in ts:
            if s <= p.t0:
                states.append(np.asarray(u0, dtype=float))
            else:
                states.append(integrate_bilinear(u0, p, es, (p.t0, s), atol=1e-12).final)
        dmass.append(float(weights @ (states[1] - states[0])) / (2 * h))
        u_mid = integrate_bilinear(u0, p, es, (p.t0, t), atol=1e-12).final
        ends = es.evaluate(u_mid, np.array([0.0, 1.0]))
        mu = drift(np.array([0.0, 1.0]))
        flux.append(-float(p(np.array([t]))[0]) * (mu[1] * ends[1] - mu[0] * ends[0]))
    dmass, flux = np.array(dmass), np.array(flux)
    rel = float(np.max(np.abs(dmass - flux)) / max(np.max(np.abs(flux)), 1e-300))
    return {"times": times, "dmass": dmass, "flux": flux, "relative_error": rel}
