"""Acceptance criteria, one test each, at their stated tolerances.

Every test prints ``PASS``/``FAIL`` with the measured numbers; the lines
are also repeated in the terminal summary (see ``conftest.py``).  Run
``pytest tests/test_acceptance.py -v`` or ``python3 tests/test_acceptance.py``.
"""
from __future__ import annotations

import math
import time

import numpy as np
import pytest

from groundctl.bessel import bessel_table, besselj
from groundctl.loop import derive_constants, run_local_loop, run_semiglobal_strip, second_eigenvalue
from groundctl.moment import (
    assemble_moment_problem,
    estimate_control_cost,
    optimality_check,
    solve_min_norm,
    verify_linear_null,
)
from groundctl.problems import ProblemSpec, b_coeff_quadrature, build_problem, verify_hypotheses
from groundctl.sde import (
    DriftExtension,
    ParticleEnsemble,
    estimate_density,
    galerkin_density,
    l1_distance,
    picard_iterate_path,
    sample_density,
    simulate_ensemble,
)
from groundctl.signal import ControlSignal
from groundctl.simulate import integrate_bilinear
from groundctl.spectral import norm_s

RESULTS: list[str] = []


def record(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {number:2d} {title}: {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def _random_half_sphere(es, size, seed):
    """Seeded direction uniform on the 1/2-norm sphere, scaled to ``size``."""
    ess = es.shifted()
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0xDE17A,)))
    d = rng.standard_normal(es.size) / np.sqrt(1.0 + ess.eigenvalues)
    return d * size / float(norm_s(d, 0.5, ess))


def test_criterion_01_closed_form_coefficients():
    t0 = time.perf_counter()
    errs = []
    spec = ProblemSpec("fp_dirichlet", truncation=4, mu_power=1.0)
    for k in range(1, 51):
        want = 0.5 if k == 1 else (-1) ** k * 2 * k / (k * k - 1)
        errs.append(abs(b_coeff_quadrature(spec, 1, k) - want))
    spec = ProblemSpec("heat_neumann_drift", truncation=4, mu_power=2.0)
    for k in range(0, 51):
        want = 1 / 3 if k == 0 else 2 * math.sqrt(2) * (-1) ** k / (k * math.pi) ** 2
        errs.append(abs(b_coeff_quadrature(spec, 0, k) - want))
    spec = ProblemSpec("fp_neumann", truncation=4, mu_power=3.0)
    for k in range(1, 51):
        want = 6 * math.sqrt(2) * (-1) ** k / (k * math.pi) ** 2
        errs.append(abs(b_coeff_quadrature(spec, 0, k) - want))
    elapsed = time.perf_counter() - t0
    worst = max(errs)
    record(1, "closed-form coefficients", worst <= 1e-9 and elapsed < 5,
           f"max abs error {worst:.2e} (tol 1e-9) over {len(errs)} coefficients, {elapsed:.2f} s (< 5 s)")


def test_criterion_02_gap_certificates():
    t0 = time.perf_counter()
    gaps = {}
    for kind, mu in (("fp_neumann", 3.0), ("fp_dirichlet", 1.0)):
        es = build_problem(ProblemSpec(kind, truncation=32, mu_power=mu))
        gaps[kind] = verify_hypotheses(es).gap
    ok = all(abs(g - math.pi) <= 1e-12 for g in gaps.values())
    margins = {}
    for alpha in (0.0, 0.25, 0.5, 0.75, 0.95, 1.0, 1.25, 1.5, 1.75, 1.95):
        es = build_problem(ProblemSpec("degenerate_dirichlet", truncation=32, alpha=alpha), check_rank=False)
        req = 7 * math.pi / 16 if alpha < 1 else (2 - alpha) * math.pi / 2
        margins[alpha] = es.gap() - req
    elapsed = time.perf_counter() - t0
    short = {a: m for a, m in margins.items() if m < 0}
    ok = ok and not short and elapsed < 5
    record(2, "gap certificates", ok,
           f"FP gaps - pi: {max(abs(g - math.pi) for g in gaps.values()):.1e} (tol 1e-12); "
           f"degenerate gap below the stated bound at alpha in {sorted(short) or 'none'} "
           f"(margins {', '.join(f'{m:.4f}' for m in short.values()) or '-'}); {elapsed:.2f} s (< 5 s)")


def test_criterion_03_degenerate_reduction():
    es = build_problem(ProblemSpec("degenerate_dirichlet", truncation=32, alpha=0.0))
    k = np.arange(1, 33)
    eig_err = float(np.max(np.abs(es.eigenvalues - (k * math.pi) ** 2)))
    worst_j = 0.0
    for order in (0.0, 1 / 3, 0.5, 1.0, 2.5, 4.0 / 3.0 + 1.0):
        z = bessel_table(order, 32).zeros
        worst_j = max(worst_j, float(np.max(np.abs(besselj(order, z)))))
    record(3, "degenerate reduction", eig_err <= 1e-10 and worst_j < 1e-10,
           f"max |lambda_k - (k pi)^2| = {eig_err:.1e} (tol 1e-10); max |J(j)| = {worst_j:.1e} (< 1e-10)")


def test_criterion_04_linear_null_control():
    t0 = time.perf_counter()
    es = build_problem(ProblemSpec("fp_dirichlet", truncation=12)).shifted()
    rng = np.random.default_rng(4)
    worst, opt_ok = 0.0, True
    for _ in range(20):
        y0 = rng.standard_normal(es.size)
        y0 /= np.linalg.norm(y0)
        sol = solve_min_norm(assemble_moment_problem(y0, es, 0.5), full_output=True)
        worst = max(worst, verify_linear_null(sol.control, y0, es, 0.5).relative)
        opt_ok &= optimality_check(sol, trials=8)["passed"]
    elapsed = time.perf_counter() - t0
    record(4, "linear null control", worst <= 1e-6 and opt_ok and elapsed < 30,
           f"worst relative residual {worst:.1e} (tol 1e-6); optimality {'passed' if opt_ok else 'failed'}; "
           f"{elapsed:.1f} s (< 30 s)")


def test_criterion_05_control_cost_law():
    es = build_problem(ProblemSpec("fp_dirichlet", truncation=16)).shifted()
    horizons = np.round(np.arange(0.2, 1.01, 0.1), 10)
    cost = estimate_control_cost(es, horizons, trials=16, seed=5)
    n = cost.n_emp
    mono = bool(np.all(np.diff(n) <= 1e-9 * n[:-1]))
    ok = cost.nu_hat > 0 and cost.r2 > 0.9 and mono and not cost.failures
    record(5, "control-cost law", ok,
           f"nu_hat = {cost.nu_hat:.3f} (> 0), R^2 = {cost.r2:.4f} (> 0.9), N_emp nonincreasing: {mono}")


@pytest.fixture(scope="module")
def criterion6_run():
    es = build_problem(ProblemSpec("fp_dirichlet", truncation=16))
    u0 = es.ground_state() + _random_half_sphere(es, 1e-2, seed=0)
    consts = derive_constants(es, 2.0)
    t0 = time.perf_counter()
    ctrl, trace = run_local_loop(u0, es, 2.0, consts, stop_tol=1e-10, n_max=12)
    return ctrl, trace, consts, time.perf_counter() - t0


def test_criterion_06_quadratic_contraction(criterion6_run):
    ctrl, trace, _, elapsed = criterion6_run
    halves = [s.v_half for s in trace.stages]
    reached = next((i + 1 for i, h in enumerate(halves) if h <= 1e-8), None)
    ks = [s.k_emp for s in trace.stages[1:5]]
    spread = max(ks) / min(ks) if ks else 1.0
    support = trace.summary["support_length"]
    ok = reached is not None and reached <= 5 and spread <= 10 and support <= trace.schedule.T_f and elapsed < 120
    record(6, "quadratic contraction", ok,
           f"||v_n||: {', '.join(f'{h:.1e}' for h in halves)}; <= 1e-8 at stage {reached} (<= 5); "
           f"K_emp stages 2-5: {', '.join(f'{k:.2f}' for k in ks)}, spread {spread:.1f} (<= 10); "
           f"support {support:.3f} <= T_f {trace.schedule.T_f:.3f}; {elapsed:.1f} s (< 120 s)")


def test_criterion_07_apriori_bounds(criterion6_run):
    _, trace, consts, _ = criterion6_run
    runs = [trace]
    # a run inside the theoretical radius, where (NT) and (v0) hold
    es = build_problem(ProblemSpec("fp_dirichlet", truncation=16))
    small = es.ground_state() + _random_half_sphere(es, 0.5 * consts.R_T, seed=7)
    _, t_theory = run_local_loop(small, es, 2.0, consts, stop_tol=1e-10, mode="theoretical")
    runs.append(t_theory)
    checked = sum(s.c11_ok is not None for t in runs for s in t.stages)
    checked += sum(s.k_ok is not None for t in runs for s in t.stages)
    violations = [v for t in runs for v in t.bound_violations()]
    record(7, "a-priori bound spot checks", not violations and checked > 0,
           f"{checked} bound evaluations with hypotheses satisfied, {len(violations)} violations")


@pytest.mark.parametrize("r1", ["theoretical", 1e-2])
def test_criterion_08_semiglobal_strip(r1):
    es = build_problem(ProblemSpec("fp_dirichlet", truncation=16))
    consts = derive_constants(es, 1.0)
    r1_val = consts.R_T if r1 == "theoretical" else r1
    d = _random_half_sphere(es, 1.0, seed=8)
    d[es.ground_index] = 0.0
    d *= 1.0 / float(norm_s(d, 0.5, es.shifted()))
    res = run_semiglobal_strip(es.ground_state() + d, es, 1.0, consts, r1_val)
    lam2 = second_eigenvalue(es)
    limit = 1.1 * (1.0 + math.log(1.0 / r1_val ** 2) / lam2)
    used = res.T_dwell + res.trace.summary["tau_final"]
    final = res.trace.final_residual
    record(8, f"semi-global strip (r1={r1_val:.1e})", used <= limit and final <= 1e-6,
           f"steered in {used:.3f} <= {limit:.3f}; final ||v||_1/2 = {final:.1e} (<= 1e-6)")


def _neumann_density_run(n, control_amp, threads=1, seed=9):
    es = build_problem(ProblemSpec("fp_neumann", truncation=16, mu_power=3.0))
    u0 = es.ground_state()
    u0[1] = 0.5 / math.sqrt(2) if control_amp is None else control_amp
    p = None
    if control_amp is not None:
        p, _ = run_local_loop(u0, es, 1.0, stop_tol=1e-10)
    x = sample_density(u0, es, n, seed=seed)
    ens = ParticleEnsemble.from_positions(x, seed=seed)
    simulate_ensemble(ens, p, DriftExtension("power", 3.0), "partial_reflect", 1e-4, 1.0, threads=threads)
    dens = estimate_density(ens, 20)
    gal = galerkin_density(integrate_bilinear(u0, p, es, (0.0, 1.0), atol=1e-12).final, es, dens.edges)
    return l1_distance(dens.density, gal, dens.edges), ens


def test_criterion_09_sde_cross_validation():
    t0 = time.perf_counter()
    l1_free, _ = _neumann_density_run(100_000, None)
    l1_loop, _ = _neumann_density_run(100_000, 0.05 / math.sqrt(2))
    _, a = _neumann_density_run(20_000, None, threads=1)
    _, b = _neumann_density_run(20_000, None, threads=2)
    same = np.array_equal(a.positions, b.positions) and a.reflections == b.reflections
    elapsed = time.perf_counter() - t0
    record(9, "SDE cross-validation", l1_free < 0.05 and l1_loop < 0.1 and same and elapsed < 180,
           f"L1(p=0) = {l1_free:.4f} (< 0.05), L1(loop) = {l1_loop:.4f} (< 0.1), "
           f"seeded reruns bit-identical: {same}; {elapsed:.0f} s (< 180 s)")


def test_criterion_10_picard_superlinear():
    rng = np.random.default_rng(10)
    dt = 1e-3
    dW = rng.standard_normal((200, 1000)) * math.sqrt(dt)
    res = picard_iterate_path(dW, dt, ControlSignal.from_function(lambda t: 1.0, [0.0, 1.0]),
                              DriftExtension("sin", 1.0, extend=False), x0=0.5, iterations=8)
    r = res.ratios
    ok = res.superlinear and res.within_bound()
    record(10, "Picard iteration", ok,
           f"d_3/d_2 = {r[2]:.3f}, d_4/d_3 = {r[3]:.3f} (d4/d3 < d3/d2 < 1); factorial envelope holds: "
           f"{res.within_bound()}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-s"]))
