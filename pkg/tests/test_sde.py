import math

import numpy as np
import pytest

from groundctl import _kernels
from groundctl.errors import DomainError, StepSizeError
from groundctl.problems import ProblemSpec, build_problem
from groundctl.sde import (
    DriftExtension,
    ParticleEnsemble,
    check_apriori_bounds,
    estimate_density,
    galerkin_density,
    l1_distance,
    mass_balance_check,
    picard_iterate_path,
    sample_density,
    simulate_ensemble,
)
from groundctl.signal import ControlSignal

HAVE_C = _kernels.BACKEND == "cython"


def test_drift_extension_freezes_boundary_values():
    d = DriftExtension("power", 3.0)
    assert np.allclose(d(np.array([-0.5, 0.5, 1.5])), [0.0, 0.125, 1.0])
    s = DriftExtension("sin", 2.0, extend=False)
    assert s(np.array([1.5]))[0] == pytest.approx(math.sin(3.0))
    c = DriftExtension("callable", func=lambda x: 1 - x)
    assert np.allclose(c(np.array([-1.0, 2.0])), [1.0, 0.0])
    assert c.lipschitz == pytest.approx(1.0)
    assert DriftExtension("power", 0.0)(np.array([0.3]))[0] == 1.0


def test_drift_extension_validation():
    with pytest.raises(DomainError):
        DriftExtension("power", 0.5)
    with pytest.raises(DomainError):
        DriftExtension("power", 3.0, extend=False)
    with pytest.raises(DomainError):
        DriftExtension("callable")
    assert DriftExtension.from_spec(ProblemSpec("fp_neumann", mu_freq=2.0)).kind == "sin"


def _run(threads=1, seed=3, backend=None, regime="partial_reflect", n=10_000, drift=None):
    ens = ParticleEnsemble.uniform(n, seed=seed)
    p = ControlSignal.from_function(lambda t: np.cos(3 * t), np.linspace(0, 0.05, 3))
    simulate_ensemble(ens, p, drift or DriftExtension("power", 3.0), regime, 1e-3, 0.05, threads=threads,
                      backend=backend)
    return ens


def test_seeded_runs_are_reproducible_and_thread_independent():
    a, b, c = _run(1), _run(1), _run(3)
    assert np.array_equal(a.positions, b.positions)
    assert np.array_equal(a.positions, c.positions) and a.reflections == c.reflections
    assert not np.array_equal(a.positions, _run(seed=4).positions)


@pytest.mark.skipif(not HAVE_C, reason="compiled kernels not built")
@pytest.mark.parametrize("regime", ["partial_reflect", "absorb", "free_line"])
def test_backends_agree(regime):
    a = _run(backend="cython", regime=regime)
    b = _run(backend="python", regime=regime)
    assert np.array_equal(a.positions, b.positions) and np.array_equal(a.alive, b.alive)
    s1 = _run(backend="cython", regime=regime, drift=DriftExtension("sin", 2.0))
    s2 = _run(backend="python", regime=regime, drift=DriftExtension("sin", 2.0))
    assert np.allclose(s1.positions, s2.positions, atol=1e-12)


def test_reflection_keeps_uniform_density():
    ens = ParticleEnsemble.uniform(40_000, seed=1)
    simulate_ensemble(ens, None, DriftExtension(), "partial_reflect", 1e-3, 0.2)
    d = estimate_density(ens, 10)
    assert ens.alive_count == 40_000 and ens.reflections > 0
    assert l1_distance(d.density, np.ones(10), d.edges) < 0.03


def test_absorption_matches_heat_kernel_survival():
    ens = ParticleEnsemble.uniform(40_000, seed=2)
    out = simulate_ensemble(ens, None, DriftExtension(), "absorb", 1e-4, 0.2, record_every=500)
    k = np.arange(1, 400, 2)
    exact = [np.sum(8 / (k * math.pi) ** 2 * np.exp(-(k * math.pi) ** 2 * t)) for t in out["times"]]
    # discrete monitoring misses some crossings: survival is biased up by O(sqrt(dt))
    assert np.allclose(out["alive"] / 40_000, exact, atol=0.03)
    assert ens.absorptions == 40_000 - ens.alive_count


def test_large_steps_are_rejected():
    ens = ParticleEnsemble.uniform(4000, seed=0)
    with pytest.raises(StepSizeError):
        simulate_ensemble(ens, None, DriftExtension(), "partial_reflect", 0.5, 1.0)


def test_sampler_reproduces_density():
    es = build_problem(ProblemSpec("fp_neumann", 8))
    u = es.ground_state()
    u[1] = 0.3
    x = sample_density(u, es, 200_000, seed=5)
    ens = ParticleEnsemble.from_positions(x)
    d = estimate_density(ens, 20)
    assert l1_distance(d.density, galerkin_density(u, es, d.edges), d.edges) < 0.02
    bad = es.ground_state()
    bad[1] = 2.0
    with pytest.raises(DomainError):
        sample_density(bad, es, 10)


def test_density_warns_when_few_particles_survive():
    ens = ParticleEnsemble.uniform(50)
    with pytest.warns(RuntimeWarning):
        d = estimate_density(ens, 5)
    assert not d.valid


def test_picard_zero_drift_converges_after_one_step():
    rng = np.random.default_rng(0)
    dW = rng.standard_normal((5, 200)) * math.sqrt(1e-3)
    res = picard_iterate_path(dW, 1e-3, None, DriftExtension(), x0=0.2, iterations=5)
    assert res.distances[0] > 0 and np.all(res.distances[1:] == 0)


def test_picard_sin_factorial_decay():
    rng = np.random.default_rng(11)
    dW = rng.standard_normal((100, 500)) * math.sqrt(2e-3)
    p = ControlSignal.from_function(lambda t: 1 + 0 * t, [0.0, 1.0])
    res = picard_iterate_path(dW, 2e-3, p, DriftExtension("sin", 1.0, extend=False), x0=0.5, iterations=8)
    assert res.superlinear and not res.diverged and res.within_bound()
    assert np.all(res.ratios[1:] < 1)
    with pytest.raises(DomainError):
        picard_iterate_path(dW, 2e-3, p, DriftExtension("sin", 1.0), iterations=3)


def test_mass_balance_on_galerkin_side():
    es = build_problem(ProblemSpec("fp_neumann", 16))
    u0 = es.ground_state()
    u0[1] = 0.2
    p = ControlSignal.from_function(lambda t: 0.5 + np.sin(4 * t), np.linspace(0, 0.5, 5))
    out = mass_balance_check(u0, p, es, DriftExtension("power", 3.0))
    assert out["relative_error"] < 0.05
    assert np.max(np.abs(out["flux"])) > 0


def test_apriori_moments_grow_linearly():
    x0 = np.random.default_rng(0).random(8000)
    rep = check_apriori_bounds(x0, None, DriftExtension("sin", 1.0), [0.05, 0.1, 0.2, 0.4], 1e-3, seed=1)
    assert rep.linear and rep.slope > 0
    assert np.all(np.diff(rep.e_sup_dev) > 0) and np.all(rep.e_sup_sq >= rep.e_x0_sq)
