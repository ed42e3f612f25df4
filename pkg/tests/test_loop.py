import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from groundctl.errors import DomainError, LoopFailure, PreconditionError
from groundctl.loop import (
    cone_ratio,
    cone_ratio_function,
    derive_constants,
    dwell_time,
    make_schedule,
    run_local_loop,
    run_semiglobal_cone,
    run_semiglobal_strip,
    second_eigenvalue,
    total_norm_bound,
)
from groundctl.problems import ProblemSpec, build_problem
from groundctl.quadrature import composite_rule, graded_edges
from groundctl.simulate import integrate_bilinear
from groundctl.spectral import norm_s


@pytest.fixture(scope="module")
def fpd():
    return build_problem(ProblemSpec("fp_dirichlet", 12))


@settings(max_examples=50, deadline=None)
@given(st.floats(0.05, 10.0), st.floats(0.1, 3.0), st.integers(1, 30))
def test_schedule_invariants(T, T0, n_max):
    s = make_schedule(T, T0, n_max)
    assert s.T_f <= min(T, math.pi ** 2 / 6, math.pi ** 2 * T0 / 6) * (1 + 1e-15)
    assert s.T1 == pytest.approx(6 * s.T_f / math.pi ** 2, rel=1e-14)
    ends = s.endpoints
    assert ends[0] == 0 and np.all(np.diff(ends) > 0)
    assert ends[-1] < s.T_f
    assert s.tail(n_max) == pytest.approx(s.T_f - ends[-1], abs=1e-14)
    assert np.all(np.diff(s.lengths) < 0)


def test_schedule_rejects_bad_input():
    with pytest.raises(DomainError):
        make_schedule(0.0)
    with pytest.raises(DomainError):
        make_schedule(1.0).length(0)


def test_local_loop_reaches_target_and_trace_is_consistent(fpd, tmp_path):
    u0 = fpd.ground_state()
    u0[1] += 5e-3
    u0[3] -= 2e-3
    ctrl, trace = run_local_loop(u0, fpd, 1.5, stop_tol=1e-10)
    assert trace.converged and trace.final_residual <= 1e-10
    assert ctrl.t1 == pytest.approx(1.5)
    assert ctrl.support_length() <= trace.schedule.T_f
    # independent check: integrate the full bilinear system under the control
    ess = fpd.shifted()
    uT = integrate_bilinear(u0, ctrl, ess, (0.0, trace.summary["tau_final"]), atol=1e-13).final
    assert float(norm_s(uT - ess.ground_state(), 0.5, ess)) < 1e-9
    for a, b in zip(trace.stages, trace.stages[1:]):
        assert b.v_prev_half == pytest.approx(a.v_half)
        assert b.tau_start == pytest.approx(a.tau_end)
    trace.to_csv(tmp_path / "t.csv")
    trace.to_json(tmp_path / "t.json")
    data = json.loads((tmp_path / "t.json").read_text())
    assert len(data["stages"]) == len(trace.stages)
    assert (tmp_path / "t.csv").read_text().count("\n") == len(trace.stages) + 1


def test_ground_state_needs_no_stages(fpd):
    ctrl, trace = run_local_loop(fpd.ground_state(), fpd, 1.0)
    assert trace.stages == [] and trace.converged and ctrl.l2_norm() == 0.0


def test_theoretical_mode_requires_small_start(fpd):
    c = derive_constants(fpd, 1.0)
    u0 = fpd.ground_state()
    u0[1] += 1e-3
    with pytest.raises(PreconditionError):
        run_local_loop(u0, fpd, 1.0, c, mode="theoretical")


def test_total_control_norm_bound_inside_radius(fpd):
    c = derive_constants(fpd, 1.0)
    u0 = fpd.ground_state()
    u0[1] += 0.05 * c.R_T  # 1/2-norm weight sqrt(1 + 3 pi^2) ~ 5.5
    _, trace = run_local_loop(u0, fpd, 1.0, c, mode="theoretical")
    assert trace.summary["total_norm_bound_applicable"]
    assert trace.total_control_norm ** 2 <= total_norm_bound(c)
    assert not trace.bound_violations()


def test_derived_nu_dominates_truncated_cost(fpd):
    c = derive_constants(fpd, 1.0)
    assert c.nu > 0 and c.C_B >= 1 and c.lam1 == 0.0
    assert c.Gamma0 == pytest.approx(2 * c.nu + max(math.log(c.D), 0))


def test_divergence_is_reported_with_trace():
    es = build_problem(ProblemSpec("fp_neumann", 16))
    u0 = es.ground_state()
    u0[1] = 0.5
    with pytest.raises(LoopFailure) as info:
        run_local_loop(u0, es, 1.0, stop_tol=1e-14)
    assert info.value.trace is not None and info.value.trace.failure


def test_dwell_time():
    assert dwell_time(1.0, 1.0, 5.0) == 0.0
    assert dwell_time(1.0, 1e-2, 2.0) == pytest.approx(math.log(1e4) / 2.0)
    assert dwell_time(0.5, 1.0, 3.0) == 0.0


def test_second_eigenvalue(fpd):
    assert second_eigenvalue(fpd) == pytest.approx(3 * math.pi ** 2)


def test_strip_with_r1_equal_R_has_no_dwell(fpd):
    u0 = fpd.ground_state()
    u0[2] = 1e-3
    res = run_semiglobal_strip(u0, fpd, R=1e-2, r1=1e-2)
    assert res.T_dwell == 0.0 and res.T_R == pytest.approx(1.0)
    assert res.trace.final_residual < 1e-10


def test_strip_preconditions(fpd):
    u0 = fpd.ground_state()
    u0[2] = 0.5
    with pytest.raises(PreconditionError):
        run_semiglobal_strip(u0, fpd, R=0.1, r1=1e-2)
    u0 = fpd.ground_state() * 1.5
    with pytest.raises(PreconditionError):
        run_semiglobal_strip(u0, fpd, R=1.0, r1=1e-2)


def test_cone_is_scale_invariant(fpd):
    u0 = fpd.ground_state()
    u0[1] = 0.1
    a = run_semiglobal_cone(u0, fpd, R=1.0, r1=1e-2)
    b = run_semiglobal_cone(-3.0 * u0, fpd, R=1.0, r1=1e-2)
    assert a.T_R == pytest.approx(b.T_R)
    assert np.allclose(b.control.values, a.control.values)
    assert np.allclose(b.final_state, -3.0 * a.final_state)
    assert cone_ratio(u0, fpd) == pytest.approx(cone_ratio(-3.0 * u0, fpd))
    with pytest.raises(PreconditionError):
        run_semiglobal_cone(u0, fpd, R=0.1, r1=1e-2)


@pytest.mark.parametrize("alpha", [0.5, 1.0])
def test_cone_ratio_function_matches_coefficients(alpha):
    es = build_problem(ProblemSpec("degenerate_neumann", 48, alpha=alpha))
    f = lambda x: 1 + 0.3 * (x ** 2 - 2 * x ** 3 / 3)
    df = lambda x: 0.6 * (x - x * x)
    xs, ws = composite_rule(graded_edges(0.0, 1.0, 64, 1e-14, "left"), 24)
    xs, ws = xs.ravel(), ws.ravel()
    c = np.array([np.sum(es.basis(i, xs) * f(xs) * ws) for i in range(es.size)])
    assert cone_ratio_function(f, df, alpha) == pytest.approx(cone_ratio(c, es), rel=1e-6)
