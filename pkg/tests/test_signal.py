import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from groundctl.errors import DimensionError, DomainError
from groundctl.signal import ControlSignal


def quad():
    return ControlSignal.from_function(lambda t: t ** 2, [0.0, 0.5, 1.2, 2.0], n=6)


def test_exact_norm_and_primitive():
    p = quad()
    assert p.l2_norm() == pytest.approx(np.sqrt(32 / 5), rel=1e-14)
    t = np.linspace(-1, 3, 17)
    assert np.allclose(p.primitive(t), np.clip(t, 0, 2) ** 3 / 3, atol=1e-14)
    assert np.allclose(p(np.array([0.3, 1.7])), [0.09, 2.89], atol=1e-14)
    assert p(np.array([2.5]))[0] == 0.0


def test_increments_sum_to_integral():
    p = quad()
    times = np.linspace(0, 2, 41)
    assert p.increments(times).sum() == pytest.approx(8 / 3, rel=1e-14)


def test_transformations():
    p = quad()
    assert p.shifted(1.0).t0 == 1.0
    assert p.scaled(2.0).l2_norm() == pytest.approx(2 * p.l2_norm())
    r = p.restrict(0.25, 1.5)
    assert r.t0 == 0.25 and r.t1 == 1.5
    assert np.allclose(r(np.array([1.0])), 1.0)
    assert p.refined(3).l2_norm() == pytest.approx(p.l2_norm(), rel=1e-13)
    s = p.split_at([0.9])
    assert 0.9 in s.edges and np.allclose(s(np.array([0.95])), 0.9025)
    e = p.extended(3.0)
    assert e.t1 == 3.0 and e.l2_norm() == pytest.approx(p.l2_norm())
    assert e.support_length() == pytest.approx(2.0)


def test_concatenate_and_zero():
    a = ControlSignal.from_function(lambda t: 1 + 0 * t, [0.0, 1.0])
    b = ControlSignal.zero(1.0, 2.0)
    c = ControlSignal.concatenate([a, b])
    assert c.t0 == 0 and c.t1 == 2 and c.l2_norm() == pytest.approx(1.0)
    assert c.support_length() == pytest.approx(1.0)


def test_validation():
    with pytest.raises(DomainError):
        ControlSignal(np.array([0.0, 0.0]), np.zeros((1, 3)))
    with pytest.raises(DimensionError):
        ControlSignal(np.array([0.0, 1.0]), np.zeros((2, 3)))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.integers(1, 6))
def test_norm_is_exact_for_polynomials(c, panels):
    f = lambda t: c[0] + c[1] * t + c[2] * t ** 2
    p = ControlSignal.from_function(f, np.linspace(0, 1, panels + 1), n=4)
    # int_0^1 f^2 in closed form
    a, b, q = c
    exact = a * a + a * b + (b * b + 2 * a * q) / 3 + b * q / 2 + q * q / 5
    assert p.l2_norm() ** 2 == pytest.approx(exact, rel=1e-12, abs=1e-12)
