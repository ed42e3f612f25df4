import mpmath
import numpy as np
import pytest
from scipy import special

from groundctl.bessel import bessel_table, bessel_zeros, besselj, besselj_prime
from groundctl.errors import DomainError


@pytest.mark.parametrize("nu", [0.0, 0.25, 1 / 3, 0.5, 1.0, 2.5, 7.0])
def test_besselj_against_scipy(nu):
    x = np.concatenate([np.linspace(0, 5, 101), np.linspace(5, 120, 301)])
    assert np.allclose(besselj(nu, x), special.jv(nu, x), rtol=0, atol=1e-13)


def test_negative_orders():
    x = np.linspace(0.1, 30, 50)
    assert np.allclose(besselj(-0.5, x), special.jv(-0.5, x), atol=1e-13)
    assert np.allclose(besselj(-2, x), special.jv(-2, x), atol=1e-13)
    with pytest.raises(DomainError):
        besselj(-1.5, x)
    with pytest.raises(DomainError):
        besselj(0.0, -1.0)


def test_derivative():
    x = np.linspace(0.5, 40, 60)
    assert np.allclose(besselj_prime(1 / 3, x), special.jvp(1 / 3, x), atol=1e-12)


@pytest.mark.parametrize("nu", [0.0, 1 / 3, 0.5, 1.0, 2.0])
def test_zeros_against_mpmath(nu):
    z = bessel_zeros(nu, 12)
    ref = np.array([float(mpmath.besseljzero(mpmath.mpf(nu), k)) for k in range(1, 13)])
    assert np.allclose(z, ref, rtol=1e-14, atol=0)


@pytest.mark.parametrize("nu,direction", [(0.2, 1), (0.5, 0), (1.5, -1)])
def test_zero_spacing_monotone_to_pi(nu, direction):
    d = np.diff(bessel_table(nu, 40).zeros)
    if direction > 0:
        assert np.all(np.diff(d) >= -1e-12)
    elif direction < 0:
        assert np.all(np.diff(d) <= 1e-12)
    else:
        assert np.allclose(d, np.pi, atol=1e-12)
    assert abs(d[-1] - np.pi) < 1e-2


def test_table_is_cached_and_readonly():
    t = bessel_table(0.5, 5)
    with pytest.raises(ValueError):
        t.zeros[0] = 1.0
    assert np.allclose(t.zeros, np.pi * np.arange(1, 6), atol=1e-13)
