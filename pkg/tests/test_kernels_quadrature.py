import math

import numpy as np
import pytest

from groundctl import _kernels
from groundctl._kernels import ABSORB, DRIFT_POWER, DRIFT_ZERO, FREE, REFLECT, get_backend
from groundctl.quadrature import adaptive_integrate, composite_rule, gauss_rule, graded_edges

BACKENDS = ["python"] + (["cython"] if _kernels.BACKEND == "cython" else [])


@pytest.mark.parametrize("name", BACKENDS)
def test_em_step_by_hand(name):
    k = get_backend(name)
    x = np.array([0.5, 0.95, 0.05])
    alive = np.ones(3, dtype=np.uint8)
    normals = np.array([[0.0, 1.0, -1.0]])
    # drift x, int p = 0.1, sqrt(2 dt) = 0.2
    refl, absn, exc = k.em_chunk(x, alive, np.array([0.1]), normals, 0.2, REFLECT, DRIFT_POWER, 1.0)
    assert np.allclose(x, [0.55, 2.0 - (0.95 + 0.095 + 0.2), -(0.05 + 0.005 - 0.2)])
    assert refl == 2 and absn == 0 and exc == 0


@pytest.mark.parametrize("name", BACKENDS)
def test_absorb_and_free(name):
    k = get_backend(name)
    x = np.array([0.5, 0.95])
    alive = np.ones(2, dtype=np.uint8)
    k.em_chunk(x, alive, np.zeros(2), np.array([[0.0, 1.0], [5.0, 0.0]]), 0.2, ABSORB, DRIFT_ZERO, 0.0)
    assert list(alive) == [0, 0] and x[1] == pytest.approx(1.15)
    y = np.array([0.5])
    k.em_chunk(y, np.ones(1, dtype=np.uint8), np.zeros(1), np.array([[10.0]]), 0.2, FREE, DRIFT_ZERO, 0.0)
    assert y[0] == pytest.approx(2.5)


@pytest.mark.parametrize("name", BACKENDS)
def test_picard_zero_drift_by_hand(name):
    W = np.array([0.0, 0.3, -0.4, 0.1])
    d = get_backend(name).picard_distances(0.0, np.full(3, 0.1), W, DRIFT_ZERO, 0.0, 1, 5)
    assert d[0] == pytest.approx(math.sqrt(2) * 0.4) and np.all(d[1:] == 0)


def test_unknown_backend():
    with pytest.raises(ValueError):
        get_backend("fortran")


def test_gauss_rule_exactness():
    x, w = gauss_rule(6)
    assert np.sum(w * x ** 10) == pytest.approx(2 / 11, rel=1e-14)
    xs, ws = composite_rule(np.array([0.0, 0.3, 1.0]), 4)
    assert xs.shape == (2, 4) and np.sum(ws * xs ** 3) == pytest.approx(0.25, rel=1e-14)


def test_graded_edges_and_adaptive():
    e = graded_edges(0.0, 1.0, 8, 1e-10, "left")
    assert e[0] == 0 and e[-1] == 1 and e[1] <= 1e-10 * (1 + 1e-12) and np.all(np.diff(e) > 0)
    val, err = adaptive_integrate(lambda x: np.sqrt(x), 0.0, 1.0, 1e-12, grade_left=True)
    assert val == pytest.approx(2 / 3, abs=1e-12) and err <= 1e-11
