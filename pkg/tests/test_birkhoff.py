import numpy as np
import pytest

from conftest import MU_SHIP
from unimodal_acim.analytic_map import ConjugatedMap, logistic
from unimodal_acim.birkhoff import _orbit_moments, birkhoff_average, birkhoff_moments
from unimodal_acim.errors import ConfigError


def test_kernel_matches_plain_loop():
    m = logistic(MU_SHIP)
    x, s1, s2 = 0.3, 0.0, 0.0
    for _ in range(10):
        x = float(m.f(x))
    for _ in range(500):
        x = float(m.f(x))
        s1 += x
        s2 += x * x
    got = _orbit_moments(np.asarray(m.poly.coeffs), 0.3, 500, 10, 2)
    assert got[0] == pytest.approx(s1 / 500, rel=1e-12)
    assert got[1] == pytest.approx(s2 / 500, rel=1e-12)


def test_shape_and_seeding():
    m = logistic(MU_SHIP)
    a = birkhoff_moments(m, 1000, 3, seed=5)
    b = birkhoff_moments(m, 1000, 3, seed=5)
    assert a.shape == (3, 2) and np.array_equal(a, b)
    assert not np.array_equal(a, birkhoff_moments(m, 1000, 3, seed=6))


def test_general_observable_average_agrees_with_kernel():
    m = logistic(MU_SHIP)
    v = birkhoff_average(m, lambda x: x, 200_000, x0=0.3)
    assert v == pytest.approx(0.6041, abs=5e-3)


def test_kernel_needs_a_polynomial_map():
    with pytest.raises(ConfigError):
        birkhoff_moments(ConjugatedMap(logistic(MU_SHIP), [0.0, 1.0], 1e-3), 10, 1)
