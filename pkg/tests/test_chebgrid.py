import numpy as np
import pytest
from hypothesis import given, strategies as st

from unimodal_acim.chebgrid import PiecewiseGrid
from unimodal_acim.errors import NumericalError

BP = [0.0, 0.3, 0.5, 0.9, 1.0]
SING = [False, True, False, True, True]


@pytest.fixture(scope="module")
def grid():
    return PiecewiseGrid(BP, SING, degree=32)


def test_piece_kinds(grid):
    assert grid.kind == ["sr", "sl", "sr", "sb"]


def _sqrt_profile(x):
    # square-root behaviour at each singular breakpoint, smooth otherwise
    return np.cos(x) + np.sqrt(np.abs(x - 0.3)) + np.sqrt(np.abs(x - 0.9)) + np.sqrt(np.abs(1.0 - x))


def test_square_root_profiles_are_resolved(grid):
    vals = _sqrt_profile(grid.node_x).reshape(grid.K, grid.D + 1)
    x = np.linspace(0.0, 1.0, 1001)
    assert np.max(np.abs(grid.evaluate(vals, x) - _sqrt_profile(x))) < 1e-12


def test_integration_of_square_root_profile(grid):
    vals = _sqrt_profile(grid.node_x)
    exact = np.sin(1.0) + (2 / 3) * (0.3 ** 1.5 + 0.7 ** 1.5) + (2 / 3) * (0.9 ** 1.5 + 0.1 ** 1.5) + (2 / 3)
    assert grid.integrate(vals) == pytest.approx(exact, abs=1e-13)
    assert grid.integrate(np.ones(grid.n_nodes), np.exp) == pytest.approx(np.e - 1, abs=1e-13)


def test_node_offsets_are_consistent(grid):
    ref_x = grid.bp[grid.node_ref] + grid.node_off
    assert np.allclose(ref_x, grid.node_x, atol=1e-16)
    k, t = grid.locate(grid.node_x, grid.node_ref, grid.node_off)
    assert np.array_equal(k, grid.node_piece)
    assert np.allclose(t, np.tile(grid.t, grid.K), atol=1e-13)


@given(st.integers(0, 3), st.floats(-1, 1))
def test_locate_inverts_the_node_map(k, t):
    g = PiecewiseGrid(BP, SING, degree=8)
    off_l, off_r = g.offsets_of_t(k, t)
    x = g.bp[k] + off_l
    kk, tt = g.locate(np.array([x]), np.array([k]), np.array([off_l]))
    if -1 < t < 1 and off_l > 0:
        assert kk[0] == k
        assert tt[0] == pytest.approx(t, abs=1e-7)


def test_endpoint_values(grid):
    vals = np.cos(grid.node_x).reshape(grid.K, grid.D + 1)
    left, right = grid.endpoint_values(vals)
    assert np.allclose(left, np.cos(grid.bp[:-1]), atol=1e-13)
    assert np.allclose(right, np.cos(grid.bp[1:]), atol=1e-13)


def test_diff_matrix_on_polynomials(grid):
    D = grid.diff_matrix()
    assert np.allclose(D @ grid.t ** 3, 3 * grid.t ** 2, atol=1e-10)
    assert np.allclose(D @ np.ones_like(grid.t), 0, atol=1e-12)


def test_rejects_points_outside(grid):
    with pytest.raises(NumericalError):
        grid.locate(np.array([1.5]))


def test_rejects_unordered_breakpoints():
    with pytest.raises(NumericalError):
        PiecewiseGrid([0.0, 0.5, 0.5, 1.0], [False] * 4)
