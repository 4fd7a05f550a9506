import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from unimodal_acim.birkhoff import birkhoff_moments
from unimodal_acim.transfer import (TransferOptions, apply_transfer, cdf, dense_spectrum, density_from_function,
                                    density_from_parts, endpoint_values, jumps_at, min_on_grid, observe,
                                    solve_acim, solve_background_direct, spectral_gap_estimate)

# frozen from the shipped solve; oracle: orbit averages in test_birkhoff_oracle below
MEAN_X = 0.6040923787
MEAN_X2 = 0.4502907422
MEAN_SIN3X = 0.6297039381


def test_solver_report(ship):
    rep = ship.report
    assert rep.converged and rep.residual < 1e-12
    assert rep.tail_mode == "periodic" and rep.tail_mass == 0.0
    assert 0 < rep.gap_estimate < 1


def test_normalized_and_positive(rho):
    assert rho.mass == pytest.approx(1.0, abs=1e-14)
    assert min_on_grid(rho) > 0.4


@pytest.mark.parametrize("A", [lambda x: np.ones_like(x), lambda x: x, lambda x: x ** 2, lambda x: np.sin(3 * x)])
def test_invariance(rho, ship_map, A):
    v = observe(rho, A)
    assert abs(observe(rho, lambda x: A(ship_map.f(x))) - v) <= 1e-10 * max(1, abs(v))


def test_frozen_observables(rho):
    assert observe(rho, lambda x: x) == pytest.approx(MEAN_X, abs=1e-9)
    assert observe(rho, lambda x: x ** 2) == pytest.approx(MEAN_X2, abs=1e-9)
    assert observe(rho, lambda x: np.sin(3 * x)) == pytest.approx(MEAN_SIN3X, abs=1e-9)


def test_birkhoff_oracle(ship_map):
    M = birkhoff_moments(ship_map, 2_000_000, 4, seed=1)
    assert M[:, 0].mean() == pytest.approx(MEAN_X, abs=2e-3)
    assert M[:, 1].mean() == pytest.approx(MEAN_X2, abs=2e-3)


def test_background_vanishes_at_the_ends_and_is_continuous(rho, ship):
    fa, fb = endpoint_values(rho)
    assert abs(fa) < 1e-8 and abs(fb) < 1e-8
    assert np.max(jumps_at(rho, ship.model.grid.bp[1:-1])) < 1e-8


def test_two_solvers_agree(ship, rho):
    bs = solve_background_direct(ship.horseshoe, ship.spikes, model=ship.model)
    assert bs.consistency < 1e-9
    assert np.max(np.abs(bs.density.state - rho.state)) < 1e-9
    assert bs.phi_c == pytest.approx(rho.phi_c, rel=1e-10)


def test_cdf_against_quadrature_of_rho(rho, ship_map):
    pts = np.array([0.1, 0.3, 0.5, 0.62, 0.8, 0.97])
    F = cdf(rho, pts)
    assert np.all(np.diff(F) > 0)
    assert cdf(rho, np.array([ship_map.b]))[0] == pytest.approx(1.0, abs=1e-12)
    sing = sorted(set(rho.model.sf.x.tolist()))
    for x, Fx in zip(pts[:3], F[:3]):
        brk = [s for s in sing if ship_map.a < s < x]
        val = quad(lambda y: rho.rho(np.array([y]))[0], ship_map.a, x, points=brk or None, limit=400,
                   epsabs=1e-11)[0]
        assert Fx == pytest.approx(val, abs=1e-8)


def test_subdominant_spectrum(ship):
    ev = dense_spectrum(ship.model, 3)
    assert abs(ev[0] - 1.0) < 1e-10
    assert abs(ev[1]) < 0.7


def test_gap_estimate_from_probes(ship, rho):
    est = spectral_gap_estimate(ship.horseshoe, ship.spikes, 3, density=rho, n_iter=60)
    assert est["estimate"] < 0.8


def test_power_iteration_from_a_different_start(ship):
    mo = ship.model
    start = density_from_function(mo, lambda x: 1.0 + np.cos(5 * x) ** 2)
    d, rep = solve_acim(ship.horseshoe, ship.spikes, TransferOptions(start=start), model=mo)
    assert np.max(np.abs(d.state - ship.density.state)) < 1e-9


state_entries = st.floats(-1.0, 1.0, allow_nan=False)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_transfer_is_linear(ship, seed, a, b):
    mo = ship.model
    rng = np.random.default_rng(seed)
    u = density_from_parts(mo, rng.normal(size=mo.nb), rng.normal(size=mo.N), rng.normal(size=mo.P))
    v = density_from_parts(mo, rng.normal(size=mo.nb), rng.normal(size=mo.N), rng.normal(size=mo.P))
    lhs = apply_transfer(a * u + b * v).state
    rhs = (a * apply_transfer(u) + b * apply_transfer(v)).state
    assert np.allclose(lhs, rhs, atol=1e-10 * (1 + abs(a) + abs(b)))


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=4, max_size=4), st.integers(0, 2 ** 31 - 1))
def test_transfer_conserves_mass(ship, coeffs, seed):
    # smooth background (discretization exact to roundoff) plus arbitrary spike coefficients
    mo = ship.model
    rng = np.random.default_rng(seed)
    smooth = density_from_function(mo, lambda x: 2.0 + sum(a * np.cos((j + 1) * 3 * x) for j, a in enumerate(coeffs)))
    d = density_from_parts(mo, smooth.state[: mo.nb], rng.uniform(size=mo.N), rng.uniform(size=mo.P))
    assert apply_transfer(d).mass == pytest.approx(d.mass, rel=1e-11)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.1, 5.0), st.floats(0.0, 3.0))
def test_transfer_preserves_positivity(ship, k, c0):
    mo = ship.model
    d = density_from_function(mo, lambda x: c0 + np.cos(k * x) ** 2)
    out = apply_transfer(apply_transfer(d))
    assert min_on_grid(out, 1500) > -1e-9
