import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from unimodal_acim.errors import HypothesisError
from unimodal_acim.horseshoe import periodic_points
from unimodal_acim.spikes import (anchors_and_signs, chi_eval, generic_spike_pushforward, psi_template,
                                  select_anchor, spike_eval, spike_integral)


def test_family_shape(sf, ship_map):
    assert sf.N == 60
    assert sf.tail_period == 2
    assert sf.x[0] == ship_map.b and sf.x[1] == ship_map.a
    assert sf.s[0] == -1 and sf.w[0] == sf.horseshoe.u2
    # template N+P coincides with N
    assert sf.x[sf.N + sf.tail_period] == sf.x[sf.N]
    assert sf.template(sf.N + 7) == sf.N + 1


def test_weight_ratio_law(sf, ship_map):
    df = np.abs(ship_map.deriv(sf.x[:-1], 1))
    assert np.allclose(sf.t[1:] / sf.t[:-1], df ** -0.5, rtol=1e-14, atol=0)


def test_slaved_coefficients_obey_ratio_law(rho, sf, ship_map):
    # the first tail class sums c_N, c_{N+P}, ... geometrically; undo the sum
    N, P = sf.N, sf.tail_period
    cN = rho.tail[0] * (1.0 - np.prod(sf.r[N: N + P]))
    C = np.concatenate([rho.c, [cN]])
    df = np.abs(ship_map.deriv(sf.x[:N], 1))
    ratio = C[1:] / C[:-1]
    assert np.max(np.abs(ratio - df ** -0.5)) <= 1e-12
    assert C[0] == pytest.approx(rho.phi_c * sf.k0, rel=1e-12)


def test_anchors_lie_on_the_support_side(sf, ship_h):
    assert np.all(sf.s * (sf.w - sf.x) > 0)
    assert set(np.round(sf.w, 12)) <= set(np.round(ship_h.special_points, 12))


def test_anchor_rule_picks_nearest_special_point(ship_h):
    # the fixed point is approached with f(w) = u1 on the left, so v1 lies between
    x = 0.7454004686298767
    assert select_anchor(ship_h, x, ship_h.u1) == ship_h.v2


def one_sided_limit(sf, n, side, e1=1e-10, e2=1e-12):
    """Limit of chi_n at x_{n+1} from ``side``, removing the sqrt(eps) term."""
    k1 = sf.template(n + 1)
    m = sf.map
    x = sf.x[k1] + side * e1
    if not m.a <= x <= m.b:
        return None
    v1 = chi_eval(sf, n, sf.x[k1] + side * e1, side * e1)
    v2 = chi_eval(sf, n, sf.x[k1] + side * e2, side * e2)
    r1, r2 = np.sqrt(e1), np.sqrt(e2)
    return (v2 * r1 - v1 * r2) / (r1 - r2)


@pytest.mark.parametrize("n", range(0, 21))
def test_chi_is_continuous_at_the_successor_spike(sf, n):
    k1 = sf.template(n + 1)
    inner = one_sided_limit(sf, n, sf.s[k1])
    outer = one_sided_limit(sf, n, -sf.s[k1])
    # at an endpoint of [a, b] the outer side is empty and chi vanishes beyond it
    assert abs(inner - (0.0 if outer is None else outer)) <= 1e-6


def test_chi_is_bounded_on_the_support(sf):
    for n in range(10):
        k1 = sf.template(n + 1)
        d = sf.s[k1] * np.geomspace(1e-14, 0.999 * sf.L[k1], 300)
        vals = chi_eval(sf, n, sf.x[k1] + d, d)
        assert np.all(np.isfinite(vals)) and np.max(np.abs(vals)) < 50


def test_spike_integral_against_adaptive_quadrature(sf):
    for n in (0, 1, 5, sf.N):
        k = sf.template(n)
        xn, L = sf.x[k], sf.L[k]
        for A in (np.cos, lambda x: x ** 2):
            # substitute x = x_n + s_n u^2 to remove the square-root singularity
            oracle = quad(lambda u: 2 * (1 - u * u / L) * A(xn + sf.s[k] * u * u), 0, np.sqrt(L),
                          epsabs=1e-14, epsrel=1e-13)[0]
            assert spike_integral(sf, n, A) == pytest.approx(oracle, rel=1e-12, abs=1e-14)
            assert sf.mean(k) == pytest.approx(4 / 3 * np.sqrt(L), rel=1e-15)


@given(st.floats(-1, 1), st.floats(0.01, 1), st.sampled_from([-1.0, 1.0]), st.floats(-2, 2))
def test_psi_template_support_and_sign(xn, L, sn, y):
    w = xn + sn * L
    v = psi_template(xn, sn, w, xn + y, dist=y)
    inside = 0 < sn * y < abs(w - xn)
    assert (v > 0) == inside
    assert v >= 0


def test_spike_eval_refuses_singular_point(sf):
    with pytest.raises(HypothesisError):
        spike_eval(sf, 3, sf.x[3])


def test_truncation_depth_from_weight_threshold(ship_h):
    sf_auto = anchors_and_signs(ship_h, None, cap=200)
    t = sf_auto.t
    assert t[sf_auto.N] < 1e-12 <= t[sf_auto.N - 1]


def _orbit_points_in_region(h, periods=(4, 5, 6)):
    m = h.map
    out = []
    for p in periods:
        for z in periodic_points(m, p):
            orb = [z]
            for _ in range(p - 1):
                orb.append(float(m.f(orb[-1])))
            sep = np.min(np.abs(np.array(orb)[:, None] - np.array(h.special_points)[None, :]))
            if all(h.in_region(orb)) and sep > 1e-3:
                out.append(z)
    return out


def test_generic_pushforward_remainders_decay(ship_h):
    pts = _orbit_points_in_region(ship_h)
    assert pts
    for u in pts[:4]:
        side = 1 if u < ship_h.map.c else -1
        if not [w for w in ship_h.special_points if (w - 0.5) * (u - 0.5) > 0 and side * (w - u) > 0]:
            side = -side
        res = generic_spike_pushforward(ship_h, u, side, 20)
        assert res.rate < 1
        # weights shrink like |(f^n)'|^(-1/2), bounded by the hyperbolicity envelope
        assert np.all(res.tau[1:] <= np.sqrt(ship_h.hyperbolicity.A * ship_h.alpha ** np.arange(1, 21)) * 1.0001)


def test_generic_pushforward_refuses_points_leaving_the_region(ship_h):
    with pytest.raises(HypothesisError) as err:
        generic_spike_pushforward(ship_h, 0.3, 1, 10)
    assert err.value.code == "separation-violated"
