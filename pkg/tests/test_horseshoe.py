import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import MU_M3
from unimodal_acim.analytic_map import logistic, periodic_multiplier
from unimodal_acim.errors import HypothesisError
from unimodal_acim.horseshoe import (build_horseshoe, cylinder, find_periodic_u1, mixing_verdict,
                                     periodic_points)


def test_shipped_core(ship_h):
    h = ship_h
    m = h.map
    assert h.N == 2
    # u1 is the minimum of a period-3 orbit with positive multiplier
    orbit = [h.u1, float(m.f(h.u1)), float(m.f(m.f(h.u1)))]
    assert float(m.f(orbit[-1])) == pytest.approx(h.u1, abs=1e-14)
    assert min(orbit) == h.u1
    assert periodic_multiplier(m, h.u1, 3) > 1
    assert m.a < h.u1 < min(m.c, m.fa)
    assert h.u1 < h.v1 < m.c < h.v2 < h.u2
    assert float(m.f(h.v1)) == pytest.approx(h.u2, abs=1e-14)
    assert float(m.f(h.v2)) == pytest.approx(h.u2, abs=1e-14)
    assert float(m.f(h.u2)) == pytest.approx(h.u1, abs=1e-14)


def test_markov_property(ship_h):
    h = ship_h
    m = h.map
    ends = sorted({p for U in h.U for p in U})
    for i, (l, r) in enumerate(h.U):
        lo, hi = sorted((float(m.f(l)), float(m.f(r))))
        assert min(abs(np.array(ends) - lo)) < 1e-12
        assert min(abs(np.array(ends) - hi)) < 1e-12
        for j, (lj, rj) in enumerate(h.U):
            covered = lo - 1e-12 <= lj and rj <= hi + 1e-12
            assert bool(h.adjacency[i, j]) == covered


def test_mixing_by_prime_shortcut(ship_h):
    assert ship_h.mixing.verdict == "mixing"
    assert ship_h.mixing.method == "prime-shortcut"
    A = ship_h.adjacency.astype(int)
    assert np.all(np.linalg.matrix_power(A, ship_h.mixing.witness) > 0)


def test_gap_counts_follow_the_markov_graph(ship_h):
    # the adjacency is the golden-mean graph, whose word counts obey the Fibonacci recursion
    counts = list(ship_h.gaps.order_counts)
    assert counts[:4] == [1, 1, 2, 3]
    assert all(counts[n + 2] == counts[n + 1] + counts[n] for n in range(len(counts) - 2))


def test_gap_lengths_fill_the_core(ship_h):
    h = ship_h
    lengths = np.array(h.gaps.order_lengths)
    total = np.cumsum(lengths)
    assert np.all(np.diff(total) > 0)
    missing = (h.u2 - h.u1) - total[-1]
    assert missing > 0
    n = len(lengths)
    assert missing <= h.decay.B * h.decay.beta ** n / (1 - h.decay.beta)


def test_fitted_constants(ship_h):
    h = ship_h
    assert 0 < h.hyperbolicity.alpha < 1 and h.hyperbolicity.A >= 1
    assert 0 < h.decay.beta < 1 and h.decay.residuals.size > 0
    assert h.separation > 0


def test_hyperbolicity_envelope_bounds_periodic_multipliers(ship_h):
    h = ship_h
    m = h.map
    for p in (1, 2, 3, 4, 5):
        for z in periodic_points(m, p):
            if not h.in_region(z):
                continue
            orbit = [z]
            for _ in range(p - 1):
                orbit.append(float(m.f(orbit[-1])))
            if not all(h.in_region(orbit)):
                continue
            lam = abs(periodic_multiplier(m, z, p))
            assert lam ** -1 <= h.hyperbolicity.A * h.alpha ** p


def test_candidates_and_rejections(ship_map):
    acc, rej = find_periodic_u1(ship_map, 6, with_rejections=True)
    assert acc[0].N == 2 and acc[0].u1 == pytest.approx(0.18371746597889738, abs=1e-14)
    p2 = [r for r in rej if r.period == 2]
    assert p2 and p2[0].reason == "negative-multiplier"
    fixed = [r for r in rej if r.period == 1]
    assert fixed[0].reason == "negative-multiplier"


def test_m3_parameter_has_no_mixing_markov_horseshoe():
    m = logistic(MU_M3)
    acc = find_periodic_u1(m, 6)
    assert [c.N for c in acc] == [5]
    with pytest.raises(HypothesisError):
        build_horseshoe(m)


def test_cylinders_nest(ship_map):
    outer = cylinder(ship_map, (1,))
    inner = cylinder(ship_map, (1, -1))
    assert outer[0] <= inner[0] < inner[1] <= outer[1]


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 5), st.data())
def test_mixing_verdict_matches_wielandt_power(n, data):
    bits = data.draw(st.lists(st.booleans(), min_size=n * n, max_size=n * n))
    A = np.array(bits, dtype=bool).reshape(n, n)
    # N + 1 = 4 is composite, so the verdict comes from the power search
    v = mixing_verdict(A, 0, N=3)
    P = np.linalg.matrix_power(A.astype(np.int64), (n - 1) ** 2 + 1)
    primitive = bool(np.all(P > 0))
    assert (v.verdict == "mixing") == primitive


def test_cyclic_graph_is_not_mixing():
    A = np.array([[0, 1, 0], [0, 0, 1], [1, 0, 0]], dtype=bool)
    v = mixing_verdict(A, 0, N=3)
    assert v.verdict == "not-mixing" and len(v.component) == 3


def test_disconnected_graph_is_not_mixing():
    A = np.array([[1, 0], [0, 1]], dtype=bool)
    assert mixing_verdict(A, 0, N=2).verdict == "not-mixing"
