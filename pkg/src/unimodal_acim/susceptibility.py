"""Susceptibility series, horizontality and the derivative of <rho, A> along families.

For ``f_kappa = (id + kappa X) o f`` the first-order density response solves
``rho' = (1 - L)^-1 D`` with ``D = -(X rho)'``.  Splitting ``X psi_n`` as
``X(x_n) psi_n + (X - X(x_n)) psi_n`` leaves pure ``psi_n'`` terms whose
coefficients propagate along the critical orbit with weight
``f'(x_n) |f'(x_n)|^(-1/2)``.  For horizontal ``X`` the accumulated
coefficient of ``psi_n'`` is exactly ``E_n = c_n F_n(X)(lambda)``, and
everything else is an integrable function

    G = d/dx [ -X phi - sum c_n (X - X(x_n)) psi_n + lambda sum E_n J_n ],
    J_n = f'(x_n) chi_n + (L psi_n) (f' o f_n^-1 - f'(x_n)),

on which the resolvent is summed with the ordinary transfer matrix.  Then

    Psi(X, lambda) = <(1 - lambda L)^-1 G, A> - sum_n E_n int psi_n A'.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from .analytic_map import (ConjugatedMap, MapSpec, Poly, PolynomialMap, critical_data,
                           critical_orbit, itinerary, polish_periodic)
from .errors import ConfigError, HypothesisError, NumericalError
from .pipeline import Solved, solve_map
from .spikes import SpikeFamily, chi_eval, psi_template, spike_integral
from .transfer import DensityModel, TransferModel, observe

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# perturbation fields and observables

@dataclass
class PerturbationField:
    """A vector field ``X`` on ``[a, b]``; ``poly`` is set for polynomial fields."""

    X: Callable
    dX: Callable | None = None
    provenance: str = "explicit"
    poly: Poly | None = None

    def __call__(self, y):
        return self.X(np.asarray(y, dtype=float))

    def diff(self, x0, d):
        """``X(x0 + d) - X(x0)`` without cancellation for polynomial fields."""
        x0 = np.asarray(x0, dtype=float)
        d = np.asarray(d, dtype=float)
        if self.poly is not None:
            return d * self.poly.dd1(x0, d)
        return self.X(x0 + d) - self.X(x0)

    @classmethod
    def from_poly(cls, coeffs, provenance: str = "explicit") -> "PerturbationField":
        p = coeffs if isinstance(coeffs, Poly) else Poly(coeffs)
        return cls(p, p.deriv(1), provenance, p)

    @classmethod
    def constant(cls, value: float) -> "PerturbationField":
        return cls.from_poly([value])

    def combine(self, a: float, other: "PerturbationField", b: float) -> "PerturbationField":
        if self.poly is not None and other.poly is not None:
            n = max(self.poly.coeffs.size, other.poly.coeffs.size)
            ca = np.pad(self.poly.coeffs, (0, n - self.poly.coeffs.size))
            cb = np.pad(other.poly.coeffs, (0, n - other.poly.coeffs.size))
            return PerturbationField.from_poly(a * ca + b * cb, "combined")
        return PerturbationField(lambda y: a * self.X(y) + b * other.X(y), None, "combined")


@dataclass
class Observable:
    f: Callable
    df: Callable
    name: str = "A"

    def __call__(self, x):
        return self.f(x)


def _complex_step(fn: Callable) -> Callable:
    return lambda x: np.imag(fn(np.asarray(x, dtype=float) + 1e-30j)) / 1e-30


OBSERVABLES: dict[str, Observable] = {
    "one": Observable(lambda x: np.ones_like(np.asarray(x, dtype=float)),
                      lambda x: np.zeros_like(np.asarray(x, dtype=float)), "one"),
    "x": Observable(lambda x: np.asarray(x, dtype=float),
                    lambda x: np.ones_like(np.asarray(x, dtype=float)), "x"),
    "x2": Observable(lambda x: np.asarray(x, dtype=float) ** 2, lambda x: 2 * np.asarray(x, dtype=float), "x2"),
    "sin3x": Observable(lambda x: np.sin(3 * np.asarray(x, dtype=float)),
                        lambda x: 3 * np.cos(3 * np.asarray(x, dtype=float)), "sin3x"),
}


def as_observable(A) -> Observable:
    """Names from ``OBSERVABLES``, ``Observable`` instances, or analytic callables."""
    if isinstance(A, Observable):
        return A
    if isinstance(A, str):
        if A not in OBSERVABLES:
            raise ConfigError("unknown-observable", f"no observable named {A!r}")
        return OBSERVABLES[A]
    return Observable(A, _complex_step(A), getattr(A, "__name__", "A"))


# ---------------------------------------------------------------------------
# the series F_ell

def _orbit(sf: SpikeFamily, count: int) -> np.ndarray:
    """``x_0..x_{count-1}`` of the critical orbit, periodic tail folded."""
    if sf.tail_period:
        return sf.x[[sf.template(n) for n in range(count)]]
    if count <= sf.x.size:
        return sf.x[:count]
    return critical_orbit(sf.map, count - 1).points


def _alpha(sf: SpikeFamily) -> float:
    h = sf.horseshoe
    return h.hyperbolicity.alpha if h.hyperbolicity is not None else 0.0


def F_ell(sf: SpikeFamily, X: PerturbationField, ell: int, lam: complex = 1.0,
          n_max: int = 200, *, resum_tail: bool = True) -> tuple[complex, float]:
    """``sum_{n>=1} lam^-n [prod_{k<n} f'(x_{k+ell})]^-1 X(x_{n+ell})``.

    Returns ``(value, tail_estimate)``.  The tail estimate bounds the terms
    beyond ``n_max`` by the hyperbolicity envelope.  With ``resum_tail`` and
    an eventually periodic orbit the remainder past ``n_max`` is added in
    closed form as a geometric series over periods.
    """
    alpha = _alpha(sf)
    if abs(lam) <= alpha:
        raise HypothesisError("divergence-region", f"|lambda| = {abs(lam):.4g} <= alpha = {alpha:.4g}",
                              hypothesis="|lambda| > alpha")
    xs = _orbit(sf, ell + n_max + 1)
    df = np.asarray(sf.map.deriv(xs, 1), dtype=float)
    Xv = np.asarray(X(xs[ell + 1: ell + n_max + 1]), dtype=float)
    w = np.cumprod(1.0 / (lam * df[ell: ell + n_max]))
    terms = w * Xv
    value = complex(np.sum(terms))
    Aenv = sf.horseshoe.hyperbolicity.A if sf.horseshoe.hyperbolicity is not None else 1.0
    ratio = alpha / abs(lam)
    xmax = float(np.max(np.abs(Xv))) if Xv.size else 0.0
    tail = Aenv * xmax * ratio ** (n_max + 1) / (1.0 - ratio) if ratio < 1 else float("inf")
    if resum_tail and sf.tail_period and ell + n_max - sf.tail_period + 1 >= sf.landing:
        P = sf.tail_period
        cyc = 1.0 / np.prod(lam * df[ell + n_max - P + 1: ell + n_max + 1])
        # terms n_max+1 .. n_max+P repeat with factor cyc every period
        xs2 = _orbit(sf, ell + n_max + P + 1)
        df2 = np.asarray(sf.map.deriv(xs2, 1), dtype=float)
        w2 = w[-1] * np.cumprod(1.0 / (lam * df2[ell + n_max: ell + n_max + P]))
        block = np.sum(w2 * np.asarray(X(xs2[ell + n_max + 1: ell + n_max + P + 1]), dtype=float))
        value += complex(block / (1.0 - cyc))
        tail = 0.0
    if not np.iscomplexobj(lam) or np.imag(lam) == 0:
        return (value.real if value.imag == 0 else value), tail
    return value, tail


def horizontality_functional(sf: SpikeFamily, X: PerturbationField, lam: complex = 1.0,
                             n_max: int = 200) -> complex:
    """``X(b) + F_0(X)(lam)``, zero exactly on the horizontal directions."""
    val, _ = F_ell(sf, X, 0, lam, n_max)
    return complex(float(X(np.array([sf.x[0]]))[0]) + val)


def horizontality_residual(sf: SpikeFamily, X: PerturbationField, lam: complex = 1.0,
                           n_max: int = 200) -> float:
    return abs(horizontality_functional(sf, X, lam, n_max))


def horizontal_projection(sf: SpikeFamily, X: PerturbationField, Y: PerturbationField,
                          lam: float = 1.0) -> tuple[PerturbationField, float]:
    """``X + s Y`` horizontal at ``lam`` and the slope ``s``."""
    hy = horizontality_functional(sf, Y, lam)
    if abs(hy) < 1e-8:
        raise HypothesisError("not-transversal", "Y is (nearly) horizontal", hypothesis="Y transversal")
    s = -(horizontality_functional(sf, X, lam) / hy).real
    return X.combine(1.0, Y, s), s


# ---------------------------------------------------------------------------
# families

@dataclass
class FamilySpec:
    """One-parameter family ``kappa -> f_kappa`` through a base map.

    ``dfdk(x)`` is ``d/dkappa f_kappa(x)`` at ``kappa = 0``.  ``oracle`` (for
    conjugation families) maps ``(density, A, kappa)`` to the exact value of
    ``<rho_kappa, A>`` by the pushforward identity.
    """

    kind: str
    base: MapSpec
    make: Callable[[float], MapSpec]
    dfdk: Callable
    kappa_range: tuple[float, float]
    v: Poly | None = None
    X: PerturbationField | None = None
    Y: PerturbationField | None = None
    s_slope: float = 0.0
    X_eff: PerturbationField | None = None
    s_of_kappa: Callable[[float], float] | None = None
    oracle: Callable | None = None
    meta: dict = field(default_factory=dict)


def make_conjugation_family(m: MapSpec, v, kappa_range=(-1e-3, 1e-3), *, margin: float = 0.05) -> FamilySpec:
    """``f_kappa = g o f o g^-1`` with ``g = id + kappa v``."""
    vp = v if isinstance(v, Poly) else Poly(v)
    dv = vp.deriv(1)
    xs = np.linspace(m.a - margin, m.b + margin, 2001)
    kmax = max(abs(kappa_range[0]), abs(kappa_range[1]))
    slope = float(np.max(np.abs(dv(xs))))
    if kmax * slope >= 1.0:
        raise HypothesisError("not-invertible", f"|kappa| max|v'| = {kmax * slope:.3g} >= 1",
                              hypothesis="id + kappa v invertible")
    for k in kappa_range:
        critical_data(ConjugatedMap(m, vp, k))

    def dfdk(x):
        x = np.asarray(x, dtype=float)
        return vp(m.f(x)) - m.deriv(x, 1) * vp(x)

    def oracle(d: DensityModel, A, kappa: float) -> float:
        A = as_observable(A)
        return observe(d, lambda x: A.f(np.asarray(x) + kappa * vp(x)))

    fam = FamilySpec("conjugation", m, lambda k: ConjugatedMap(m, vp, k) if k else m, dfdk,
                     tuple(kappa_range), v=vp, oracle=oracle)
    fam.meta["derivative_oracle"] = lambda d, A: observe(d, lambda x: as_observable(A).df(x) * vp(x))
    return fam


def _poly_lin(*terms: tuple[float, Poly]) -> Poly:
    """``sum a_i P_i`` for ``(a_i, P_i)`` pairs."""
    n = max(p.coeffs.size for _, p in terms)
    return Poly(sum(a * np.pad(p.coeffs, (0, n - p.coeffs.size)) for a, p in terms))


def _compose_map(m: PolynomialMap, Z: Poly) -> PolynomialMap:
    """``(id + Z) o f`` as a polynomial map."""
    p = m.poly
    q = Z.compose(p)
    n = max(p.coeffs.size, q.coeffs.size)
    coeffs = np.pad(p.coeffs, (0, n - p.coeffs.size)) + np.pad(q.coeffs, (0, n - q.coeffs.size))
    return PolynomialMap(coeffs, family=m.family, mu=m.mu)


def make_composition_family(m: MapSpec, X, kappa_range=(-1e-3, 1e-3)) -> FamilySpec:
    """``f_kappa = (id + kappa X) o f`` (generally not horizontal)."""
    if not isinstance(m, PolynomialMap):
        raise ConfigError("family-unsupported", "composition families need a polynomial base map")
    Xf = X if isinstance(X, PerturbationField) else PerturbationField.from_poly(X)
    if Xf.poly is None:
        raise ConfigError("family-unsupported", "composition families need a polynomial field")
    return FamilySpec("composition", m, lambda k: _compose_map(m, _poly_lin((k, Xf.poly))) if k else m,
                      lambda x: Xf(m.f(np.asarray(x, dtype=float))), tuple(kappa_range), X=Xf)


def landing_data(m: MapSpec, n: int = 40) -> tuple[int, int, float]:
    """``(k, P, z)`` with ``f^k c = z`` of period ``P`` for Misiurewicz ``m``."""
    co = critical_orbit(m, n)
    if co.landing < 0:
        raise HypothesisError("not-preperiodic", "critical orbit does not land on a cycle",
                              hypothesis="Misiurewicz combinatorics")
    return co.landing + 1, co.period, float(co.points[co.landing])


def landing_speed(m: MapSpec, Z: Callable, k: int, P: int, z: float) -> float:
    """``d/dkappa (f^k c - z)`` for ``d f/d kappa = Z``, by the chain rule."""
    y = m.c
    d = 0.0
    for _ in range(k):
        d = float(m.deriv(y, 1)) * d + float(Z(np.array([y]))[0])
        y = float(m.f(y))
    # continued periodic point: (1 - (f^P)') dz = sum over the cycle
    dz, der, x = 0.0, 1.0, z
    for _ in range(P):
        dz = float(m.deriv(x, 1)) * dz + float(Z(np.array([x]))[0])
        der *= float(m.deriv(x, 1))
        x = float(m.f(x))
    return d - dz / (1.0 - der)


def make_inclass_family(m: MapSpec, X, Y, kappa_range=(-2e-3, 2e-3), n_check: int = 12, *,
                        sf: SpikeFamily | None = None) -> FamilySpec:
    """``f_{kappa, s(kappa)} = (id + kappa X + s Y) o f`` keeping the critical combinatorics.

    ``s(kappa)`` is found by a bracketed root search so that ``f^k c`` lands
    on the continued periodic point.  ``X_eff = X + s'(0) Y`` with the slope
    from the horizontality functional; the chain-rule landing speeds give an
    independent value recorded in ``meta``.
    """
    if not isinstance(m, PolynomialMap):
        raise ConfigError("family-unsupported", "in-class families need a polynomial base map")
    Xf = X if isinstance(X, PerturbationField) else PerturbationField.from_poly(X)
    Yf = Y if isinstance(Y, PerturbationField) else PerturbationField.from_poly(Y)
    k, P, z0 = landing_data(m)
    base_itin = itinerary(m, m.c, n_check)
    gx = landing_speed(m, lambda x: Xf(m.f(x)), k, P, z0)
    gy = landing_speed(m, lambda x: Yf(m.f(x)), k, P, z0)
    if abs(gy) < 1e-10:
        raise HypothesisError("not-transversal", "Y does not move the landing condition",
                              hypothesis="Y transversal")
    if sf is not None:
        X_eff, s1 = horizontal_projection(sf, Xf, Yf, 1.0)
    else:
        s1 = -gx / gy
        X_eff = Xf.combine(1.0, Yf, s1)
    X_eff.provenance = "from-family"

    def residual(kappa: float, s: float) -> float:
        mk = _compose_map(m, _poly_lin((kappa, Xf.poly), (s, Yf.poly))) if (kappa or s) else m
        y = mk.c
        for _ in range(k):
            y = float(mk.f(y))
        zk = polish_periodic(mk, z0, P)
        return y - zk

    cache: dict[float, float] = {0.0: 0.0}

    def s_of(kappa: float) -> float:
        if kappa in cache:
            return cache[kappa]
        s0 = s1 * kappa
        for width in (0.02, 0.1, 0.5, 2.0):
            w = width * abs(kappa) * (1.0 + abs(s1)) + 1e-15
            lo, hi = s0 - w, s0 + w
            if np.sign(residual(kappa, lo)) != np.sign(residual(kappa, hi)):
                break
        else:
            raise HypothesisError("itinerary-break", f"no s in [{lo:.3g}, {hi:.3g}] keeps the landing",
                                  hypothesis="combinatorics preserved")
        s = brentq(lambda ss: residual(kappa, ss), lo, hi, xtol=1e-18, rtol=1e-15, maxiter=200)
        mk = _compose_map(m, _poly_lin((kappa, Xf.poly), (s, Yf.poly)))
        if itinerary(mk, mk.c, n_check) != base_itin:
            raise HypothesisError("itinerary-break", f"itinerary changes at kappa={kappa:g}",
                                  hypothesis="combinatorics preserved")
        cache[kappa] = s
        return s

    def make(kappa: float) -> MapSpec:
        if kappa == 0.0:
            return m
        return _compose_map(m, _poly_lin((kappa, Xf.poly), (s_of(kappa), Yf.poly)))

    fam = FamilySpec("in-class", m, make, lambda x: X_eff(m.f(np.asarray(x, dtype=float))),
                     tuple(kappa_range), X=Xf, Y=Yf, s_slope=s1, X_eff=X_eff, s_of_kappa=s_of)
    fam.meta.update(landing_index=k, period=P, landing_point=z0, speed_X=gx, speed_Y=gy,
                    s_slope_chain_rule=-gx / gy)
    return fam


def perturbation_from_family(fam: FamilySpec, *, check_points: int = 41, tol: float = 1e-8) -> PerturbationField:
    """``X(y) = d/dkappa f_kappa(x)`` at the left preimage ``x`` of ``y``.

    The right preimage must give the same value, otherwise the family is not
    of the form ``(id + kappa X) o f`` to first order.
    """
    if fam.kind == "in-class" and fam.X_eff is not None:
        return fam.X_eff
    if fam.kind == "composition" and fam.X is not None:
        return fam.X
    m = fam.base
    ys = np.linspace(m.fa, m.b, check_points + 2)[1:-1]
    left = fam.dfdk(m.inverse(ys, -1))
    right = fam.dfdk(m.inverse(ys, 1))
    gap = float(np.max(np.abs(left - right)))
    if gap > tol:
        raise HypothesisError("branch-inconsistency", f"branch mismatch {gap:.3e}",
                              hypothesis="family of the form (id + kappa X) o f", mismatch=gap)

    def X(y):
        y = np.asarray(y, dtype=float)
        return fam.dfdk(m.inverse(np.minimum(y, m.b), 1))

    return PerturbationField(X, None, "from-family")


# ---------------------------------------------------------------------------
# the susceptibility value

@dataclass
class SusceptibilityOptions:
    horizontality_tol: float = 1e-6
    n_series: int = 200
    neumann_tol: float = 1e-13
    max_terms: int = 5000
    singular_tol: float = 1e-8


@dataclass
class SusceptibilityResult:
    value: complex
    lam: complex
    residual: float
    regular_term: complex
    spike_term: complex
    neumann_terms: int
    mean_defect: float
    series_tail: float
    primitive_jump: float


def _ddf1(m: MapSpec, x0, d):
    """``f'(x0 + d) - f'(x0)``."""
    if isinstance(m, PolynomialMap):
        return d * m._derivs[1].dd1(x0, d)
    return m.deriv_at_offset(x0, d) - m.deriv(x0, 1)


def _j_template(mo: TransferModel, k: int) -> np.ndarray:
    """``J`` for template ``k`` at the grid nodes (cached on the model)."""
    cache = mo.__dict__.setdefault("_j_cache", {})
    if k in cache:
        return cache[k]
    sf, m, g = mo.sf, mo.map, mo.grid
    k1 = sf.template(k + 1)
    xn, sn, wn = sf.x[k], sf.s[k], sf.w[k]
    dist = mo._node_dist(k1)
    xn1 = sf.x[k1]
    fw = float(m.f(wn))
    lo, hi = min(xn1, fw), max(xn1, fw)
    y = xn1 + dist
    inside = (sf.s[k1] * dist > 0) & (y > lo) & (y < hi)
    extra = np.zeros(g.n_nodes)
    if np.any(inside):
        branch = -1 if xn < m.c else 1
        di = dist[inside]
        delta = np.asarray(m.inverse(xn1 + di, branch), dtype=float) - xn
        near = np.abs(delta) < 0.1 * abs(wn - xn)
        if np.any(near):
            delta[near] = m.near_inverse(np.full(int(near.sum()), xn), di[near])
        dfx = np.abs(m.deriv_at_offset(np.full(delta.shape, xn), delta))
        pushed = psi_template(xn, sn, wn, xn + delta, delta) / dfx
        extra[inside] = pushed * _ddf1(m, np.full(delta.shape, xn), delta)
    J = float(m.deriv(xn, 1)) * chi_eval(sf, k, g.node_x, dist) + extra
    cache[k] = J
    return J


def _psi_nodes(mo: TransferModel, k: int) -> np.ndarray:
    cache = mo.__dict__.setdefault("_psi_cache", {})
    if k not in cache:
        sf = mo.sf
        cache[k] = psi_template(sf.x[k], sf.s[k], sf.w[k], mo.grid.node_x, mo._node_dist(k))
    return cache[k]


def _slots(mo: TransferModel) -> list[tuple[int, int]]:
    """``(state slot, template)`` pairs of the spike ledger."""
    return [(mo.nb + n, n) for n in range(mo.N)] + [(mo.nb + mo.N + j, mo.N + j) for j in range(mo.P)]


def _singular_slot(mo: TransferModel, bpi: int, side: int) -> tuple[int, int] | None:
    for slot, k in _slots(mo):
        if mo.spike_bp[k] == bpi and mo.sf.s[k] == side:
            return slot, k
    return None


def derivative_state(mo: TransferModel, H: np.ndarray, singular_tol: float = 1e-8) -> tuple[np.ndarray, float]:
    """State of ``dH/dx`` for a nodal primitive ``H`` continuous on ``[a, b]``.

    Square-root terms of ``H`` at graded ends become spike coefficients; the
    rest stays in the background.  Returns the state and the largest jump
    of ``H`` across breakpoints (which would be lost delta masses).
    """
    g = mo.grid
    n = g.D + 1
    Dm = mo.__dict__.setdefault("_dm", g.diff_matrix())
    Hk = H.reshape(g.K, n)
    dHdt = Hk @ Dm.T
    Wend = g.bary_matrix(np.array([-1.0, 1.0]))
    ends_d = dHdt @ Wend.T
    ends_h = Hk @ Wend.T
    jump = max(abs(ends_h[0, 0]), abs(ends_h[-1, 1]))
    for k in range(1, g.K):
        jump = max(jump, abs(ends_h[k, 0] - ends_h[k - 1, 1]))
    G = np.empty((g.K, n), dtype=dHdt.dtype)
    for k in range(g.K):
        G[k] = dHdt[k] / g.dxdt(k, g.t)
    state = np.zeros(mo.n_state, dtype=dHdt.dtype)
    state[: mo.nb] = G.ravel()
    scale = float(np.max(np.abs(Hk))) or 1.0
    for k in range(g.K):
        L, kind = g.L[k], g.kind[k]
        ends = []
        if kind in ("sl", "sb"):
            fac = 2.0 / np.sqrt(L) if kind == "sl" else 4.0 / (np.pi * np.sqrt(L))
            ends.append((k, +1, fac * ends_d[k, 0]))
        if kind in ("sr", "sb"):
            fac = 2.0 / np.sqrt(L) if kind == "sr" else 4.0 / (np.pi * np.sqrt(L))
            ends.append((k + 1, -1, -fac * ends_d[k, 1]))
        for bpi, side, H1 in ends:
            kap = side * H1 / 2.0
            found = _singular_slot(mo, bpi, side)
            if found is None:
                if abs(kap) > singular_tol * scale:
                    raise NumericalError("unmatched-singularity",
                                         f"square-root term {abs(kap):.2e} at {g.bp[bpi]:.6g} without a spike")
                continue
            slot, tk = found
            state[slot] += kap
            state[: mo.nb] -= kap * _psi_nodes(mo, tk)
    return state, float(jump)


def _observe_state(mo: TransferModel, state: np.ndarray, A) -> complex:
    re = observe(DensityModel(mo, np.real(state).copy()), A)
    if np.iscomplexobj(state) and np.any(np.imag(state) != 0):
        return complex(re, observe(DensityModel(mo, np.imag(state).copy()), A))
    return complex(re)


def susceptibility_value(d: DensityModel, X: PerturbationField, A, lam: complex = 1.0,
                         opts: SusceptibilityOptions | None = None) -> SusceptibilityResult:
    """``Psi(X, lam)`` for the solved density ``d``; ``X`` must be horizontal at 1."""
    opts = opts or SusceptibilityOptions()
    A = as_observable(A)
    mo = d.model
    sf = mo.sf
    alpha = _alpha(sf)
    if abs(lam) <= alpha:
        raise HypothesisError("divergence-region", f"|lambda| = {abs(lam):.4g} <= alpha = {alpha:.4g}",
                              hypothesis="|lambda| > alpha")
    res1 = horizontality_residual(sf, X, 1.0, opts.n_series)
    if res1 > opts.horizontality_tol:
        raise HypothesisError("horizontality-violated", f"|X(b) + F_0(X)| = {res1:.3e} at lambda=1",
                              hypothesis="X horizontal", residual=res1)
    lam = complex(lam)
    g = mo.grid
    slots = _slots(mo)
    coef = d.state
    E = {}
    tails = []
    for slot, k in slots:
        Fv, tail = F_ell(sf, X, k, lam, opts.n_series)
        E[slot] = coef[slot] * Fv
        tails.append(tail)
    H = -X(g.node_x) * coef[: mo.nb]
    H = H.astype(complex)
    for slot, k in slots:
        if coef[slot] == 0.0:
            continue
        dX = X.diff(np.full(g.n_nodes, sf.x[k]), mo._node_dist(k))
        H -= coef[slot] * dX * _psi_nodes(mo, k)
        H += lam * E[slot] * _j_template(mo, k)
    G, jump = derivative_state(mo, H, opts.singular_tol)
    rho = d.state / d.mass
    mean = complex(mo.mass_vec @ G)
    v = G - mean * rho
    R = v.copy()
    term = v.copy()
    base = float(np.max(np.abs(v))) or 1.0
    K = 0
    for K in range(1, opts.max_terms + 1):
        term = lam * (mo.T @ term)
        term = term - complex(mo.mass_vec @ term) * rho
        R += term
        if float(np.max(np.abs(term))) < opts.neumann_tol * base:
            break
    else:
        raise NumericalError("neumann-not-converged", f"resolvent series not converged after {K} terms")
    if lam != 1.0:
        R = R + mean * rho / (1.0 - lam)
    regular = _observe_state(mo, R, A.f)
    spike = 0j
    for slot, k in slots:
        if E[slot] != 0:
            spike -= E[slot] * spike_integral(sf, k, A.df)
    val = regular + spike
    return SusceptibilityResult(val, lam, res1, regular, spike, K, abs(mean), float(max(tails)), jump)


# ---------------------------------------------------------------------------
# finite-difference verification

@dataclass
class DerivativeReport:
    psi: float
    fd: float
    rel_error: float
    table: list[dict]
    richardson: list[float]
    observable: str
    family: str

    def as_dict(self) -> dict:
        return {"psi": self.psi, "finite_difference": self.fd, "relative_error": self.rel_error,
                "table": self.table, "richardson": self.richardson, "observable": self.observable,
                "family": self.family}


def _value_at(fam: FamilySpec, base: Solved, kappa: float, A: Observable) -> float:
    mk = fam.make(kappa)
    try:
        sol = solve_map(mk, u1=base.horseshoe.u1, u1_period=base.horseshoe.N + 1, n_max=16)
    except (HypothesisError, NumericalError) as err:
        raise HypothesisError("acim-failure-at-kappa", f"kappa={kappa:g}: {err}") from err
    return observe(sol.density, A.f)


def verify_derivative(fam: FamilySpec, A, steps=(4e-3, 2e-3, 1e-3, 5e-4), *, base: Solved | None = None,
                     opts: SusceptibilityOptions | None = None) -> DerivativeReport:
    """Central differences of ``kappa -> <rho_kappa, A>`` against ``Psi(X_eff, 1)``."""
    A = as_observable(A)
    base = base or solve_map(fam.base)
    X = perturbation_from_family(fam)
    psi = susceptibility_value(base.density, X, A, 1.0, opts).value.real
    table, fds = [], []
    for hstep in steps:
        vp = _value_at(fam, base, hstep, A)
        vm = _value_at(fam, base, -hstep, A)
        fd = (vp - vm) / (2 * hstep)
        fds.append(fd)
        table.append({"h": hstep, "fd": fd, "gap": abs(fd - psi)})
    for i in range(1, len(table)):
        prev, cur = table[i - 1]["gap"], table[i]["gap"]
        table[i]["gap_ratio"] = prev / cur if cur > 0 else float("inf")
    rich = [(4 * fds[i + 1] - fds[i]) / 3 for i in range(len(fds) - 1)]
    best = rich[-1] if rich else fds[-1]
    rel = abs(best - psi) / abs(best) if best != 0 else abs(psi)
    return DerivativeReport(psi, best, rel, table, rich, A.name, fam.kind)


# ---------------------------------------------------------------------------
# scans and scaling

@dataclass
class SusceptibilityScan:
    lams: np.ndarray
    values: np.ndarray
    tails: np.ndarray
    neumann_terms: np.ndarray
    residual_at_1: float
    errors: dict = field(default_factory=dict)

    def rows(self) -> list[tuple]:
        return [(float(l.real), float(l.imag), float(v.real), float(v.imag), float(t), int(k))
                for l, v, t, k in zip(self.lams, self.values, self.tails, self.neumann_terms)]


def lambda_scan(d: DensityModel, X: PerturbationField, A, grid, opts: SusceptibilityOptions | None = None) -> SusceptibilityScan:
    lams = np.asarray(list(grid), dtype=complex)
    vals = np.full(lams.size, np.nan + 0j)
    tails = np.full(lams.size, np.nan)
    Ks = np.zeros(lams.size, dtype=int)
    errors = {}
    res1 = horizontality_residual(d.model.sf, X, 1.0)
    for i, lam in enumerate(lams):
        try:
            r = susceptibility_value(d, X, A, lam, opts)
            vals[i], tails[i], Ks[i] = r.value, r.series_tail, r.neumann_terms
        except (HypothesisError, NumericalError) as err:
            errors[i] = err.code
            log.info("lambda=%s: %s", lam, err.code)
    return SusceptibilityScan(lams, vals, tails, Ks, res1, errors)


def chain_rule_speeds(m: MapSpec, Z: Callable, n_max: int) -> np.ndarray:
    """``d/dkappa f_kappa^n b_kappa`` for ``n = 0..n_max`` with ``d f/dkappa = Z``."""
    xs = critical_orbit(m, n_max).points
    out = np.empty(n_max + 1)
    out[0] = float(Z(np.array([m.c]))[0])
    for n in range(1, n_max + 1):
        out[n] = float(m.deriv(xs[n - 1], 1)) * out[n - 1] + float(Z(np.array([xs[n - 1]]))[0])
    return out


def scaling_diagnostics(fam: FamilySpec, n_max: int = 40, *, sf: SpikeFamily | None = None,
                        phi_c: float = 1.0, fit_from: int = 1) -> dict:
    """Growth of spike weights and of critical-orbit speeds along the family."""
    m = fam.base
    xs = critical_orbit(m, n_max).points
    logdf = np.log(np.abs(np.asarray(m.deriv(xs, 1), dtype=float)))
    k0 = abs(0.5 * float(m.deriv(m.c, 2))) ** -0.5
    weights = phi_c * k0 * np.exp(-0.5 * np.concatenate([[0.0], np.cumsum(logdf[:-1])]))
    if sf is not None:
        cnt = min(n_max + 1, sf.t.size)
        weights[:cnt] = phi_c * sf.k0 * sf.t[:cnt]
    speeds = chain_rule_speeds(m, fam.dfdk, n_max)
    n = np.arange(n_max + 1)
    sel = n >= fit_from
    wexp = float(np.polyfit(n[sel], np.log(np.abs(weights[sel])), 1)[0])
    nz = sel & (np.abs(speeds) > 0)
    sexp = float(np.polyfit(n[nz], np.log(np.abs(speeds[nz])), 1)[0]) if nz.sum() > 2 else float("nan")
    mean_log = float(np.mean(logdf[:n_max]))
    return {"n": n.tolist(), "weight": weights.tolist(), "speed": speeds.tolist(),
            "weight_exponent": wexp, "speed_exponent": sexp, "mean_log_derivative": mean_log,
            "weight_ratio": wexp / (-0.5 * mean_log), "speed_ratio": sexp / mean_log if mean_log else float("nan")}
