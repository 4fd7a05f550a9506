"""Square-root spikes carried along the critical orbit.

The invariant density has a one-sided ``|x - x_n|^(-1/2)`` singularity at each
point ``x_n = f^n b`` of the critical orbit.  A spike is

    psi_n(x) = (1 - delta/L_n) * delta^(-1/2),   delta = s_n (x - x_n) in (0, L_n),

where ``L_n = |w_n - x_n|`` and the anchor ``w_n`` is one of ``u1, u2, v1, v2``.
Pushing ``psi_n`` forward gives ``|f'(x_n)|^(-1/2) psi_{n+1}`` plus a bounded
correction ``chi_n``.  Every evaluator accepts an optional signed distance
``dist = x - x_n`` so callers holding accurate offsets avoid cancellation.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .analytic_map import MapSpec, critical_orbit
from .errors import HypothesisError, NumericalError
from .horseshoe import Horseshoe

_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def gauss_legendre(order: int) -> tuple[np.ndarray, np.ndarray]:
    if order not in _GL_CACHE:
        _GL_CACHE[order] = np.polynomial.legendre.leggauss(order)
    return _GL_CACHE[order]


def _bump(u):
    """Smooth-ish bump on (0, 1) with unit integral."""
    u = np.clip(u, 0.0, 1.0)
    return 630.0 * u ** 4 * (1.0 - u) ** 4


@dataclass(frozen=True)
class SpikeFamily:
    """Spike templates ``n = 0..len(x)-1`` along the critical orbit.

    Indices below ``N`` carry individual coefficients.  When the orbit is
    eventually periodic the templates ``N..N+P-1`` form one period of the
    tail (``tail_period = P``) and template ``N+P`` coincides with ``N``.
    """

    map: MapSpec
    horseshoe: Horseshoe
    N: int
    x: np.ndarray
    s: np.ndarray
    w: np.ndarray
    t: np.ndarray
    r: np.ndarray
    k0: float
    tail_period: int = 0
    landing: int = -1
    C: np.ndarray | None = None
    basis: str = "standard"

    @property
    def L(self) -> np.ndarray:
        return np.abs(self.w - self.x)

    @property
    def n_templates(self) -> int:
        return self.x.size

    def template(self, n: int) -> int:
        """Index of the template describing spike ``n`` (folds the periodic tail)."""
        if self.tail_period and n >= self.N:
            return self.N + (n - self.N) % self.tail_period
        if n >= self.x.size:
            raise IndexError(f"spike {n} beyond computed templates")
        return n

    def mean(self, n: int) -> float:
        return 4.0 / 3.0 * float(np.sqrt(self.L[n]))


def select_anchor(h: Horseshoe, x_next: float, fw_prev: float) -> float:
    """The anchor on the support side: between ``x_next`` and ``f(w_prev)``."""
    c = h.map.c
    cands = []
    for w in h.special_points:
        if (w - c) * (x_next - c) > 0 and (w - x_next) * (fw_prev - x_next) > 0 \
                and abs(w - x_next) <= abs(fw_prev - x_next) + 1e-12:
            cands.append(w)
    if len(cands) != 1:
        raise HypothesisError("anchor-ambiguous", f"{len(cands)} admissible anchors at {x_next!r}",
                              hypothesis="critical orbit separated from u1,u2,v1,v2")
    return cands[0]


def _tail_period(x, s, w, start: int, max_period: int) -> int:
    for P in range(1, max_period + 1):
        ok = all(x[n] == x[n + P] and s[n] == s[n + P] and w[n] == w[n + P]
                 for n in range(start, start + 2 * P) if n + P < x.size)
        if ok:
            return P
    return 0


def anchors_and_signs(h: Horseshoe, N_spike: int | None = None, *, cap: int = 60,
                      t_tol: float = 1e-12, basis: str = "standard") -> SpikeFamily:
    """Signs, anchors and relative weights ``t_n`` of the spikes."""
    m = h.map
    length = (N_spike or cap) + 40
    co = critical_orbit(m, length)
    x = co.points
    df = np.asarray(m.deriv(x, 1), dtype=float)
    s = np.empty(x.size)
    w = np.empty(x.size)
    s[0], w[0] = -1.0, h.u2
    for n in range(x.size - 1):
        s[n + 1] = s[n] * np.sign(df[n])
        w[n + 1] = select_anchor(h, x[n + 1], float(m.f(w[n])))
    r = np.abs(df) ** -0.5
    t = np.concatenate([[1.0], np.cumprod(r[:-1])])
    if N_spike is None:
        small = np.nonzero(t < t_tol)[0]
        N_spike = int(min(small[0] if small.size else cap, cap))
    if np.any(s[:-1] * (w[:-1] - x[:-1]) <= 0):
        raise NumericalError("spike-side", "anchor on the wrong side of its spike")
    P = 0
    if co.landing >= 0 and N_spike >= co.landing:
        P = _tail_period(x, s, w, N_spike, 4 * co.period)
    M = N_spike + P + 1 if P else N_spike + 1
    k0 = abs(0.5 * float(m.deriv(m.c, 2))) ** -0.5
    return SpikeFamily(m, h, int(N_spike), x[:M].copy(), s[:M].copy(), w[:M].copy(), t[:M].copy(),
                       r[:M].copy(), k0, P, co.landing, None, basis)


# ---------------------------------------------------------------------------
# template level evaluators

def psi_template(xn: float, sn: float, wn: float, x, dist=None) -> np.ndarray:
    """``(1 - delta/L) delta^(-1/2)`` on ``0 < delta < L``, zero elsewhere."""
    x = np.asarray(x, dtype=float)
    d = (x - xn) if dist is None else np.asarray(dist, dtype=float)
    delta = sn * d
    L = abs(wn - xn)
    inside = (delta > 0) & (delta < L)
    safe = np.where(inside, delta, 1.0)
    return np.where(inside, (1.0 - safe / L) / np.sqrt(safe), 0.0)


def chi_template(m: MapSpec, xn, sn, wn, sn1, wn1, y, dist=None, xn1=None) -> np.ndarray:
    """Pushforward of one spike minus its scaled successor.

    ``dist`` is ``y - f(xn)``.  The successor spike sits at ``f(xn)`` with side
    ``sn1`` and anchor ``wn1``.
    """
    y = np.asarray(y, dtype=float)
    xn1 = float(m.f(xn)) if xn1 is None else float(xn1)
    d = (y - xn1) if dist is None else np.asarray(dist, dtype=float)
    fw = float(m.f(wn))
    lo, hi = min(xn1, fw), max(xn1, fw)
    ypos = xn1 + d
    inside = (sn1 * d > 0) & (ypos > lo) & (ypos < hi)
    out = np.zeros(np.broadcast(y, d).shape)
    if np.any(inside):
        branch = -1 if xn < m.c else 1
        di = np.broadcast_to(d, out.shape)[inside]
        xg = m.inverse(xn1 + di, branch)
        delta = np.asarray(xg, dtype=float) - xn
        near = np.abs(delta) < 0.1 * abs(wn - xn)
        if np.any(near):
            delta = delta.copy()
            delta[near] = m.near_inverse(np.full(int(near.sum()), xn), di[near])
        dfx = np.abs(m.deriv_at_offset(np.full(delta.shape, xn), delta))
        pushed = psi_template(xn, sn, wn, xn + delta, delta) / dfx
        rn = abs(float(m.deriv(xn, 1))) ** -0.5
        out[inside] = pushed - rn * psi_template(xn1, sn1, wn1, xn1 + di, di)
    return out


# ---------------------------------------------------------------------------
# family level evaluators

def spike_eval(sf: SpikeFamily, n: int, x, dist=None):
    """``psi_n(x)`` in the family's basis."""
    k = sf.template(n)
    xv = np.asarray(x, dtype=float)
    d = (xv - sf.x[k]) if dist is None else np.asarray(dist, dtype=float)
    if np.any(d == 0.0):
        raise HypothesisError("singular-point", f"spike {n} evaluated at its singular point")
    out = psi_template(sf.x[k], sf.s[k], sf.w[k], xv, d)
    if sf.basis == "zero-mean":
        out = out - sf.mean(k) * _bump(sf.s[k] * d / sf.L[k]) / sf.L[k]
    return float(out) if np.ndim(out) == 0 and np.ndim(x) == 0 else out


def spike_weights(sf: SpikeFamily, phic: float) -> SpikeFamily:
    """Absolute weights ``C_n = phi(c) k0 t_n`` for all templates."""
    return replace(sf, C=float(phic) * sf.k0 * sf.t)


def chi_eval(sf: SpikeFamily, n: int, x, dist=None):
    """``chi_n`` at ``x``; ``dist`` is the signed offset from ``x_{n+1}``."""
    k = sf.template(n)
    k1 = sf.template(n + 1)
    m = sf.map
    xv = np.asarray(x, dtype=float)
    if np.any((xv < m.a - 1e-12) | (xv > m.b + 1e-12)):
        raise HypothesisError("branch-undefined", "chi evaluated outside [a, b]")
    out = chi_template(m, sf.x[k], sf.s[k], sf.w[k], sf.s[k1], sf.w[k1], xv, dist, sf.x[k1])
    if sf.basis == "zero-mean":
        d = (xv - sf.x[k1]) if dist is None else np.asarray(dist, dtype=float)
        out = out - sf.mean(k) * _pushed_bump(sf, k, xv, d) + \
            sf.r[k] * sf.mean(k1) * _bump(sf.s[k1] * d / sf.L[k1]) / sf.L[k1]
    return float(out) if np.ndim(out) == 0 and np.ndim(x) == 0 else out


def _pushed_bump(sf: SpikeFamily, k: int, y, d):
    m = sf.map
    xn, L = sf.x[k], sf.L[k]
    fw = float(m.f(sf.w[k]))
    x1 = float(m.f(xn))
    lo, hi = min(x1, fw), max(x1, fw)
    yy = x1 + np.asarray(d, dtype=float)
    inside = (yy > lo) & (yy < hi)
    out = np.zeros(yy.shape)
    if np.any(inside):
        xp = m.inverse(yy[inside], -1 if xn < m.c else 1)
        out[inside] = _bump(sf.s[k] * (xp - xn) / L) / L / np.abs(m.deriv(xp, 1))
    return out


def spike_integral(sf: SpikeFamily, n: int, A, order: int = 64) -> float:
    """``int psi_n A dx`` through the substitution ``x = x_n + s_n t^2``."""
    k = sf.template(n)
    xn, sn, L = sf.x[k], sf.s[k], sf.L[k]
    g, wts = gauss_legendre(order)
    R = np.sqrt(L)
    tt = 0.5 * R * (g + 1.0)
    vals = 2.0 * (1.0 - tt ** 2 / L) * np.asarray(A(xn + sn * tt ** 2), dtype=float)
    total = 0.5 * R * float(np.dot(wts, vals))
    if sf.basis == "zero-mean":
        u = 0.5 * (g + 1.0)
        total -= sf.mean(k) * 0.5 * float(np.dot(wts, _bump(u) * A(xn + sn * L * u)))
    return total


# ---------------------------------------------------------------------------
# second-order expansion

def fold_expansion(m: MapSpec, rho0: float, rho1: float, rho2: float) -> tuple[float, float]:
    """Leading coefficients ``(U, U')`` of a smooth density pushed through the fold.

    With ``xi = sqrt(b - y)`` the pushed density is ``U/xi + U' xi + O(xi^3)``.
    ``rho0..rho2`` are ``rho(c), rho'(c), rho''(c)``.
    """
    G = _fold_taylor(m)
    k = np.sqrt(G[0])
    g1, g2 = G[1] / G[0], G[2] / G[0]
    al = 0.5 * g1
    be = 0.5 * g2 - g1 ** 2 / 8.0
    e1 = 1.0 / k
    e2 = -al / k ** 2
    e3 = (2 * al ** 2 - be) / k ** 3
    U = rho0 * e1
    Up = 3 * e3 * rho0 + 3 * e1 * e2 * rho1 + 0.5 * rho2 * e1 ** 3
    return float(U), float(Up)


def _fold_taylor(m: MapSpec) -> np.ndarray:
    if hasattr(m, "fold_taylor"):
        return m.fold_taylor(3)
    h = 1e-3 * np.cos(np.pi * (np.arange(9) + 0.5) / 9)
    coef = np.polynomial.polynomial.polyfit(h, m.fold_quotient(h), 6)
    return coef[:3]


@dataclass(frozen=True)
class SecondOrderSpikes:
    sf: SpikeFamily
    C0: np.ndarray
    C1: np.ndarray

    def _delta(self, n, x, dist):
        k = self.sf.template(n)
        d = (np.asarray(x, dtype=float) - self.sf.x[k]) if dist is None else np.asarray(dist, dtype=float)
        delta = self.sf.s[k] * d
        L = self.sf.L[k]
        inside = (delta > 0) & (delta < L)
        return np.where(inside, delta, 1.0), inside, L

    def psi0(self, n: int, x, dist=None):
        delta, inside, L = self._delta(n, x, dist)
        return np.where(inside, (1 - (delta / L) ** 2) / np.sqrt(delta), 0.0)

    def psi1(self, n: int, x, dist=None):
        delta, inside, L = self._delta(n, x, dist)
        return np.where(inside, (1 - (delta / L) ** 2) * np.sqrt(delta), 0.0)

    def local(self, n: int, x, dist=None):
        return self.C0[n] * self.psi0(n, x, dist) + self.C1[n] * self.psi1(n, x, dist)


def second_order_weights(sf: SpikeFamily, U: float, Up: float) -> SecondOrderSpikes:
    """Recursions for the ``delta^(-1/2)`` and ``delta^(1/2)`` coefficients."""
    m = sf.map
    M = sf.n_templates
    C0, C1 = np.empty(M), np.empty(M)
    C0[0], C1[0] = U, Up
    for n in range(M - 1):
        d1 = abs(float(m.deriv(sf.x[n], 1)))
        d2 = float(m.deriv(sf.x[n], 2))
        C0[n + 1] = d1 ** -0.5 * C0[n]
        C1[n + 1] = d1 ** -1.5 * (C1[n] - 0.75 * sf.s[n + 1] * d2 / d1 * C0[n])
    return SecondOrderSpikes(sf, C0, C1)


# ---------------------------------------------------------------------------
# pushforward of a spike at a generic point

@dataclass(frozen=True)
class PushforwardResult:
    points: np.ndarray
    sides: np.ndarray
    anchors: np.ndarray
    tau: np.ndarray
    remainder_sup: np.ndarray
    rate: float

    @property
    def n_steps(self) -> int:
        return self.points.size - 1


def generic_spike_pushforward(h: Horseshoe, u: float, side: int, n_steps: int, *,
                              grid: int = 400, min_separation: float = 1e-6) -> PushforwardResult:
    """Push a spike at ``u`` forward, splitting off the scaled spike at each image.

    ``remainder_sup[k]`` is ``sup |tau_k chi_k|``, the sup norm of the bounded
    piece split off at step ``k``.  ``rate`` is the fitted geometric decay of
    these norms.
    """
    m = h.map
    c = m.c
    cands = [w for w in h.special_points if (w - c) * (u - c) > 0 and side * (w - u) > 0]
    if not cands:
        raise HypothesisError("separation-violated", "no anchor on the requested side")
    w0 = min(cands, key=lambda w: abs(w - u))
    pts, sides, anchors = [float(u)], [float(side)], [w0]
    for _ in range(n_steps):
        x = pts[-1]
        pts.append(float(m.f(x)))
        if not h.in_region(pts[-1]):
            raise HypothesisError("separation-violated",
                                  f"orbit of u leaves the horseshoe at {pts[-1]:.6g}")
        sides.append(sides[-1] * float(np.sign(m.deriv(x, 1))))
        anchors.append(select_anchor(h, pts[-1], float(m.f(anchors[-1]))))
    pts_a = np.array(pts)
    sep = np.min(np.abs(pts_a[:, None] - np.array(h.special_points)[None, :]))
    if sep < min_separation:
        raise HypothesisError("separation-violated", f"orbit of u within {sep:.2e} of u1,u2,v1,v2")
    df = np.abs(m.deriv(pts_a, 1))
    tau = np.concatenate([[1.0], np.cumprod(df[:-1] ** -0.5)])
    sups = []
    for k in range(n_steps):
        x1 = pts[k + 1]
        fw = float(m.f(anchors[k]))
        ys = np.linspace(min(x1, fw), max(x1, fw), grid + 2)[1:-1]
        vals = chi_template(m, pts[k], sides[k], anchors[k], sides[k + 1], anchors[k + 1], ys)
        sups.append(tau[k] * float(np.max(np.abs(vals))))
    sups = np.array(sups)
    rate = float(np.exp(np.polyfit(np.arange(sups.size), np.log(sups), 1)[0])) if sups.size > 2 else float("nan")
    return PushforwardResult(pts_a, np.array(sides), np.array(anchors), tau[: n_steps + 1], sups, rate)
