"""Analytic unimodal maps: evaluation, critical data, orbits, parameter search.

Two concrete map classes are provided.  ``PolynomialMap`` covers the logistic
family and every composition ``h o f`` with polynomial ``h``.  ``ConjugatedMap``
represents ``g o f o g^-1`` with ``g = id + kappa*v``.  Besides plain
evaluation, both classes expose *offset* evaluators (divided differences, the
fold quotient near the critical point, local inverses) which stay accurate when
points are given as a base point plus a small offset.  The spike machinery
relies on these to evaluate ``|x - x_n|^(-1/2)`` type terms without
cancellation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import polynomial as npoly

from .errors import HypothesisError, NumericalError

ArrayLike = float | np.ndarray


class Poly:
    """Real polynomial with ascending coefficients and stable shifted forms."""

    def __init__(self, coeffs: Sequence[float]):
        c = np.trim_zeros(np.asarray(coeffs, dtype=float), "b")
        self.coeffs = c if c.size else np.zeros(1)

    @property
    def degree(self) -> int:
        return self.coeffs.size - 1

    def __call__(self, x: ArrayLike) -> ArrayLike:
        return npoly.polyval(x, self.coeffs)

    def deriv(self, k: int = 1) -> "Poly":
        if k == 0:
            return self
        return Poly(npoly.polyder(self.coeffs, k)) if self.degree >= k else Poly([0.0])

    def compose(self, inner: "Poly") -> "Poly":
        """Return ``self o inner``."""
        out = np.zeros(1)
        for a in self.coeffs[::-1]:
            out = npoly.polyadd(npoly.polymul(out, inner.coeffs), [a])
        return Poly(out)

    def taylor(self, x0: ArrayLike) -> np.ndarray:
        """Taylor coefficients ``a_k(x0) = p^(k)(x0)/k!`` stacked on axis 0."""
        x0 = np.asarray(x0, dtype=float)
        if not hasattr(self, "_scaled"):
            self._scaled = [npoly.polyder(self.coeffs, k) / math.factorial(k) if k else self.coeffs
                            for k in range(self.degree + 1)]
        return np.array([npoly.polyval(x0, ck) for ck in self._scaled])

    def dd1(self, x0: ArrayLike, d: ArrayLike, *, taylor: np.ndarray | None = None) -> ArrayLike:
        """Divided difference ``p[x0, x0+d]`` without cancellation."""
        t = self.taylor(x0) if taylor is None else taylor
        d = np.asarray(d, dtype=float)
        out = np.zeros(np.broadcast(t[0], d).shape)
        for k in range(self.degree, 0, -1):
            out = out * d + t[k]
        return out

    def deriv_at_offset(self, x0: ArrayLike, d: ArrayLike, *, taylor: np.ndarray | None = None) -> ArrayLike:
        """``p'(x0 + d)`` expanded around ``x0``."""
        t = self.taylor(x0) if taylor is None else taylor
        d = np.asarray(d, dtype=float)
        out = np.zeros(np.broadcast(t[0], d).shape)
        for k in range(self.degree, 0, -1):
            out = out * d + k * t[k]
        return out

    def tolist(self) -> list[float]:
        return [float(v) for v in self.coeffs]


class MapSpec:
    """Interface shared by all unimodal maps used in the package.

    Attributes ``c``, ``b = f(c)`` and ``a = f(b)`` are fixed at construction.
    Subclasses implement ``_deriv``, ``dd1``, ``deriv_at_offset`` and
    ``fold_quotient``.
    """

    family: str = "abstract"
    mu: float | None = None
    c: float
    b: float
    a: float

    # -- evaluation -------------------------------------------------------
    def f(self, x: ArrayLike) -> ArrayLike:
        return self._deriv(x, 0)

    def deriv(self, x: ArrayLike, order: int = 1) -> ArrayLike:
        if order not in (0, 1, 2, 3):
            raise ValueError("order must be 0..3")
        return self._deriv(x, order)

    def _deriv(self, x, order):  # pragma: no cover - abstract
        raise NotImplementedError

    def dd1(self, x0, d):  # pragma: no cover - abstract
        raise NotImplementedError

    def deriv_at_offset(self, x0, d):  # pragma: no cover - abstract
        raise NotImplementedError

    def fold_quotient(self, h):  # pragma: no cover - abstract
        raise NotImplementedError

    def fingerprint(self) -> dict:  # pragma: no cover - abstract
        raise NotImplementedError

    @property
    def fa(self) -> float:
        return float(self.f(self.a))

    @property
    def fold_constant(self) -> float:
        """``A = -f''(c)/2``, the coefficient of the quadratic fold."""
        return float(-0.5 * self.deriv(self.c, 2))

    # -- inverses ---------------------------------------------------------
    def fold_inverse(self, xi2: ArrayLike, branch: int) -> np.ndarray:
        """Offset ``h`` from ``c`` with ``b - f(c+h) = xi2`` on the given branch.

        ``branch`` is -1 for the increasing (left) branch and +1 for the
        decreasing (right) one.  Solved as the fixed point
        ``h = branch*sqrt(xi2/G(h))`` of the fold quotient ``G``.
        """
        xi2 = np.maximum(np.asarray(xi2, dtype=float), 0.0)
        g = np.full(xi2.shape, self.fold_constant)
        h = branch * np.sqrt(xi2 / g)
        for _ in range(200):
            g = self.fold_quotient(h)
            h_new = branch * np.sqrt(xi2 / g)
            done = np.all(np.abs(h_new - h) <= 1e-15 * np.abs(h_new) + 1e-300)
            h = h_new
            if done:
                break
        else:
            raise NumericalError("fold-inverse", "fold quotient iteration did not converge")
        return h

    def inverse(self, y: ArrayLike, branch: int) -> ArrayLike:
        """Preimage of ``y`` under the left (``-1``) or right (``+1``) branch."""
        y_arr = np.asarray(y, dtype=float)
        x = self.c + self.fold_inverse(self.b - y_arr, branch)
        return float(x) if np.ndim(y) == 0 else x

    def near_inverse(self, x0: ArrayLike, d: ArrayLike) -> np.ndarray:
        """Offset ``D`` with ``f(x0 + D) - f(x0) = d`` for ``x0`` away from ``c``.

        Newton iteration on ``D*f[x0, x0+D] = d``; exact in the sense that the
        image of ``x0`` is taken to be ``f(x0)`` by definition.
        """
        x0 = np.asarray(x0, dtype=float)
        d = np.asarray(d, dtype=float)
        delta = d / self.deriv(x0, 1)
        for _ in range(60):
            resid = delta * self.dd1(x0, delta) - d
            step = resid / self.deriv_at_offset(x0, delta)
            delta = delta - step
            if np.all(np.abs(step) <= 2e-16 * np.abs(delta) + 1e-300):
                break
        return delta

    def branch_of(self, x: ArrayLike) -> ArrayLike:
        return np.where(np.asarray(x) < self.c, -1, 1)


class PolynomialMap(MapSpec):
    """Unimodal polynomial map, e.g. the logistic map ``mu*x*(1-x)``."""

    def __init__(self, coeffs: Sequence[float] | Poly, *, family: str = "polynomial",
                 mu: float | None = None, c: float | None = None):
        self.poly = coeffs if isinstance(coeffs, Poly) else Poly(coeffs)
        self._derivs = [self.poly.deriv(k) for k in range(4)]
        self.family = family
        self.mu = mu
        self.c = float(c) if c is not None else _unique_critical_point(self.poly)
        self.b = float(self.poly(self.c))
        self.a = float(self.poly(self.b))

    def _deriv(self, x, order):
        return self._derivs[order](x)

    def dd1(self, x0, d):
        return self.poly.dd1(x0, d)

    def deriv_at_offset(self, x0, d):
        return self.poly.deriv_at_offset(x0, d)

    def fold_quotient(self, h):
        t = self.poly.taylor(self.c)
        h = np.asarray(h, dtype=float)
        out = np.zeros(h.shape)
        for k in range(self.poly.degree, 1, -1):
            out = out * h + t[k]
        return -out

    def fold_taylor(self, order: int = 3) -> np.ndarray:
        """Taylor coefficients of the fold quotient ``G`` at ``h = 0``."""
        t = self.poly.taylor(self.c)
        g = -t[2:]
        out = np.zeros(order)
        out[: min(order, g.size)] = g[:order]
        return out

    def fingerprint(self) -> dict:
        return {"class": "polynomial", "family": self.family, "mu": self.mu,
                "coeffs": self.poly.tolist(), "c": self.c}

    def __repr__(self) -> str:
        if self.family == "logistic":
            return f"logistic(mu={self.mu!r})"
        return f"PolynomialMap({self.poly.tolist()})"


def _unique_critical_point(p: Poly) -> float:
    roots = np.roots(p.deriv(1).coeffs[::-1]) if p.degree >= 2 else np.array([])
    real = sorted(float(r.real) for r in roots if abs(r.imag) < 1e-12)
    maxima = [r for r in real if p.deriv(2)(r) < 0]
    if len(maxima) != 1:
        raise HypothesisError("reject-not-unimodal", "polynomial needs exactly one quadratic maximum",
                              hypothesis="single quadratic critical point")
    return maxima[0]


def logistic(mu: float) -> PolynomialMap:
    """The logistic map ``mu*x*(1-x)`` (no validation)."""
    return PolynomialMap([0.0, mu, -mu], family="logistic", mu=float(mu), c=0.5)


class ConjugatedMap(MapSpec):
    """``g o f o g^-1`` with ``g = id + kappa*v`` and polynomial ``v``."""

    def __init__(self, base: MapSpec, v: Sequence[float] | Poly, kappa: float):
        self.base = base
        self.v = v if isinstance(v, Poly) else Poly(v)
        self.dv = [self.v.deriv(k) for k in range(4)]
        self.kappa = float(kappa)
        self.family = f"conjugated-{base.family}"
        self.mu = base.mu
        self.c = float(self.g(base.c))
        self.b = float(self.g(base.b))
        self.a = float(self.g(base.a))

    def g(self, x):
        return x + self.kappa * self.v(x)

    def ginv(self, y):
        y = np.asarray(y, dtype=float)
        x = y.copy()
        for _ in range(100):
            step = (x + self.kappa * self.v(x) - y) / (1.0 + self.kappa * self.dv[1](x))
            x = x - step
            if np.all(np.abs(step) <= 2e-16 * (1.0 + np.abs(x))):
                break
        return x

    def _offset_pre(self, x0, d):
        """Offset in the base coordinate corresponding to offset ``d`` at ``x0``."""
        x0 = np.asarray(x0, dtype=float)
        d = np.asarray(d, dtype=float)
        dx = d / (1.0 + self.kappa * self.dv[1](x0))
        t = self.v.taylor(x0)
        k = self.kappa
        for _ in range(50):
            resid = dx * (1.0 + k * self.v.dd1(x0, dx, taylor=t)) - d
            step = resid / (1.0 + k * self.v.deriv_at_offset(x0, dx, taylor=t))
            dx = dx - step
            if np.all(np.abs(step) <= 2e-16 * np.abs(dx) + 1e-300):
                break
        return dx

    def _deriv(self, x, order):
        X = self.ginv(x)
        k = self.kappa
        gp = [1.0 + k * self.dv[1](X), k * self.dv[2](X), k * self.dv[3](X)]
        fX = [self.base.deriv(X, j) for j in range(4)]
        Y = fX[0]
        if order == 0:
            return self.g(Y)
        u1 = 1.0 / gp[0]
        u2 = -gp[1] * u1 ** 3
        u3 = -gp[2] * u1 ** 4 + 3.0 * gp[1] ** 2 * u1 ** 5
        F1 = fX[1] * u1
        F2 = fX[2] * u1 ** 2 + fX[1] * u2
        F3 = fX[3] * u1 ** 3 + 3.0 * fX[2] * u1 * u2 + fX[1] * u3
        g1 = 1.0 + k * self.dv[1](Y)
        g2 = k * self.dv[2](Y)
        g3 = k * self.dv[3](Y)
        if order == 1:
            return g1 * F1
        if order == 2:
            return g2 * F1 ** 2 + g1 * F2
        return g3 * F1 ** 3 + 3.0 * g2 * F1 * F2 + g1 * F3

    def dd1(self, x0, d):
        x0 = np.asarray(x0, dtype=float)
        d = np.asarray(d, dtype=float)
        X0 = self.ginv(x0)
        dX = self._offset_pre(X0, d)
        dY = dX * self.base.dd1(X0, dX)
        Y0 = self.base.f(X0)
        dg = dY * (1.0 + self.kappa * self.v.dd1(Y0, dY))
        safe = np.where(d == 0.0, 1.0, d)
        return np.where(d == 0.0, self._deriv(x0, 1), dg / safe)

    def deriv_at_offset(self, x0, d):
        X0 = self.ginv(np.asarray(x0, dtype=float))
        dX = self._offset_pre(X0, d)
        X = X0 + dX
        Y = self.base.f(X)
        return (1.0 + self.kappa * self.dv[1](Y)) * self.base.deriv_at_offset(X0, dX) / (
            1.0 + self.kappa * self.dv[1](X))

    def fold_inverse(self, xi2: ArrayLike, branch: int) -> np.ndarray:
        # offsets pulled through g^-1, the base fold, and g again
        xi2 = np.maximum(np.asarray(xi2, dtype=float), 0.0)
        xi2_base = -self._offset_pre(self.base.b, -xi2)
        h0 = self.base.fold_inverse(xi2_base, branch)
        return h0 * (1.0 + self.kappa * self.v.dd1(self.base.c, h0))

    def fold_quotient(self, h):
        h = np.asarray(h, dtype=float)
        c0, b0 = self.base.c, self.base.b
        dX = self._offset_pre(np.full(h.shape, c0), h)
        g0 = self.base.fold_quotient(dX)
        dY = -dX ** 2 * g0
        ratio = np.where(h == 0.0, 1.0 / (1.0 + self.kappa * self.dv[1](c0)), dX / np.where(h == 0, 1, h))
        return g0 * ratio ** 2 * (1.0 + self.kappa * self.v.dd1(np.full(h.shape, b0), dY))

    def fingerprint(self) -> dict:
        return {"class": "conjugated", "base": self.base.fingerprint(), "v": self.v.tolist(),
                "kappa": self.kappa}


# ---------------------------------------------------------------------------
# operations

def eval_map(m: MapSpec, x: ArrayLike, order: int = 0) -> ArrayLike:
    """``f``, ``f'``, ``f''`` or ``f'''`` at ``x``."""
    return m.deriv(x, order)


def critical_data(family: str | MapSpec = "logistic", mu: float | None = None, *,
                  coeffs: Sequence[float] | None = None, grid: int = 4001) -> MapSpec:
    """Build (or take) a map and verify the unimodal structure it must have.

    Checks ``f'(c)=0``, ``f''(c)<0``, ``a<c<b``, ``a<fa``, invariance of
    ``[a,b]`` and the sign pattern of ``f'`` on a grid.
    """
    if isinstance(family, MapSpec):
        m = family
    elif family == "logistic":
        if mu is None:
            raise HypothesisError("missing-parameter", "logistic family needs mu")
        m = logistic(mu)
    elif family == "polynomial":
        if coeffs is None:
            raise HypothesisError("missing-parameter", "polynomial family needs coeffs")
        m = PolynomialMap(coeffs, family="polynomial", mu=mu)
    else:
        raise HypothesisError("unknown-family", f"unknown family {family!r}")

    c, b, a = m.c, m.b, m.a
    if abs(float(m.deriv(c, 1))) > 1e-12 or not float(m.deriv(c, 2)) < 0.0:
        raise HypothesisError("reject-not-unimodal", "c is not a quadratic maximum",
                              hypothesis="f'(c)=0, f''(c)<0")
    if not (a < c < b):
        raise HypothesisError("reject-degenerate", f"need a<c<b, got a={a!r}, c={c!r}, b={b!r}",
                              hypothesis="a<c<b")
    if not a < m.fa:
        raise HypothesisError("reject-degenerate", f"a={a!r} is not below fa={m.fa!r}",
                              hypothesis="a<fa")
    xs = np.linspace(a, b, grid)
    fx = m.f(xs)
    if fx.min() < a - 1e-12 or fx.max() > b + 1e-12:
        raise HypothesisError("reject-degenerate", "f does not map [a,b] into itself",
                              hypothesis="f[a,b] in [a,b]")
    dfx = m.deriv(xs, 1)
    away = np.abs(xs - c) > 1e-9 * (b - a)
    if np.any((dfx <= 0) & (xs < c) & away) or np.any((dfx >= 0) & (xs > c) & away):
        raise HypothesisError("reject-not-unimodal", "f' changes sign away from c",
                              hypothesis="single critical point")
    return m


@dataclass(frozen=True)
class Orbit:
    x0: float
    n: int
    points: np.ndarray
    escaped: bool = False


def iterate_orbit(m: MapSpec, x0: float, n: int, *, tol: float = 1e-12) -> Orbit:
    """Forward orbit ``x0, f x0, ..., f^n x0`` by plain evaluation."""
    lo, hi = min(m.a, m.c), m.b
    if not (lo - tol <= x0 <= hi + tol):
        raise HypothesisError("escape-detected", f"start point {x0!r} outside [a,b]")
    pts = np.empty(n + 1)
    pts[0] = x0
    x = float(x0)
    for k in range(1, n + 1):
        x = float(m.f(x))
        pts[k] = x
    if np.any(pts < lo - tol) or np.any(pts > hi + tol):
        raise NumericalError("escape-detected", "orbit left [a,b]")
    return Orbit(float(x0), n, pts)


def periodic_multiplier(m: MapSpec, z: float, p: int) -> float:
    out, x = 1.0, z
    for _ in range(p):
        out *= float(m.deriv(x, 1))
        x = float(m.f(x))
    return out


def polish_periodic(m: MapSpec, z: float, p: int, iters: int = 50) -> float:
    """Newton polish of a period-``p`` point starting from ``z``."""
    for _ in range(iters):
        x, der = z, 1.0
        for _ in range(p):
            der *= float(m.deriv(x, 1))
            x = float(m.f(x))
        step = (x - z) / (der - 1.0)
        z = z - step
        if abs(step) <= 1e-17:
            break
    return z


@dataclass(frozen=True)
class CriticalOrbit:
    """Points ``x_n = f^n b`` with exact periodic continuation after landing.

    ``landing`` is the first index that lies on a periodic cycle of length
    ``period`` (``-1`` if none was detected).  After landing, points repeat the
    polished cycle so the orbit does not drift off the repelling orbit.
    """

    points: np.ndarray
    landing: int = -1
    period: int = 0

    def __len__(self) -> int:
        return self.points.size


def critical_orbit(m: MapSpec, n: int, *, snap_tol: float = 1e-9, max_period: int = 8) -> CriticalOrbit:
    pts = [float(m.b)]
    while len(pts) <= n:
        x = pts[-1]
        for p in range(1, max_period + 1):
            y = x
            for _ in range(p):
                y = float(m.f(y))
            if abs(y - x) < snap_tol:
                z = polish_periodic(m, x, p)
                if abs(z - x) > 10 * snap_tol:
                    continue
                cyc = [z]
                for _ in range(p - 1):
                    cyc.append(float(m.f(cyc[-1])))
                k0 = len(pts) - 1
                pts[-1] = z
                while len(pts) <= n:
                    pts.append(cyc[(len(pts) - k0) % p])
                return CriticalOrbit(np.array(pts[: n + 1]), k0, p)
        pts.append(float(m.f(x)))
    return CriticalOrbit(np.array(pts[: n + 1]))


def _fixed_point_right(m: MapSpec) -> float:
    """The fixed point in ``(c, b)`` by bisection on ``f(x) - x``."""
    lo, hi = m.c, m.b
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if float(m.f(mid)) - mid > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _crit_iterate(m: MapSpec, k: int) -> float:
    x = m.c
    for _ in range(k):
        x = float(m.f(x))
    return x


def misiurewicz_objective(m: MapSpec, preperiod: int, period: int) -> float:
    if period == 1:
        return _crit_iterate(m, preperiod) - _fixed_point_right(m)
    return _crit_iterate(m, preperiod + period) - _crit_iterate(m, preperiod)


def _family_factory(family) -> Callable[[float], MapSpec]:
    if callable(family):
        return family
    if family == "logistic":
        return logistic
    raise HypothesisError("unknown-family", f"unknown family {family!r}")


def find_misiurewicz_parameter(family="logistic", preperiod: int = 3, period: int = 1,
                               bracket: tuple[float, float] = (3.6, 3.7), *,
                               width: float = 1e-13, fd_step: float = 1e-7) -> float:
    """Parameter at which ``f^m(c)`` is periodic with period ``p``.

    Bisection of the landing objective to ``width`` then Newton polish with a
    finite-difference slope.  The landed cycle must be repelling.
    """
    if preperiod < 2:
        raise HypothesisError("bad-combinatorics", "preperiod must be at least 2")
    make = _family_factory(family)
    g = lambda mu: misiurewicz_objective(make(mu), preperiod, period)
    lo, hi = map(float, bracket)
    glo, ghi = g(lo), g(hi)
    if glo == 0.0:
        return lo
    if ghi == 0.0:
        return hi
    if np.sign(glo) == np.sign(ghi):
        raise HypothesisError("no-root-in-bracket", f"objective has equal signs on [{lo}, {hi}]")
    while hi - lo > width:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        gm = g(mid)
        if gm == 0.0:
            lo = hi = mid
            break
        if np.sign(gm) == np.sign(glo):
            lo, glo = mid, gm
        else:
            hi = mid
    mu = 0.5 * (lo + hi)
    for _ in range(5):
        slope = (g(mu + fd_step) - g(mu - fd_step)) / (2 * fd_step)
        if slope == 0.0:
            break
        cand = mu - g(mu) / slope
        if abs(g(cand)) < abs(g(mu)):
            mu = cand
        else:
            break
    report = landing_report(make(mu), preperiod, period)
    if report["residual"] > 1e-13:
        raise NumericalError("residual-too-large", f"landing residual {report['residual']:.3e}")
    if abs(report["multiplier"]) <= 1.0:
        raise HypothesisError("landed-orbit-attracting", "landed cycle is not repelling",
                              hypothesis="critical orbit lands on a hyperbolic set")
    return mu


def landing_report(m: MapSpec, preperiod: int, period: int) -> dict:
    """Residual ``|f^{m+p}c - f^m c|`` and the multiplier of the landed cycle."""
    z = _crit_iterate(m, preperiod)
    zp = _crit_iterate(m, preperiod + period)
    return {"landing_point": z, "residual": abs(zp - z),
            "multiplier": periodic_multiplier(m, z, period)}


def itinerary(m: MapSpec, x0: float, n: int) -> tuple[int, ...]:
    """Left/right symbols (``-1``/``+1``) of ``x0, ..., f^{n-1} x0``."""
    out, x = [], float(x0)
    for _ in range(n):
        out.append(-1 if x < m.c else 1)
        x = float(m.f(x))
    return tuple(out)
