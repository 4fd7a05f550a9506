"""Piecewise Chebyshev collocation with square-root graded node maps.

Each piece ``[l, r]`` carries ``D+1`` first-kind Chebyshev nodes in a
reference variable ``t`` in ``[-1, 1]``.  An endpoint flagged singular is
approached through a quadratic map so that functions of the form
``g0 + g1*sqrt(x - l) + ...`` become analytic in ``t``:

* ``lin``:  ``x = l + L (1+t)/2``
* ``sl``:   ``x = l + L ((1+t)/2)^2``
* ``sr``:   ``x = r - L ((1-t)/2)^2``
* ``sb``:   ``x = l + L sin^2(pi (1+t)/4)``

Points can be passed with a reference breakpoint and an accurate offset
from it; ``t`` is then computed from the offset.
"""
from __future__ import annotations

import numpy as np

from .errors import NumericalError


class PiecewiseGrid:
    def __init__(self, breakpoints, singular, degree: int = 64, quad_extra: int = 32):
        self.bp = np.asarray(breakpoints, dtype=float)
        self.singular = np.asarray(singular, dtype=bool)
        self.K = self.bp.size - 1
        self.D = int(degree)
        n = self.D + 1
        theta = (2 * np.arange(n) + 1) * np.pi / (2 * n)
        self.t = -np.cos(theta)
        self.bw = (-1.0) ** np.arange(n) * np.sin(theta)
        self.kind = []
        for k in range(self.K):
            sl, sr = self.singular[k], self.singular[k + 1]
            self.kind.append("sb" if sl and sr else "sl" if sl else "sr" if sr else "lin")
        self.L = np.diff(self.bp)
        if np.any(self.L <= 0):
            raise NumericalError("degenerate-piece", "breakpoints must be strictly increasing")
        # node coordinates with accurate offsets from the nearer breakpoint
        xs, refs, offs = [], [], []
        for k in range(self.K):
            off_l, off_r = self.offsets_of_t(k, self.t)
            left = self.t < 0
            refs.append(np.where(left, k, k + 1))
            offs.append(np.where(left, off_l, off_r))
            xs.append(np.where(left, self.bp[k] + off_l, self.bp[k + 1] + off_r))
        self.node_x = np.concatenate(xs)
        self.node_ref = np.concatenate(refs)
        self.node_off = np.concatenate(offs)
        self.node_piece = np.repeat(np.arange(self.K), n)
        # quadrature in t
        g, w = np.polynomial.legendre.leggauss(n + quad_extra)
        self.qt, self.qw = g, w
        self.Pq = self.bary_matrix(g)
        self.qx = np.empty((self.K, g.size))
        self.qjac = np.empty((self.K, g.size))
        for k in range(self.K):
            off_l, off_r = self.offsets_of_t(k, g)
            self.qx[k] = np.where(g < 0, self.bp[k] + off_l, self.bp[k + 1] + off_r)
            self.qjac[k] = self.dxdt(k, g)

    @property
    def n_nodes(self) -> int:
        return self.K * (self.D + 1)

    # -- maps between t and x -------------------------------------------
    def offsets_of_t(self, k: int, t):
        """``(x - l, x - r)`` for reference coordinates ``t`` on piece ``k``."""
        L, kind = self.L[k], self.kind[k]
        t = np.asarray(t, dtype=float)
        if kind == "lin":
            return L * (1 + t) / 2, -L * (1 - t) / 2
        if kind == "sl":
            ol = L * ((1 + t) / 2) ** 2
            return ol, -L * (1 - t) * (3 + t) / 4
        if kind == "sr":
            orr = -L * ((1 - t) / 2) ** 2
            return L * (1 + t) * (3 - t) / 4, orr
        ang = np.pi * (1 + t) / 4
        return L * np.sin(ang) ** 2, -L * np.cos(ang) ** 2

    def dxdt(self, k: int, t):
        L, kind = self.L[k], self.kind[k]
        if kind == "lin":
            return np.full(np.shape(t), L / 2)
        if kind == "sl":
            return L * (1 + t) / 2
        if kind == "sr":
            return L * (1 - t) / 2
        return L * np.pi / 4 * np.sin(np.pi * (1 + t) / 2)

    def t_of_offsets(self, k, off_l, off_r):
        """Reference coordinate from offsets to the two ends (vectorized over k)."""
        k = np.asarray(k)
        L = self.L[k]
        kinds = np.array(self.kind, dtype=object)[k] if np.ndim(k) else self.kind[int(k)]
        off_l = np.asarray(off_l, dtype=float)
        off_r = np.asarray(off_r, dtype=float)
        use_l = np.abs(off_l) <= np.abs(off_r)
        ul = np.clip(off_l / L, 0.0, 1.0)
        ur = np.clip(-off_r / L, 0.0, 1.0)
        t_lin = np.where(use_l, 2 * ul - 1, 1 - 2 * ur)
        t_sl = np.where(use_l, 2 * np.sqrt(ul) - 1, 2 * np.sqrt(np.clip(1 - ur, 0, 1)) - 1)
        t_sr = np.where(use_l, 1 - 2 * np.sqrt(np.clip(1 - ul, 0, 1)), 1 - 2 * np.sqrt(ur))
        t_sb = np.where(use_l, 4 / np.pi * np.arcsin(np.sqrt(ul)) - 1, 1 - 4 / np.pi * np.arcsin(np.sqrt(ur)))
        return np.select([kinds == "lin", kinds == "sl", kinds == "sr"], [t_lin, t_sl, t_sr], t_sb) \
            if np.ndim(k) else {"lin": t_lin, "sl": t_sl, "sr": t_sr, "sb": t_sb}[kinds]

    def locate(self, x, ref=None, off=None):
        """Piece index and reference coordinate of points, using offsets when given."""
        x = np.asarray(x, dtype=float)
        if ref is None:
            ref = np.full(x.shape, -1)
            off = np.zeros(x.shape)
        ref = np.asarray(ref)
        off = np.asarray(off, dtype=float)
        lo, hi = self.bp[0], self.bp[-1]
        if np.any((x < lo - 1e-12) | (x > hi + 1e-12)):
            raise NumericalError("resample-overflow", "evaluation outside the grid domain")
        plain = ref < 0
        k = np.clip(np.searchsorted(self.bp, x, side="right") - 1, 0, self.K - 1)
        k = np.where(plain, k, np.where(off > 0, ref, ref - 1))
        k = np.clip(k, 0, self.K - 1)
        off_l = np.where(plain | (ref != k), x - self.bp[k], off)
        off_r = np.where(plain | (ref != k + 1), x - self.bp[k + 1], off)
        return k, self.t_of_offsets(k, off_l, off_r)

    # -- interpolation --------------------------------------------------
    def bary_matrix(self, t) -> np.ndarray:
        """Rows of barycentric Lagrange weights at reference points ``t``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        diff = t[:, None] - self.t[None, :]
        exact = diff == 0.0
        diff = np.where(exact, 1.0, diff)
        q = self.bw[None, :] / diff
        W = q / q.sum(axis=1, keepdims=True)
        hit = exact.any(axis=1)
        if hit.any():
            W[hit] = exact[hit].astype(float)
        return W

    def evaluate(self, values: np.ndarray, x, ref=None, off=None) -> np.ndarray:
        """Interpolate nodal ``values`` (shape ``(K, D+1)``) at points."""
        values = np.asarray(values).reshape(self.K, self.D + 1)
        k, t = self.locate(x, ref, off)
        W = self.bary_matrix(np.atleast_1d(t))
        out = np.einsum("ij,ij->i", W, values[np.atleast_1d(k)])
        return out.reshape(np.shape(x))

    def endpoint_values(self, values) -> tuple[np.ndarray, np.ndarray]:
        """Interpolant values at ``t = -1`` and ``t = +1`` of every piece."""
        values = np.asarray(values).reshape(self.K, self.D + 1)
        W = self.bary_matrix(np.array([-1.0, 1.0]))
        ends = values @ W.T
        return ends[:, 0], ends[:, 1]

    def integrate(self, values, A=None) -> float:
        """``int phi A dx`` by Gauss-Legendre in every piece."""
        values = np.asarray(values).reshape(self.K, self.D + 1)
        vq = values @ self.Pq.T
        wq = self.qw[None, :] * self.qjac
        if A is not None:
            vq = vq * np.asarray(A(self.qx), dtype=vq.dtype if np.iscomplexobj(vq) else float)
        return np.sum(wq * vq)

    def diff_matrix(self) -> np.ndarray:
        """Spectral differentiation matrix in ``t`` for the nodal basis."""
        n = self.D + 1
        t, w = self.t, self.bw
        Dm = np.zeros((n, n))
        for i in range(n):
            for j in range(n):
                if i != j:
                    Dm[i, j] = (w[j] / w[i]) / (t[i] - t[j])
            Dm[i, i] = -Dm[i].sum()
        return Dm
