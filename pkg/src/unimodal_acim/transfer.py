"""Transfer operator on background-plus-spikes densities and the a.c.i.m. solve.

A density is ``rho = phi + sum_n c_n psi_n``.  The background ``phi`` lives on
a piecewise Chebyshev grid whose breakpoints are ``a``, ``b``, the horseshoe
division points, the endpoints of ``V0`` and the critical-orbit points
(square-root graded there).  The transfer operator acts linearly on the
state vector ``[phi nodes, c_0..c_{N-1}, tail classes]`` and is assembled once
as a dense matrix:

* background pulled back through both inverse branches,
* the newborn spike ``k0 phi(c) psi_0`` split off near ``b``,
* spike coefficients shifted by ``r_n = |f'(x_n)|^(-1/2)``,
* the corrections ``chi_n`` added into the background.

When the critical orbit is eventually periodic the spikes beyond ``N`` are
grouped into ``P`` tail classes with one coefficient each, so the spike
ledger is exact.  Otherwise the spike leaving the ledger is folded into the
background or dropped (its mass is logged).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .chebgrid import PiecewiseGrid
from .errors import HypothesisError, NumericalError
from .horseshoe import Horseshoe
from .spikes import SpikeFamily, chi_eval, spike_eval, spike_integral, spike_weights

log = logging.getLogger(__name__)


def _dedup(values, tol=1e-12):
    out: list[float] = []
    for v in sorted(values):
        if not out or v - out[-1] > tol:
            out.append(v)
    return out


@dataclass
class TransferOptions:
    degree: int = 64
    tol: float = 1e-10
    polish_tol: float = 1e-14
    max_iter: int = 5000
    start: "DensityModel | None" = None
    tail_fold_threshold: float = 1e-12


@dataclass
class TransferReport:
    iterations: int
    residual: float
    gap_estimate: float
    spike_depth: int
    history: list[float] = field(default_factory=list)
    monotone_tail: bool = True
    tail_mode: str = "periodic"
    tail_mass: float = 0.0
    converged: bool = True


class TransferModel:
    """Discretized transfer operator for one map, horseshoe and spike family."""

    def __init__(self, h: Horseshoe, sf: SpikeFamily, degree: int = 64, *,
                 tail_fold_threshold: float = 1e-12):
        m = h.map
        self.map, self.horseshoe, self.sf = m, h, sf
        pts = [m.a, m.b, h.u1, h.u2, h.v1, h.v2, *h.division_points, *sf.x.tolist()]
        bp = _dedup(pts)
        self.bp = np.array(bp)
        self.spike_bp = np.array([int(np.argmin(np.abs(self.bp - x))) for x in sf.x])
        singular = np.zeros(self.bp.size, dtype=bool)
        singular[self.spike_bp] = True
        self.grid = PiecewiseGrid(self.bp, singular, degree)
        g = self.grid
        self.idx_b = self.bp.size - 1
        self.idx_q = int(np.argmin(np.abs(self.bp - m.fa)))
        if abs(self.bp[self.idx_q] - m.fa) > 1e-12:
            raise NumericalError("grid-image", "f(a) is not a breakpoint")
        # images of breakpoints, for accurate preimage offsets
        self.bp_image = np.full(self.bp.size, -1)
        for i, z in enumerate(self.bp):
            fz = float(m.f(z))
            j = int(np.argmin(np.abs(self.bp - fz)))
            if abs(self.bp[j] - fz) < 1e-9:
                self.bp_image[i] = j
        self.N, self.P = sf.N, sf.tail_period
        self.nb = g.n_nodes
        self.n_state = self.nb + self.N + self.P
        k_c, t_c = g.locate(np.array([m.c]))
        self.c_piece = int(k_c[0])
        self.c_row = g.bary_matrix(t_c)[0]
        if sf.tail_period:
            self.tail_mode = "periodic"
        else:
            mass = sf.k0 * sf.t[sf.N] * sf.mean(sf.N)
            self.tail_mode = "fold" if mass > tail_fold_threshold else "drop"
        self.T = self._assemble()
        self.mass_vec = self._mass_vector()

    # -- assembly --------------------------------------------------------
    def _preimages(self, branch: int):
        """Preimage points of all nodes on one branch with accurate offsets."""
        m, g = self.map, self.grid
        y, ref, off = g.node_x, g.node_ref, g.node_off
        x = np.asarray(m.inverse(y, branch), dtype=float)
        dfx = np.abs(np.asarray(m.deriv(x, 1), dtype=float))
        pref = np.full(y.size, -1)
        poff = np.zeros(y.size)
        near_b = ref == self.idx_b
        if np.any(near_b):
            hh = m.fold_inverse(-off[near_b], branch)
            x[near_b] = m.c + hh
            dfx[near_b] = np.abs(m.deriv_at_offset(np.full(hh.shape, m.c), hh))
        for zi, img in enumerate(self.bp_image):
            z = self.bp[zi]
            if img < 0 or (z - m.c) * branch <= 0:
                continue
            sel = (ref == img) & ~near_b
            if not np.any(sel):
                continue
            dz = m.near_inverse(np.full(int(sel.sum()), z), off[sel])
            ok = np.isfinite(dz) & (np.abs(z + dz - x[sel]) < 1e-8)
            idx = np.nonzero(sel)[0][ok]
            x[idx] = z + dz[ok]
            pref[idx] = zi
            poff[idx] = dz[ok]
            dfx[idx] = np.abs(m.deriv_at_offset(np.full(idx.size, z), dz[ok]))
        return x, pref, poff, dfx

    def _node_dist(self, k: int) -> np.ndarray:
        g = self.grid
        j = self.spike_bp[k]
        return np.where(g.node_ref == j, g.node_off, g.node_x - self.sf.x[k])

    def _assemble(self) -> np.ndarray:
        g, sf, m = self.grid, self.sf, self.map
        n = g.D + 1
        nb, N, P = self.nb, self.N, self.P
        T = np.zeros((self.n_state, self.n_state))
        valid_left = g.node_piece >= self.idx_q
        for branch in (-1, 1):
            x, pref, poff, dfx = self._preimages(branch)
            rows = np.arange(nb) if branch == 1 else np.nonzero(valid_left)[0]
            k, t = g.locate(x[rows], pref[rows], poff[rows])
            W = g.bary_matrix(t) / dfx[rows][:, None]
            cols = k[:, None] * n + np.arange(n)[None, :]
            np.add.at(T, (np.repeat(rows, n), cols.ravel()), W.ravel())
        # birth of psi_0 at b
        psi0 = spike_eval(sf, 0, g.node_x, self._node_dist(0))
        ccols = self.c_piece * n + np.arange(n)
        T[:nb, ccols] -= sf.k0 * np.outer(psi0, self.c_row)
        T[nb, ccols] += sf.k0 * self.c_row
        # corrections and shifts
        chi_cache: dict[int, np.ndarray] = {}

        def chi_col(nn: int) -> np.ndarray:
            key = sf.template(nn)
            if key not in chi_cache:
                chi_cache[key] = chi_eval(sf, nn, g.node_x, self._node_dist(sf.template(nn + 1)))
            return chi_cache[key]

        for nn in range(N):
            T[:nb, nb + nn] = chi_col(nn)
            if nn + 1 < N:
                T[nb + nn + 1, nb + nn] = sf.r[nn]
        if P:
            T[nb + N, nb + N - 1] = sf.r[N - 1]
            for j in range(P):
                col = nb + N + j
                T[:nb, col] = chi_col(N + j)
                T[nb + N + (j + 1) % P, col] += sf.r[N + j]
        elif self.tail_mode == "fold":
            T[:nb, nb + N - 1] += sf.r[N - 1] * spike_eval(sf, N, g.node_x, self._node_dist(N))
        return T

    def _mass_vector(self) -> np.ndarray:
        g, sf = self.grid, self.sf
        v = np.zeros(self.n_state)
        wq = g.qw[None, :] * g.qjac                       # (K, Q)
        v[: self.nb] = (wq @ g.Pq).ravel()
        for nn in range(self.N):
            v[self.nb + nn] = sf.mean(nn)
        for j in range(self.P):
            v[self.nb + self.N + j] = sf.mean(self.N + j)
        return v

    # -- helpers ---------------------------------------------------------
    def spike_coefficient_mass_out(self, state: np.ndarray) -> float:
        """Mass carried by the spike leaving the ledger in one application."""
        if self.P or self.N == 0:
            return 0.0
        return abs(self.sf.r[self.N - 1] * state[self.nb + self.N - 1]) * self.sf.mean(self.N)

    def slave_spikes(self, state: np.ndarray) -> np.ndarray:
        """Replace ``c_1..`` by the exact recursion from ``c_0`` and renormalize.

        At a fixed point the recursion holds exactly; iterates only carry it to
        absolute rounding, which is large relative to the tiny deep weights.
        """
        out = state.copy()
        if self.N == 0:
            return out
        sf, nb = self.sf, self.nb
        c0 = out[nb]
        out[nb: nb + self.N] = c0 * sf.t[: self.N]
        if self.P:
            cyc = float(np.prod(sf.r[self.N: self.N + self.P]))
            out[nb + self.N:] = c0 * sf.t[self.N: self.N + self.P] / (1.0 - cyc)
        return _normalize(out, self.mass_vec)

    def phi_at_c(self, state: np.ndarray) -> float:
        n = self.grid.D + 1
        return float(self.c_row @ state[self.c_piece * n:(self.c_piece + 1) * n])

    def uniform_state(self) -> np.ndarray:
        s = np.zeros(self.n_state)
        s[: self.nb] = 1.0 / (self.map.b - self.map.a)
        return s


@dataclass
class DensityModel:
    """Density ``phi + sum c_n psi_n`` on a transfer model's grid."""

    model: TransferModel
    state: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def phi(self) -> np.ndarray:
        g = self.model.grid
        return self.state[: self.model.nb].reshape(g.K, g.D + 1)

    @property
    def c(self) -> np.ndarray:
        mo = self.model
        return self.state[mo.nb: mo.nb + mo.N]

    @property
    def tail(self) -> np.ndarray:
        mo = self.model
        return self.state[mo.nb + mo.N:]

    @property
    def mass(self) -> float:
        return float(self.model.mass_vec @ self.state)

    @property
    def spike_family(self) -> SpikeFamily:
        return spike_weights(self.model.sf, self.phi_c)

    @property
    def phi_c(self) -> float:
        return self.model.phi_at_c(self.state)

    def background(self, x) -> np.ndarray:
        return self.model.grid.evaluate(self.phi, np.asarray(x, dtype=float))

    def spikes(self, x) -> np.ndarray:
        """Singular part at ``x`` (all spikes on the ledger)."""
        mo, sf = self.model, self.model.sf
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        coeffs = list(enumerate(self.c)) + [(mo.N + j, v) for j, v in enumerate(self.tail)]
        for nn, cn in coeffs:
            if cn != 0.0:
                d = x - sf.x[nn]
                out = out + cn * np.where(d == 0, np.inf, spike_eval(sf, nn, x, np.where(d == 0, 1e-300, d)))
        return out

    def rho(self, x) -> np.ndarray:
        return self.background(x) + self.spikes(x)

    def scaled(self, s: float) -> "DensityModel":
        return DensityModel(self.model, s * self.state, dict(self.meta))

    def __add__(self, other: "DensityModel") -> "DensityModel":
        return DensityModel(self.model, self.state + other.state)

    def __rmul__(self, s: float) -> "DensityModel":
        return self.scaled(s)


def density_from_parts(model: TransferModel, phi_values=None, c=None, tail=None) -> DensityModel:
    """Build a density from nodal background values and spike coefficients."""
    s = np.zeros(model.n_state)
    if phi_values is not None:
        s[: model.nb] = np.asarray(phi_values, dtype=float).ravel()
    if c is not None:
        c = np.asarray(c, dtype=float)
        s[model.nb: model.nb + c.size] = c
    if tail is not None:
        s[model.nb + model.N:] = np.asarray(tail, dtype=float)
    return DensityModel(model, s)


def density_from_function(model: TransferModel, fn) -> DensityModel:
    """Background given by sampling ``fn`` at the nodes; no spikes."""
    return density_from_parts(model, np.asarray(fn(model.grid.node_x), dtype=float))


def apply_transfer(d: DensityModel) -> DensityModel:
    mo = d.model
    out = mo.T @ d.state
    lost = mo.spike_coefficient_mass_out(d.state)
    meta = {"tail_mass": lost, "tail_mode": mo.tail_mode}
    if lost:
        log.debug("spike tail mass %.3e (%s)", lost, mo.tail_mode)
    return DensityModel(mo, out, meta)


def observe(d: DensityModel, A) -> float:
    """``<rho, A>``: quadrature of the background plus exact spike integrals."""
    mo, sf = d.model, d.model.sf
    total = float(mo.grid.integrate(d.phi, A))
    for nn, cn in enumerate(d.c):
        if cn != 0.0:
            total += cn * spike_integral(sf, nn, A)
    for j, tj in enumerate(d.tail):
        if tj != 0.0:
            total += tj * spike_integral(sf, mo.N + j, A)
    return total


def _normalize(state: np.ndarray, mass_vec: np.ndarray) -> np.ndarray:
    m = float(mass_vec @ state)
    if not np.isfinite(m) or m == 0.0:
        raise NumericalError("zero-mass", "density lost its mass during iteration")
    return state / m


def solve_acim(h: Horseshoe, sf: SpikeFamily, opts: TransferOptions | None = None, *,
               model: TransferModel | None = None) -> tuple[DensityModel, TransferReport]:
    """Power iteration for the normalized fixed point of the transfer operator."""
    opts = opts or TransferOptions()
    if h.mixing is not None and h.mixing.verdict != "mixing":
        raise HypothesisError("not-mixing", "the horseshoe is not mixing", hypothesis="mixing horseshoe")
    if h.separation is not None and not h.separation > 0:
        raise HypothesisError("separation-zero", "critical orbit not separated from the horseshoe boundary")
    mo = model or TransferModel(h, sf, opts.degree, tail_fold_threshold=opts.tail_fold_threshold)
    state = opts.start.state.copy() if opts.start is not None else mo.uniform_state()
    state = _normalize(state, mo.mass_vec)
    hist: list[float] = []
    tail_mass = 0.0
    converged = False
    best = np.inf
    stall = 0
    it = 0
    for it in range(1, opts.max_iter + 1):
        tail_mass = max(tail_mass, mo.spike_coefficient_mass_out(state))
        new = _normalize(mo.T @ state, mo.mass_vec)
        res = float(np.max(np.abs(new - state)))
        hist.append(res)
        state = new
        if res <= opts.tol:
            converged = True
        if converged:
            if res <= opts.polish_tol:
                break
            if res < 0.999 * best:
                best, stall = res, 0
            else:
                stall += 1
                if stall >= 10:
                    break
    if not converged:
        raise NumericalError("no-convergence", f"residual {hist[-1]:.3e} after {opts.max_iter} iterations")
    state = mo.slave_spikes(state)
    tailh = np.array(hist[-6:])
    monotone = bool(np.all(np.diff(tailh) <= 0)) if tailh.size > 1 else True
    gap = _ratio_estimate(hist)
    rep = TransferReport(it, hist[-1], gap, mo.N, hist, monotone, mo.tail_mode, tail_mass, True)
    d = DensityModel(mo, state, {"report": rep})
    return d, rep


def _ratio_estimate(hist: list[float]) -> float:
    """Geometric contraction of residuals above the rounding floor."""
    hv = np.array(hist)
    sel = np.nonzero(hv > 1e-12)[0]
    if sel.size < 6:
        return float("nan")
    seg = hv[sel[len(sel) // 3]: sel[-1] + 1]
    if seg.size < 3:
        return float("nan")
    slope = np.polyfit(np.arange(seg.size), np.log(seg), 1)[0]
    return float(np.exp(slope))


@dataclass
class BackgroundSolve:
    density: DensityModel
    terms: int
    phi_c: float
    consistency: float
    increments: list[float]


def solve_background_direct(h: Horseshoe, sf: SpikeFamily, phic_guess: float = 1.0, *,
                            model: TransferModel | None = None, degree: int = 64,
                            tol: float = 1e-12, max_terms: int = 20000) -> BackgroundSolve:
    """Neumann solve ``gamma = L_* gamma + eta`` with spikes slaved to ``phi(c)``.

    ``L_*`` is the background block of the transfer matrix (both branches
    and the birth subtraction); ``eta`` collects ``C_n chi_n`` with
    ``C_n = k0 phi(c) t_n`` and the tail classes summed geometrically.
    The scalar ``phi(c)`` is fixed by the mass normalization.
    """
    mo = model or TransferModel(h, sf, degree)
    nb, N, P = mo.nb, mo.N, mo.P
    B = mo.T[:nb, :nb]
    Xi = mo.T[:nb, nb:]

    def coeffs(phic: float) -> np.ndarray:
        C = phic * sf.k0 * sf.t
        out = np.zeros(N + P)
        out[:N] = C[:N]
        if P:
            cyc = float(np.prod(sf.r[N:N + P]))
            out[N:] = C[N:N + P] / (1.0 - cyc)
        return out

    def neumann(eta: np.ndarray):
        gam = eta.copy()
        term = eta.copy()
        incs = []
        growth = 0
        for k in range(1, max_terms + 1):
            term = B @ term
            inc = float(np.max(np.abs(term)))
            incs.append(inc)
            gam += term
            if inc < tol:
                return gam, k, incs
            if len(incs) > 1 and inc >= incs[-2]:
                growth += 1
                if growth >= 20:
                    break
            else:
                growth = 0
        raise NumericalError("neumann-divergence", f"Neumann increments stalled at {incs[-1]:.3e}")

    # gamma and the spike weights are linear in phi(c), so after mass
    # normalization the scalar fixed point is reached in one step; the
    # remaining defect |gamma(c) - phi(c)| measures the discretization.
    if phic_guess == 0.0:
        gam, k, incs = neumann(np.zeros(nb))
        return BackgroundSolve(DensityModel(mo, np.zeros(mo.n_state)), k, 0.0, 0.0, incs)
    G1, k, incs = neumann(Xi @ coeffs(1.0))
    state = _normalize(np.concatenate([G1, coeffs(1.0)]), mo.mass_vec)
    phic = float(mo.mass_vec @ np.concatenate([G1, coeffs(1.0)])) ** -1
    consistency = abs(mo.phi_at_c(state) - phic)
    return BackgroundSolve(DensityModel(mo, state), k, phic, consistency, incs)


def spectral_gap_estimate(h: Horseshoe, sf: SpikeFamily, probes: int = 5, *,
                          density: DensityModel | None = None, n_iter: int = 200,
                          seed: int = 0, probe_states: list | None = None) -> dict:
    """Decay rate of ``||L^k d0 - mass(d0) rho||`` over random probe densities."""
    if density is None:
        density, _ = solve_acim(h, sf)
    mo = density.model
    rho = density.state
    rng = np.random.default_rng(seed)
    x = mo.grid.node_x
    span = mo.map.b - mo.map.a
    states = list(probe_states or [])
    while len(states) < probes:
        coef = rng.uniform(-1.0, 1.0, 4)
        u = (x - mo.map.a) / span
        bg = 1.0 + 0.5 * sum(cf * np.cos((k + 1) * np.pi * u) for k, cf in enumerate(coef))
        s = np.zeros(mo.n_state)
        s[: mo.nb] = bg
        states.append(s)
    rates, first = [], []
    for s0 in states:
        s0 = np.asarray(s0, dtype=float)
        m0 = float(mo.mass_vec @ s0)
        st = s0.copy()
        errs = [float(np.max(np.abs(st - m0 * rho)))]
        for _ in range(n_iter):
            st = mo.T @ st
            errs.append(float(np.max(np.abs(st - m0 * rho))))
            if errs[-1] < 1e-13 * max(1.0, abs(m0)):
                break
        first.append(errs[0])
        e = np.array(errs)
        sel = np.nonzero(e > 1e-11 * max(1.0, abs(m0)))[0]
        if sel.size < 8:
            rates.append(0.0)
            continue
        seg = e[sel[sel.size // 4]: sel[-1] + 1]
        rates.append(float(np.exp(np.polyfit(np.arange(seg.size), np.log(seg), 1)[0])))
    rates_a = np.array(rates)
    return {"estimate": float(np.median(rates_a)), "rates": rates_a.tolist(), "initial_error": first}


def dense_spectrum(model: TransferModel, k: int = 6) -> np.ndarray:
    """Largest eigenvalues of the assembled matrix by modulus (diagnostic)."""
    ev = np.linalg.eigvals(model.T)
    return ev[np.argsort(-np.abs(ev))][:k]


def min_on_grid(d: DensityModel, n: int = 4000) -> float:
    """Minimum of the background plus spikes on a sample grid avoiding spike points."""
    m = d.model.map
    x = np.linspace(m.a, m.b, n + 2)[1:-1]
    x = x[np.min(np.abs(x[:, None] - d.model.sf.x[None, :]), axis=1) > 1e-9]
    return float(np.min(d.rho(x)))


def jumps_at(d: DensityModel, points) -> np.ndarray:
    """``|phi(z+) - phi(z-)|`` at interior breakpoints ``points``."""
    g = d.model.grid
    left, right = g.endpoint_values(d.phi)
    out = []
    for z in points:
        j = int(np.argmin(np.abs(g.bp - z)))
        if j == 0 or j == g.K or abs(g.bp[j] - z) > 1e-12:
            raise ValueError(f"{z!r} is not an interior breakpoint")
        out.append(abs(left[j] - right[j - 1]))
    return np.array(out)


def endpoint_values(d: DensityModel) -> tuple[float, float]:
    """``phi(a)`` and ``phi(b)``."""
    left, right = d.model.grid.endpoint_values(d.phi)
    return float(left[0]), float(right[-1])


def cdf(d: DensityModel, x) -> np.ndarray:
    """``int_a^x rho`` with the spike parts integrated in closed form."""
    mo, g, sf = d.model, d.model.grid, d.model.sf
    x = np.atleast_1d(np.asarray(x, dtype=float))
    k, t = g.locate(x)
    phi = d.phi
    # whole pieces to the left, then Gauss-Legendre on [-1, t] inside the piece
    wq = g.qw[None, :] * g.qjac
    piece_mass = np.sum(wq * (phi @ g.Pq.T), axis=1)
    before = np.concatenate([[0.0], np.cumsum(piece_mass)])
    out = before[k].copy()
    for i, (ki, ti) in enumerate(zip(k, t)):
        if ti <= -1.0:
            continue
        tt = -1.0 + (ti + 1.0) * (g.qt + 1.0) / 2.0
        vals = g.bary_matrix(tt) @ phi[ki]
        out[i] += (ti + 1.0) / 2.0 * float(np.sum(g.qw * vals * g.dxdt(ki, tt)))
    coeffs = list(enumerate(d.c)) + [(mo.N + j, v) for j, v in enumerate(d.tail)]
    for n, cn in coeffs:
        if cn == 0.0:
            continue
        xn, sn, L = sf.x[n], sf.s[n], sf.L[n]
        full = 4.0 / 3.0 * np.sqrt(L)
        # delta measured from x_n into the support
        D = np.clip(sn * (x - xn), 0.0, L)
        part = 2.0 * np.sqrt(D) - 2.0 / 3.0 * D ** 1.5 / L
        out += cn * (part if sn > 0 else full - part)
    return out
