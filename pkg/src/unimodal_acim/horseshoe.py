"""The hyperbolic horseshoe H(u1) and its combinatorial diagnostics.

``H(u1)`` is the set of points whose forward orbit never drops below a
repelling periodic point ``u1``.  This module finds admissible ``u1``, builds
the companion points ``u2, v1, v2``, pulls the central gap ``(v1, v2)`` back
through the two monotone branches, forms the Markov partition and fits the
expansion and gap-decay constants.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from itertools import product

import numpy as np

from .analytic_map import MapSpec, critical_orbit, periodic_multiplier
from .errors import HypothesisError, NumericalError


@dataclass(frozen=True)
class PeriodicCandidate:
    u1: float
    N: int
    multiplier: float
    orbit: tuple[float, ...]


@dataclass(frozen=True)
class RejectedOrbit:
    point: float
    period: int
    reason: str


@dataclass(frozen=True)
class GapInterval:
    order: int
    lo: float
    hi: float
    parent: int | None = None
    branch: str | None = None

    @property
    def length(self) -> float:
        return self.hi - self.lo


@dataclass
class GapTree:
    """Gap intervals stored level by level as flat arrays.

    ``lo[n]``, ``hi[n]`` hold the order-``n`` gaps, ``parent[n]`` the index of
    the image gap at level ``n-1`` and ``branch[n]`` is 0 (left) or 1 (right).
    Totals per order are kept to ``n_max`` even when only ``stored_depth``
    levels are retained.
    """

    lo: list[np.ndarray]
    hi: list[np.ndarray]
    parent: list[np.ndarray]
    branch: list[np.ndarray]
    order_lengths: np.ndarray
    order_counts: np.ndarray
    outer: dict[int, tuple[float, float]]
    n_max: int

    @property
    def stored_depth(self) -> int:
        return len(self.lo) - 1

    def count(self, n: int) -> int:
        return int(self.order_counts[n])

    def gaps(self, n: int) -> list[GapInterval]:
        if n in self.outer:
            lo, hi = self.outer[n]
            return [GapInterval(n, lo, hi)]
        lo, hi, par, br = self.lo[n], self.hi[n], self.parent[n], self.branch[n]
        return [GapInterval(n, float(lo[i]), float(hi[i]), None if n == 0 else int(par[i]),
                            None if n == 0 else ("left", "right")[int(br[i])]) for i in range(lo.size)]

    def all_up_to(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        n = min(n, self.stored_depth)
        return np.concatenate(self.lo[: n + 1]), np.concatenate(self.hi[: n + 1])

    def truncated(self, depth: int) -> "GapTree":
        d = min(depth, self.stored_depth) + 1
        return replace(self, lo=self.lo[:d], hi=self.hi[:d], parent=self.parent[:d], branch=self.branch[:d])


@dataclass(frozen=True)
class HyperbolicityFit:
    A: float
    alpha: float
    envelope: np.ndarray
    residuals: np.ndarray
    samples: np.ndarray


@dataclass(frozen=True)
class DecayFit:
    B: float
    beta: float
    sums: np.ndarray
    residuals: np.ndarray


@dataclass(frozen=True)
class MixingVerdict:
    verdict: str
    method: str
    witness: int | None
    component: tuple[int, ...]


@dataclass
class Horseshoe:
    map: MapSpec
    u1: float
    u2: float
    v1: float
    v2: float
    N: int
    division_points: tuple[float, ...]
    U: tuple[tuple[float, float], ...] = ()
    adjacency: np.ndarray | None = None
    gaps: GapTree | None = None
    hyperbolicity: HyperbolicityFit | None = None
    decay: DecayFit | None = None
    separation: float | None = None
    mixing: MixingVerdict | None = None
    meta: dict = field(default_factory=dict)

    @property
    def special_points(self) -> tuple[float, float, float, float]:
        return (self.u1, self.u2, self.v1, self.v2)

    def in_region(self, x, tol: float = 1e-12):
        x = np.asarray(x)
        return ((x >= self.u1 - tol) & (x <= self.v1 + tol)) | ((x >= self.v2 - tol) & (x <= self.u2 + tol))

    @property
    def alpha(self) -> float:
        return self.hyperbolicity.alpha if self.hyperbolicity is not None else float("nan")


# ---------------------------------------------------------------------------
# periodic points

def _branch_domain(m: MapSpec, s: int) -> tuple[float, float]:
    return (m.a, m.c) if s < 0 else (m.c, m.b)


def _branch_image(m: MapSpec, s: int) -> tuple[float, float]:
    return (m.fa, m.b) if s < 0 else (m.a, m.b)


def _pull(m: MapSpec, s: int, lo: float, hi: float) -> tuple[float, float] | None:
    ilo, ihi = _branch_image(m, s)
    lo, hi = max(lo, ilo), min(hi, ihi)
    if lo >= hi:
        return None
    if s < 0:
        return float(m.inverse(lo, -1)), float(m.inverse(hi, -1))
    return float(m.inverse(hi, 1)), float(m.inverse(lo, 1))


def cylinder(m: MapSpec, word: tuple[int, ...]) -> tuple[float, float] | None:
    """Closed interval of points whose first ``len(word)`` branch symbols are ``word``."""
    J = _branch_domain(m, word[-1])
    for s in reversed(word[:-1]):
        pulled = _pull(m, s, *J)
        if pulled is None:
            return None
        J = pulled
    return J


def _iterate(m: MapSpec, x: float, p: int) -> float:
    for _ in range(p):
        x = float(m.f(x))
    return x


def _primitive(word: tuple[int, ...]) -> bool:
    p = len(word)
    return all(word != word[k:] + word[:k] for k in range(1, p) if p % k == 0)


def periodic_points(m: MapSpec, period: int) -> list[float]:
    """All points of exact period ``period``, by bisection on each itinerary cylinder."""
    out = []
    for word in product((-1, 1), repeat=period):
        if not _primitive(word):
            continue
        J = cylinder(m, word)
        if J is None:
            continue
        lo, hi = J
        glo, ghi = _iterate(m, lo, period) - lo, _iterate(m, hi, period) - hi
        if glo == 0.0:
            out.append(lo)
            continue
        if ghi == 0.0:
            out.append(hi)
            continue
        if np.sign(glo) == np.sign(ghi):
            continue
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if mid in (lo, hi):
                break
            gm = _iterate(m, mid, period) - mid
            if np.sign(gm) == np.sign(glo):
                lo, glo = mid, gm
            else:
                hi = mid
        out.append(0.5 * (lo + hi))
    return sorted(out)


def find_periodic_u1(m: MapSpec, period_bound: int = 6, *, with_rejections: bool = False):
    """Admissible ``u1`` candidates of period ``N+1 <= period_bound``.

    A candidate is the minimum of a repelling periodic orbit with positive
    multiplier, ``N >= 2`` and ``a < u1 < min(c, fa)``.
    """
    accepted: list[PeriodicCandidate] = []
    rejected: list[RejectedOrbit] = []
    for p in range(1, period_bound + 1):
        pts = periodic_points(m, p)
        seen: list[float] = []
        for x in pts:
            orbit = [x]
            for _ in range(p - 1):
                orbit.append(float(m.f(orbit[-1])))
            u = min(orbit)
            if any(abs(u - s) < 1e-9 for s in seen):
                continue
            seen.append(u)
            mult = periodic_multiplier(m, u, p)
            if mult <= 0:
                reason = "negative-multiplier"
            elif p < 3:
                reason = "period-too-small"
            elif not u > m.a:
                reason = "u1-not-above-a"
            elif not u < m.c:
                reason = "u1-not-below-c"
            elif not u < m.fa:
                reason = "u1-not-below-fa"
            else:
                idx = orbit.index(min(orbit))
                cyc = tuple(orbit[idx:] + orbit[:idx])
                accepted.append(PeriodicCandidate(u, p - 1, mult, cyc))
                continue
            rejected.append(RejectedOrbit(u, p, reason))
    accepted.sort(key=lambda c: (c.N, c.u1))
    return (accepted, rejected) if with_rejections else accepted


def build_core(m: MapSpec, u1: float) -> tuple[float, float, float]:
    """Companion points: ``f(u2)=u1`` with ``u2>c`` and ``f(v1)=f(v2)=u2``."""
    if not (m.a < u1 < m.c):
        raise HypothesisError("preimage-missing", "u1 must lie in (a, c)", hypothesis="a<u1<c")
    if not u1 < m.fa:
        raise HypothesisError("preimage-missing", "u1 >= fa: the right preimage of u1 is not unique",
                              hypothesis="u1<fa")
    u2 = float(m.inverse(u1, 1))
    if not u2 > m.fa:
        raise HypothesisError("preimage-missing", "u2 has no left preimage", hypothesis="u1<fa")
    v1 = float(m.inverse(u2, -1))
    v2 = float(m.inverse(u2, 1))
    if not (u1 < v1 < m.c < v2 < u2 < m.b):
        raise HypothesisError("bad-ordering", "u1<v1<c<v2<u2<b fails", hypothesis="u1<v1<c<v2<u2")
    for x, target in ((u2, u1), (v1, u2), (v2, u2)):
        if abs(float(m.f(x)) - target) > 1e-12:
            raise NumericalError("preimage-inaccurate", "companion point preimage off by >1e-12")
    return u2, v1, v2


def make_core(m: MapSpec, u1: float, N: int | None = None) -> Horseshoe:
    u2, v1, v2 = build_core(m, u1)
    if N is None:
        x, N = float(m.f(u1)), 0
        while abs(x - u1) > 1e-9 and N < 64:
            x, N = float(m.f(x)), N + 1
    period = N + 1
    fp = _iterate(m, u1, period)
    if abs(fp - u1) > 1e-12:
        raise HypothesisError("not-periodic", "f^(N+1)(u1) != u1", hypothesis="f^(N+1)u1=u1")
    if periodic_multiplier(m, u1, period) <= 0:
        raise HypothesisError("negative-multiplier", "(f^(N+1))'(u1) <= 0", hypothesis="(f^(N+1))'(u1)>0")
    div, x = [], u1
    for _ in range(N - 1):
        x = float(m.f(x))
        div.append(x)
    return Horseshoe(m, float(u1), u2, v1, v2, int(N), tuple(div))


# ---------------------------------------------------------------------------
# gaps and partition

def enumerate_gaps(h: Horseshoe, n_max: int = 30, *, total_tol: float = 1e-10,
                   depth_cap: int = 64, keep_depth: int | None = None) -> GapTree:
    """Pull the central gap back through both branches, level by level."""
    if n_max > depth_cap:
        raise NumericalError("depth-overflow", f"n_max={n_max} exceeds cap {depth_cap}")
    m = h.map
    keep = n_max if keep_depth is None else min(keep_depth, n_max)
    fu1 = float(m.f(h.u1))
    lo, hi = np.array([h.v1]), np.array([h.v2])
    los, his = [lo], [hi]
    pars, brs = [np.zeros(0, dtype=np.int32)], [np.zeros(0, dtype=np.int8)]
    lengths, counts = [h.v2 - h.v1], [1]
    target = h.u2 - h.u1
    total = lengths[0] + 0.0
    for n in range(1, n_max + 1):
        if abs(target - total) < total_tol:
            break
        left = lo >= fu1 - 1e-14
        idx_l = np.nonzero(left)[0]
        l_lo, l_hi = m.inverse(lo[idx_l], -1), m.inverse(hi[idx_l], -1)
        r_lo, r_hi = m.inverse(hi, 1), m.inverse(lo, 1)
        lo = np.concatenate([l_lo, r_lo])
        hi = np.concatenate([l_hi, r_hi])
        par = np.concatenate([idx_l, np.arange(r_lo.size)]).astype(np.int32)
        br = np.concatenate([np.zeros(idx_l.size, np.int8), np.ones(r_lo.size, np.int8)])
        lengths.append(float(np.sum(hi - lo)))
        counts.append(lo.size)
        total += lengths[-1]
        if n <= keep:
            los.append(lo)
            his.append(hi)
            pars.append(par)
            brs.append(br)
    outer = {-1: (h.u2, m.b), -2: (m.a, h.u1)}
    return GapTree(los, his, pars, brs, np.array(lengths), np.array(counts), outer, len(lengths) - 1)


def _find_gap_with_endpoint(tree: GapTree, order: int, z: float, tol: float = 1e-10) -> tuple[float, float]:
    lo, hi = tree.lo[order], tree.hi[order]
    hit = np.nonzero((np.abs(lo - z) < tol) | (np.abs(hi - z) < tol))[0]
    if hit.size != 1:
        raise HypothesisError("division-point-unmatched",
                              f"no unique order-{order} gap ends at division point {z!r}")
    return float(lo[hit[0]]), float(hi[hit[0]])


def markov_partition(h: Horseshoe) -> tuple[tuple[tuple[float, float], ...], np.ndarray]:
    """Intervals ``U_1..U_N`` and the adjacency ``A[j,k] = (f U_j contains U_k)``."""
    if h.gaps is None or h.gaps.stored_depth < max(h.N - 2, 0):
        raise HypothesisError("gaps-missing", "enumerate gaps to order N-2 first")
    pts = sorted(h.division_points + ((h.v1,) if h.N == 1 else ()))
    for p, q in zip(pts, pts[1:]):
        if q - p < 1e-12:
            raise HypothesisError("division-point-collision", "two division points coincide",
                                  hypothesis="valid u1")
    m = h.map
    removed = []
    for n, z in enumerate(h.division_points, start=1):
        removed.append(_find_gap_with_endpoint(h.gaps, h.N - 1 - n, z))
    removed = sorted(set(removed))
    U, left = [], h.u1
    for lo, hi in removed:
        U.append((left, lo))
        left = hi
    U.append((left, h.u2))
    special = np.array(list(h.special_points) + list(h.division_points))
    adj = np.zeros((len(U), len(U)), dtype=bool)
    for j, (l, r) in enumerate(U):
        if l < m.c < r:
            raise HypothesisError("markov-violation", "partition interval contains c")
        fl, fr = float(m.f(l)), float(m.f(r))
        il, ir = min(fl, fr), max(fl, fr)
        for e in (il, ir):
            if np.min(np.abs(special - e)) > 1e-10:
                raise HypothesisError("markov-violation", f"image endpoint {e!r} is not a partition point",
                                      hypothesis="Markov property")
        for k, (l2, r2) in enumerate(U):
            adj[j, k] = il <= l2 + 1e-10 and r2 <= ir + 1e-10
    return tuple(U), adj


def _bool_matmul(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return (A.astype(np.int64) @ B.astype(np.int64)) > 0


def _is_prime(n: int) -> bool:
    return n >= 2 and all(n % k for k in range(2, int(math.isqrt(n)) + 1))


def mixing_verdict(adj: np.ndarray, u1_index: int = 0, N: int | None = None,
                   max_power: int | None = None) -> MixingVerdict:
    """Mixing test on a Markov adjacency matrix.

    The transitive component of the interval containing ``u1`` is found from
    the reachability closure.  The witness is the smallest ``s`` with
    ``adj^s`` all true.  When ``N+1`` is prime and the graph is strongly
    connected the verdict follows without the power search.
    """
    adj = np.asarray(adj, dtype=bool)
    n = adj.shape[0]
    N = n if N is None else N
    reach = adj.copy()
    for _ in range(n):
        nxt = reach | _bool_matmul(reach, adj)
        if np.array_equal(nxt, reach):
            break
        reach = nxt
    comp = tuple(int(k) for k in range(n) if reach[u1_index, k] and reach[k, u1_index])
    strongly = len(comp) == n
    bound = (n - 1) ** 2 + 1 if max_power is None else max_power
    witness, P = None, adj.copy()
    if strongly:
        for s in range(1, bound + 1):
            if P.all():
                witness = s
                break
            P = _bool_matmul(P, adj)
    if strongly and _is_prime(N + 1):
        return MixingVerdict("mixing", "prime-shortcut", witness, comp)
    if witness is not None:
        return MixingVerdict("mixing", "power", witness, comp)
    if not strongly:
        return MixingVerdict("not-mixing", "reachability", None, comp)
    if max_power is not None and bound < (n - 1) ** 2 + 1:
        return MixingVerdict("undecided", "power", None, comp)
    return MixingVerdict("not-mixing", "power", None, comp)


def check_mixing(h: Horseshoe) -> MixingVerdict:
    if h.adjacency is None:
        raise HypothesisError("adjacency-missing", "build the Markov partition first")
    idx = next(j for j, (l, r) in enumerate(h.U) if l - 1e-12 <= h.u1 <= r + 1e-12)
    return mixing_verdict(h.adjacency, idx, h.N)


# ---------------------------------------------------------------------------
# fitted constants

def _envelope_fit(n: np.ndarray, values: np.ndarray) -> tuple[float, float, np.ndarray]:
    slope, intercept = np.polyfit(n, values, 1)
    envelope = float(np.max(values - slope * n))
    return slope, envelope, values - (intercept + slope * n)


def estimate_hyperbolicity(h: Horseshoe, n_probe: int = 20, grid: int = 2000) -> HyperbolicityFit:
    """Fit ``|(f^n)'(x)|^-1 <= A alpha^n`` over sampled orbits staying in the region."""
    m = h.map
    xs = [np.linspace(h.u1, h.v1, grid), np.linspace(h.v2, h.u2, grid)]
    if h.gaps is not None:
        lo, hi = h.gaps.all_up_to(14)
        xs += [lo, hi]
    x = np.concatenate(xs + [np.array(h.special_points)])
    alive = np.ones(x.size, dtype=bool)
    logs = np.zeros(x.size)
    env, counts = [], []
    for n in range(1, n_probe + 1):
        alive &= h.in_region(x)
        logs = logs - np.log(np.abs(m.deriv(x, 1)))
        x = m.f(x)
        if not alive.any():
            break
        env.append(float(np.max(logs[alive])))
        counts.append(int(alive.sum()))
    n = np.arange(1, len(env) + 1, dtype=float)
    E = np.array(env)
    slope, logA, resid = _envelope_fit(n, E)
    alpha = float(np.exp(slope))
    if alpha >= 1 - 1e-6:
        raise HypothesisError("not-hyperbolic", f"fitted alpha={alpha:.6f} >= 1",
                              hypothesis="uniform expansion on the horseshoe")
    return HyperbolicityFit(float(np.exp(logA)), alpha, np.exp(E), resid, np.array(counts))


def fit_gap_decay(h: Horseshoe, n_max: int | None = None) -> DecayFit:
    """Fit ``sum_{order n} |V| <= B beta^n``."""
    S = h.gaps.order_lengths if n_max is None else h.gaps.order_lengths[: n_max + 1]
    n = np.arange(S.size, dtype=float)
    keep = S > 0
    slope, logB, resid = _envelope_fit(n[keep], np.log(S[keep]))
    beta = float(np.exp(slope))
    if beta >= 1:
        raise HypothesisError("decay-violation", f"fitted beta={beta:.6f} >= 1",
                              hypothesis="geometric decay of gap lengths")
    return DecayFit(float(np.exp(logB)), beta, S.copy(), resid)


def check_separation(h: Horseshoe, m: MapSpec | None = None, n_max: int = 60) -> float:
    """Distance of the critical orbit from ``{u1, u2, v1, v2}``."""
    m = h.map if m is None else m
    xs = critical_orbit(m, n_max).points
    eps = float(np.min(np.abs(xs[:, None] - np.array(h.special_points)[None, :])))
    if eps < 1e-10:
        raise HypothesisError("separation-zero", f"critical orbit within {eps:.2e} of u1,u2,v1,v2",
                              hypothesis="critical orbit separated from u1,u2,v1,v2")
    tail = xs[2:]
    if np.any((tail > h.v1) & (tail < h.v2)):
        raise HypothesisError("fa-not-in-horseshoe", "orbit of fa enters (v1, v2)",
                              hypothesis="fa in H(u1)")
    return eps


def build_horseshoe(m: MapSpec, u1: float | None = None, *, n_max: int = 30,
                    keep_depth: int | None = 16, period_bound: int = 6, n_probe: int = 20,
                    grid: int = 2000, separation_depth: int = 60) -> Horseshoe:
    """Full construction with every diagnostic filled in.

    With ``u1=None`` the first admissible candidate (smallest period) whose
    horseshoe passes all checks is used.
    """
    if u1 is None:
        cands = find_periodic_u1(m, period_bound)
        if not cands:
            raise HypothesisError("none-found", "no admissible periodic u1", hypothesis="u1 exists")
        last = None
        for cand in cands:
            try:
                return build_horseshoe(m, cand.u1, n_max=n_max, keep_depth=keep_depth, n_probe=n_probe,
                                       grid=grid, separation_depth=separation_depth)
            except HypothesisError as err:
                last = err
        raise last
    h = make_core(m, u1)
    h.gaps = enumerate_gaps(h, n_max, keep_depth=keep_depth)
    h.U, h.adjacency = markov_partition(h)
    h.mixing = check_mixing(h)
    if h.mixing.verdict != "mixing":
        raise HypothesisError("not-mixing", f"horseshoe verdict {h.mixing.verdict}",
                              hypothesis="H(u1) mixing")
    h.hyperbolicity = estimate_hyperbolicity(h, n_probe, grid)
    h.decay = fit_gap_decay(h)
    h.separation = check_separation(h, m, separation_depth)
    return h
