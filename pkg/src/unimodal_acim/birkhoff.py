"""Long-orbit time averages, the independent oracle for space averages."""
from __future__ import annotations

import numpy as np
from numba import njit

from .analytic_map import MapSpec, PolynomialMap
from .errors import ConfigError


@njit(cache=True)
def _orbit_moments(coeffs, x0, n_steps, n_burn, kmax):
    """Time averages of ``x^k`` (``k = 1..kmax``) along the orbit of ``x0``."""
    deg = coeffs.size - 1
    sums = np.zeros(kmax)
    x = x0
    for i in range(n_burn + n_steps):
        y = coeffs[deg]
        for j in range(deg - 1, -1, -1):
            y = y * x + coeffs[j]
        x = y
        if i >= n_burn:
            p = 1.0
            for k in range(kmax):
                p *= x
                sums[k] += p
    return sums / n_steps


def birkhoff_moments(m: MapSpec, n_steps: int = 10_000_000, seeds: int = 10, *,
                     seed: int = 0, kmax: int = 2, burn: int = 1000) -> np.ndarray:
    """Orbit averages of ``x, x^2, .. x^kmax`` for ``seeds`` random starts.

    Returns an array of shape ``(seeds, kmax)``.  Start points are drawn
    uniformly in ``[a, b]`` from ``numpy.random.default_rng(seed)``.
    """
    if not isinstance(m, PolynomialMap):
        raise ConfigError("oracle-unsupported", "the compiled orbit kernel needs a polynomial map")
    rng = np.random.default_rng(seed)
    starts = rng.uniform(m.a, m.b, seeds)
    coeffs = np.asarray(m.poly.coeffs, dtype=float)
    return np.array([_orbit_moments(coeffs, float(x0), int(n_steps), int(burn), int(kmax)) for x0 in starts])


def birkhoff_average(m: MapSpec, A, n_steps: int = 100_000, *, x0: float | None = None,
                     seed: int = 0, burn: int = 1000) -> float:
    """Orbit average of a general observable (pure numpy, for moderate ``n``)."""
    x = np.random.default_rng(seed).uniform(m.a, m.b) if x0 is None else float(x0)
    for _ in range(burn):
        x = float(m.f(x))
    chunk = np.empty(n_steps)
    for i in range(n_steps):
        x = float(m.f(x))
        chunk[i] = x
    return float(np.mean(A(chunk)))
