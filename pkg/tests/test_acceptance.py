"""Acceptance criteria 1-10, each printing one PASS/FAIL line."""
import time

import numpy as np
import pytest

from conftest import MU_SHIP
from unimodal_acim.analytic_map import _fixed_point_right, find_misiurewicz_parameter, logistic, polish_periodic
from unimodal_acim.birkhoff import birkhoff_moments
from unimodal_acim.cli import load_config, run
from unimodal_acim.errors import HypothesisError
from unimodal_acim.horseshoe import build_horseshoe
from unimodal_acim.pipeline import solve_map
from unimodal_acim.spikes import chi_eval
from unimodal_acim.susceptibility import (PerturbationField, as_observable, make_composition_family,
                                          make_conjugation_family, make_inclass_family, horizontality_residual,
                                          perturbation_from_family, scaling_diagnostics, susceptibility_value,
                                          verify_derivative)
from unimodal_acim.transfer import endpoint_values, jumps_at, observe, solve_background_direct

OBS = ["one", "x", "x2", "sin3x"]


@pytest.fixture
def report(capsys):
    def _report(k, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail
    return _report


@pytest.fixture(scope="module")
def fresh():
    """Cold solve of the shipped map, timed."""
    t0 = time.perf_counter()
    m = logistic(find_misiurewicz_parameter("logistic", 4, 1, (3.92, 3.935)))
    sol = solve_map(m)
    return sol, time.perf_counter() - t0


def test_criterion_01_misiurewicz_setup(report, tmp_path):
    cfg = load_config("analyze_m3")
    t0 = time.perf_counter()
    rep = run("analyze-map", cfg, tmp_path, use_cache=False)
    dt = time.perf_counter() - t0
    m = logistic(rep["mu"])
    y = m.c
    for _ in range(3):
        y = float(m.f(y))
    p = polish_periodic(m, _fixed_point_right(m), 1)
    dist = abs(y - p)
    mult = rep["landing"]["multiplier"]
    ok = dist <= 1e-13 and abs(mult) > 1 and dt < 1.0
    report(1, ok, f"mu*={rep['mu']:.15f} |f^3(c)-p|={dist:.1e} multiplier={mult:.4f} time={dt:.2f}s")


def test_criterion_02_horseshoe(report, ship_map):
    t0 = time.perf_counter()
    h = build_horseshoe(ship_map, n_max=30)
    dt = time.perf_counter() - t0
    m = h.map
    u = h.u1
    orbit = [u, float(m.f(u)), float(m.f(m.f(u)))]
    period3 = abs(float(m.f(orbit[-1])) - u) < 1e-13 and min(orbit) == u
    ends = np.array(sorted({p for U in h.U for p in U}))
    markov = all(np.min(np.abs(ends - float(m.f(e)))) < 1e-12 for U in h.U for e in U)
    ok = (period3 and h.N == 2 and markov and h.mixing.verdict == "mixing"
          and h.mixing.method == "prime-shortcut" and h.decay.beta < 1 and h.decay.residuals.size > 0
          and h.separation > 0 and dt < 10)
    report(2, ok, f"N={h.N} mixing={h.mixing.verdict}/{h.mixing.method} beta={h.decay.beta:.4f} "
                  f"max|resid|={np.max(np.abs(h.decay.residuals)):.2e} alpha={h.alpha:.4f} time={dt:.2f}s")


def test_criterion_03_invariance(report, fresh):
    sol, dt = fresh
    d, m = sol.density, sol.map
    worst = 0.0
    for name in OBS:
        A = as_observable(name)
        v = observe(d, A.f)
        worst = max(worst, abs(observe(d, lambda x: A.f(m.f(x))) - v) / max(1, abs(v)))
    report(3, worst <= 1e-6 and dt < 60, f"max relative defect={worst:.2e} solve time={dt:.2f}s")


def test_criterion_04_birkhoff(report, fresh):
    sol, _ = fresh
    t0 = time.perf_counter()
    M = birkhoff_moments(sol.map, 10_000_000, 10, seed=0)
    dt = time.perf_counter() - t0
    sx = observe(sol.density, lambda x: x)
    sx2 = observe(sol.density, lambda x: x * x)
    ex, ex2 = abs(M[:, 0].mean() - sx), abs(M[:, 1].mean() - sx2)
    report(4, max(ex, ex2) <= 5e-3 and dt < 60,
           f"|<x>-orbit|={ex:.1e} |<x^2>-orbit|={ex2:.1e} (10 seeds x 1e7) time={dt:.2f}s")


def _limit(sf, n, side, e1=1e-10, e2=1e-12):
    k1 = sf.template(n + 1)
    x = sf.x[k1] + side * e1
    if not sf.map.a <= x <= sf.map.b:
        return 0.0
    v1 = chi_eval(sf, n, x, side * e1)
    v2 = chi_eval(sf, n, sf.x[k1] + side * e2, side * e2)
    r1, r2 = np.sqrt(e1), np.sqrt(e2)
    return (v2 * r1 - v1 * r2) / (r1 - r2)


def test_criterion_05_spike_structure(report, fresh):
    sol, _ = fresh
    d, sf, m = sol.density, sol.spikes, sol.map
    N, P = sf.N, sf.tail_period
    c = np.concatenate([d.c, [d.tail[0] * (1 - np.prod(sf.r[N:N + P]))]])
    law = np.abs(m.deriv(sf.x[:N], 1)) ** -0.5
    ratio_err = float(np.max(np.abs(c[1:] / c[:-1] - law)))
    chi_err = max(abs(_limit(sf, n, sf.s[sf.template(n + 1)]) - _limit(sf, n, -sf.s[sf.template(n + 1)]))
                  for n in range(21))
    report(5, ratio_err <= 1e-12 and chi_err <= 1e-6,
           f"ratio law error={ratio_err:.1e} (n<={N - 1}) chi one-sided gap={chi_err:.1e} (n<=20)")


def test_criterion_06_background(report, fresh):
    sol, _ = fresh
    d, mo = sol.density, sol.model
    jumps = float(np.max(jumps_at(d, mo.grid.bp[1:-1])))
    fa, fb = endpoint_values(d)
    bs = solve_background_direct(sol.horseshoe, sol.spikes, model=mo)
    xs = np.linspace(sol.map.a, sol.map.b, 20001)
    sup = float(np.max(np.abs(bs.density.background(xs) - d.background(xs))))
    ok = jumps <= 1e-6 and abs(fa) <= 1e-8 and abs(fb) <= 1e-8 and sup <= 1e-7
    report(6, ok, f"max jump={jumps:.1e} phi(a)={fa:.1e} phi(b)={fb:.1e} solver sup-diff={sup:.1e}")


@pytest.mark.parametrize("v", [[-0.5, 1.0], [0.0, 0.0, 1.0]])
def test_criterion_07_conjugation(report, fresh, v):
    sol, _ = fresh
    fam = make_conjugation_family(sol.map, v)
    worst = 0.0
    for kappa in (1e-3, -1e-3):
        sk = solve_map(fam.make(kappa), u1=sol.horseshoe.u1, u1_period=sol.horseshoe.N + 1)
        for name in OBS:
            A = as_observable(name)
            worst = max(worst, abs(observe(sk.density, A.f) - fam.oracle(sol.density, A, kappa)))
    report(7, worst <= 1e-6, f"v={v} max |<rho_k,A> - int A(g_k x) rho|={worst:.1e} at |kappa|=1e-3")


def test_criterion_08_horizontality(report, fresh):
    sol, _ = fresh
    fam = make_inclass_family(sol.map, [1.0], [0.0, 1.0], sf=sol.spikes)
    res = horizontality_residual(sol.spikes, fam.X_eff, 1.0)
    try:
        susceptibility_value(sol.density, PerturbationField.constant(1.0), "x")
        refused, witness = False, float("nan")
    except HypothesisError as err:
        refused, witness = err.code == "horizontality-violated", err.details.get("residual", float("nan"))
    report(8, res <= 1e-8 and refused, f"|X_eff(b)+F0|={res:.1e}; X=1 refused={refused} residual={witness:.3f}")


@pytest.mark.parametrize("pair", [("in-class", "x"), ("in-class", "x2"), ("in-class", "sin3x"),
                                  ("conjugation", "sin3x")])
def test_criterion_09_derivative(report, fresh, pair):
    sol, _ = fresh
    kind, name = pair
    if kind == "in-class":
        fam = make_inclass_family(sol.map, [1.0], [0.0, 1.0], sf=sol.spikes)
    else:
        fam = make_conjugation_family(sol.map, [-0.5, 1.0])
    t0 = time.perf_counter()
    rep = verify_derivative(fam, name, base=sol)
    dt = time.perf_counter() - t0
    # ratios of successive FD differences; rows at roundoff level carry no order information
    ratios = [float(row["gap_ratio"]) for row in rep.table
              if "gap_ratio" in row and row["gap"] > 1e-10 * abs(rep.psi)]
    second_order = all(abs(r - 4) < 0.4 for r in ratios) if ratios else True
    table = " ".join(f"h={row['h']:.0e}:{row['fd']:.10f}" for row in rep.table)
    report(9, rep.rel_error <= 0.02 and second_order and dt < 600,
           f"{kind}/{name} Psi={rep.psi:.10f} rel.err={rep.rel_error:.1e} gap ratios="
           f"{[round(r, 3) for r in ratios]} [{table}] time={dt:.1f}s")


def test_criterion_10_scaling(report, fresh):
    sol, _ = fresh
    fam = make_composition_family(sol.map, [1.0])
    rep = scaling_diagnostics(fam, 40, sf=sol.spikes, phi_c=sol.density.phi_c)
    wr, sr = rep["weight_ratio"], rep["speed_ratio"]
    report(10, abs(wr - 1) <= 0.1 and abs(sr - 1) <= 0.1,
           f"weight exp={rep['weight_exponent']:.4f} speed exp={rep['speed_exponent']:.4f} "
           f"mean log|f'|={rep['mean_log_derivative']:.4f} ratios {wr:.3f}/{sr:.3f}")
