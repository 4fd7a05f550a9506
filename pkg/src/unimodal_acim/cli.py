"""Command line front end.

    unimodal-acim [--config PATH] [--out DIR] [--no-cache] [--threads N] [--seed N] COMMAND

Commands: analyze-map, horseshoe, acim, susceptibility, verify-derivative,
scaling.  ``--config`` takes a JSON file or the name of a bundled preset
(``shipped``, ``analyze_m3``).  Exit codes: 0 ok, 2 configuration,
3 failed hypothesis, 4 numerical failure.
"""
from __future__ import annotations

import csv
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import click
import numpy as np

from .errors import ArtifactError, ConfigError

log = logging.getLogger("unimodal_acim")

_ALLOWED = {"family", "mu", "coeffs", "misiurewicz", "u1", "n_max", "keep_depth", "N_spike", "degree",
            "tolerances", "observables", "perturbation", "lambda_grid", "steps", "scaling",
            "samples_per_piece", "birkhoff_steps", "cache", "output"}


@dataclass
class RunConfig:
    family: str = "logistic"
    mu: float | None = None
    coeffs: list[float] | None = None
    misiurewicz: dict | None = None
    u1: Any = "auto"
    n_max: int = 30
    keep_depth: int = 16
    N_spike: int | None = None
    degree: int = 64
    tolerances: dict = field(default_factory=lambda: {"acim": 1e-10, "horizontality": 1e-6, "neumann": 1e-13})
    observables: list[str] = field(default_factory=lambda: ["x", "x2", "sin3x"])
    perturbation: dict = field(default_factory=lambda: {"kind": "in-class", "X": [1.0], "Y": [0.0, 1.0]})
    lambda_grid: Any = field(default_factory=lambda: {"type": "circle", "radius": 1.0, "points": 12})
    steps: list[float] = field(default_factory=lambda: [0.004, 0.002, 0.001, 0.0005])
    scaling: dict = field(default_factory=lambda: {"X": [1.0], "n_max": 40})
    samples_per_piece: int = 40
    birkhoff_steps: int = 0
    cache: bool = True
    output: str = "out"

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        unknown = set(raw) - _ALLOWED
        if unknown:
            raise ConfigError("config-invalid", f"unknown keys {sorted(unknown)}")
        cfg = cls(**raw)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        def bad(msg):
            raise ConfigError("config-invalid", msg)

        if self.family not in ("logistic", "polynomial"):
            bad(f"family must be 'logistic' or 'polynomial', got {self.family!r}")
        if self.family == "polynomial" and not self.coeffs:
            bad("polynomial family needs 'coeffs'")
        if self.family == "logistic" and self.mu is None and not self.misiurewicz:
            bad("give 'mu' or 'misiurewicz' combinatorics")
        for k, v in self.tolerances.items():
            if not isinstance(v, (int, float)) or not v > 0:
                bad(f"tolerance {k} must be > 0")
        if not 4 <= self.degree <= 256:
            bad("degree must be within [4, 256]")
        if not 2 <= self.n_max <= 64:
            bad("n_max must be within [2, 64]")
        if self.N_spike is not None and not 1 <= self.N_spike <= 200:
            bad("N_spike must be within [1, 200]")
        if self.u1 != "auto" and not isinstance(self.u1, (int, float)):
            bad("u1 must be 'auto' or a number")
        if any(not s > 0 for s in self.steps):
            bad("steps must be positive")
        if self.perturbation.get("kind") not in ("in-class", "conjugation", "composition"):
            bad("perturbation kind must be in-class, conjugation or composition")


def load_config(spec: str | None) -> RunConfig:
    if spec is None:
        spec = "shipped"
    p = Path(spec)
    try:
        if p.exists():
            raw = json.loads(p.read_text())
        else:
            name = spec[:-5] if spec.endswith(".json") else spec
            text = resources.files("unimodal_acim.presets").joinpath(f"{name}.json").read_text()
            raw = json.loads(text)
    except FileNotFoundError as err:
        raise ConfigError("config-invalid", f"no config file or preset named {spec!r}") from err
    except json.JSONDecodeError as err:
        raise ConfigError("config-invalid", f"config is not valid JSON: {err}") from err
    if not isinstance(raw, dict):
        raise ConfigError("config-invalid", "config must be a JSON object")
    try:
        return RunConfig.from_dict(raw)
    except TypeError as err:
        raise ConfigError("config-invalid", str(err)) from err


# ---------------------------------------------------------------------------
# stages

class Stage:
    """Prefixes error codes with the stage (module) that raised them."""

    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, et, ev, tb):
        if isinstance(ev, ArtifactError) and "." not in ev.code:
            ev.code = f"{self.name}.{ev.code}"
        return False


class Runner:
    def __init__(self, cfg: RunConfig, out: Path, use_cache: bool, seed: int):
        from .cache import CacheStore

        self.cfg, self.out, self.seed = cfg, out, seed
        self.store = CacheStore(out / "cache", enabled=use_cache and cfg.cache)
        self.timing: dict[str, float] = {}
        self._map = self._h = self._sol = None

    def _timed(self, key, fn):
        t0 = time.perf_counter()
        val = fn()
        self.timing[key] = time.perf_counter() - t0
        return val

    def map(self):
        if self._map is None:
            from .analytic_map import PolynomialMap, find_misiurewicz_parameter, logistic

            with Stage("analytic_map"):
                cfg = self.cfg
                if cfg.family == "polynomial":
                    self._map = PolynomialMap(cfg.coeffs)
                else:
                    mu = cfg.mu
                    if mu is None:
                        mz = cfg.misiurewicz
                        mu = self._timed("misiurewicz", lambda: find_misiurewicz_parameter(
                            "logistic", mz["preperiod"], mz.get("period", 1), tuple(mz["bracket"])))
                    self._map = logistic(mu)
        return self._map

    def horseshoe(self):
        if self._h is None:
            from .horseshoe import build_horseshoe

            m = self.map()
            params = {"map": m.fingerprint(), "u1": self.cfg.u1, "n_max": self.cfg.n_max,
                      "keep_depth": self.cfg.keep_depth}
            u1 = None if self.cfg.u1 == "auto" else float(self.cfg.u1)
            with Stage("horseshoe"):
                self._h = self._timed("horseshoe", lambda: self.store.get_or_compute(
                    "horseshoe", params, lambda: build_horseshoe(m, u1, n_max=self.cfg.n_max,
                                                                 keep_depth=self.cfg.keep_depth)))
        return self._h

    def solved(self):
        if self._sol is None:
            from .pipeline import solve_map
            from .transfer import TransferOptions

            h = self.horseshoe()
            with Stage("transfer"):
                opts = TransferOptions(degree=self.cfg.degree, tol=self.cfg.tolerances.get("acim", 1e-10))
                self._sol = self._timed("acim", lambda: solve_map(h.map, horseshoe=h, N_spike=self.cfg.N_spike,
                                                                  opts=opts))
        return self._sol

    def family(self):
        from .susceptibility import (make_composition_family, make_conjugation_family,
                                     make_inclass_family)

        p = self.cfg.perturbation
        m = self.map()
        with Stage("susceptibility"):
            if p["kind"] == "in-class":
                return make_inclass_family(m, p["X"], p["Y"], sf=self.solved().spikes)
            if p["kind"] == "conjugation":
                return make_conjugation_family(m, p["v"])
            return make_composition_family(m, p["X"])

    def sus_opts(self):
        from .susceptibility import SusceptibilityOptions

        t = self.cfg.tolerances
        return SusceptibilityOptions(horizontality_tol=t.get("horizontality", 1e-6),
                                     neumann_tol=t.get("neumann", 1e-13))

    def write_json(self, name: str, obj: Any) -> Path:
        p = self.out / name
        p.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")
        return p

    def write_csv(self, name: str, header: list[str], rows) -> Path:
        p = self.out / name
        with p.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
        return p

    def finish(self):
        self.write_json("timing.json", {**self.timing, "cache_hits": self.store.hits,
                                        "cache_misses": self.store.misses})


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    return obj


def _lambda_grid(spec) -> list[complex]:
    if isinstance(spec, list):
        return [complex(*v) if isinstance(v, list) else complex(v) for v in spec]
    if spec.get("type") == "circle":
        r, n = float(spec.get("radius", 1.0)), int(spec.get("points", 12))
        return [r * np.exp(2j * np.pi * k / n) for k in range(n)]
    if spec.get("type") == "ray":
        lo, hi, n = float(spec["from"]), float(spec["to"]), int(spec.get("points", 8))
        ang = float(spec.get("angle", 0.0))
        return [r * np.exp(1j * ang) for r in np.linspace(lo, hi, n)]
    raise ConfigError("config-invalid", f"unknown lambda grid {spec!r}")


# ---------------------------------------------------------------------------
# commands

def cmd_analyze_map(r: Runner) -> dict:
    from .analytic_map import _fixed_point_right, critical_data, landing_report, polish_periodic

    m = r.map()
    with Stage("analytic_map"):
        critical_data(m)
    rep = {"mu": m.mu, "coeffs": m.poly.tolist(), "c": m.c, "b": m.b, "a": m.a, "fa": m.fa,
           "critical_data": {"df_c": float(m.deriv(m.c, 1)), "d2f_c": float(m.deriv(m.c, 2)),
                             "fold_constant": m.fold_constant}}
    mz = r.cfg.misiurewicz
    if mz:
        lr = landing_report(m, mz["preperiod"], mz.get("period", 1))
        rep["landing"] = lr
        if mz.get("period", 1) == 1:
            p = polish_periodic(m, _fixed_point_right(m), 1)
            rep["landing"]["fixed_point"] = p
            rep["landing"]["distance_to_fixed_point"] = abs(lr["landing_point"] - p)
    r.write_json("analyze_map.json", rep)
    return rep


def cmd_horseshoe(r: Runner) -> dict:
    h = r.horseshoe()
    g = h.gaps
    rep = {"u1": h.u1, "u2": h.u2, "v1": h.v1, "v2": h.v2, "N": h.N,
           "division_points": list(h.division_points), "partition": [list(u) for u in h.U],
           "adjacency": h.adjacency.astype(int).tolist(),
           "mixing": {"verdict": h.mixing.verdict, "method": h.mixing.method, "witness": h.mixing.witness},
           "hyperbolicity": {"A": h.hyperbolicity.A, "alpha": h.hyperbolicity.alpha,
                             "residuals": h.hyperbolicity.residuals},
           "gap_decay": {"B": h.decay.B, "beta": h.decay.beta, "residuals": h.decay.residuals,
                         "sums": h.decay.sums},
           "separation": h.separation, "gap_counts": g.order_counts, "gap_lengths": g.order_lengths}
    r.write_json("horseshoe.json", rep)
    return rep


def cmd_acim(r: Runner) -> dict:
    from .transfer import cdf, endpoint_values, jumps_at, observe

    sol = r.solved()
    d, g, sf = sol.density, sol.model.grid, sol.spikes
    ns = r.cfg.samples_per_piece
    edges = []
    for k in range(g.K):
        t = np.linspace(-1.0, 1.0, ns + 1)
        off_l, off_r = g.offsets_of_t(k, t)
        xk = np.where(t < 0, g.bp[k] + off_l, g.bp[k + 1] + off_r)
        xk[0], xk[-1] = g.bp[k], g.bp[k + 1]
        edges.append(xk if k == 0 else xk[1:])
    edges = np.concatenate(edges)
    F = cdf(d, edges)
    mass = np.diff(F)
    mids = 0.5 * (edges[:-1] + edges[1:])
    phi = d.background(mids)
    rho = d.rho(mids)
    r.write_csv("density.csv", ["x", "phi", "rho_total", "mass"], zip(mids, phi, rho, mass))
    # individual weights; rows past N are one period of the periodic tail
    C = d.spike_family.C
    rows = [(n, sf.x[n], C[n], sf.w[n], int(sf.s[n])) for n in range(sf.N + sf.tail_period)]
    r.write_csv("spikes.csv", ["n", "x_n", "C_n", "w_n", "s_n"], rows)
    m = sol.map
    obs = {}
    from .susceptibility import as_observable

    for name in r.cfg.observables:
        A = as_observable(name)
        val = observe(d, A.f)
        obs[name] = {"value": val, "invariance_defect": observe(d, lambda x: A.f(m.f(x))) - val}
    fa, fb = endpoint_values(d)
    rep = {"iterations": sol.report.iterations, "residual": sol.report.residual,
           "gap_estimate": sol.report.gap_estimate, "spike_depth": sol.report.spike_depth,
           "tail_mode": sol.report.tail_mode, "mass": d.mass, "mass_column_sum": float(mass.sum()),
           "phi_c": d.phi_c, "phi_a": fa, "phi_b": fb,
           "max_jump_at_breakpoints": float(np.max(jumps_at(d, g.bp[1:-1]))), "observables": obs}
    if r.cfg.birkhoff_steps:
        from .birkhoff import birkhoff_moments

        M = birkhoff_moments(m, int(r.cfg.birkhoff_steps), 10, seed=r.seed)
        rep["birkhoff"] = {"x": float(M[:, 0].mean()), "x2": float(M[:, 1].mean()), "seed": r.seed}
    r.write_json("acim.json", rep)
    return rep


def cmd_susceptibility(r: Runner) -> dict:
    from .susceptibility import horizontality_residual, lambda_scan, perturbation_from_family

    sol = r.solved()
    fam = r.family()
    X = perturbation_from_family(fam)
    lams = _lambda_grid(r.cfg.lambda_grid)
    out = {}
    with Stage("susceptibility"):
        res1 = horizontality_residual(sol.spikes, X, 1.0)
        for name in r.cfg.observables:
            sc = lambda_scan(sol.density, X, name, lams, r.sus_opts())
            r.write_csv(f"scan_{name}.csv", ["re_lambda", "im_lambda", "re_psi", "im_psi", "tail_estimate",
                                             "neumann_K"], sc.rows())
            out[name] = {"failures": {str(k): v for k, v in sc.errors.items()}}
    rep = {"family": fam.kind, "horizontality_residual": res1, "points": len(lams), "observables": out}
    r.write_json("susceptibility.json", rep)
    return rep


def cmd_verify(r: Runner) -> dict:
    from .susceptibility import verify_derivative

    sol = r.solved()
    fam = r.family()
    reports = {}
    with Stage("susceptibility"):
        for name in r.cfg.observables:
            rep = verify_derivative(fam, name, tuple(r.cfg.steps), base=sol, opts=r.sus_opts())
            reports[name] = rep.as_dict()
    out = {"family": fam.kind, "s_slope": fam.s_slope, "reports": reports,
           "max_relative_error": max(v["relative_error"] for v in reports.values())}
    r.write_json("verify_derivative.json", out)
    return out


def cmd_scaling(r: Runner) -> dict:
    from .susceptibility import make_composition_family, scaling_diagnostics

    sol = r.solved()
    sc = r.cfg.scaling
    with Stage("susceptibility"):
        fam = make_composition_family(r.map(), sc.get("X", [1.0]))
        rep = scaling_diagnostics(fam, int(sc.get("n_max", 40)), sf=sol.spikes, phi_c=sol.density.phi_c)
    r.write_csv("scaling.csv", ["n", "weight", "speed"], zip(rep["n"], rep["weight"], rep["speed"]))
    r.write_json("scaling.json", {k: v for k, v in rep.items() if k not in ("n", "weight", "speed")})
    return rep


COMMANDS = {"analyze-map": cmd_analyze_map, "horseshoe": cmd_horseshoe, "acim": cmd_acim,
            "susceptibility": cmd_susceptibility, "verify-derivative": cmd_verify, "scaling": cmd_scaling}


def run(command: str, cfg: RunConfig, out: Path, *, use_cache: bool = True, seed: int = 0) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    r = Runner(cfg, out, use_cache, seed)
    rep = COMMANDS[command](r)
    r.finish()
    return rep


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.option("--config", "config", default=None, help="JSON config file or preset name.")
@click.option("--out", "out", default=None, type=click.Path(file_okay=False), help="Output directory.")
@click.option("--no-cache", is_flag=True, help="Ignore and do not write the cache.")
@click.option("--threads", default=1, show_default=True, type=int, help="Threads for compiled kernels.")
@click.option("--seed", default=0, show_default=True, type=int, help="Seed for Birkhoff start points.")
@click.option("-v", "--verbose", count=True)
@click.pass_context
def main(ctx, config, out, no_cache, threads, seed, verbose):
    logging.basicConfig(level=logging.WARNING - 10 * min(verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    os.environ.setdefault("NUMBA_NUM_THREADS", str(max(1, threads)))
    ctx.obj = {"config": config, "out": out, "no_cache": no_cache, "seed": seed}


def _make_command(name: str):
    @main.command(name)
    @click.pass_obj
    def _cmd(obj):
        try:
            cfg = load_config(obj["config"])
            out = Path(obj["out"] or cfg.output)
            rep = run(name, cfg, out, use_cache=not obj["no_cache"], seed=obj["seed"])
        except ArtifactError as err:
            click.echo(f"error {err.code}: {err}", err=True)
            if err.hypothesis:
                click.echo(f"violated hypothesis: {err.hypothesis}", err=True)
            sys.exit(err.exit_code if err.exit_code in (2, 3, 4) else 4)
        click.echo(json.dumps(_summary(name, rep), sort_keys=True))

    _cmd.__doc__ = COMMANDS[name].__name__.replace("cmd_", "").replace("_", " ")
    return _cmd


def _summary(name: str, rep: dict) -> dict:
    keys = {"analyze-map": ("mu", "landing"), "horseshoe": ("u1", "N", "mixing", "separation"),
            "acim": ("iterations", "residual", "mass", "gap_estimate"),
            "susceptibility": ("family", "horizontality_residual", "points"),
            "verify-derivative": ("family", "max_relative_error"),
            "scaling": ("weight_exponent", "speed_exponent", "mean_log_derivative")}[name]
    return _jsonable({k: rep.get(k) for k in keys})


for _name in COMMANDS:
    _make_command(_name)


if __name__ == "__main__":  # pragma: no cover
    main()
