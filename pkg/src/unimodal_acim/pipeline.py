"""One-call chain map -> horseshoe -> spikes -> a.c.i.m."""
from __future__ import annotations

from dataclasses import dataclass

from .analytic_map import MapSpec, polish_periodic
from .horseshoe import Horseshoe, build_horseshoe
from .spikes import SpikeFamily, anchors_and_signs
from .transfer import DensityModel, TransferModel, TransferOptions, TransferReport, solve_acim


@dataclass
class Solved:
    map: MapSpec
    horseshoe: Horseshoe
    spikes: SpikeFamily
    model: TransferModel
    density: DensityModel
    report: TransferReport


def solve_map(m: MapSpec, *, u1: float | None = None, u1_period: int | None = None,
              n_max: int = 30, degree: int = 64, N_spike: int | None = None,
              horseshoe: Horseshoe | None = None, opts: TransferOptions | None = None) -> Solved:
    """Build everything needed for the invariant density of ``m``.

    ``u1`` with ``u1_period`` is polished on ``m`` first, which is how a
    nearby map inherits the horseshoe of a base map.
    """
    if horseshoe is None:
        if u1 is not None and u1_period:
            u1 = polish_periodic(m, u1, u1_period)
        horseshoe = build_horseshoe(m, u1, n_max=n_max)
    sf = anchors_and_signs(horseshoe, N_spike)
    opts = opts or TransferOptions(degree=degree)
    model = TransferModel(horseshoe, sf, opts.degree, tail_fold_threshold=opts.tail_fold_threshold)
    d, rep = solve_acim(horseshoe, sf, opts, model=model)
    return Solved(m, horseshoe, sf, model, d, rep)
