"""Batch experiments on real road networks.

For each sampled terminal pair the pipeline prunes the network to the
routable part, normalizes demands, sweeps the cost curve, prices the
baseline and optimal schemes, and compares them to the pointwise social
optimum (the demand-weighted minimum-cost flows).  Rows and aggregates
mirror the usual reporting layout: support counts, curve shape shares,
and cost ratios.
"""

from __future__ import annotations

import csv
import io
import math
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence

from .atlas import enumerate_supports
from .equilibrium import system_optimum
from .model import Belief, Instance, Network, StateSpace, normalize, prune_unroutable
from .signaling import envelope_value

SLOPE_TOL = 1e-9


@dataclass(frozen=True)
class StudyRow:
    index: int
    source_zone: int            # 1-based ids as in the data files
    sink_zone: int
    status: str                 # "ok" or an error note
    num_supports: int = 0
    breakpoints: tuple[float, ...] = ()
    cost_full_info: float = math.nan
    cost_no_signal: float = math.nan
    cost_optimal: float = math.nan
    cost_pso: float = math.nan
    concave: bool = False
    linear: bool = False

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass(frozen=True)
class ExperimentResult:
    rows: tuple[StudyRow, ...]
    prior_high: float
    rho: float
    seed: int

    def aggregates(self) -> dict[str, float]:
        ok = [r for r in self.rows if r.ok]
        if not ok:
            return {"instances": len(self.rows), "ok": 0}
        counts = [r.num_supports for r in ok]
        mean = sum(counts) / len(counts)
        var = sum((c - mean) ** 2 for c in counts) / len(counts)
        fi_opt = [r.cost_full_info / r.cost_optimal for r in ok]
        no_opt = [r.cost_no_signal / r.cost_optimal for r in ok]
        opt_pso = [r.cost_optimal / r.cost_pso for r in ok]
        we_pso = [r.cost_no_signal / r.cost_pso for r in ok]
        fi_is_opt = [r.cost_full_info <= r.cost_optimal + 1e-9 for r in ok]
        return {
            "instances": len(self.rows),
            "ok": len(ok),
            "supports_av": mean,
            "supports_sd": math.sqrt(var),
            "supports_max": max(counts),
            "share_concave": sum(r.concave for r in ok) / len(ok),
            "share_linear": sum(r.linear for r in ok) / len(ok),
            "share_full_info_optimal": sum(fi_is_opt) / len(ok),
            "ratio_full_info_over_optimal": sum(fi_opt) / len(ok),
            "ratio_no_signal_over_optimal": sum(no_opt) / len(ok),
            "ratio_optimal_over_pso": sum(opt_pso) / len(ok),
            "ratio_no_signal_over_pso": sum(we_pso) / len(ok),
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([
            "index", "source_zone", "sink_zone", "status", "num_supports",
            "breakpoints", "cost_full_info", "cost_no_signal",
            "cost_optimal", "cost_pso", "concave", "linear",
        ])
        for r in self.rows:
            writer.writerow([
                r.index, r.source_zone, r.sink_zone, r.status, r.num_supports,
                " ".join(f"{b:.10g}" for b in r.breakpoints),
                f"{r.cost_full_info:.12g}", f"{r.cost_no_signal:.12g}",
                f"{r.cost_optimal:.12g}", f"{r.cost_pso:.12g}",
                int(r.concave), int(r.linear),
            ])
        writer.writerow([])
        for key, value in self.aggregates().items():
            writer.writerow([key, f"{value:.12g}" if isinstance(value, float) else value])
        return buf.getvalue()

    def dump_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())


def classify_curve(slopes: Sequence[float], tol: float = SLOPE_TOL
                   ) -> tuple[bool, bool]:
    """(concave, linear): linear means all slopes agree; concave means
    strictly non-increasing slopes beyond tolerance, excluding linear."""
    slopes = [float(s) for s in slopes]
    linear = max(slopes) - min(slopes) <= tol
    non_increasing = all(b <= a + tol for a, b in zip(slopes, slopes[1:]))
    return (non_increasing and not linear, linear)


def study_instance(network: Network, s: int, t: int, demand: float,
                   rho: float, prior_high: float) -> Instance:
    """Normalized two-state instance for one terminal pair (0-based)."""
    net = replace(network, source=s, sink=t)
    raw = Instance(
        net,
        StateSpace((rho * demand, demand)),
        Belief((1.0 - prior_high, prior_high)),
    )
    return normalize(prune_unroutable(raw))


def _run_one(args) -> StudyRow:
    index, network, s_zone, t_zone, demand, rho, prior_high = args
    try:
        inst = study_instance(network, s_zone - 1, t_zone - 1, demand, rho,
                              prior_high)
        if inst.network.num_edges == 0:
            return StudyRow(index, s_zone, t_zone, "no route")
        atlas = enumerate_supports(inst)
        mu = prior_high
        c_no = float(atlas.value(mu))
        c_fi = float((1 - mu) * atlas.value(0.0) + mu * atlas.value(1.0))
        c_opt = float(envelope_value(atlas, mu))
        d_low = float(inst.states.demands[0])
        c_pso = float((1 - mu) * system_optimum(inst, d_low)
                      + mu * system_optimum(inst, 1.0))
        concave, linear = classify_curve([seg.slope for seg in atlas.segments])
        return StudyRow(
            index, s_zone, t_zone, "ok",
            num_supports=atlas.num_segments,
            breakpoints=tuple(float(b) for b in atlas.breakpoints),
            cost_full_info=c_fi,
            cost_no_signal=c_no,
            cost_optimal=c_opt,
            cost_pso=c_pso,
            concave=concave,
            linear=linear,
        )
    except Exception as exc:  # per-row fault isolation; the run continues
        return StudyRow(index, s_zone, t_zone, f"error: {exc}")


def run_study(network: Network, zones: Sequence[int], n_instances: int,
              rho: float, prior_high: float, seed: int, demand: float,
              jobs: int = 1) -> ExperimentResult:
    """Sample terminal pairs from the zones (1-based, without replacement)
    and evaluate each; the seed fixes the sample and hence the output."""
    if len(zones) < 2:
        raise ValueError("need at least two zones")
    if not 0 < rho < 1:
        raise ValueError("the demand ratio must lie strictly between 0 and 1")
    if demand <= 0:
        raise ValueError("demand must be positive")
    rng = random.Random(seed)
    pairs = [(s, t) for s in zones for t in zones if s != t]
    if n_instances > len(pairs):
        raise ValueError(f"only {len(pairs)} distinct terminal pairs available")
    sample = rng.sample(pairs, n_instances)

    tasks = [
        (i, network, s, t, demand, rho, prior_high)
        for i, (s, t) in enumerate(sample)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = tuple(pool.map(_run_one, tasks))
    else:
        rows = tuple(_run_one(t) for t in tasks)
    return ExperimentResult(rows, prior_high, rho, seed)
