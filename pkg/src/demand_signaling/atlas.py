"""Piecewise-linear equilibrium cost over two-state beliefs.

For a fixed support the equilibrium is affine in the belief, and the set
of beliefs inducing that support is an interval found by two linear
programs (min/max of the high-demand probability over the support's
feasibility polytope, after the load substitution ``y = S2 * x``).  The
sweep solves the equilibrium at an uncovered midpoint, reads off its
support, computes the support's interval, and recurses on what is left;
it terminates once the whole unit interval is covered.
"""

from __future__ import annotations

import csv
import json
from bisect import bisect_right
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Optional, Sequence

from . import lp as lpmod
from .equilibrium import (
    Support,
    active_support,
    canonical_support,
    solve_for_support,
    solve_wardrop,
)
from .model import (
    DEDUP_TOL,
    WIDTH_FLOOR,
    Belief,
    Instance,
    Number,
    coerce_instance,
)


class AtlasError(RuntimeError):
    """The sweep stalled (interval below the width floor) or the computed
    segments are inconsistent."""


@dataclass(frozen=True)
class CostSegment:
    lo: Number
    hi: Number
    intercept: Number
    slope: Number
    support: Support
    cost_lo: Number
    cost_hi: Number

    def value(self, mu: Number) -> Number:
        return self.intercept + self.slope * mu


@dataclass(frozen=True)
class PiecewiseLinearCost:
    """The equilibrium-cost curve: contiguous affine segments on [0, 1],
    each carrying the support that realizes it."""

    segments: tuple[CostSegment, ...]
    exact: bool

    @property
    def breakpoints(self) -> tuple[Number, ...]:
        return tuple(s.lo for s in self.segments) + (self.segments[-1].hi,)

    @property
    def interior_breakpoints(self) -> tuple[Number, ...]:
        return tuple(s.lo for s in self.segments[1:])

    @property
    def num_segments(self) -> int:
        return len(self.segments)

    def segment_at(self, mu: Number) -> CostSegment:
        if not 0 <= mu <= 1:
            raise ValueError(f"belief parameter {mu!r} outside [0, 1]")
        starts = [s.lo for s in self.segments]
        idx = max(0, bisect_right(starts, mu) - 1)
        return self.segments[idx]

    def value(self, mu: Number) -> Number:
        return self.segment_at(mu).value(mu)

    def support_at(self, mu: Number) -> Support:
        return self.segment_at(mu).support

    def vertices(self) -> list[tuple[Number, Number]]:
        """Breakpoint/cost pairs, using each segment's own endpoint costs."""
        pts = [(self.segments[0].lo, self.segments[0].cost_lo)]
        for seg in self.segments:
            pts.append((seg.hi, seg.cost_hi))
        return pts

    def to_dict(self) -> dict:
        from .model import number_to_json as enc
        return {
            "breakpoints": [enc(b) for b in self.breakpoints],
            "segments": [
                {
                    "lo": enc(s.lo),
                    "hi": enc(s.hi),
                    "intercept": enc(s.intercept),
                    "slope": enc(s.slope),
                    "cost_lo": enc(s.cost_lo),
                    "cost_hi": enc(s.cost_hi),
                    "support": list(s.support),
                }
                for s in self.segments
            ],
        }

    def dump_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    def dump_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["lo", "hi", "intercept", "slope",
                             "cost_lo", "cost_hi", "support"])
            for s in self.segments:
                writer.writerow([
                    float(s.lo), float(s.hi), float(s.intercept), float(s.slope),
                    float(s.cost_lo), float(s.cost_hi),
                    " ".join(map(str, s.support)),
                ])


def _require_two_states(instance: Instance) -> None:
    if instance.num_states != 2:
        raise ValueError(
            f"two demand states required, instance has {instance.num_states}"
        )


def _belief(mu: Number) -> Belief:
    return Belief((1 - mu, mu))


def support_range(instance: Instance, support: Sequence[int],
                  exact: bool = False) -> Optional[tuple[Number, Number]]:
    """Belief interval on which the support carries the equilibrium.

    Solves min/max of the high-demand probability over the support's
    feasibility polytope; None when the polytope is empty.
    """
    _require_two_states(instance)
    inst = coerce_instance(instance, exact)
    net = inst.network
    sup = canonical_support(support)
    d1 = inst.states.demands[0]

    prog = lpmod.LinearProgram()
    mu = prog.add_variable("mu", 0, 1)
    y = {e: prog.add_variable(f"y{e}", 0, None) for e in sup}
    pi = {
        v: prog.add_variable(f"pi{v}", None, None)
        for v in range(net.num_vertices)
        if v != net.source
    }

    def pot(coeffs: dict, v: int, sign: int) -> None:
        if v != net.source:
            coeffs[pi[v]] = coeffs.get(pi[v], 0) + sign

    for i, e in enumerate(net.edges):
        coeffs: dict[int, Number] = {}
        if i in y:
            coeffs[y[i]] = e.cost.slope
        pot(coeffs, e.tail, 1)
        pot(coeffs, e.head, -1)
        if e.cost.offset != 0:
            coeffs[mu] = coeffs.get(mu, 0) + e.cost.offset * (1 - d1)
        rhs = -e.cost.offset * d1
        prog.add_constraint(coeffs, "=" if i in y else ">=", rhs, f"edge{i}")

    for v in range(net.num_vertices):
        if v == net.source:
            continue
        coeffs = {}
        for i in sup:
            e = net.edges[i]
            if e.head == v:
                coeffs[y[i]] = coeffs.get(y[i], 0) + 1
            if e.tail == v:
                coeffs[y[i]] = coeffs.get(y[i], 0) - 1
        rhs = 0
        if v == net.sink:
            coeffs[mu] = coeffs.get(mu, 0) - (1 - d1 * d1)
            rhs = d1 * d1
        prog.add_constraint(coeffs, "=", rhs, f"cons{v}")

    bounds = []
    for sense in ("min", "max"):
        prog.set_objective({mu: 1}, sense)
        sol = lpmod.solve(prog, exact=exact)
        if sol.status == lpmod.INFEASIBLE:
            return None
        if not sol.optimal:
            raise AtlasError(f"support-range LP failed: {sol.status} {sol.message}")
        bounds.append(sol.objective)
    lo, hi = bounds
    if not exact:
        lo, hi = max(0.0, min(1.0, lo)), max(0.0, min(1.0, hi))
    return (lo, hi)


def _segment_cost(instance: Instance, support: Support, mu: Number,
                  exact: bool) -> Number:
    flow, _ = solve_for_support(instance, _belief(mu), support, exact=exact)
    return flow.potentials[instance.network.sink]


_MID_FRACTIONS = (Fraction(1, 2), Fraction(5, 11), Fraction(7, 13), Fraction(3, 8))


def enumerate_supports(instance: Instance, exact: bool = False,
                       width_floor: float = WIDTH_FLOOR,
                       dedup_tol: float = DEDUP_TOL) -> PiecewiseLinearCost:
    """Sweep the belief interval and assemble the full cost curve."""
    _require_two_states(instance)
    inst = coerce_instance(instance, exact)
    eps = 0 if exact else dedup_tol
    found: dict[Support, tuple[Number, Number]] = {}
    todo: list[tuple[Number, Number]] = [
        (Fraction(0), Fraction(1)) if exact else (0.0, 1.0)
    ]
    budget = 4096

    while todo:
        lo, hi = todo.pop()
        width = hi - lo
        if width <= eps:
            continue
        if not exact and width <= width_floor:
            raise AtlasError(
                f"sweep stalled: interval [{lo}, {hi}] narrower than the "
                f"width floor {width_floor}"
            )
        budget -= 1
        if budget <= 0:
            raise AtlasError("sweep exceeded its iteration budget")

        rng = None
        for frac in _MID_FRACTIONS:
            mid = lo + width * (frac if exact else float(frac))
            flow = solve_wardrop(inst, _belief(mid), exact=exact)
            sup = active_support(inst, flow, exact=exact)
            rng = support_range(inst, sup, exact=exact)
            if rng is not None and rng[1] - rng[0] > eps:
                break
            rng = None
        if rng is None:
            raise AtlasError(
                f"degenerate support at every probe of [{lo}, {hi}]"
            )
        rlo, rhi = rng
        if sup in found:
            rlo = min(rlo, found[sup][0])
            rhi = max(rhi, found[sup][1])
        found[sup] = (rlo, rhi)
        if rlo - lo > eps:
            todo.append((lo, rlo))
        if hi - rhi > eps:
            todo.append((rhi, hi))

    return _assemble(inst, found, exact, dedup_tol)


def _assemble(inst: Instance, found: dict[Support, tuple[Number, Number]],
              exact: bool, dedup_tol: float) -> PiecewiseLinearCost:
    eps = 0 if exact else dedup_tol
    items = sorted(found.items(), key=lambda kv: (kv[1][0], kv[1][1]))
    segments: list[CostSegment] = []
    cursor = Fraction(0) if exact else 0.0
    for sup, (rlo, rhi) in items:
        lo = cursor if abs(rlo - cursor) <= eps or rlo < cursor else rlo
        if rlo - cursor > eps:
            raise AtlasError(
                f"gap in the sweep between {cursor} and {rlo}"
            )
        hi = rhi
        if hi - lo <= eps:
            continue
        c_lo = _segment_cost(inst, sup, lo, exact)
        c_hi = _segment_cost(inst, sup, hi, exact)
        slope = (c_hi - c_lo) / (hi - lo)
        intercept = c_lo - slope * lo
        if segments and segments[-1].support == sup:
            prev = segments.pop()
            lo, c_lo = prev.lo, prev.cost_lo
            slope = (c_hi - c_lo) / (hi - lo)
            intercept = c_lo - slope * lo
        segments.append(CostSegment(lo, hi, intercept, slope, sup, c_lo, c_hi))
        cursor = hi
    if not segments:
        raise AtlasError("empty atlas")
    if abs(cursor - 1) > eps:
        raise AtlasError(f"sweep stopped at {cursor}, not 1")
    # continuity across shared endpoints
    tol = 0 if exact else 1e-9
    for left, right in zip(segments, segments[1:]):
        if abs(left.cost_hi - right.cost_lo) > tol:
            raise AtlasError(
                f"discontinuity at {right.lo}: {left.cost_hi} vs {right.cost_lo}"
            )
    return PiecewiseLinearCost(tuple(segments), exact)


@lru_cache(maxsize=512)
def cached_atlas(instance: Instance, exact: bool = False) -> PiecewiseLinearCost:
    """Memoized sweep (instances are immutable and hashable)."""
    return enumerate_supports(instance, exact=exact)


def grid_oracle(instance: Instance, resolution: int, exact: bool = False
                ) -> list[tuple[Number, Number]]:
    """Equilibrium cost sampled directly on a uniform belief grid.

    Independent of the sweep: every point is its own equilibrium solve
    (the previous point's support only seeds the active-set search, which
    re-verifies the equilibrium conditions from scratch).
    """
    _require_two_states(instance)
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    inst = coerce_instance(instance, exact)
    out: list[tuple[Number, Number]] = []
    hint = None
    for k in range(resolution):
        mu = Fraction(k, resolution - 1) if exact else k / (resolution - 1)
        flow = solve_wardrop(inst, _belief(mu), exact=exact, support_hint=hint)
        hint = active_support(inst, flow, exact=exact)
        out.append((mu, flow.potentials[inst.network.sink]))
    return out
