"""Signaling schemes over demand states and their optimization.

A scheme is a nonnegative states-by-signals matrix whose rows sum to the
prior; sending a signal updates the players' belief to the column's
normalized posterior, so a scheme is a convex decomposition of the prior
into posteriors weighted by the signal masses.  Its cost is the
mass-weighted sum of posterior equilibrium costs.

Optimizers provided here, all for the cost-minimizing principal:

* exponential-schedule sampling with a multiplicative guarantee
  (two states),
* the exact optimum via the lower convex envelope of the cost curve
  (two states),
* the best scheme inducing equilibria with prescribed supports, as one
  linear program (any number of states),
* baseline schemes (full revelation, no signal) and signal pruning.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Optional, Sequence

from . import lp as lpmod
from .atlas import PiecewiseLinearCost, cached_atlas
from .equilibrium import (
    Support,
    active_support,
    canonical_support,
    equilibrium_cost,
    minimal_support,
    solve_wardrop,
)
from .model import (
    Belief,
    Instance,
    Number,
    coerce,
    coerce_instance,
    number_to_json,
)

FPTAS_SAMPLE_CAP = 10_000


class SchemeError(ValueError):
    """Ill-formed scheme or an unissued signal."""


@dataclass(frozen=True)
class SignalingScheme:
    """Joint probabilities of (state, signal); rows are states."""

    matrix: tuple[tuple[Number, ...], ...]

    @property
    def num_states(self) -> int:
        return len(self.matrix)

    @property
    def num_signals(self) -> int:
        return len(self.matrix[0]) if self.matrix else 0

    def signal_mass(self, signal: int) -> Number:
        return sum(row[signal] for row in self.matrix)

    def issued_signals(self, tol: float = 0.0) -> list[int]:
        return [s for s in range(self.num_signals) if self.signal_mass(s) > tol]

    def posterior(self, signal: int) -> Belief:
        mass = self.signal_mass(signal)
        if mass <= 0:
            raise SchemeError(f"signal {signal} is not issued")
        return Belief(tuple(row[signal] / mass for row in self.matrix))

    def row_marginals(self) -> tuple[Number, ...]:
        return tuple(sum(row) for row in self.matrix)

    @staticmethod
    def from_posteriors(parts: Sequence[tuple[Number, Belief]]
                        ) -> "SignalingScheme":
        """Build the joint matrix from (mass, posterior) pairs."""
        if not parts:
            raise SchemeError("at least one signal required")
        states = len(parts[0][1].probs)
        matrix = tuple(
            tuple(mass * post.probs[theta] for mass, post in parts)
            for theta in range(states)
        )
        return SignalingScheme(matrix)


def posterior(scheme: SignalingScheme, signal: int) -> Belief:
    """Bayes update after one signal: its column normalized by its mass."""
    return scheme.posterior(signal)


def scheme_cost(instance: Instance, scheme: SignalingScheme,
                exact: bool = False) -> Number:
    """Mass-weighted sum of posterior equilibrium costs."""
    total = 0
    for s in scheme.issued_signals():
        mass = scheme.signal_mass(s)
        total += mass * equilibrium_cost(instance, scheme.posterior(s), exact=exact)
    return total


def full_info_scheme(instance: Instance) -> SignalingScheme:
    """One deterministic signal per state (the diagonal matrix)."""
    probs = instance.prior.probs
    n = len(probs)
    matrix = tuple(
        tuple(probs[theta] if s == theta else 0 for s in range(n))
        for theta in range(n)
    )
    return SignalingScheme(matrix)


def no_signal_scheme(instance: Instance) -> SignalingScheme:
    """A single uninformative signal; the posterior stays the prior."""
    return SignalingScheme(tuple((p,) for p in instance.prior.probs))


# ---------------------------------------------------------------------------
# two-state machinery
# ---------------------------------------------------------------------------

def _two_state_scheme(prior_high: Number, left: Number, right: Number,
                      cost_left: Number, cost_right: Number
                      ) -> tuple[SignalingScheme, Number]:
    """Two-signal decomposition of the prior into posteriors left < right."""
    span = right - left
    mass_right = (prior_high - left) / span
    mass_left = (right - prior_high) / span
    scheme = SignalingScheme.from_posteriors([
        (mass_left, Belief((1 - left, left))),
        (mass_right, Belief((1 - right, right))),
    ])
    return scheme, mass_left * cost_left + mass_right * cost_right


def _lower_hull(points: Sequence[tuple[Number, Number]]
                ) -> list[tuple[Number, Number]]:
    """Monotone-chain lower convex hull of x-sorted points; collinear
    interior points are dropped, keeping the extreme ends."""
    hull: list[tuple[Number, Number]] = []
    for p in points:
        if hull and p[0] == hull[-1][0]:
            if p[1] < hull[-1][1]:
                hull.pop()
            else:
                continue
        while len(hull) >= 2:
            (x1, y1), (x2, y2) = hull[-2], hull[-1]
            if (x2 - x1) * (p[1] - y1) - (p[0] - x1) * (y2 - y1) <= 0:
                hull.pop()
            else:
                break
        hull.append(p)
    return hull


def _hull_segment_at(hull: Sequence[tuple[Number, Number]], x: Number
                     ) -> tuple[tuple[Number, Number], tuple[Number, Number]]:
    for a, b in zip(hull, hull[1:]):
        if a[0] <= x <= b[0]:
            return a, b
    raise ValueError(f"{x!r} outside the hull span")


def _chord_value(a: tuple[Number, Number], b: tuple[Number, Number],
                 x: Number) -> Number:
    if b[0] == a[0]:
        return min(a[1], b[1])
    t = (x - a[0]) / (b[0] - a[0])
    return a[1] + t * (b[1] - a[1])


def lower_envelope(atlas: PiecewiseLinearCost) -> list[tuple[Number, Number]]:
    """Vertices of the lower convex envelope of the cost curve; the optimal
    scheme cost at any prior is this envelope's value there."""
    return _lower_hull(atlas.vertices())


def envelope_value(atlas: PiecewiseLinearCost, mu: Number) -> Number:
    a, b = _hull_segment_at(lower_envelope(atlas), mu)
    return _chord_value(a, b, mu)


def optimal_two_states(instance: Instance, exact: bool = False
                       ) -> SignalingScheme:
    """Exact optimum for two states via the lower convex envelope of the
    piecewise-linear cost curve over its breakpoints."""
    inst = coerce_instance(instance, exact)
    atlas = cached_atlas(inst, exact)
    mu_star = inst.prior.mu_high
    if mu_star <= 0 or mu_star >= 1:
        return no_signal_scheme(inst)
    hull = _lower_hull(atlas.vertices())
    a, b = _hull_segment_at(hull, mu_star)
    envelope = _chord_value(a, b, mu_star)
    at_prior = atlas.value(mu_star)
    tol = 0 if exact else 1e-12
    if a[0] == mu_star or b[0] == mu_star or envelope >= at_prior - tol:
        return no_signal_scheme(inst)
    scheme, _ = _two_state_scheme(mu_star, a[0], b[0], a[1], b[1])
    return scheme


def fptas_sample_counts(instance: Instance, eps: float,
                        sample_cap: int = FPTAS_SAMPLE_CAP
                        ) -> tuple[int, int, int, bool]:
    """Schedule lengths per side: (used-, used+, theoretical, capped).

    The theoretical count makes the exponential schedule reach within any
    possible envelope-breakpoint gap of the prior.  Breakpoints are vertex
    coordinates of a system with entries bounded by the largest cost
    coefficient, so a Cramer/Hadamard determinant bound limits their
    denominators; together with the prior's own denominator this bounds
    the needed resolution.  Instantiated with constant one and capped.
    """
    if not 0 < eps < 1:
        raise ValueError("the approximation parameter must lie in (0, 1)")
    net = instance.network
    delta = eps / 3.0
    tau = net.num_vertices + net.num_edges
    big_b = max(
        [1.0]
        + [abs(float(e.cost.slope)) for e in net.edges]
        + [abs(float(e.cost.offset)) for e in net.edges]
    )
    prior_denom = Fraction(instance.prior.mu_high).limit_denominator(10**12).denominator
    log_bound = (
        math.log(max(prior_denom, 2))
        + tau * math.log(max(big_b, 2.0))
        + 0.5 * tau * math.log(max(tau, 2))
    )
    theoretical = int(math.ceil(log_bound / math.log1p(delta))) + 1
    used = min(theoretical, sample_cap)
    return used, used, theoretical, theoretical > used


def fptas_two_states(instance: Instance, eps: float,
                     sample_cap: int = FPTAS_SAMPLE_CAP,
                     evaluator: str = "auto") -> SignalingScheme:
    """Schedule-sampling scheme with cost at most ``(1 + eps)`` times the
    optimum (two states).

    Samples the cost curve at exponentially spaced points on both sides of
    the prior, takes the best straddling chord at the prior, and falls
    back to no signal when that chord does not beat it.  ``evaluator``
    selects how curve values are obtained: ``"direct"`` solves one
    equilibrium per sample, ``"atlas"`` evaluates the swept curve,
    ``"auto"`` picks by schedule size.
    """
    if instance.num_states != 2:
        raise ValueError("the schedule sampler requires exactly two states")
    inst = coerce_instance(instance, exact=False)
    mu_star = inst.prior.mu_high
    if mu_star <= 0 or mu_star >= 1:
        return no_signal_scheme(inst)

    m_minus, m_plus, theoretical, capped = fptas_sample_counts(
        inst, eps, sample_cap)
    if capped:
        warnings.warn(
            f"schedule bound {theoretical} exceeds the cap {sample_cap}; "
            f"sampling {sample_cap} points per side",
            RuntimeWarning,
            stacklevel=2,
        )
    delta = eps / 3.0
    shrink = 1.0 / (1.0 + delta)
    left, right = [], []
    f = 1.0
    for _ in range(m_minus + 1):
        left.append(mu_star - mu_star * f)
        f *= shrink
    f = 1.0
    for _ in range(m_plus + 1):
        right.append(mu_star + (1.0 - mu_star) * f)
        f *= shrink
    left = sorted({q for q in left if 0.0 <= q < mu_star})
    right = sorted({q for q in right if mu_star < q <= 1.0})

    if evaluator not in ("auto", "direct", "atlas"):
        raise ValueError(f"unknown evaluator {evaluator!r}")
    if evaluator == "auto":
        evaluator = "direct" if len(left) + len(right) <= 64 else "atlas"

    if evaluator == "atlas":
        curve = cached_atlas(inst, False)
        values = {q: curve.value(q) for q in left + right}
        at_prior = curve.value(mu_star)
    else:
        values = {}
        hint = None
        for q in left + [mu_star] + right:
            flow = solve_wardrop(inst, Belief((1 - q, q)), support_hint=hint)
            hint = active_support(inst, flow)
            values[q] = flow.potentials[inst.network.sink]
        at_prior = values[mu_star]

    hull = _lower_hull(
        [(q, values[q]) for q in left] + [(q, values[q]) for q in right]
    )
    a, b = _hull_segment_at(hull, mu_star)
    if a[0] >= mu_star or b[0] <= mu_star:
        return no_signal_scheme(inst)
    best = _chord_value(a, b, mu_star)
    if at_prior <= best:
        return no_signal_scheme(inst)
    scheme, _ = _two_state_scheme(mu_star, a[0], b[0], a[1], b[1])
    return scheme


# ---------------------------------------------------------------------------
# prescribed supports: one linear program for any number of states
# ---------------------------------------------------------------------------

def optimal_scheme_for_supports(instance: Instance,
                                supports: Sequence[Iterable[int]],
                                exact: bool = False) -> SignalingScheme:
    """Best scheme whose signals induce equilibria with the given supports.

    One variable block per signal: rescaled loads on its support, mass-
    scaled potentials, and joint probabilities; the objective sums the
    mass-scaled sink potentials, which equals the scheme cost.  Raises
    ``SchemeError`` when the supports cannot decompose the prior.
    """
    inst = coerce_instance(instance, exact)
    net = inst.network
    sups = [canonical_support(s) for s in supports]
    if len(set(sups)) != len(sups):
        raise SchemeError("supports must be pairwise distinct")
    if not sups:
        raise SchemeError("at least one support required")
    demands = inst.states.demands
    n_states = inst.num_states

    prog = lpmod.LinearProgram()
    y, tau, phi = {}, {}, {}
    for s, sup in enumerate(sups):
        for e in sup:
            y[e, s] = prog.add_variable(f"y{e}_{s}", 0, None)
        for v in range(net.num_vertices):
            if v != net.source:
                tau[v, s] = prog.add_variable(f"tau{v}_{s}", None, None)
        for theta in range(n_states):
            phi[theta, s] = prog.add_variable(f"phi{theta}_{s}", 0, None)

    def pot(coeffs: dict, v: int, s: int, sign: int) -> None:
        if v != net.source:
            key = tau[v, s]
            coeffs[key] = coeffs.get(key, 0) + sign

    for s, sup in enumerate(sups):
        in_sup = set(sup)
        for i, e in enumerate(net.edges):
            coeffs: dict[int, Number] = {}
            if i in in_sup:
                coeffs[y[i, s]] = e.cost.slope
            pot(coeffs, e.tail, s, 1)
            pot(coeffs, e.head, s, -1)
            if e.cost.offset != 0:
                for theta in range(n_states):
                    key = phi[theta, s]
                    coeffs[key] = coeffs.get(key, 0) + e.cost.offset * demands[theta]
            prog.add_constraint(coeffs, "=" if i in in_sup else ">=", 0,
                                f"edge{i}_{s}")
        for v in range(net.num_vertices):
            if v == net.source:
                continue
            coeffs = {}
            for e in sup:
                edge = net.edges[e]
                if edge.head == v:
                    coeffs[y[e, s]] = coeffs.get(y[e, s], 0) + 1
                if edge.tail == v:
                    coeffs[y[e, s]] = coeffs.get(y[e, s], 0) - 1
            if v == net.sink:
                for theta in range(n_states):
                    key = phi[theta, s]
                    coeffs[key] = coeffs.get(key, 0) - demands[theta] ** 2
            prog.add_constraint(coeffs, "=", 0, f"cons{v}_{s}")

    for theta in range(n_states):
        coeffs = {phi[theta, s]: 1 for s in range(len(sups))}
        prog.add_constraint(coeffs, "=", inst.prior.probs[theta], f"prior{theta}")

    prog.set_objective(
        {tau[net.sink, s]: 1 for s in range(len(sups))}, "min")
    sol = lpmod.solve(prog, exact=exact)
    if sol.status == lpmod.INFEASIBLE:
        raise SchemeError("the given supports cannot decompose the prior")
    if not sol.optimal:
        raise SchemeError(f"support LP failed: {sol.status} {sol.message}")

    matrix = tuple(
        tuple(sol[phi[theta, s]] for s in range(len(sups)))
        for theta in range(n_states)
    )
    scheme = SignalingScheme(matrix)
    return _canonical_order(scheme)


def _canonical_order(scheme: SignalingScheme) -> SignalingScheme:
    """Drop unissued signals and sort columns by posterior of the last
    state (ascending), for reproducible output."""
    issued = scheme.issued_signals()
    if not issued:
        raise SchemeError("scheme issues no signal")

    def key(s: int):
        post = scheme.posterior(s)
        return tuple(float(p) for p in post.probs[::-1])

    order = sorted(issued, key=key)
    matrix = tuple(tuple(row[s] for s in order) for row in scheme.matrix)
    return SignalingScheme(matrix)


# ---------------------------------------------------------------------------
# pruning
# ---------------------------------------------------------------------------

def prune_signals(scheme: SignalingScheme, instance: Instance,
                  exact: bool = False) -> SignalingScheme:
    """Merge redundant signals; never returns a costlier scheme.

    Signals with identical posteriors always merge.  A signal whose
    equilibrium support nests inside another issued signal's support is
    merged into it when that keeps the cost (it always does when both
    posteriors share one affine segment); merges that would raise the
    cost are rejected.  If more signals than states remain, the masses
    are re-optimized over the issued posteriors by a small LP, which can
    only reduce the cost and leaves at most one signal per state.
    """
    inst = coerce_instance(instance, exact)
    tol = 0 if exact else 1e-12

    cols = [
        tuple(row[s] for row in scheme.matrix)
        for s in scheme.issued_signals()
    ]
    if not cols:
        raise SchemeError("scheme issues no signal")

    def merge_into(target: list, extra: Sequence[Number]) -> None:
        for i, v in enumerate(extra):
            target[i] += v

    # identical posteriors merge unconditionally
    merged: list[list[Number]] = []
    for col in cols:
        mass = sum(col)
        post = tuple(v / mass for v in col)
        hit = None
        for existing in merged:
            emass = sum(existing)
            if all(abs(v / emass - p) <= (tol if not exact else 0)
                   for v, p in zip(existing, post)):
                hit = existing
                break
        if hit is not None:
            merge_into(hit, col)
        else:
            merged.append(list(col))

    def col_cost(col: Sequence[Number]) -> Number:
        mass = sum(col)
        return mass * equilibrium_cost(
            inst, Belief(tuple(v / mass for v in col)), exact=exact)

    def col_support(col: Sequence[Number]) -> Support:
        mass = sum(col)
        belief = Belief(tuple(v / mass for v in col))
        flow = solve_wardrop(inst, belief, exact=exact)
        return minimal_support(inst, flow, exact=exact)

    # nested-support merges, guarded against cost increases
    changed = True
    while changed and len(merged) > 1:
        changed = False
        sups = [col_support(c) for c in merged]
        for i in range(len(merged)):
            for j in range(len(merged)):
                if i == j:
                    continue
                if set(sups[i]) <= set(sups[j]):
                    joined = list(merged[j])
                    merge_into(joined, merged[i])
                    before = col_cost(merged[i]) + col_cost(merged[j])
                    after = col_cost(joined)
                    if after <= before + (0 if exact else 1e-12):
                        rest = [merged[k] for k in range(len(merged))
                                if k not in (i, j)]
                        merged = rest + [joined]
                        changed = True
                        break
            if changed:
                break

    n_states = scheme.num_states
    if len(merged) > n_states:
        merged = _reweight(inst, merged, exact)

    out = SignalingScheme(tuple(
        tuple(col[theta] for col in merged) for theta in range(n_states)
    ))
    return _canonical_order(out)


def _reweight(inst: Instance, cols: list[list[Number]], exact: bool
              ) -> list[list[Number]]:
    """Re-optimize masses over the issued posteriors (decomposition LP)."""
    posteriors = []
    costs = []
    for col in cols:
        mass = sum(col)
        post = tuple(v / mass for v in col)
        posteriors.append(post)
        costs.append(equilibrium_cost(inst, Belief(post), exact=exact))
    prog = lpmod.LinearProgram()
    lam = [prog.add_variable(f"l{i}", 0, None) for i in range(len(cols))]
    for theta in range(inst.num_states):
        prog.add_constraint(
            {lam[i]: posteriors[i][theta] for i in range(len(cols))},
            "=",
            inst.prior.probs[theta],
        )
    prog.set_objective({lam[i]: costs[i] for i in range(len(cols))}, "min")
    sol = lpmod.solve(prog, exact=exact)
    if not sol.optimal:
        raise SchemeError(f"mass re-optimization failed: {sol.status}")
    out = []
    for i, post in enumerate(posteriors):
        mass = sol[lam[i]]
        if mass > 0:
            out.append([mass * p for p in post])
    return out


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

def scheme_to_dict(instance: Instance, scheme: SignalingScheme,
                   exact: bool = False) -> dict:
    """JSON-ready summary: per-signal mass, posterior, support, cost."""
    inst = coerce_instance(instance, exact)
    signals = []
    total = 0
    for s in scheme.issued_signals():
        mass = scheme.signal_mass(s)
        post = scheme.posterior(s)
        flow = solve_wardrop(inst, post, exact=exact)
        sup = minimal_support(inst, flow, exact=exact)
        cost = flow.potentials[inst.network.sink]
        total += mass * cost
        signals.append({
            "mass": number_to_json(mass),
            "posterior": [number_to_json(p) for p in post.probs],
            "support": list(sup),
            "cost": number_to_json(cost),
        })
    return {"signals": signals, "total_cost": number_to_json(total)}
