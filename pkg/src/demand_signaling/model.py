"""Problem data types: networks with affine edge costs, demand states, beliefs.

All types are immutable (frozen dataclasses) and therefore hashable and safe
to share across concurrent solver calls.  Numeric fields accept ``int``,
``float`` or ``fractions.Fraction``; solvers coerce to one numeric mode
(binary64 by default, exact rationals on request) before computing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from fractions import Fraction
from numbers import Rational
from typing import Iterable, Sequence, Union

Number = Union[int, float, Fraction]

#: Default tolerances (binary64 mode).  Exact mode compares exactly.
SUM_TOL = 1e-12          # belief entries must sum to 1 within this
LOAD_TOL = 1e-10         # edge loads may undershoot zero by this much
WARDROP_TOL = 1e-8       # equilibrium (potential) residual
ACTIVE_TOL = 1e-7        # tightness detection; must exceed WARDROP_TOL
FEAS_TOL = 1e-9          # LP feasibility / optimality residual
WIDTH_FLOOR = 1e-8       # minimum belief-interval width in the sweep
DEDUP_TOL = 1e-9         # breakpoint deduplication


class ModelError(ValueError):
    """Malformed problem data."""


def as_fraction(x: Number) -> Fraction:
    """Coerce a number to an exact rational (floats convert exactly)."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, Rational):
        return Fraction(x)
    return Fraction(x)  # exact binary expansion of the float


def coerce(x: Number, exact: bool) -> Number:
    return as_fraction(x) if exact else float(x)


def parse_number(value) -> Number:
    """Parse a JSON scalar: plain number, or a rational as a "p/q" string."""
    if isinstance(value, str):
        return Fraction(value)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ModelError(f"not a number: {value!r}")
    return value


def number_to_json(x: Number):
    if isinstance(x, Fraction):
        if x.denominator == 1:
            return int(x)
        return f"{x.numerator}/{x.denominator}"
    return x


@dataclass(frozen=True)
class AffineCost:
    """Cost ``slope * load + offset`` of one edge.

    ``free=True`` marks an intentionally costless edge; otherwise a zero
    slope together with a zero offset is flagged by validation.
    """

    slope: Number
    offset: Number
    free: bool = False

    def __call__(self, load: Number) -> Number:
        return self.slope * load + self.offset


@dataclass(frozen=True)
class Edge:
    tail: int
    head: int
    cost: AffineCost


@dataclass(frozen=True)
class Network:
    """Directed network with one source and one sink.

    Vertices are ``0 .. num_vertices-1``.  Parallel edges are permitted;
    edge ids are positions in ``edges``.
    """

    num_vertices: int
    edges: tuple[Edge, ...]
    source: int
    sink: int

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def out_edges(self, v: int) -> list[int]:
        return [i for i, e in enumerate(self.edges) if e.tail == v]

    def in_edges(self, v: int) -> list[int]:
        return [i for i, e in enumerate(self.edges) if e.head == v]


@dataclass(frozen=True)
class StateSpace:
    """Demand volumes per state, strictly increasing; normalized form has
    the largest demand equal to one."""

    demands: tuple[Number, ...]

    @property
    def num_states(self) -> int:
        return len(self.demands)


@dataclass(frozen=True)
class Belief:
    """Probability distribution over demand states."""

    probs: tuple[Number, ...]

    def __len__(self) -> int:
        return len(self.probs)

    @staticmethod
    def point_mass(index: int, num_states: int) -> "Belief":
        return Belief(tuple(1 if i == index else 0 for i in range(num_states)))

    @staticmethod
    def two_state(mu_high: Number) -> "Belief":
        return Belief((1 - mu_high, mu_high))

    @property
    def mu_high(self) -> Number:
        """Probability of the last (largest-demand) state; the scan
        parameter for two-state instances."""
        return self.probs[-1]


@dataclass(frozen=True)
class Instance:
    """A full problem datum: network, demand states, prior belief."""

    network: Network
    states: StateSpace
    prior: Belief
    demand_scale: Number = 1

    @property
    def num_states(self) -> int:
        return self.states.num_states


@dataclass(frozen=True)
class ValidationReport:
    errors: tuple[str, ...]
    warnings: tuple[str, ...]
    unroutable_edges: tuple[int, ...]

    @property
    def ok(self) -> bool:
        return not self.errors


def _reachable(network: Network, start: int, forward: bool) -> set[int]:
    adj: dict[int, list[int]] = {}
    for e in network.edges:
        a, b = (e.tail, e.head) if forward else (e.head, e.tail)
        adj.setdefault(a, []).append(b)
    seen = {start}
    stack = [start]
    while stack:
        v = stack.pop()
        for w in adj.get(v, ()):
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return seen


def unroutable_edges(network: Network) -> list[int]:
    """Edge ids that lie on no directed source-sink path."""
    fwd = _reachable(network, network.source, forward=True)
    bwd = _reachable(network, network.sink, forward=False)
    return [
        i
        for i, e in enumerate(network.edges)
        if not (e.tail in fwd and e.head in bwd)
    ]


def validate(instance: Instance) -> ValidationReport:
    """Report every violated invariant; never raises."""
    errors: list[str] = []
    warnings: list[str] = []
    net = instance.network

    if not (0 <= net.source < net.num_vertices):
        errors.append(f"source {net.source} out of range")
    if not (0 <= net.sink < net.num_vertices):
        errors.append(f"sink {net.sink} out of range")
    if net.source == net.sink:
        errors.append("degenerate terminals: source equals sink")

    for i, e in enumerate(net.edges):
        if e.tail == e.head:
            errors.append(f"edge {i}: self-loop at vertex {e.tail}")
        if not (0 <= e.tail < net.num_vertices and 0 <= e.head < net.num_vertices):
            errors.append(f"edge {i}: endpoint out of range")
        if e.cost.slope < 0:
            errors.append(f"edge {i}: negative cost slope")
        if e.cost.offset < 0:
            errors.append(f"edge {i}: negative cost offset")
        if e.cost.slope == 0 and e.cost.offset == 0 and not e.cost.free:
            errors.append(f"edge {i}: zero cost but not marked free")

    demands = instance.states.demands
    if not demands:
        errors.append("no demand states")
    else:
        if any(d <= 0 for d in demands):
            errors.append("demands must be positive")
        if any(demands[i] >= demands[i + 1] for i in range(len(demands) - 1)):
            errors.append("demands must be strictly increasing")
        if demands[-1] != 1:
            warnings.append(
                f"largest demand is {demands[-1]!r}, not 1; call normalize()"
            )

    probs = instance.prior.probs
    if len(probs) != instance.states.num_states:
        errors.append(
            f"prior has {len(probs)} entries for {instance.states.num_states} states"
        )
    if any(p < 0 for p in probs):
        errors.append("prior has negative entries")
    total = sum(probs)
    exact = all(isinstance(p, Rational) for p in probs)
    if (total != 1) if exact else abs(total - 1) > SUM_TOL:
        errors.append(f"prior sums to {total!r}, not 1")

    bad: tuple[int, ...] = ()
    if net.source != net.sink and net.num_vertices >= 2:
        bad = tuple(unroutable_edges(net))
        for i in bad:
            warnings.append(f"edge {i} lies on no source-sink path")

    return ValidationReport(tuple(errors), tuple(warnings), bad)


def prune_unroutable(instance: Instance) -> Instance:
    """Drop edges on no source-sink path and relabel vertices compactly."""
    net = instance.network
    bad = set(unroutable_edges(net))
    kept = [e for i, e in enumerate(net.edges) if i not in bad]
    used = sorted({net.source, net.sink} | {e.tail for e in kept} | {e.head for e in kept})
    remap = {v: i for i, v in enumerate(used)}
    edges = tuple(Edge(remap[e.tail], remap[e.head], e.cost) for e in kept)
    pruned = Network(len(used), edges, remap[net.source], remap[net.sink])
    return replace(instance, network=pruned)


def normalize(instance: Instance) -> Instance:
    """Rescale demands so the largest equals one.

    Slopes absorb the scale (``a <- a * D``), which preserves every per-unit
    cost; multiply reported totals by ``demand_scale`` to undo.
    """
    demands = instance.states.demands
    if not demands or demands[-1] <= 0:
        raise ModelError("normalize requires a positive largest demand")
    scale = demands[-1]
    if scale == 1:
        return instance
    exact = isinstance(scale, Rational) and all(
        isinstance(d, Rational) for d in demands
    )
    if not exact:
        scale = float(scale)
    new_demands = tuple(d / scale for d in demands)
    net = instance.network
    edges = tuple(
        Edge(e.tail, e.head, AffineCost(e.cost.slope * scale, e.cost.offset, e.cost.free))
        for e in net.edges
    )
    return Instance(
        network=Network(net.num_vertices, edges, net.source, net.sink),
        states=StateSpace(new_demands),
        prior=instance.prior,
        demand_scale=instance.demand_scale * scale,
    )


# ---------------------------------------------------------------------------
# JSON instance format:
#   {"vertices": n, "edges": [{"tail": v, "head": w, "a": .., "b": ..}, ...],
#    "s": .., "t": .., "demands": [...], "prior": [...]}
# Rationals are encoded as "p/q" strings.  Optional per-edge "free": true
# marks intentionally costless edges; optional top-level "demand_scale".
# ---------------------------------------------------------------------------

def instance_to_dict(instance: Instance) -> dict:
    net = instance.network
    return {
        "vertices": net.num_vertices,
        "edges": [
            {
                "tail": e.tail,
                "head": e.head,
                "a": number_to_json(e.cost.slope),
                "b": number_to_json(e.cost.offset),
                **({"free": True} if e.cost.free else {}),
            }
            for e in net.edges
        ],
        "s": net.source,
        "t": net.sink,
        "demands": [number_to_json(d) for d in instance.states.demands],
        "prior": [number_to_json(p) for p in instance.prior.probs],
        "demand_scale": number_to_json(instance.demand_scale),
    }


def instance_from_dict(data: dict) -> Instance:
    try:
        edges = tuple(
            Edge(
                int(entry["tail"]),
                int(entry["head"]),
                AffineCost(
                    parse_number(entry["a"]),
                    parse_number(entry["b"]),
                    bool(entry.get("free", False)),
                ),
            )
            for entry in data["edges"]
        )
        network = Network(int(data["vertices"]), edges, int(data["s"]), int(data["t"]))
        states = StateSpace(tuple(parse_number(d) for d in data["demands"]))
        prior = Belief(tuple(parse_number(p) for p in data["prior"]))
        scale = parse_number(data.get("demand_scale", 1))
    except (KeyError, TypeError) as exc:
        raise ModelError(f"bad instance JSON: {exc}") from exc
    return Instance(network, states, prior, scale)


def dump_instance(instance: Instance, path) -> None:
    with open(path, "w") as fh:
        json.dump(instance_to_dict(instance), fh, indent=2)
        fh.write("\n")


def load_instance(path) -> Instance:
    with open(path) as fh:
        return instance_from_dict(json.load(fh))


def coerce_instance(instance: Instance, exact: bool) -> Instance:
    """Force every numeric field into one numeric mode."""
    net = instance.network
    edges = tuple(
        Edge(
            e.tail,
            e.head,
            AffineCost(coerce(e.cost.slope, exact), coerce(e.cost.offset, exact), e.cost.free),
        )
        for e in net.edges
    )
    return Instance(
        network=Network(net.num_vertices, edges, net.source, net.sink),
        states=StateSpace(tuple(coerce(d, exact) for d in instance.states.demands)),
        prior=Belief(tuple(coerce(p, exact) for p in instance.prior.probs)),
        demand_scale=coerce(instance.demand_scale, exact),
    )


def coerce_belief(belief: Belief | Sequence[Number], exact: bool) -> Belief:
    probs = belief.probs if isinstance(belief, Belief) else tuple(belief)
    return Belief(tuple(coerce(p, exact) for p in probs))
