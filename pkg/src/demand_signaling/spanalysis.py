"""Series-parallel structure: recognition, the full-information verdict,
and instance generators (golden gadgets, nested Braess, random families).

Recognition uses the standard reduction: repeatedly merge parallel edges
and contract interior vertices with in- and out-degree one; a two-terminal
directed graph is series-parallel iff this ends in a single source-sink
edge.  The reduction also yields the (unique) decomposition tree.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

from .model import AffineCost, Belief, Edge, Instance, Network, Number, StateSpace

ALWAYS_OPTIMAL = "AlwaysOptimal"
MAY_BE_SUBOPTIMAL = "MayBeSuboptimal"

# Decomposition trees are nested tuples:
#   ("edge", edge_id) | ("series", left, right) | ("parallel", left, right)
Tree = tuple


@dataclass(frozen=True)
class SpVerdict:
    is_series_parallel: bool
    tree: Optional[Tree]
    note: str = ""


def _tree_edges(tree: Tree) -> list[int]:
    if tree[0] == "edge":
        return [tree[1]]
    return _tree_edges(tree[1]) + _tree_edges(tree[2])


def canonical_tree(tree: Tree) -> Tree:
    """Flatten series/parallel chains and sort parallel children, yielding
    the unique canonical form of a series-parallel decomposition."""
    kind = tree[0]
    if kind == "edge":
        return tree
    children = []
    for child in tree[1:]:
        c = canonical_tree(child)
        if c[0] == kind:
            children.extend(c[1:])
        else:
            children.append(c)
    if kind == "parallel":
        children.sort(key=repr)
    return (kind, *children)


def is_series_parallel(network: Network) -> SpVerdict:
    """Reduce to a single source-sink edge; deterministic."""
    s, t = network.source, network.sink
    if s == t:
        return SpVerdict(False, None, "source equals sink")
    # live multigraph: list of (tail, head, tree)
    work: list[tuple[int, int, Tree]] = [
        (e.tail, e.head, ("edge", i)) for i, e in enumerate(network.edges)
    ]
    touched = {s, t} | {e.tail for e in network.edges} | {e.head for e in network.edges}
    if len(touched) < network.num_vertices:
        return SpVerdict(False, None, "isolated vertices")

    changed = True
    while changed:
        changed = False
        # parallel merges
        by_pair: dict[tuple[int, int], list[int]] = {}
        for idx, (a, b, _) in enumerate(work):
            by_pair.setdefault((a, b), []).append(idx)
        merged: list[tuple[int, int, Tree]] = []
        drop = set()
        for (a, b), idxs in sorted(by_pair.items()):
            if len(idxs) > 1:
                tree = work[idxs[0]][2]
                for j in idxs[1:]:
                    tree = ("parallel", tree, work[j][2])
                merged.append((a, b, tree))
                drop.update(idxs)
                changed = True
        work = [w for i, w in enumerate(work) if i not in drop] + merged

        # series contractions
        indeg: dict[int, list[int]] = {}
        outdeg: dict[int, list[int]] = {}
        for idx, (a, b, _) in enumerate(work):
            outdeg.setdefault(a, []).append(idx)
            indeg.setdefault(b, []).append(idx)
        for v in sorted(set(indeg) | set(outdeg)):
            if v in (s, t):
                continue
            ins = indeg.get(v, [])
            outs = outdeg.get(v, [])
            if len(ins) == 1 and len(outs) == 1 and ins[0] != outs[0]:
                i_in, i_out = ins[0], outs[0]
                a = work[i_in][0]
                b = work[i_out][1]
                tree = ("series", work[i_in][2], work[i_out][2])
                work = [w for i, w in enumerate(work) if i not in (i_in, i_out)]
                work.append((a, b, tree))
                changed = True
                break  # degree maps are stale; rebuild

    if len(work) == 1 and work[0][0] == s and work[0][1] == t:
        tree = work[0][2]
        assert sorted(_tree_edges(tree)) == list(range(network.num_edges))
        return SpVerdict(True, tree)
    return SpVerdict(False, None, f"reduction stalled with {len(work)} edges")


def full_info_verdict(network: Network) -> str:
    """Whether revealing the realized state is optimal for every cost and
    demand assignment on this graph (exactly the series-parallel case)."""
    return ALWAYS_OPTIMAL if is_series_parallel(network).is_series_parallel \
        else MAY_BE_SUBOPTIMAL


# ---------------------------------------------------------------------------
# golden gadgets
# ---------------------------------------------------------------------------

def two_link_example(prior_high: Number = Fraction(1, 2)) -> Instance:
    """Two parallel links (load-dependent vs constant 5/6), demands 1/2 and 1."""
    net = Network(
        2,
        (
            Edge(0, 1, AffineCost(1, 0)),
            Edge(0, 1, AffineCost(0, Fraction(5, 6))),
        ),
        source=0,
        sink=1,
    )
    return Instance(net, StateSpace((Fraction(1, 2), 1)),
                    Belief((1 - prior_high, prior_high)))


def braess_example(prior_high: Number = Fraction(1, 2)) -> Instance:
    """The four-vertex Braess gadget: two load-dependent diagonals, two
    constant links of 1/2 and a 1/20 cross edge; demands 2/5 and 1."""
    half, cross = Fraction(1, 2), Fraction(1, 20)
    net = Network(
        4,
        (
            Edge(0, 1, AffineCost(1, 0)),       # s -> v
            Edge(0, 2, AffineCost(0, half)),    # s -> w
            Edge(1, 3, AffineCost(0, half)),    # v -> t
            Edge(1, 2, AffineCost(0, cross)),   # v -> w
            Edge(2, 3, AffineCost(1, 0)),       # w -> t
        ),
        source=0,
        sink=3,
    )
    return Instance(net, StateSpace((Fraction(2, 5), 1)),
                    Belief((1 - prior_high, prior_high)))


def nested_braess(depth: int, prior_high: Number = Fraction(1, 2),
                  low_demand: Number = Fraction(2, 5),
                  slope_factor: Number = Fraction(1, 5),
                  offset_factor: Number = Fraction(1, 12)) -> Instance:
    """Braess gadgets nested along the cross edge.

    Level one is the plain gadget (unit slopes on the diagonals, constants
    1/2, cross 1/20, demands 2/5 and 1).  Each further level replaces the
    cross edge by a copy whose slopes and constants shrink by the given
    factors.  The cross traffic rises and then falls back to zero as the
    belief sweeps, so the inner copy runs through its own regimes twice;
    with the default factors the inner demand thresholds stay inside the
    cross-load range and the support count grows exponentially in depth.
    """
    if depth < 1:
        raise ValueError("depth must be at least one")

    def build(level: int, edges: list[Edge], vertex_count: list[int],
              s: int, t: int, slope: Number, offset: Number) -> None:
        v = vertex_count[0]
        w = v + 1
        vertex_count[0] += 2
        edges.append(Edge(s, v, AffineCost(slope, 0)))
        edges.append(Edge(s, w, AffineCost(0, offset)))
        edges.append(Edge(v, t, AffineCost(0, offset)))
        edges.append(Edge(w, t, AffineCost(slope, 0)))
        if level == 1:
            edges.append(Edge(v, w, AffineCost(0, offset * Fraction(1, 10))))
        else:
            build(level - 1, edges, vertex_count, v, w,
                  slope * slope_factor, offset * offset_factor)

    edges: list[Edge] = []
    vertex_count = [2]
    build(depth, edges, vertex_count, 0, 1, Fraction(1), Fraction(1, 2))
    net = Network(vertex_count[0], tuple(edges), source=0, sink=1)
    return Instance(net, StateSpace((low_demand, 1)),
                    Belief((1 - prior_high, prior_high)))


# ---------------------------------------------------------------------------
# random families (seeded)
# ---------------------------------------------------------------------------

def _random_cost(rng: random.Random, allow_free: bool = False) -> AffineCost:
    slope = rng.choice([0, 0, 1, 1, 2, 3, Fraction(1, 2)])
    offset = Fraction(rng.randint(0, 8), rng.choice([1, 2, 4, 5]))
    if slope == 0 and offset == 0:
        offset = Fraction(1, 2)
    return AffineCost(slope, offset)


def _random_two_state(rng: random.Random) -> tuple[StateSpace, Belief]:
    d1 = Fraction(rng.randint(1, 9), 10)
    prior = Fraction(rng.randint(1, 9), 10)
    return StateSpace((d1, 1)), Belief((1 - prior, prior))


def random_instance(seed: int, max_vertices: int = 10,
                    max_edges: int = 15) -> Instance:
    """Random two-state instance on a layered acyclic graph in which every
    edge lies on a source-sink path."""
    rng = random.Random(seed)
    n = rng.randint(2, max_vertices)
    pairs: set[tuple[int, int]] = set()
    for v in range(1, n):
        pairs.add((rng.randint(0, v - 1), v))
    for v in range(n - 1):
        if not any(a == v for a, _ in pairs):
            pairs.add((v, rng.randint(v + 1, n - 1)))
    edges = [Edge(a, b, _random_cost(rng)) for a, b in sorted(pairs)]
    while len(edges) < min(max_edges, n * (n - 1) // 2) and rng.random() < 0.6:
        a = rng.randint(0, n - 2)
        b = rng.randint(a + 1, n - 1)
        edges.append(Edge(a, b, _random_cost(rng)))
        if len(edges) >= max_edges:
            break
    edges.sort(key=lambda e: (e.tail, e.head))
    states, prior = _random_two_state(rng)
    net = Network(n, tuple(edges), source=0, sink=n - 1)
    return Instance(net, states, prior)


def random_sp_instance(seed: int, max_ops: int = 6
                       ) -> tuple[Instance, Tree]:
    """Random series-parallel instance built by a recorded composition
    script; returns the instance and its composition tree over edge ids."""
    rng = random.Random(seed)

    def compose(budget: int) -> list:
        # returns a nested script of "e" leaves
        if budget <= 0 or rng.random() < 0.3:
            return ["e"]
        kind = rng.choice(["series", "parallel"])
        return [kind, compose(budget - 1), compose(budget - 1)]

    script = compose(rng.randint(1, max_ops))

    edges: list[Edge] = []
    vertex_count = [2]

    def realize(node: list, s: int, t: int) -> Tree:
        if node[0] == "e":
            edges.append(Edge(s, t, _random_cost(rng)))
            return ("edge", len(edges) - 1)
        if node[0] == "series":
            mid = vertex_count[0]
            vertex_count[0] += 1
            left = realize(node[1], s, mid)
            right = realize(node[2], mid, t)
            return ("series", left, right)
        left = realize(node[1], s, t)
        right = realize(node[2], s, t)
        return ("parallel", left, right)

    tree = realize(script, 0, 1)
    states, prior = _random_two_state(rng)
    net = Network(vertex_count[0], tuple(edges), source=0, sink=1)
    return Instance(net, states, prior), tree
