"""Belief-conditioned Wardrop equilibria on affine-cost networks.

Under a belief ``mu`` over demand states the expected cost of an edge is

    cost(x_e | mu) = a_e * S2 * x_e + b_e * S1,
    S1 = sum_theta mu_theta * d_theta,     S2 = sum_theta mu_theta * d_theta**2,

where ``x_e`` is the population share on the edge.  The equilibrium is the
minimizer of the Beckmann potential over unit share flows; for a fixed
active-edge set (a "support") it solves a linear system in the rescaled
loads ``y_e = S2 * x_e`` and vertex potentials.

Two routes are implemented and cross-checked: a conjugate Frank-Wolfe
descent (binary64 only) and an active-set method that solves the support's
linear system directly and repairs the support until the equilibrium
conditions hold.  The default solver runs Frank-Wolfe for a support guess,
then polishes on the linear system; in exact mode all verification and the
final answer are computed in rational arithmetic.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Optional, Sequence

import numpy as np

from .model import (
    ACTIVE_TOL,
    LOAD_TOL,
    WARDROP_TOL,
    AffineCost,
    Belief,
    Edge,
    Instance,
    Network,
    Number,
    StateSpace,
    coerce_belief,
    coerce_instance,
)

Support = tuple[int, ...]

FRANK_WOLFE_MAX_ITER = 15000
_REPAIR_CAP = 120


class SupportError(ValueError):
    """Support is not usable: not spanning, or its linear system is singular."""


class ConvergenceError(RuntimeError):
    """Equilibrium iteration exhausted its budget; carries the residual."""


@dataclass(frozen=True)
class Flow:
    """One equilibrium: share loads per edge and vertex potentials."""

    loads: tuple[Number, ...]
    potentials: tuple[Number, ...]
    belief: Belief


@dataclass(frozen=True)
class SupportFeasibility:
    negative_loads: tuple[int, ...]
    deviations: tuple[int, ...]

    @property
    def ok(self) -> bool:
        return not self.negative_loads and not self.deviations


def belief_moments(belief: Belief, states: StateSpace) -> tuple[Number, Number]:
    if len(belief.probs) != states.num_states:
        raise ValueError(
            f"belief has {len(belief.probs)} entries for {states.num_states} states"
        )
    s1 = sum(m * d for m, d in zip(belief.probs, states.demands))
    s2 = sum(m * d * d for m, d in zip(belief.probs, states.demands))
    return s1, s2


def expected_edge_cost(cost: AffineCost, load: Number, belief: Belief,
                       states: StateSpace) -> Number:
    """Expected cost of one edge at share load ``load`` under ``belief``."""
    s1, s2 = belief_moments(belief, states)
    return cost.slope * s2 * load + cost.offset * s1


def virtual_demand(belief: Belief, states: StateSpace) -> Number:
    """Deterministic demand whose equilibrium reproduces the belief's one."""
    s1, s2 = belief_moments(belief, states)
    if s1 <= 0:
        raise ValueError("degenerate belief: expected demand is zero")
    return s2 / s1


def canonical_support(edge_ids: Iterable[int]) -> Support:
    return tuple(sorted(set(edge_ids)))


# ---------------------------------------------------------------------------
# shortest paths (shared by both numeric modes, deterministic tie-breaks)
# ---------------------------------------------------------------------------

def _adjacency(instance: Instance) -> list[list[tuple[int, int]]]:
    adj: list[list[tuple[int, int]]] = [[] for _ in range(instance.network.num_vertices)]
    for i, e in enumerate(instance.network.edges):
        adj[e.tail].append((i, e.head))
    return adj


def shortest_potentials(instance: Instance, edge_costs: Sequence[Number]
                        ) -> list[Optional[Number]]:
    """Cheapest-route cost from the source to every vertex (None: unreachable)."""
    n = instance.network.num_vertices
    adj = _adjacency(instance)
    dist: list[Optional[Number]] = [None] * n
    dist[instance.network.source] = 0 * edge_costs[0] if edge_costs else 0
    heap = [(dist[instance.network.source], instance.network.source)]
    done = [False] * n
    while heap:
        d, v = heapq.heappop(heap)
        if done[v]:
            continue
        done[v] = True
        for i, w in adj[v]:
            nd = d + edge_costs[i]
            if dist[w] is None or nd < dist[w]:
                dist[w] = nd
                heapq.heappush(heap, (nd, w))
    return dist


def _shortest_path_edges(instance: Instance, edge_costs: Sequence[Number]
                         ) -> list[int]:
    """Edge ids of one cheapest source-sink route (lowest-id tie-break)."""
    n = instance.network.num_vertices
    adj = _adjacency(instance)
    src, snk = instance.network.source, instance.network.sink
    dist: list[Optional[Number]] = [None] * n
    pred: list[Optional[int]] = [None] * n
    dist[src] = 0 * edge_costs[0] if edge_costs else 0
    heap = [(dist[src], src)]
    done = [False] * n
    while heap:
        d, v = heapq.heappop(heap)
        if done[v]:
            continue
        done[v] = True
        for i, w in adj[v]:
            nd = d + edge_costs[i]
            if dist[w] is None or nd < dist[w]:
                dist[w] = nd
                pred[w] = i
                heapq.heappush(heap, (nd, w))
    if dist[snk] is None:
        raise SupportError("sink unreachable from source")
    path = []
    v = snk
    while v != src:
        i = pred[v]
        path.append(i)
        v = instance.network.edges[i].tail
    path.reverse()
    return path


# ---------------------------------------------------------------------------
# linear system of one support
# ---------------------------------------------------------------------------

def _solve_linear(rows: list[list[Number]], rhs: list[Number], exact: bool,
                  ) -> Optional[list[Number]]:
    """Solve a (possibly singular) square system.

    Exact mode: fraction-free-order Gaussian elimination, free variables
    pinned to zero (deterministic lowest-index pivoting).  Float mode:
    LAPACK solve, least-squares fallback for singular systems.  Returns
    None when inconsistent.
    """
    n = len(rows)
    if not exact:
        a = np.array(rows, dtype=float)
        b = np.array(rhs, dtype=float)
        try:
            x = np.linalg.solve(a, b)
        except np.linalg.LinAlgError:
            x, *_ = np.linalg.lstsq(a, b, rcond=None)
        scale = 1.0 + float(np.max(np.abs(a))) + float(np.max(np.abs(b), initial=0.0))
        if not np.all(np.isfinite(x)) or np.max(np.abs(a @ x - b)) > 1e-7 * scale:
            return None
        return [float(v) for v in x]

    a = [[Fraction(v) for v in row] + [Fraction(r)] for row, r in zip(rows, rhs)]
    piv_col_of_row: list[int] = []
    r = 0
    for col in range(n):
        piv = next((i for i in range(r, n) if a[i][col] != 0), None)
        if piv is None:
            continue
        a[r], a[piv] = a[piv], a[r]
        pv = a[r][col]
        a[r] = [v / pv for v in a[r]]
        for i in range(n):
            if i != r and a[i][col] != 0:
                f = a[i][col]
                a[i] = [x - f * y for x, y in zip(a[i], a[r])]
        piv_col_of_row.append(col)
        r += 1
        if r == n:
            break
    for i in range(r, n):
        if a[i][n] != 0:
            return None
    x = [Fraction(0)] * n
    for row, col in enumerate(piv_col_of_row):
        x[col] = a[row][n]
    return x


def solve_for_support(instance: Instance, belief: Belief, support: Iterable[int],
                      exact: bool = False, load_tol: float = LOAD_TOL,
                      wardrop_tol: float = WARDROP_TOL,
                      ) -> tuple[Flow, SupportFeasibility]:
    """Solve the equality system of a support and report which equilibrium
    inequalities fail (negative loads, or profitable deviations off it).

    The belief lies in the support's feasibility polytope iff both families
    are empty.  Raises ``SupportError`` when the support does not span every
    vertex or its system is singular/inconsistent.
    """
    inst = coerce_instance(instance, exact)
    bel = coerce_belief(belief, exact)
    sup = canonical_support(support)
    net = inst.network
    edges = net.edges
    if any(not 0 <= i < len(edges) for i in sup):
        raise SupportError("support references unknown edge ids")

    # spanning check: every vertex reachable from the source inside the support
    reach = {net.source}
    frontier = [net.source]
    out_by_tail: dict[int, list[int]] = {}
    for i in sup:
        out_by_tail.setdefault(edges[i].tail, []).append(i)
    while frontier:
        v = frontier.pop()
        for i in out_by_tail.get(v, ()):
            w = edges[i].head
            if w not in reach:
                reach.add(w)
                frontier.append(w)
    if len(reach) != net.num_vertices:
        raise SupportError(
            f"support spans {len(reach)} of {net.num_vertices} vertices"
        )

    s1, s2 = belief_moments(bel, inst.states)
    zero = Fraction(0) if exact else 0.0

    # unknowns: y_e for e in support, then potentials for every vertex but s
    y_index = {e: k for k, e in enumerate(sup)}
    pi_index = {}
    k = len(sup)
    for v in range(net.num_vertices):
        if v != net.source:
            pi_index[v] = k
            k += 1
    dim = k

    rows: list[list[Number]] = []
    rhs: list[Number] = []
    for e in sup:
        row = [zero] * dim
        edge = edges[e]
        row[y_index[e]] = edge.cost.slope
        if edge.tail != net.source:
            row[pi_index[edge.tail]] = 1
        if edge.head != net.source:
            row[pi_index[edge.head]] = -1
        rows.append(row)
        rhs.append(-edge.cost.offset * s1)
    for v in range(net.num_vertices):
        if v == net.source:
            continue
        row = [zero] * dim
        for e in sup:
            if edges[e].head == v:
                row[y_index[e]] += 1
            if edges[e].tail == v:
                row[y_index[e]] -= 1
        rows.append(row)
        rhs.append(s2 if v == net.sink else zero)

    solution = _solve_linear(rows, rhs, exact)
    if solution is None:
        raise SupportError("singular support system")

    loads = [zero] * len(edges)
    for e in sup:
        loads[e] = solution[y_index[e]] / s2
    potentials = [zero] * net.num_vertices
    for v, idx in pi_index.items():
        potentials[v] = solution[idx]

    neg_tol = 0 if exact else -load_tol
    dev_tol = 0 if exact else wardrop_tol
    negative = tuple(e for e in sup if loads[e] < neg_tol)
    deviations = tuple(
        i
        for i, edge in enumerate(edges)
        if i not in y_index
        and potentials[edge.head] - potentials[edge.tail]
        > edge.cost.offset * s1 + dev_tol
    )
    flow = Flow(tuple(loads), tuple(potentials), bel)
    return flow, SupportFeasibility(negative, deviations)


def edge_costs_at(instance: Instance, flow: Flow) -> list[Number]:
    s1, s2 = belief_moments(flow.belief, instance.states)
    return [
        e.cost.slope * s2 * x + e.cost.offset * s1
        for e, x in zip(instance.network.edges, flow.loads)
    ]


def active_support(instance: Instance, flow: Flow, exact: bool = False,
                   active_tol: float = ACTIVE_TOL) -> Support:
    """All edges tight against cheapest-route potentials at this flow."""
    inst = coerce_instance(instance, exact)
    costs = edge_costs_at(inst, flow)
    psi = shortest_potentials(inst, costs)
    tol = 0 if exact else active_tol
    out = []
    for i, e in enumerate(inst.network.edges):
        if psi[e.tail] is None or psi[e.head] is None:
            continue
        if abs(psi[e.head] - psi[e.tail] - costs[i]) <= tol:
            out.append(i)
    return tuple(out)


def minimal_support(instance: Instance, flow: Flow, exact: bool = False,
                    active_tol: float = ACTIVE_TOL,
                    load_tol: float = LOAD_TOL) -> Support:
    """Load-carrying edges, completed with tight edges so that every vertex
    stays reachable; the smallest support consistent with the flow."""
    inst = coerce_instance(instance, exact)
    net = inst.network
    tol = 0 if exact else load_tol
    chosen = {i for i, x in enumerate(flow.loads) if x > tol}
    tight = set(active_support(inst, flow, exact=exact, active_tol=active_tol))
    chosen &= tight  # guard against stray loads on non-tight edges

    reach = {net.source}
    changed = True
    while changed:
        changed = False
        for i in sorted(chosen):
            e = net.edges[i]
            if e.tail in reach and e.head not in reach:
                reach.add(e.head)
                changed = True
    # complete with tight edges, lowest id first
    while len(reach) < net.num_vertices:
        grown = False
        for i in sorted(tight - chosen):
            e = net.edges[i]
            if e.tail in reach and e.head not in reach:
                chosen.add(i)
                reach.add(e.head)
                grown = True
                break
        if not grown:
            break  # disconnected remainder; caller sees a non-spanning set
    return canonical_support(chosen)


# ---------------------------------------------------------------------------
# conjugate Frank-Wolfe (binary64)
# ---------------------------------------------------------------------------

def _aon_loads(instance: Instance, costs: np.ndarray) -> np.ndarray:
    path = _shortest_path_edges(instance, [float(c) for c in costs])
    x = np.zeros(instance.network.num_edges)
    x[path] = 1.0
    return x


def frank_wolfe(instance: Instance, belief: Belief,
                rel_gap: float = 1e-11,
                max_iter: int = FRANK_WOLFE_MAX_ITER,
                ) -> tuple[np.ndarray, float, int]:
    """Conjugate Frank-Wolfe on the Beckmann potential.

    Returns (share loads, final relative gap, iterations).
    """
    inst = coerce_instance(instance, exact=False)
    bel = coerce_belief(belief, exact=False)
    s1, s2 = belief_moments(bel, inst.states)
    slopes = np.array([e.cost.slope for e in inst.network.edges], dtype=float)
    offsets = np.array([e.cost.offset for e in inst.network.edges], dtype=float)
    big_a = slopes * s2
    big_b = offsets * s1

    x = _aon_loads(inst, big_b)
    target_prev: Optional[np.ndarray] = None
    gap_rel = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        costs = big_a * x + big_b
        y = _aon_loads(inst, costs)
        total = float(costs @ x)
        gap = float(costs @ (x - y))
        gap_rel = gap / total if total > 0 else 0.0
        if gap_rel <= rel_gap:
            break

        target = y
        if target_prev is not None:
            d1 = target_prev - x
            d2 = y - x
            n12 = float(d2 @ (big_a * d1))
            n11 = float(d1 @ (big_a * d1))
            denom = n12 - n11
            if denom != 0.0:
                alpha = min(max(n12 / denom, 0.0), 0.999)
                target = alpha * target_prev + (1.0 - alpha) * y
        d = target - x
        curv = float(d @ (big_a * d))
        slope0 = float(costs @ d)
        if curv > 0:
            lam = min(max(-slope0 / curv, 0.0), 1.0)
        else:
            lam = 1.0 if slope0 < 0 else 0.0
        if lam <= 0.0:
            target = y  # conjugate direction stalled; fall back to plain step
            d = target - x
            curv = float(d @ (big_a * d))
            slope0 = float(costs @ d)
            lam = min(max(-slope0 / curv, 0.0), 1.0) if curv > 0 else (
                1.0 if slope0 < 0 else 0.0)
            if lam <= 0.0:
                break
        x = x + lam * d
        target_prev = target
    return x, gap_rel, it


def _flow_from_loads(instance: Instance, belief: Belief, loads: np.ndarray) -> Flow:
    inst = coerce_instance(instance, exact=False)
    bel = coerce_belief(belief, exact=False)
    s1, s2 = belief_moments(bel, inst.states)
    costs = [
        e.cost.slope * s2 * x + e.cost.offset * s1
        for e, x in zip(inst.network.edges, loads)
    ]
    psi = shortest_potentials(inst, costs)
    pots = tuple(0.0 if p is None else float(p) for p in psi)
    return Flow(tuple(float(v) for v in loads), pots, bel)


# ---------------------------------------------------------------------------
# the solver: support seeds + linear-system polish and repair
# ---------------------------------------------------------------------------

def _support_seeds(instance: Instance, belief: Belief,
                   hint: Optional[Support], active_tol: float):
    inst = coerce_instance(instance, exact=False)
    bel = coerce_belief(belief, exact=False)
    if hint is not None:
        yield canonical_support(hint)
    loads, _, _ = frank_wolfe(inst, bel)
    fw_flow = _flow_from_loads(inst, bel, loads)
    yield active_support(inst, fw_flow, active_tol=active_tol)
    yield active_support(inst, fw_flow, active_tol=active_tol * 100)
    yield minimal_support(inst, fw_flow, active_tol=active_tol)
    s1, _ = belief_moments(bel, inst.states)
    zero_costs = [e.cost.offset * s1 for e in inst.network.edges]
    psi = shortest_potentials(inst, zero_costs)
    yield canonical_support(
        i for i, e in enumerate(inst.network.edges)
        if psi[e.tail] is not None and psi[e.head] is not None
        and abs(psi[e.head] - psi[e.tail] - zero_costs[i]) <= active_tol
    )


def _spans(network: Network, support: Iterable[int]) -> bool:
    reach = {network.source}
    frontier = [network.source]
    out: dict[int, list[int]] = {}
    for i in support:
        out.setdefault(network.edges[i].tail, []).append(i)
    while frontier:
        v = frontier.pop()
        for i in out.get(v, ()):
            w = network.edges[i].head
            if w not in reach:
                reach.add(w)
                frontier.append(w)
    return len(reach) == network.num_vertices


def _respan(instance: Instance, flow: Flow, active_tol) -> Support:
    """Active set recomputed from the flow with negative loads clipped;
    spanning by construction (shortest-path predecessors are tight)."""
    clipped = Flow(
        tuple(x if x > 0 else 0 * x for x in flow.loads),
        flow.potentials,
        flow.belief,
    )
    return active_support(instance, clipped, exact=False, active_tol=active_tol)


def _repair(instance: Instance, belief: Belief, support: Support, exact: bool,
            visited: set[Support], tols: dict) -> Optional[Flow]:
    """Active-set iteration: drop negative loads, admit profitable edges,
    re-derive the set from the current flow when an edit goes astray."""
    net = instance.network
    sup = support
    last_flow: Optional[Flow] = None
    respans = 0

    def respan_step() -> Optional[Support]:
        nonlocal respans
        if last_flow is None:
            return None
        for k in range(respans, 4):
            cand = _respan(instance, last_flow, ACTIVE_TOL * 10 ** (2 - k))
            if cand not in visited:
                respans = k + 1
                return cand
        return None

    for step in range(_REPAIR_CAP):
        if sup in visited:
            nxt = respan_step()
            if nxt is None:
                return None
            sup = nxt
        visited.add(sup)
        try:
            flow, feas = solve_for_support(
                instance, belief, sup, exact=exact,
                load_tol=tols["load_tol"], wardrop_tol=tols["wardrop_tol"],
            )
        except SupportError:
            nxt = respan_step()
            if nxt is None:
                return None
            sup = nxt
            continue
        last_flow = flow
        if feas.ok:
            return flow
        bland = step >= 40  # lowest-index pivots once heuristics stop progressing
        nxt_sup = None
        if feas.negative_loads:
            order = sorted(
                feas.negative_loads,
                key=lambda e: e if bland else (flow.loads[e], e),
            )
            for drop in order:
                cand = tuple(i for i in sup if i != drop)
                if _spans(net, cand):
                    nxt_sup = cand
                    break
        if nxt_sup is None and feas.deviations:
            edges = net.edges
            s1, _ = belief_moments(flow.belief, instance.states)

            def violation(e: int):
                edge = edges[e]
                return (
                    flow.potentials[edge.head]
                    - flow.potentials[edge.tail]
                    - edge.cost.offset * s1
                )

            add = (feas.deviations[0] if bland
                   else max(feas.deviations, key=lambda e: (violation(e), -e)))
            nxt_sup = canonical_support(sup + (add,))
        if nxt_sup is None:
            nxt_sup = respan_step()
            if nxt_sup is None:
                return None
        sup = nxt_sup
    return None


def solve_wardrop(instance: Instance, belief: Belief | Sequence[Number],
                  exact: bool = False, support_hint: Optional[Support] = None,
                  wardrop_tol: float = WARDROP_TOL,
                  active_tol: float = ACTIVE_TOL,
                  load_tol: float = LOAD_TOL) -> Flow:
    """The unique Wardrop equilibrium for one belief.

    Frank-Wolfe supplies support guesses; the answer itself always comes
    from the support's linear system, verified against the equilibrium
    inequalities (exactly so in exact mode).  ``support_hint`` short-cuts
    the guess, e.g. with a neighboring belief's support.
    """
    bel = belief if isinstance(belief, Belief) else Belief(tuple(belief))
    tols = {"load_tol": load_tol, "wardrop_tol": wardrop_tol}
    visited: set[Support] = set()
    for seed in _support_seeds(instance, bel, support_hint and canonical_support(support_hint), active_tol):
        flow = _repair(instance, bel, seed, exact, visited, tols)
        if flow is not None:
            return flow

    # last resort (binary64 only): accept the raw Frank-Wolfe point if its
    # equilibrium residual is within tolerance
    if not exact:
        loads, gap_rel, iters = frank_wolfe(instance, bel)
        if gap_rel <= wardrop_tol:
            return _flow_from_loads(instance, bel, loads)
        raise ConvergenceError(
            f"no support verified and Frank-Wolfe stalled at relative gap "
            f"{gap_rel:.3e} after {iters} iterations (belief {bel.probs})"
        )
    raise ConvergenceError(
        f"active-set search exhausted {len(visited)} supports (belief {bel.probs})"
    )


def equilibrium_cost(instance: Instance, belief: Belief | Sequence[Number],
                     exact: bool = False,
                     support_hint: Optional[Support] = None) -> Number:
    """Total expected equilibrium cost: the sink potential (demand is one)."""
    flow = solve_wardrop(instance, belief, exact=exact, support_hint=support_hint)
    return flow.potentials[instance.network.sink]


def flow_cost(instance: Instance, flow: Flow) -> Number:
    """Total expected cost of an arbitrary flow: sum of load * edge cost."""
    costs = edge_costs_at(instance, flow)
    return sum(x * c for x, c in zip(flow.loads, costs))


def system_optimum(instance: Instance, demand: Number, exact: bool = False,
                   ) -> Number:
    """Minimum total cost of routing deterministic volume ``demand``.

    Computed as a Wardrop equilibrium of the marginal costs
    ``2 a_e y + b_e``; the returned value is ``sum y_e (a_e y_e + b_e)``.
    """
    if demand <= 0:
        raise ValueError("demand must be positive")
    inst = coerce_instance(instance, exact)
    net = inst.network
    doubled = Network(
        net.num_vertices,
        tuple(
            Edge(e.tail, e.head, AffineCost(2 * e.cost.slope, e.cost.offset, e.cost.free))
            for e in net.edges
        ),
        net.source,
        net.sink,
    )
    # a point belief at the virtual demand: S1 = demand, S2 = demand**2
    marginal_inst = Instance(doubled, StateSpace((demand,)), Belief((1,)))
    flow = solve_wardrop(marginal_inst, Belief((1,)), exact=exact)
    value = 0 * demand
    for e, x in zip(net.edges, flow.loads):
        y = demand * x
        value += y * (e.cost.slope * y + e.cost.offset)
    return value


def path_decomposition(instance: Instance, flow: Flow,
                       tol: float = LOAD_TOL) -> list[tuple[list[int], Number]]:
    """Greedy decomposition of the loads into path flows (debugging aid)."""
    loads = list(flow.loads)
    net = instance.network
    out = []
    for _ in range(net.num_edges + 1):
        residual = [i for i, x in enumerate(loads) if x > tol]
        adj: dict[int, list[int]] = {}
        for i in residual:
            adj.setdefault(net.edges[i].tail, []).append(i)
        path, v, seen = [], net.source, set()
        while v != net.sink and v not in seen:
            seen.add(v)
            options = adj.get(v, [])
            if not options:
                break
            i = max(options, key=lambda j: (loads[j], -j))
            path.append(i)
            v = net.edges[i].head
        if v != net.sink or not path:
            break
        amount = min(loads[i] for i in path)
        for i in path:
            loads[i] -= amount
        out.append((path, amount))
    return out
