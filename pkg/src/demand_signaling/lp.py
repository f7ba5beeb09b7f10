"""Generic linear programs with two interchangeable backends.

The exact backend is a dense two-phase simplex over ``fractions.Fraction``
with Bland's pivot rule: deterministic, cycle-free, and it returns exact
rational vertices (belief breakpoints are compared exactly downstream).
The float backend wraps ``scipy.optimize.linprog`` (HiGHS) and checks a
duality-gap certificate on every optimal solve.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linprog as _scipy_linprog

from .model import FEAS_TOL, Number, as_fraction

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ERROR = "error"

_RELATIONS = ("=", "<=", ">=")


class LpFormatError(ValueError):
    """Ill-formed linear program."""


@dataclass
class _Variable:
    name: str
    lo: Optional[Number]  # None = -inf
    hi: Optional[Number]  # None = +inf


@dataclass
class _Constraint:
    coeffs: dict[int, Number]
    relation: str
    rhs: Number
    name: str = ""


@dataclass
class LinearProgram:
    """Constraint/objective container; rows reference variable indices."""

    variables: list[_Variable] = field(default_factory=list)
    constraints: list[_Constraint] = field(default_factory=list)
    objective: dict[int, Number] = field(default_factory=dict)
    sense: str = "min"

    def add_variable(self, name: str, lo: Optional[Number] = 0,
                     hi: Optional[Number] = None) -> int:
        if lo is not None and hi is not None and lo > hi:
            raise LpFormatError(f"variable {name}: lower bound exceeds upper")
        self.variables.append(_Variable(name, lo, hi))
        return len(self.variables) - 1

    def add_constraint(self, coeffs: dict[int, Number], relation: str,
                       rhs: Number, name: str = "") -> None:
        if relation not in _RELATIONS:
            raise LpFormatError(f"unknown relation {relation!r}")
        n = len(self.variables)
        for j in coeffs:
            if not 0 <= j < n:
                raise LpFormatError(f"constraint references unknown variable {j}")
        self.constraints.append(_Constraint(dict(coeffs), relation, rhs, name))

    def set_objective(self, coeffs: dict[int, Number], sense: str = "min") -> None:
        if sense not in ("min", "max"):
            raise LpFormatError(f"unknown sense {sense!r}")
        n = len(self.variables)
        for j in coeffs:
            if not 0 <= j < n:
                raise LpFormatError(f"objective references unknown variable {j}")
        self.objective = dict(coeffs)
        self.sense = sense


@dataclass
class LpSolution:
    status: str
    values: Optional[list[Number]] = None
    objective: Optional[Number] = None
    message: str = ""

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL

    def __getitem__(self, var_index: int) -> Number:
        if self.values is None:
            raise KeyError(f"no values in {self.status} solution")
        return self.values[var_index]


def solve(lp: LinearProgram, exact: bool = False,
          feas_tol: float = FEAS_TOL) -> LpSolution:
    """Solve; deterministic for identical input in both backends."""
    sol = _solve_exact(lp) if exact else _solve_float(lp, feas_tol)
    if sol.optimal:
        _check_primal(lp, sol, 0 if exact else feas_tol)
    return sol


# ---------------------------------------------------------------------------
# float backend
# ---------------------------------------------------------------------------

def _solve_float(lp: LinearProgram, feas_tol: float) -> LpSolution:
    n = len(lp.variables)
    c = np.zeros(n)
    sign = 1.0 if lp.sense == "min" else -1.0
    for j, v in lp.objective.items():
        c[j] = sign * float(v)

    a_eq, b_eq, a_ub, b_ub = [], [], [], []
    for con in lp.constraints:
        row = np.zeros(n)
        for j, v in con.coeffs.items():
            row[j] = float(v)
        rhs = float(con.rhs)
        if con.relation == "=":
            a_eq.append(row)
            b_eq.append(rhs)
        elif con.relation == "<=":
            a_ub.append(row)
            b_ub.append(rhs)
        else:
            a_ub.append(-row)
            b_ub.append(-rhs)

    bounds = [
        (None if v.lo is None else float(v.lo), None if v.hi is None else float(v.hi))
        for v in lp.variables
    ]
    res = _scipy_linprog(
        c,
        A_ub=np.array(a_ub) if a_ub else None,
        b_ub=np.array(b_ub) if b_ub else None,
        A_eq=np.array(a_eq) if a_eq else None,
        b_eq=np.array(b_eq) if b_eq else None,
        bounds=bounds,
        method="highs",
    )
    if res.status == 2:
        return LpSolution(INFEASIBLE, message=res.message)
    if res.status == 3:
        return LpSolution(UNBOUNDED, message=res.message)
    if res.status != 0:
        return LpSolution(ERROR, message=res.message)

    gap = _duality_gap(res, b_eq, b_ub, bounds)
    if gap > feas_tol * (1.0 + abs(res.fun)):
        return LpSolution(ERROR, message=f"duality gap {gap:.3e} exceeds tolerance")
    objective = sign * float(res.fun)
    return LpSolution(OPTIMAL, [float(x) for x in res.x], objective)


def _duality_gap(res, b_eq, b_ub, bounds) -> float:
    dual = 0.0
    if b_eq:
        dual += float(np.dot(res.eqlin.marginals, b_eq))
    if b_ub:
        dual += float(np.dot(res.ineqlin.marginals, b_ub))
    for j, (lo, hi) in enumerate(bounds):
        if lo is not None:
            dual += res.lower.marginals[j] * lo
        if hi is not None:
            dual += res.upper.marginals[j] * hi
    return abs(float(res.fun) - dual)


def _check_primal(lp: LinearProgram, sol: LpSolution, tol) -> None:
    x = sol.values
    worst = 0
    for con in lp.constraints:
        lhs = sum(v * x[j] for j, v in con.coeffs.items())
        if con.relation == "=":
            resid = abs(lhs - con.rhs)
        elif con.relation == "<=":
            resid = max(0, lhs - con.rhs)
        else:
            resid = max(0, con.rhs - lhs)
        worst = max(worst, resid)
    for j, v in enumerate(lp.variables):
        if v.lo is not None:
            worst = max(worst, max(0, v.lo - x[j]))
        if v.hi is not None:
            worst = max(worst, max(0, x[j] - v.hi))
    if worst > tol:
        sol.status = ERROR
        sol.message = f"primal residual {float(worst):.3e} exceeds tolerance"


# ---------------------------------------------------------------------------
# exact backend: two-phase simplex, Bland's rule
# ---------------------------------------------------------------------------

def _solve_exact(lp: LinearProgram) -> LpSolution:
    zero, one = Fraction(0), Fraction(1)
    n = len(lp.variables)

    # Standard form: every structural variable becomes nonnegative columns.
    # col_map[j] = (kind, data): "shift" -> x = lo + u, "flip" -> x = hi - u,
    # "split" -> x = u - w (two columns).
    col_map: list[tuple] = []
    num_cols = 0
    upper_rows: list[tuple[int, Fraction]] = []  # (var index, hi - lo) for boxed vars
    for j, v in enumerate(lp.variables):
        lo = None if v.lo is None else as_fraction(v.lo)
        hi = None if v.hi is None else as_fraction(v.hi)
        if lo is not None:
            col_map.append(("shift", num_cols, lo))
            if hi is not None:
                upper_rows.append((j, hi - lo))
            num_cols += 1
        elif hi is not None:
            col_map.append(("flip", num_cols, hi))
            num_cols += 1
        else:
            col_map.append(("split", num_cols, None))
            num_cols += 2

    def expand(coeffs: dict[int, Number]) -> tuple[dict[int, Fraction], Fraction]:
        """Rewrite a row over original variables into standard columns;
        returns (column coeffs, constant shifted to the rhs)."""
        out: dict[int, Fraction] = {}
        shift = zero
        for j, v in coeffs.items():
            fv = as_fraction(v)
            kind, col, datum = col_map[j]
            if kind == "shift":
                out[col] = out.get(col, zero) + fv
                shift += fv * datum
            elif kind == "flip":
                out[col] = out.get(col, zero) - fv
                shift += fv * datum
            else:
                out[col] = out.get(col, zero) + fv
                out[col + 1] = out.get(col + 1, zero) - fv
        return out, shift

    rows: list[dict[int, Fraction]] = []
    rels: list[str] = []
    rhs: list[Fraction] = []
    for con in lp.constraints:
        coeffs, shift = expand(con.coeffs)
        rows.append(coeffs)
        rels.append(con.relation)
        rhs.append(as_fraction(con.rhs) - shift)
    for j, width in upper_rows:
        kind, col, lo = col_map[j]
        rows.append({col: one})
        rels.append("<=")
        rhs.append(width)

    obj, obj_shift = expand(lp.objective)
    obj_sign = one if lp.sense == "min" else -one

    # Slacks, then artificials; keep everything dense from here on.
    m = len(rows)
    total = num_cols
    slack_of: list[Optional[int]] = [None] * m
    for i in range(m):
        if rels[i] != "=":
            slack_of[i] = total
            total += 1
    art_of: list[Optional[int]] = [None] * m

    dense = [[zero] * total for _ in range(m)]
    b = [zero] * m
    for i in range(m):
        for col, v in rows[i].items():
            dense[i][col] = v
        b[i] = rhs[i]
        if rels[i] == "<=":
            dense[i][slack_of[i]] = one
        elif rels[i] == ">=":
            dense[i][slack_of[i]] = -one
        if b[i] < 0:
            dense[i] = [-v for v in dense[i]]
            b[i] = -b[i]

    basis: list[int] = [-1] * m
    need_art = []
    for i in range(m):
        s = slack_of[i]
        if s is not None and dense[i][s] == one:
            basis[i] = s
        else:
            need_art.append(i)
    for i in need_art:
        for row in dense:
            row.append(zero)
        dense[i][total] = one
        art_of[i] = total
        basis[i] = total
        total += 1

    def pivot(tbl, basis, row, col):
        piv = tbl[row][col]
        tbl[row] = [v / piv for v in tbl[row]]
        b[row] /= piv
        for r in range(len(tbl)):
            if r != row and tbl[r][col] != 0:
                f = tbl[r][col]
                tbl[r] = [x - f * y for x, y in zip(tbl[r], tbl[row])]
                b[r] -= f * b[row]
        basis[row] = col

    def run_simplex(cost: list[Fraction]) -> Optional[str]:
        """Bland's rule; returns None on optimality, UNBOUNDED otherwise."""
        while True:
            # reduced costs: cost_j - cost_B . column_j
            cb = [cost[basis[i]] for i in range(m)]
            entering = -1
            for j in range(total):
                red = cost[j] - sum(cb[i] * dense[i][j] for i in range(m))
                if red < 0:
                    entering = j
                    break
            if entering < 0:
                return None
            leaving, best = -1, None
            for i in range(m):
                a = dense[i][entering]
                if a > 0:
                    ratio = b[i] / a
                    if best is None or ratio < best or (
                        ratio == best and basis[i] < basis[leaving]
                    ):
                        best, leaving = ratio, i
            if leaving < 0:
                return UNBOUNDED
            pivot(dense, basis, leaving, entering)

    if need_art:
        phase1 = [zero] * total
        for i in need_art:
            phase1[art_of[i]] = one
        status = run_simplex(phase1)
        if status is not None:
            return LpSolution(ERROR, message="phase-1 unbounded (internal)")
        art_cols = {a for a in art_of if a is not None}
        value = sum(b[i] for i in range(m) if basis[i] in art_cols)
        if value > 0:
            return LpSolution(INFEASIBLE)
        # drive remaining artificials out of the basis
        for i in range(m):
            if basis[i] in art_cols:
                col = next(
                    (j for j in range(total)
                     if j not in art_cols and dense[i][j] != 0),
                    None,
                )
                if col is not None:
                    pivot(dense, basis, i, col)
        # forbid re-entry
        for row in dense:
            for a in art_cols:
                row[a] = zero

    cost = [zero] * total
    for col, v in obj.items():
        cost[col] = obj_sign * v
    status = run_simplex(cost)
    if status is not None:
        return LpSolution(UNBOUNDED)

    xs = [zero] * total
    for i in range(m):
        xs[basis[i]] = b[i]
    values: list[Number] = []
    for j, v in enumerate(lp.variables):
        kind, col, datum = col_map[j]
        if kind == "shift":
            values.append(datum + xs[col])
        elif kind == "flip":
            values.append(datum - xs[col])
        else:
            values.append(xs[col] - xs[col + 1])
    objective = sum(as_fraction(v) * values[j] for j, v in lp.objective.items())
    return LpSolution(OPTIMAL, values, objective)


# ---------------------------------------------------------------------------
# debugging aid: text dump in LP file format
# ---------------------------------------------------------------------------

def write_lp_text(lp: LinearProgram, path) -> None:
    def term(j: int, v: Number) -> str:
        name = lp.variables[j].name or f"x{j}"
        return f"{'+' if v >= 0 else '-'} {abs(v)} {name}"

    lines = ["Minimize" if lp.sense == "min" else "Maximize"]
    lines.append(" obj: " + " ".join(term(j, v) for j, v in sorted(lp.objective.items())))
    lines.append("Subject To")
    rel_txt = {"=": "=", "<=": "<=", ">=": ">="}
    for i, con in enumerate(lp.constraints):
        body = " ".join(term(j, v) for j, v in sorted(con.coeffs.items()))
        name = con.name or f"c{i}"
        lines.append(f" {name}: {body} {rel_txt[con.relation]} {con.rhs}")
    lines.append("Bounds")
    for j, v in enumerate(lp.variables):
        name = v.name or f"x{j}"
        if v.lo is None and v.hi is None:
            lines.append(f" {name} free")
        elif v.lo is None:
            lines.append(f" -inf <= {name} <= {v.hi}")
        elif v.hi is None:
            if v.lo != 0:
                lines.append(f" {name} >= {v.lo}")
        else:
            lines.append(f" {v.lo} <= {name} <= {v.hi}")
    lines.append("End")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
