"""Exact rational primal simplex with variable upper bounds (two-phase).

Dense tableau over exact rationals: no tolerances, no pivot drift. Sized
for the small programs this package solves directly (tens of rows, up to a
few hundred columns). Deterministic pivoting: Dantzig entering rule with
index tie-breaks, switching to Bland's rule after a fixed pivot budget to
rule out cycling; leaving row by minimum ratio, ties by row index.
"""

from __future__ import annotations

from dataclasses import dataclass

from .._ratio import ONE, Q, ZERO

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"


@dataclass
class LPResult:
    status: str
    x: list | None  # structural variable values, exact
    objective: object | None


def solve_lp(n_vars: int, upper: list, rows: list, costs: dict) -> LPResult:
    """Minimize costs subject to rows, with 0 <= x_j <= upper[j].

    upper: per-variable rational upper bound or None (unbounded above).
    rows:  (coeffs: dict col->rational, sense: '<='|'>='|'=', rhs) triples.
    costs: dict col->rational.
    """
    m = len(rows)

    norm = []
    for coeffs, sense, rhs in rows:
        if rhs < ZERO:  # normalize to rhs >= 0 so artificials start feasible
            coeffs = {j: -c for j, c in coeffs.items()}
            rhs = -rhs
            sense = {"<=": ">=", ">=": "<=", "=": "="}[sense]
        norm.append((coeffs, sense, rhs))

    ncols = n_vars
    slack_col: list = [None] * m
    for i, (_, sense, _) in enumerate(norm):
        if sense in ("<=", ">="):
            slack_col[i] = ncols
            ncols += 1
    art_col: list = [None] * m
    for i, (_, sense, _) in enumerate(norm):
        if sense in ("=", ">="):  # no usable starting basic variable otherwise
            art_col[i] = ncols
            ncols += 1

    bounds: list = list(upper) + [None] * (ncols - n_vars)
    tab = [[ZERO] * ncols for _ in range(m)]
    rhs_col = [ZERO] * m
    basis = [0] * m
    for i, (coeffs, sense, rhs) in enumerate(norm):
        row = tab[i]
        for j, c in coeffs.items():
            row[j] += c
        if slack_col[i] is not None:
            row[slack_col[i]] = ONE if sense == "<=" else -ONE
        if art_col[i] is not None:
            row[art_col[i]] = ONE
            basis[i] = art_col[i]
        else:
            basis[i] = slack_col[i]
        rhs_col[i] = rhs

    cost1 = [ZERO] * ncols
    for i in range(m):
        if art_col[i] is not None:
            cost1[art_col[i]] = ONE
    cost2 = [ZERO] * ncols
    for j, c in costs.items():
        cost2[j] += c

    state = _Tableau(tab, rhs_col, basis, bounds, [cost1, cost2])
    artificials = [c for c in art_col if c is not None]

    if state.run(cost_row=0) == UNBOUNDED:
        raise AssertionError("phase-1 objective cannot be unbounded")
    values = state.values()
    if sum((values[j] for j in artificials), ZERO) != ZERO:
        return LPResult(INFEASIBLE, None, None)

    for j in artificials:  # pin artificials at zero for phase 2
        state.bounds[j] = ZERO
        state.at_upper[j] = False

    if state.run(cost_row=1) == UNBOUNDED:
        return LPResult(UNBOUNDED, None, None)

    values = state.values()
    obj = sum((c * values[j] for j, c in costs.items()), ZERO)
    return LPResult(OPTIMAL, values[:n_vars], obj)


class _Tableau:
    """Canonical-form tableau: basic columns are unit columns; nonbasic
    variables rest at their lower (0) or upper bound."""

    def __init__(self, tab, rhs, basis, bounds, cost_rows):
        self.tab = tab
        self.rhs = rhs
        self.basis = basis
        self.bounds = bounds
        self.cost_rows = cost_rows
        self.m = len(tab)
        self.n = len(bounds)
        self.at_upper = [False] * self.n
        self.in_basis = [False] * self.n
        for b in basis:
            self.in_basis[b] = True
        for i, b in enumerate(basis):  # reduce cost rows against starting basis
            for crow in self.cost_rows:
                f = crow[b]
                if f != ZERO:
                    row = self.tab[i]
                    for j in range(self.n):
                        if row[j] != ZERO:
                            crow[j] -= f * row[j]

    def values(self) -> list:
        vals = [ZERO] * self.n
        uppers = [j for j in range(self.n)
                  if not self.in_basis[j] and self.at_upper[j]]
        for j in uppers:
            vals[j] = self.bounds[j]
        for i, b in enumerate(self.basis):
            beta = self.rhs[i]
            row = self.tab[i]
            for j in uppers:
                if row[j] != ZERO:
                    beta -= row[j] * self.bounds[j]
            vals[b] = beta
        return vals

    def run(self, cost_row: int) -> str:
        crow = self.cost_rows[cost_row]
        dantzig_budget = 200 + 20 * (self.m + self.n)
        pivots = 0
        while True:
            j = self._entering(crow, use_bland=pivots >= dantzig_budget)
            if j is None:
                return OPTIMAL
            if self._step(j) == UNBOUNDED:
                return UNBOUNDED
            pivots += 1
            if pivots > 100 * dantzig_budget:  # Bland's rule cannot cycle
                raise AssertionError("simplex failed to terminate")

    def _entering(self, crow, use_bland: bool):
        best = None
        best_score = ZERO
        for j in range(self.n):
            if self.in_basis[j] or self.bounds[j] == ZERO:
                continue
            rc = crow[j]
            if not self.at_upper[j] and rc < ZERO:
                score = -rc
            elif self.at_upper[j] and rc > ZERO:
                score = rc
            else:
                continue
            if use_bland:
                return j
            if best is None or score > best_score:
                best, best_score = j, score
        return best

    def _step(self, j):
        """Move nonbasic j off its bound as far as the other bounds allow."""
        direction = -1 if self.at_upper[j] else 1
        vals = self.values()
        best_t = None
        best = None  # ("flip",) or ("pivot", row, leaving_goes_to_upper)
        if self.bounds[j] is not None:
            best_t, best = self.bounds[j], ("flip",)
        for i in range(self.m):
            a = self.tab[i][j]
            if a == ZERO:
                continue
            a = a * direction
            b = self.basis[i]
            beta = vals[b]
            if a > ZERO:  # basic value falls towards 0
                t = beta / a
                cand = ("pivot", i, False)
            else:  # basic value rises towards its upper bound
                ub = self.bounds[b]
                if ub is None:
                    continue
                t = (ub - beta) / (-a)
                cand = ("pivot", i, True)
            if best_t is None or t < best_t:
                best_t, best = t, cand
        if best is None:
            return UNBOUNDED
        if best[0] == "flip":
            self.at_upper[j] = not self.at_upper[j]
            return "flipped"
        _, row, to_upper = best
        self._pivot(row, j, to_upper)
        return "pivoted"

    def _pivot(self, row, j, leaving_to_upper):
        leaving = self.basis[row]
        trow = self.tab[row]
        inv = ONE / trow[j]
        if inv != ONE:
            for col in range(self.n):
                if trow[col] != ZERO:
                    trow[col] *= inv
            self.rhs[row] *= inv
        nonzero = [col for col in range(self.n) if trow[col] != ZERO]
        for i in range(self.m):
            if i == row:
                continue
            f = self.tab[i][j]
            if f == ZERO:
                continue
            irow = self.tab[i]
            for col in nonzero:
                irow[col] -= f * trow[col]
            self.rhs[i] -= f * self.rhs[row]
        for crow in self.cost_rows:
            f = crow[j]
            if f == ZERO:
                continue
            for col in nonzero:
                crow[col] -= f * trow[col]
        self.in_basis[leaving] = False
        self.in_basis[j] = True
        self.basis[row] = j
        self.at_upper[leaving] = bool(leaving_to_upper)
        self.at_upper[j] = False
