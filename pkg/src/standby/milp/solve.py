"""Exact 0/1 branch and bound on top of the rational simplex.

Search rules are pinned for reproducibility: best-bound node selection with
FIFO tie-breaks, branching on the most fractional binary (ties by variable
declaration order), down-branch enqueued before up-branch. Bounds come from
exact LP relaxations, so optimality proofs carry no tolerance.
"""

from __future__ import annotations

import heapq
import itertools
import time

from .._ratio import ONE, Q, ZERO
from .model import (BudgetExceeded, Model, Solution, SolveStatus, SolverConfig,
                    VarKind)
from . import simplex


def solve(model: Model, config: SolverConfig | None = None) -> Solution:
    """Minimize the model exactly. See SolverConfig for budgets/warm start.

    The returned assignment (when any) is re-verified against every
    constraint by substitution before being returned.
    """
    config = config or SolverConfig()
    model.validate()
    start = time.perf_counter()

    var_names = [v.name for v in model.variables]
    binaries = [i for i, v in enumerate(model.variables) if v.kind is VarKind.BINARY]
    uppers = [ONE if v.kind is VarKind.BINARY else v.upper for v in model.variables]
    cost = {model.var_index(n): c for n, c in model.objective.items()}
    rows = [({model.var_index(n): c for n, c in con.coeffs.items()},
             con.sense, con.rhs) for con in model.constraints]

    best_obj = None
    best_assign = None
    if config.incumbent is not None:
        bad = model.constraint_violation(config.incumbent)
        if bad is not None:
            raise ValueError(f"warm-start incumbent violates {bad}")
        best_obj = model.objective_value(config.incumbent)
        best_assign = {n: config.incumbent.get(n, ZERO) for n in var_names}

    def lp_with(fixed: dict):
        """LP relaxation with some binaries substituted to constants."""
        ub = list(uppers)
        extra = ZERO
        frows = []
        for j in fixed:
            ub[j] = ZERO
        for coeffs, sense, rhs in rows:
            adj = rhs
            kept = {}
            for j, c in coeffs.items():
                if j in fixed:
                    adj -= c * fixed[j]
                else:
                    kept[j] = c
            frows.append((kept, sense, adj))
        fcost = {j: c for j, c in cost.items() if j not in fixed}
        for j, v in fixed.items():
            extra += cost.get(j, ZERO) * v
        res = simplex.solve_lp(len(uppers), ub, frows, fcost)
        return res, extra

    counter = itertools.count()
    heap: list = []
    root_key = ZERO

    def push(bound_key, fixed):
        heapq.heappush(heap, (bound_key, next(counter), fixed))

    push(root_key, {})
    node_count = 0
    status = SolveStatus.OPTIMAL

    while heap:
        if config.time_limit is not None and time.perf_counter() - start > config.time_limit:
            status = SolveStatus.BUDGET_EXCEEDED
            break
        if node_count >= config.node_limit:
            status = SolveStatus.BUDGET_EXCEEDED
            break
        _, _, fixed = heapq.heappop(heap)
        res, extra = lp_with(fixed)
        node_count += 1
        if res.status == simplex.INFEASIBLE:
            continue
        if res.status == simplex.UNBOUNDED:
            raise RuntimeError("LP relaxation is unbounded; model family unsupported")
        bound = res.objective + extra + model.objective_constant
        if best_obj is not None and bound >= best_obj:
            continue
        x = list(res.x)
        for j, v in fixed.items():
            x[j] = Q(v)
        frac = [(j, x[j]) for j in binaries if x[j] != ZERO and x[j] != ONE]
        if not frac:
            if best_obj is None or bound < best_obj:
                best_obj = bound
                best_assign = {var_names[j]: x[j] for j in range(len(x))}
            continue
        scored = [(min(v, ONE - v), j) for j, v in frac]
        best_score = max(s for s, _ in scored)
        branch_j = min(j for s, j in scored if s == best_score)
        for v in (0, 1):  # down-branch first, FIFO ties
            child = dict(fixed)
            child[branch_j] = v
            push(bound, child)

    wall = time.perf_counter() - start
    if status is SolveStatus.BUDGET_EXCEEDED:
        return Solution(status, best_assign, best_obj, node_count, wall)
    if best_assign is None:
        return Solution(SolveStatus.INFEASIBLE, None, None, node_count, wall)

    bad = model.constraint_violation(best_assign)
    if bad is not None:  # self-check, release builds included
        raise AssertionError(f"solver produced an infeasible assignment: {bad}")
    check = model.objective_value(best_assign)
    if check != best_obj:
        raise AssertionError("solver objective does not match its assignment")
    return Solution(SolveStatus.OPTIMAL, best_assign, best_obj, node_count, wall)


class BuiltinSolver:
    """Default exact solver: LP-based branch and bound in rational arithmetic."""

    name = "builtin"

    def __init__(self, config: SolverConfig | None = None):
        self.config = config or SolverConfig()

    def solve(self, model: Model, config: SolverConfig | None = None) -> Solution:
        return solve(model, config or self.config)
