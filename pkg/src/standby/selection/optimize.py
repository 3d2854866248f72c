"""Exact branch-and-bound over alternate-set compositions.

The scenario-selection programs all share one shape: pick how many pool
members of each feature-vector class to put on standby (members of a class
are interchangeable), to minimize the scenario-weighted expected deviation,
where each scenario independently chooses its best replacement subset of
whoever was picked and is still available.

The search branches on per-class counts in a fixed usefulness order. Node
bounds relax every undecided class to the remaining budget and let each
scenario use that relaxed availability independently; each per-scenario
relaxation is an exact integer solve by the replacement engine. A child
inherits its parent's per-scenario bound values (its feasible completions
are a subset, so the values can only rise) and refines them lazily, pruning
as soon as the running total reaches the incumbent. All bound arithmetic is
integer: scenario weights are put over a common denominator and deviations
are pre-scaled, so optimality proofs carry no tolerance.

Deterministic: fixed class order, counts tried high to low, first optimum
found is kept.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .._ratio import ONE, Q, ZERO
from ..milp.model import BudgetExceeded
from .inner import Profile, ReplacementEngine, ReplacementSpace


@dataclass(frozen=True)
class ClassGroup:
    """Pool members sharing one feature vector (ids sorted)."""

    key: tuple[int, ...]
    members: tuple[str, ...]

    @property
    def capacity(self) -> int:
        return len(self.members)


@dataclass(frozen=True)
class Case:
    """One deduplicated scenario: engine profile + aggregated weight.

    mask, when present, zeroes availability of classes whose members are
    unavailable in this scenario (alternate-dropout extension)."""

    weight: object
    pid: int
    mask: tuple[int, ...] | None = None


class SearchStats:
    def __init__(self):
        self.nodes = 0
        self.leaves = 0


class SelectionSearch:
    """Exact minimizer over class-count vectors."""

    def __init__(self, space: ReplacementSpace, groups: Sequence[ClassGroup],
                 cases: Sequence[Case], engine: ReplacementEngine,
                 budget: int, exact_size: bool = True, binary_kind: bool = False):
        self.space = space
        self.groups = tuple(groups)
        self.cases = tuple(cases)
        self.engine = engine
        self.budget = budget
        self.exact_size = exact_size
        self.binary_kind = binary_kind
        self.m = len(self.groups)
        self._order = self._class_order()
        self._suffix_capacity = [0] * (self.m + 1)
        for pos in range(self.m - 1, -1, -1):
            g = self.groups[self._order[pos]]
            self._suffix_capacity[pos] = self._suffix_capacity[pos + 1] + g.capacity

        # common-denominator integer weights: weight_i = wnum_i / wden
        dens = [int(c.weight.denominator) for c in self.cases]
        self._wden = math.lcm(*dens) if dens else 1
        self._wnum = [int(c.weight.numerator) * (self._wden // int(c.weight.denominator))
                      for c in self.cases]
        self._den = self._wden if binary_kind else self._wden * self.space.scale

    # -- objective pieces --------------------------------------------------

    def _case_scaled(self, idx: int, counts: Sequence[int]) -> int:
        """Scenario value for the given availability: scaled deviation for the
        linear kind, a 0/1 indicator for the binary kind."""
        case = self.cases[idx]
        if case.mask is None:
            avail = tuple(counts)
        else:
            avail = tuple(c * m for c, m in zip(counts, case.mask))
        v = self.engine.solve_capped(case.pid, avail, None)[0]
        if self.binary_kind:
            return 1 if v > 0 else 0
        return v

    def _evaluate_num(self, counts: Sequence[int]) -> int:
        for c, g in zip(counts, self.groups):
            if not 0 <= c <= g.capacity:
                raise ValueError(f"count {c} outside [0, {g.capacity}] for {g.key}")
        return sum(self._wnum[i] * self._case_scaled(i, counts)
                   for i in range(len(self.cases)))

    def evaluate(self, counts: Sequence[int]):
        """Exact objective of a concrete composition."""
        return Q(self._evaluate_num(counts), self._den)

    def as_objective(self, total_num: int):
        return Q(total_num, self._den)

    # -- search ------------------------------------------------------------

    def solve(self, node_limit: int = 2_000_000,
              incumbent_counts: Sequence[int] | None = None):
        """Returns (objective, counts, stats). Raises BudgetExceeded when the
        node budget runs out, carrying the best composition found so far."""
        stats = SearchStats()
        ncases = len(self.cases)
        if self.budget == 0:
            zero = tuple(0 for _ in self.groups)
            return self.evaluate(zero), zero, stats
        if self.exact_size and self.budget > self._suffix_capacity[0]:
            raise ValueError("budget exceeds pool capacity")

        best_counts = None
        best_num = None
        if incumbent_counts is not None:
            cand = self._local_search(tuple(incumbent_counts))
            best_counts = cand
            best_num = self._evaluate_num(cand)

        order = self._order
        groups = self.groups
        wnum = self._wnum
        counts = [0] * self.m
        avail_buf = [0] * self.m

        def rec(pos: int, b_rem: int, vals: list[int], total: int):
            nonlocal best_counts, best_num
            stats.nodes += 1
            if stats.nodes > node_limit:
                raise BudgetExceeded(
                    f"selection search exceeded {node_limit} nodes",
                    solution=(None if best_num is None else self.as_objective(best_num),
                              best_counts))
            if best_num is not None and total >= best_num:
                return
            at_leaf = pos == self.m
            if at_leaf and self.exact_size and b_rem != 0:
                return
            # node availability: decided counts exactly, undecided relaxed
            for p in range(pos):
                j = order[p]
                avail_buf[j] = counts[j]
            for p in range(pos, self.m):
                j = order[p]
                cap_j = groups[j].capacity
                avail_buf[j] = cap_j if cap_j < b_rem else b_rem
            refined = list(vals)
            for i in range(ncases):
                new = self._case_scaled(i, avail_buf)
                old = refined[i]
                if new != old:
                    total += wnum[i] * (new - old)
                    refined[i] = new
                if best_num is not None and total >= best_num:
                    return
            if at_leaf:
                stats.leaves += 1
                best_num = total  # strictly better: the prune above would have fired
                best_counts = tuple(counts)
                return
            j = order[pos]
            hi = min(groups[j].capacity, b_rem)
            lo = 0
            if self.exact_size:
                lo = max(0, b_rem - self._suffix_capacity[pos + 1])
            for take in range(hi, lo - 1, -1):
                counts[j] = take
                rec(pos + 1, b_rem - take, refined, total)
            counts[j] = 0

        rec(0, self.budget, [0] * ncases, 0)
        if best_counts is None:
            raise ValueError("selection search found no feasible composition")
        return self.as_objective(best_num), best_counts, stats

    # -- heuristics ---------------------------------------------------------

    def _class_order(self) -> list[int]:
        scores = []
        for j, g in enumerate(self.groups):
            gain = ZERO
            for case in self.cases:
                if case.mask is not None and not case.mask[j]:
                    continue
                prof = self.engine.profile(case.pid)
                if prof.cap == 0:
                    continue
                delta = 0
                for fi, vi in enumerate(g.key):
                    delta += self.space.marginal(fi, vi, prof.counts[fi][vi] + 1)
                if delta < 0:
                    gain += case.weight * (-delta)
            scores.append((gain, g.key))
        return sorted(range(self.m), key=lambda j: (-scores[j][0], scores[j][1]))

    def _local_search(self, start: tuple[int, ...]) -> tuple[int, ...]:
        counts = list(start)
        best = self._evaluate_num(counts)
        for _round in range(200):
            improved = False
            for i in range(self.m):
                for j in range(self.m):
                    if j == i:
                        continue
                    if counts[i] <= 0 or counts[j] >= self.groups[j].capacity:
                        continue
                    counts[i] -= 1
                    counts[j] += 1
                    obj = self._evaluate_num(counts)
                    if obj < best:
                        best = obj
                        improved = True
                    else:
                        counts[i] += 1
                        counts[j] -= 1
            if not improved:
                break
        return tuple(counts)


def build_groups(space: ReplacementSpace, agents) -> list[ClassGroup]:
    """Group agents by feature-vector class; deterministic order."""
    by_key: dict[tuple[int, ...], list[str]] = {}
    for a in agents:
        by_key.setdefault(space.class_key(a), []).append(a.id)
    return [ClassGroup(key, tuple(sorted(ids)))
            for key, ids in sorted(by_key.items())]
