"""Alternate-selection algorithms and the replacement primitive.

The optimizing selectors minimize the expected deviation over a scenario
distribution. The solver argument routes the work: the built-in route uses
the exact structured search (class-based branch and bound with per-scenario
integer solves), an ExternalSolver routes the monolithic 0/1 program through
the LP-file adapter and re-verifies the imported answer exactly.

Every returned SelectionResult is self-checked: per-scenario deviations are
recomputed independently from the decoded replacement sets via the plain
deviation definitions, and their weighted sum must equal the reported
objective exactly.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Sequence

from .._ratio import ONE, Q, ZERO, as_ratio, ratio_str
from ..deviation import DeviationKind, dev_binary, dev_linear
from ..domain import Agent, DataError, Instance
from ..dropout import (ScenarioDistribution, build_empirical_distribution,
                       equalize_probabilities, as_probs)
from ..milp.model import (BudgetExceeded, Model, Solution, SolveStatus,
                          SolverConfig)
from ..milp.solve import BuiltinSolver
from .inner import Profile, ReplacementEngine, ReplacementSpace
from .optimize import Case, ClassGroup, SelectionSearch, build_groups
from . import ilp


class ReplacementPolicy(Enum):
    CAPPED = "capped"      # replacement set no larger than the dropout set
    UNCAPPED = "uncapped"  # any subset of the alternates may join


@dataclass(frozen=True)
class AlternateSet:
    members: tuple[str, ...]  # sorted pool ids


@dataclass(frozen=True)
class ScenarioOutcome:
    dropped: tuple[str, ...]
    replacements: tuple[str, ...]
    deviation: object  # exact rational (0/1 for the binary kind)
    weight: object


@dataclass(frozen=True)
class SelectionResult:
    alternates: AlternateSet
    objective: object
    per_scenario: tuple[ScenarioOutcome, ...]
    provenance: Mapping


class SelectionContext:
    """Shared exact-solver state for one instance: quota geometry, pool
    classes and the replacement cache.

    Reusing one context across calls (several budgets, training and
    evaluation, repeated seeds) lets identical per-scenario subproblems hit
    one cache. Purely an optimization: results are identical either way.
    """

    def __init__(self, instance: Instance):
        self.instance = instance
        self.space = ReplacementSpace(instance.schema, instance.quotas)
        self.groups = build_groups(self.space, instance.pool)
        self.engine = ReplacementEngine(self.space, [g.key for g in self.groups])
        self.group_index = {g.key: i for i, g in enumerate(self.groups)}
        self._panel_profiles: dict = {}

    def counts_of_members(self, members: Iterable[str]) -> list[int]:
        pool_by_id = self.instance.pool_by_id()
        counts = [0] * len(self.groups)
        for m in members:
            counts[self.group_index[self.space.class_key(pool_by_id[m])]] += 1
        return counts

    def members_by_group(self, members: Iterable[str]) -> list[list[str]]:
        pool_by_id = self.instance.pool_by_id()
        split: list[list[str]] = [[] for _ in self.groups]
        for m in sorted(members):
            split[self.group_index[self.space.class_key(pool_by_id[m])]].append(m)
        return split

    def profile_of(self, dropped: tuple[str, ...], cap: int | None) -> int:
        """Engine profile for one dropout set (memoized by (set, cap))."""
        key = (dropped, cap)
        pid = self._panel_profiles.get(key)
        if pid is None:
            gone = set(dropped)
            remaining = [a for a in self.instance.panel if a.id not in gone]
            pid = self.engine.register_profile(
                Profile(self.space.counts_of(remaining), cap))
            self._panel_profiles[key] = pid
        return pid

    def with_budget(self, budget: int) -> "SelectionContext":
        """Same context, different alternate budget: all caches are shared
        (the cached subproblems never depend on the budget)."""
        import dataclasses as _dc

        derived = object.__new__(SelectionContext)
        derived.instance = _dc.replace(self.instance, budget=budget)
        derived.space = self.space
        derived.groups = self.groups
        derived.engine = self.engine
        derived.group_index = self.group_index
        derived._panel_profiles = self._panel_profiles
        return derived


def make_alternate_set(instance: Instance, members: Iterable[str]) -> AlternateSet:
    members = tuple(sorted(members))
    if len(set(members)) != len(members):
        raise DataError("alternate set has duplicate members")
    pool_ids = {a.id for a in instance.pool}
    unknown = [m for m in members if m not in pool_ids]
    if unknown:
        raise DataError(f"alternates not in the pool: {unknown}")
    return AlternateSet(members)


def _check_distribution(instance: Instance, distribution: ScenarioDistribution):
    panel_ids = set(instance.panel_ids())
    for sc in distribution.scenarios:
        bad = [m for m in sc.members if m not in panel_ids]
        if bad:
            raise DataError(f"scenario references non-panelists: {bad}")


def _cap(policy: ReplacementPolicy, dropped_count: int) -> int | None:
    return dropped_count if policy is ReplacementPolicy.CAPPED else None


# ---------------------------------------------------------------------------
# replacement primitive


def best_replacement(alternates, dropped: Iterable[str], instance: Instance,
                     dev: DeviationKind = DeviationKind.LINEAR,
                     policy: ReplacementPolicy = ReplacementPolicy.CAPPED,
                     solver=None):
    """Deviation-minimizing replacement set for one realized dropout set.

    Returns (replacement ids, deviation). The deviation is an exact
    rational; for the binary kind it is 0 or 1. For the binary kind the
    returned set is the L1-minimizing one, which also attains the minimal
    binary deviation (quotas are restorable iff the minimal L1 deviation
    is zero).
    """
    members = alternates.members if isinstance(alternates, AlternateSet) else tuple(alternates)
    aset = make_alternate_set(instance, members)
    dropped = tuple(sorted(dropped))
    panel_ids = set(instance.panel_ids())
    bad = [d for d in dropped if d not in panel_ids]
    if bad:
        raise DataError(f"dropped ids not on the panel: {bad}")

    if solver is not None and not isinstance(solver, BuiltinSolver):
        return _best_replacement_external(aset, dropped, instance, dev, policy, solver)

    space = ReplacementSpace(instance.schema, instance.quotas)
    pool_by_id = instance.pool_by_id()
    chosen = [pool_by_id[m] for m in aset.members]
    groups = build_groups(space, chosen)
    engine = ReplacementEngine(space, [g.key for g in groups])
    remaining = [a for a in instance.panel if a.id not in set(dropped)]
    pid = engine.register_profile(
        Profile(space.counts_of(remaining), _cap(policy, len(dropped))))
    scaled, r = engine.solve(pid, tuple(g.capacity for g in groups))
    replacement = _members_from_counts(groups, r)
    value = _verify_replacement(instance, dropped, replacement, dev, space, scaled)
    return replacement, value


def _members_from_counts(groups: Sequence[ClassGroup], counts: Sequence[int],
                         chosen_by_group: Sequence[Sequence[str]] | None = None,
                         ) -> tuple[str, ...]:
    out: list[str] = []
    source = chosen_by_group if chosen_by_group is not None else [g.members for g in groups]
    for g, c, pool in zip(groups, counts, source):
        if not 0 <= c <= len(pool):
            raise AssertionError(f"bad class count {c} for {g.key}")
        out.extend(pool[:c])
    return tuple(sorted(out))


def _verify_replacement(instance, dropped, replacement_ids, dev, space, scaled):
    """Recompute the deviation from scratch and check it matches the engine."""
    dropped_set = set(dropped)
    final = [a for a in instance.panel if a.id not in dropped_set]
    pool_by_id = instance.pool_by_id()
    final += [pool_by_id[m] for m in replacement_ids]
    exact = dev_linear(final, instance.schema, instance.quotas)
    if exact != space.ratio(scaled):
        raise AssertionError("engine deviation does not match direct recomputation")
    if dev is DeviationKind.BINARY:
        b = dev_binary(final, instance.schema, instance.quotas)
        if b != (1 if scaled > 0 else 0):
            raise AssertionError("binary deviation mismatch against recomputation")
        return Q(b)
    return exact


def _best_replacement_external(aset, dropped, instance, dev, policy, solver):
    model, meta = ilp.build_replacement_model(instance, aset.members, dropped,
                                              dev, policy)
    solution = solver.solve(model)
    if solution.status is not SolveStatus.OPTIMAL:
        raise BudgetExceeded("replacement solve did not finish", solution)
    replacement = tuple(sorted(
        mid for mid, var in meta["y"].items() if solution.assignment[var] == ONE))
    dropped_set = set(dropped)
    final = [a for a in instance.panel if a.id not in dropped_set]
    pool_by_id = instance.pool_by_id()
    final += [pool_by_id[m] for m in replacement]
    if dev is DeviationKind.BINARY:
        return replacement, Q(dev_binary(final, instance.schema, instance.quotas))
    return replacement, dev_linear(final, instance.schema, instance.quotas)


# ---------------------------------------------------------------------------
# exact selection over a scenario distribution


def optimal_alternates(instance: Instance, distribution: ScenarioDistribution,
                       dev: DeviationKind = DeviationKind.LINEAR,
                       policy: ReplacementPolicy = ReplacementPolicy.CAPPED,
                       solver=None, exact_size: bool = True,
                       incumbent: Iterable[str] | None = None,
                       node_limit: int = 2_000_000,
                       provenance: Mapping | None = None,
                       context: SelectionContext | None = None) -> SelectionResult:
    """Minimize expected deviation over the given distribution (the selection
    program solved by the sampling algorithms, here over any distribution)."""
    _check_distribution(instance, distribution)
    prov = dict(provenance or {})
    prov.setdefault("algorithm", "opt")
    prov.update(dev=dev.value, policy=policy.value, exact_size=exact_size,
                scenario_kind=distribution.kind)

    if solver is not None and not isinstance(solver, BuiltinSolver):
        model, meta = ilp.build_opt_model(instance, distribution, dev, policy,
                                          exact_size)
        solution = solver.solve(model)
        if solution.status is not SolveStatus.OPTIMAL:
            raise BudgetExceeded("selection solve did not finish", solution)
        members = tuple(sorted(
            mid for mid, var in meta["x"].items() if solution.assignment[var] == ONE))
        prov["solver"] = getattr(solver, "name", "external")
        return finalize_result(instance, members, distribution, dev, policy, prov,
                               context=context)

    ctx = context or SelectionContext(instance)
    cases = _build_cases(ctx, distribution, policy)
    search = SelectionSearch(ctx.space, ctx.groups, cases, ctx.engine,
                             instance.budget, exact_size=exact_size,
                             binary_kind=dev is DeviationKind.BINARY)
    incumbent_counts = None
    if incumbent is not None:
        incumbent_counts = ctx.counts_of_members(incumbent)
    try:
        objective, counts, stats = search.solve(node_limit=node_limit,
                                                incumbent_counts=incumbent_counts)
    except BudgetExceeded as exc:
        raise BudgetExceeded(
            f"selection search budget exceeded ({exc})", exc.solution) from exc
    members = _members_from_counts(ctx.groups, counts)
    prov["solver"] = "builtin"
    prov["nodes"] = stats.nodes
    return finalize_result(instance, members, distribution, dev, policy, prov,
                           claimed_objective=objective, context=ctx)


def _build_cases(ctx: SelectionContext, distribution, policy,
                 availability=None) -> list[Case]:
    """Deduplicate scenarios into engine profiles (equal surviving counts and
    cap give the same inner problem)."""
    weights: dict = {}
    masks: dict = {}
    for idx, sc in enumerate(distribution.scenarios):
        pid = ctx.profile_of(sc.members, _cap(policy, len(sc.members)))
        mask = availability[idx] if availability is not None else None
        key = (pid, mask)
        weights[key] = weights.get(key, ZERO) + sc.weight
        masks[key] = mask
    cases = [Case(weights[key], key[0], masks[key]) for key in weights]
    cases.sort(key=lambda c: (-c.weight, c.pid))
    return cases


def finalize_result(instance, members, distribution, dev, policy, provenance,
                    claimed_objective=None,
                    context: SelectionContext | None = None) -> SelectionResult:
    """Decode per-scenario replacements for a fixed alternate set and verify.

    Deviations are recomputed from the decoded replacement sets with the
    plain definitions; their weighted sum must equal both the recomputed
    objective and, when given, the solver's claimed objective.
    """
    aset = make_alternate_set(instance, members)
    ctx = context or SelectionContext(instance)
    counts = ctx.counts_of_members(aset.members)
    chosen_by_group = ctx.members_by_group(aset.members)
    outcomes = []
    total = ZERO
    for sc in distribution.scenarios:
        pid = ctx.profile_of(sc.members, _cap(policy, len(sc.members)))
        scaled, r = ctx.engine.solve(pid, tuple(counts))
        replacement = _members_from_counts(ctx.groups, r, chosen_by_group)
        value = _verify_replacement(instance, sc.members, replacement, dev,
                                    ctx.space, scaled)
        outcomes.append(ScenarioOutcome(sc.members, replacement, value, sc.weight))
        total += sc.weight * value
    if claimed_objective is not None and total != claimed_objective:
        raise AssertionError(
            f"decoded objective {total} != solver objective {claimed_objective}")
    return SelectionResult(aset, total, tuple(outcomes), dict(provenance))


# ---------------------------------------------------------------------------
# the sampling selectors and benchmark heuristics


def erm_alts(instance: Instance, probs, dev: DeviationKind, s: int = 300,
             policy: ReplacementPolicy = ReplacementPolicy.CAPPED,
             rng=None, solver=None, distribution: ScenarioDistribution | None = None,
             exact_size: bool = True, node_limit: int = 2_000_000,
             provenance: Mapping | None = None,
             context: SelectionContext | None = None) -> SelectionResult:
    """Sample s dropout scenarios and pick the alternate set minimizing the
    expected deviation on that empirical distribution.

    A precomputed distribution may be substituted for the sampling step
    (e.g. an exact enumeration on small panels). The greedy heuristic seeds
    the search as a warm incumbent.
    """
    probs = as_probs(probs)
    if len(probs) != instance.panel_size:
        raise DataError("probability vector does not match the panel")
    if distribution is None:
        if rng is None:
            raise DataError("erm_alts needs an rng when sampling")
        distribution = build_empirical_distribution(
            probs, instance.panel_ids(), s, rng)
    prov = dict(provenance or {})
    prov.setdefault("algorithm",
                    "erm-l1" if dev is DeviationKind.LINEAR else "erm-binary")
    prov["s"] = distribution.sample_count or len(distribution)
    incumbent = None
    if instance.budget <= instance.pool_size and instance.budget > 0:
        incumbent = greedy_alts(instance, probs).members
    return optimal_alternates(instance, distribution, dev, policy, solver,
                              exact_size=exact_size, incumbent=incumbent,
                              node_limit=node_limit, provenance=prov,
                              context=context)


def erm_alts_eq(instance: Instance, probs, dev: DeviationKind, s: int = 300,
                policy: ReplacementPolicy = ReplacementPolicy.CAPPED,
                rng=None, solver=None,
                distribution: ScenarioDistribution | None = None,
                exact_size: bool = True, node_limit: int = 2_000_000,
                provenance: Mapping | None = None,
                context: SelectionContext | None = None) -> SelectionResult:
    """erm_alts with all dropout probabilities replaced by their mean
    (prediction-free variant; the expected dropout count is preserved)."""
    eq = equalize_probabilities(probs)
    prov = dict(provenance or {})
    prov["algorithm"] = "erm-l1-eq" if dev is DeviationKind.LINEAR else "erm-binary-eq"
    prov["equalized_prob"] = ratio_str(eq[0]) if eq else "0"
    return erm_alts(instance, eq, dev, s, policy, rng, solver, distribution,
                    exact_size, node_limit, prov, context=context)


def greedy_alts(instance: Instance, probs) -> AlternateSet:
    """One-at-a-time heuristic: walk panelists in decreasing dropout
    probability and back each up with the closest unchosen pool member by
    Hamming distance (all ties by lexicographic id)."""
    probs = as_probs(probs)
    if len(probs) != instance.panel_size:
        raise DataError("probability vector does not match the panel")
    if instance.budget > instance.pool_size:
        raise DataError("budget exceeds pool")
    ordered = sorted(zip(instance.panel, probs), key=lambda ap: (-ap[1], ap[0].id))
    pool = sorted(instance.pool, key=lambda a: a.id)
    taken = [False] * len(pool)
    chosen: list[str] = []
    rank = 0
    while len(chosen) < instance.budget:
        target = ordered[rank % len(ordered)][0]
        rank += 1
        best_i = None
        best_d = None
        for i, cand in enumerate(pool):
            if taken[i]:
                continue
            d = sum(1 for x, y in zip(target.vector, cand.vector) if x != y)
            if best_d is None or d < best_d:
                best_i, best_d = i, d
        taken[best_i] = True
        chosen.append(pool[best_i].id)
    return AlternateSet(tuple(sorted(chosen)))


def quota_based_alts(instance: Instance, solver=None) -> AlternateSet:
    """Prediction-free heuristic: any alternate set satisfying the original
    quotas scaled down proportionally to the budget (floor/ceil), loosening
    every bound by one and retrying whenever the scaled quotas admit no
    a-subset of the pool."""
    a, k = instance.budget, instance.panel_size
    if a < 1:
        raise DataError("quota_based_alts needs a positive budget")
    if a > instance.pool_size:
        raise DataError("budget exceeds pool")
    solver = solver or BuiltinSolver()
    lower = {key: (l * a) // k for key, l in instance.quotas.lower.items()}
    upper = {key: -((-u * a) // k) for key, u in instance.quotas.upper.items()}
    while True:
        model, meta = ilp.build_quota_subset_model(instance, lower, upper, a)
        solution = solver.solve(model)
        if solution.status is SolveStatus.OPTIMAL:
            members = tuple(sorted(
                mid for mid, var in meta["x"].items()
                if solution.assignment[var] == ONE))
            return AlternateSet(members)
        if solution.status is SolveStatus.BUDGET_EXCEEDED:
            raise BudgetExceeded("quota-based solve did not finish", solution)
        if all(l == 0 for l in lower.values()) and all(u >= a for u in upper.values()):
            raise AssertionError("fully slack scaled quotas cannot be infeasible")
        lower = {key: max(0, l - 1) for key, l in lower.items()}
        upper = {key: u + 1 for key, u in upper.items()}


def brute_force_opt(instance: Instance, distribution: ScenarioDistribution,
                    dev: DeviationKind = DeviationKind.LINEAR,
                    policy: ReplacementPolicy = ReplacementPolicy.CAPPED,
                    max_sets: int = 100_000,
                    max_scenarios: int = 1_000) -> SelectionResult:
    """Exhaustive oracle: enumerate every budget-sized alternate set and every
    replacement subset directly from the deviation definition.

    Deliberately independent of the optimizing solvers; guarded against
    combinatorial blowup. Ties go to the lexicographically first member
    tuple.
    """
    _check_distribution(instance, distribution)
    n, a = instance.pool_size, instance.budget
    if math.comb(n, a) > max_sets:
        raise DataError(f"brute force refused: C({n},{a}) exceeds {max_sets}")
    if len(distribution) > max_scenarios:
        raise DataError(f"brute force refused: {len(distribution)} scenarios "
                        f"exceed {max_scenarios}")

    schema, quotas = instance.schema, instance.quotas
    fv = schema.fv_pairs()
    fv_index = {key: i for i, key in enumerate(fv)}
    lows = [quotas.lower[key] for key in fv]
    ups = [quotas.upper[key] for key in fv]

    def agent_incs(agent: Agent) -> tuple[int, ...]:
        return tuple(fv_index[(schema.features[fi], v)]
                     for fi, v in enumerate(agent.vector))

    pool = sorted(instance.pool, key=lambda x: x.id)
    pool_incs = [agent_incs(x) for x in pool]

    scenarios = []
    for sc in distribution.scenarios:
        dropped = set(sc.members)
        base = [0] * len(fv)
        for agent in instance.panel:
            if agent.id in dropped:
                continue
            for i in agent_incs(agent):
                base[i] += 1
        scenarios.append((sc, base, _cap(policy, len(sc.members))))

    def value_of(counts) -> object:
        total = ZERO
        for i, c in enumerate(counts):
            total += Q(max(0, lows[i] - c, c - ups[i]), ups[i])
        return total

    def inner(base, cap, combo) -> tuple[object, tuple[int, ...]]:
        limit = len(combo) if cap is None else min(cap, len(combo))
        best_val = None
        best_subset = ()
        for rsize in range(0, limit + 1):
            for subset in itertools.combinations(range(len(combo)), rsize):
                counts = list(base)
                for pi in subset:
                    for i in pool_incs[combo[pi]]:
                        counts[i] += 1
                val = value_of(counts)
                if dev is DeviationKind.BINARY:
                    val = ONE if val > ZERO else ZERO
                if best_val is None or val < best_val:
                    best_val, best_subset = val, subset
                    if best_val == ZERO:
                        return best_val, best_subset
        return best_val, best_subset

    best_obj = None
    best_combo = None
    for combo in itertools.combinations(range(n), a):
        obj = ZERO
        pruned = False
        for sc, base, cap in scenarios:
            val, _ = inner(base, cap, combo)
            obj += sc.weight * val
            if best_obj is not None and obj >= best_obj:
                pruned = True  # deviations are nonnegative, total can only grow
                break
        if not pruned and (best_obj is None or obj < best_obj):
            best_obj, best_combo = obj, combo

    members = tuple(sorted(pool[i].id for i in best_combo))
    outcomes = []
    total = ZERO
    for sc, base, cap in scenarios:
        val, subset = inner(base, cap, best_combo)
        reps = tuple(sorted(pool[best_combo[pi]].id for pi in subset))
        outcomes.append(ScenarioOutcome(sc.members, reps, val, sc.weight))
        total += sc.weight * val
    provenance = {"algorithm": "brute-force", "dev": dev.value,
                  "policy": policy.value}
    return SelectionResult(AlternateSet(members), total, tuple(outcomes), provenance)
