"""Selection-program variants: alternate dropouts, preemptive extras,
direct panel selection, and joint panel-plus-alternates selection.

All variants share the sampling approach and the exact class-based search.
When pool members can drop out, members are grouped by feature vector AND
their availability pattern across the sampled worlds (two members are
interchangeable only when both always survive together), and each world
masks out the unavailable groups.

Replacements are always drawn from alternates who did not themselves drop
out in the world under evaluation.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from ._ratio import ONE, Q, ZERO, as_ratio
from .deviation import DeviationKind, dev_binary, dev_linear
from .domain import Agent, DataError, FeatureSchema, Instance, Quotas
from .dropout import ScenarioDistribution, as_probs, build_empirical_distribution, sample_dropout_set
from .milp.model import BudgetExceeded
from .milp.solve import BuiltinSolver
from .selection import (AlternateSet, ReplacementPolicy, ScenarioOutcome,
                        SelectionContext, greedy_alts, make_alternate_set)
from .selection.algorithms import _cap, _members_from_counts
from .selection.inner import Profile, ReplacementEngine, ReplacementSpace
from .selection.optimize import Case, ClassGroup, SelectionSearch


@dataclass(frozen=True)
class ExtensionConfig:
    """Variant switch used by the command-line surface."""

    variant: str  # alts-drop | preempt | panel-select | panel-and-alts
    extra_upper: Mapping | None = None
    panel_size: int | None = None
    pool_probs: tuple | None = None


@dataclass(frozen=True)
class PanelSelectionResult:
    panel: tuple[str, ...]
    objective: object
    per_scenario: tuple[ScenarioOutcome, ...]
    provenance: Mapping


@dataclass(frozen=True)
class JointSelectionResult:
    panel: tuple[str, ...]
    alternates: AlternateSet
    objective: object
    per_scenario: tuple[ScenarioOutcome, ...]
    provenance: Mapping


def _draws(probs, ids, s, rng) -> list[tuple[str, ...]]:
    return [sample_dropout_set(probs, ids, rng) for _ in range(s)]


# ---------------------------------------------------------------------------
# variant 1: alternates can drop out too


def erm_alts_with_alt_dropouts(instance: Instance, panel_probs, pool_probs,
                               dev: DeviationKind, s: int = 300,
                               policy: ReplacementPolicy = ReplacementPolicy.CAPPED,
                               rng=None, pool_rng=None, solver=None,
                               paired_scenarios: Sequence | None = None,
                               node_limit: int = 2_000_000,
                               provenance: Mapping | None = None):
    """Alternate selection when standbys drop out as well.

    Each sampled world pairs a panel dropout set with a pool dropout set
    (drawn from independent streams, so the panel draws match plain
    erm_alts under the same panel stream). Replacements in a world come
    only from chosen alternates who survived it. paired_scenarios, when
    given, replaces sampling: (panel dropped, pool dropped, weight) triples.
    """
    panel_probs = as_probs(panel_probs)
    if len(panel_probs) != instance.panel_size:
        raise DataError("panel probability vector does not match the panel")
    pool_ids = tuple(sorted(a.id for a in instance.pool))
    if paired_scenarios is None:
        pool_probs = as_probs(pool_probs)
        if len(pool_probs) != len(pool_ids):
            raise DataError("pool probability vector does not match the pool "
                            "(order: sorted pool ids)")
        if rng is None or pool_rng is None:
            raise DataError("sampling needs both a panel rng and a pool rng")
        panel_draws = _draws(panel_probs, instance.panel_ids(), s, rng)
        pool_draws = _draws(pool_probs, pool_ids, s, pool_rng)
        weights: dict = {}
        for pd, qd in zip(panel_draws, pool_draws):
            key = (pd, qd)
            weights[key] = weights.get(key, ZERO) + Q(1, s)
        pairs = sorted(weights)
        pair_weights = [weights[p] for p in pairs]
    else:
        pairs = [(tuple(sorted(p)), tuple(sorted(q))) for p, q, _ in paired_scenarios]
        pair_weights = [as_ratio(w) for _, _, w in paired_scenarios]
        if sum(pair_weights, ZERO) != ONE:
            raise DataError("paired scenario weights must sum to 1")

    space = ReplacementSpace(instance.schema, instance.quotas)
    # group pool members by (feature class, availability pattern)
    masks_by_member = {
        m: tuple(0 if m in qd else 1 for _, qd in pairs) for m in pool_ids
    }
    pool_by_id = instance.pool_by_id()
    grouped: dict = {}
    for m in pool_ids:
        key = (space.class_key(pool_by_id[m]), masks_by_member[m])
        grouped.setdefault(key, []).append(m)
    groups = [ClassGroup(key[0], tuple(sorted(ids)))
              for key, ids in sorted(grouped.items())]
    group_masks = [key[1] for key, _ in sorted(grouped.items())]

    engine = ReplacementEngine(space, [g.key for g in groups])
    cases = []
    for idx, (pd, _qd) in enumerate(pairs):
        gone = set(pd)
        remaining = [a for a in instance.panel if a.id not in gone]
        pid = engine.register_profile(
            Profile(space.counts_of(remaining), _cap(policy, len(pd))))
        mask = tuple(group_masks[g][idx] for g in range(len(groups)))
        cases.append(Case(pair_weights[idx], pid, mask))

    search = SelectionSearch(space, groups, cases, engine, instance.budget,
                             exact_size=True,
                             binary_kind=dev is DeviationKind.BINARY)
    incumbent = None
    if 0 < instance.budget <= instance.pool_size:
        greedy = greedy_alts(instance, panel_probs).members
        counts = [0] * len(groups)
        gidx = {}
        for gi, (key, ids) in enumerate(sorted(grouped.items())):
            for m in ids:
                gidx[m] = gi
        for m in greedy:
            counts[gidx[m]] += 1
        incumbent = counts
    try:
        objective, counts, stats = search.solve(node_limit=node_limit,
                                                incumbent_counts=incumbent)
    except BudgetExceeded as exc:
        raise BudgetExceeded("alternate-dropout search budget exceeded",
                             exc.solution) from exc

    members = _members_from_counts(groups, counts)
    aset = make_alternate_set(instance, members)
    chosen_by_group = [tuple(m for m in g.members if m in set(members))[:c]
                       for g, c in zip(groups, counts)]

    outcomes = []
    total = ZERO
    for idx, (pd, qd) in enumerate(pairs):
        gone = set(pd)
        remaining = [a for a in instance.panel if a.id not in gone]
        pid = engine.register_profile(
            Profile(space.counts_of(remaining), _cap(policy, len(pd))))
        avail = tuple(c * group_masks[g][idx]
                      for g, c in enumerate(counts))
        scaled, r = engine.solve(pid, avail)
        replacement = _members_from_counts(groups, r, chosen_by_group)
        final = remaining + [pool_by_id[m] for m in replacement]
        exact = dev_linear(final, instance.schema, instance.quotas)
        if exact != space.ratio(scaled):
            raise AssertionError("deviation mismatch in alternate-dropout decode")
        value = Q(dev_binary(final, instance.schema, instance.quotas)) \
            if dev is DeviationKind.BINARY else exact
        outcomes.append(ScenarioOutcome(pd, replacement, value,
                                        pair_weights[idx], pool_dropped=qd))
        total += pair_weights[idx] * value
    if total != objective:
        raise AssertionError("alternate-dropout objective decode mismatch")
    prov = dict(provenance or {})
    prov.update(variant="alts-drop", algorithm="erm-alts-drop", dev=dev.value,
                policy=policy.value, s=s, solver="builtin", nodes=stats.nodes)
    from .selection.algorithms import SelectionResult
    return SelectionResult(aset, total, tuple(outcomes), prov)


# ---------------------------------------------------------------------------
# variant 2: extra panelists added outright (no later choice)


def erm_preempt(instance: Instance, probs, dev: DeviationKind, s: int = 300,
                extra_upper: Mapping | None = None, rng=None, solver=None,
                distribution: ScenarioDistribution | None = None,
                node_limit: int = 2_000_000,
                provenance: Mapping | None = None):
    """Choose at most `budget` pool members who join the panel outright,
    subject to extra per-(feature, value) caps on who may be added.

    The chosen extras appear in every scenario; there is no replacement
    stage. Returns a SelectionResult whose per-scenario replacement sets
    all equal the chosen extras.
    """
    probs = as_probs(probs)
    if extra_upper is None:
        raise DataError("erm_preempt needs the extra upper caps")
    fv = instance.schema.fv_pairs()
    missing = [key for key in fv if key not in extra_upper]
    if missing:
        raise DataError(f"extra upper caps missing pairs: {missing}")
    if distribution is None:
        if rng is None:
            raise DataError("erm_preempt needs an rng when sampling")
        distribution = build_empirical_distribution(
            probs, instance.panel_ids(), s, rng)

    space = ReplacementSpace(instance.schema, instance.quotas)
    ctx = SelectionContext(instance)
    groups = ctx.groups
    engine = ctx.engine

    # scenario data: weights and base counts of the surviving panel
    weights = []
    bases = []
    for sc in distribution.scenarios:
        gone = set(sc.members)
        remaining = [a for a in instance.panel if a.id not in gone]
        weights.append(sc.weight)
        bases.append(space.counts_of(remaining))

    nf = space.nf
    caps = [[0] * s_ for s_ in space.sizes]
    for fi, f in enumerate(instance.schema.features):
        for vi, v in enumerate(instance.schema.values[fi]):
            caps[fi][vi] = int(extra_upper[(f, v)])

    def added_ok(counts):
        per = [[0] * s_ for s_ in space.sizes]
        for g, c in zip(groups, counts):
            if c:
                for fi, vi in enumerate(g.key):
                    per[fi][vi] += c
        return all(per[fi][vi] <= caps[fi][vi]
                   for fi in range(nf) for vi in range(space.sizes[fi]))

    def value_of(counts):
        total = ZERO
        for w, base in zip(weights, bases):
            rows = [list(row) for row in base]
            for g, c in zip(groups, counts):
                if c:
                    for fi, vi in enumerate(g.key):
                        rows[fi][vi] += c
            pen = space.base_penalty(rows)
            if dev is DeviationKind.BINARY:
                total += w * (ONE if pen > 0 else ZERO)
            else:
                total += w * space.ratio(pen)
        return total

    # exhaustive DFS over class counts (at-most budget, cap-feasible);
    # sized for desk-scale instances, guarded by node_limit
    best = [None, None]
    nodes = [0]
    m = len(groups)
    counts = [0] * m

    def per_value_room(counts):
        per = [[0] * s_ for s_ in space.sizes]
        for g, c in zip(groups, counts):
            for fi, vi in enumerate(g.key):
                per[fi][vi] += c
        return per

    def rec(pos, b_rem):
        nodes[0] += 1
        if nodes[0] > node_limit:
            raise BudgetExceeded("preempt search exceeded its node budget",
                                 (best[0], best[1]))
        if pos == m:
            obj = value_of(counts)
            if best[0] is None or obj < best[0]:
                best[0] = obj
                best[1] = tuple(counts)
            return
        g = groups[pos]
        used = per_value_room(counts)
        room = min(caps[fi][vi] - used[fi][vi] for fi, vi in enumerate(g.key))
        hi = min(g.capacity, b_rem, max(0, room))
        for take in range(hi, -1, -1):
            counts[pos] = take
            rec(pos + 1, b_rem - take)
        counts[pos] = 0

    rec(0, instance.budget)
    objective, best_counts = best
    members = _members_from_counts(groups, best_counts)
    aset = make_alternate_set(instance, members)

    pool_by_id = instance.pool_by_id()
    outcomes = []
    total = ZERO
    for sc in distribution.scenarios:
        gone = set(sc.members)
        final = [a for a in instance.panel if a.id not in gone]
        final += [pool_by_id[x] for x in members]
        exact = dev_linear(final, instance.schema, instance.quotas)
        value = Q(dev_binary(final, instance.schema, instance.quotas)) \
            if dev is DeviationKind.BINARY else exact
        outcomes.append(ScenarioOutcome(sc.members, members, value, sc.weight))
        total += sc.weight * value
    if total != objective:
        raise AssertionError("preempt objective decode mismatch")
    prov = dict(provenance or {})
    prov.update(variant="preempt", algorithm="erm-preempt", dev=dev.value,
                s=distribution.sample_count or len(distribution),
                solver="builtin", nodes=nodes[0])
    from .selection.algorithms import SelectionResult
    return SelectionResult(aset, total, tuple(outcomes), prov)


# ---------------------------------------------------------------------------
# variants 3 and 4: selecting the panel itself


def _pool_world_groups(space, pool: Sequence[Agent], worlds):
    """Group pool members by (class, availability-across-worlds pattern)."""
    grouped: dict = {}
    for a in sorted(pool, key=lambda x: x.id):
        mask = tuple(0 if a.id in set(w) else 1 for w, _ in worlds)
        grouped.setdefault((space.class_key(a), mask), []).append(a.id)
    groups = [ClassGroup(key[0], tuple(ids)) for key, ids in sorted(grouped.items())]
    masks = [key[1] for key, _ in sorted(grouped.items())]
    return groups, masks


def _sample_worlds(pool_probs, pool_ids, s, rng, given):
    if given is not None:
        worlds = [(tuple(sorted(w)), as_ratio(wt)) for w, wt in given]
        if sum((wt for _, wt in worlds), ZERO) != ONE:
            raise DataError("world weights must sum to 1")
        return worlds
    if rng is None:
        raise DataError("sampling needs an rng")
    weights: dict = {}
    for _ in range(s):
        w = sample_dropout_set(pool_probs, pool_ids, rng)
        weights[w] = weights.get(w, ZERO) + Q(1, s)
    return sorted(weights.items(), key=lambda kv: (len(kv[0]), kv[0]))


def erm_panel_select(pool: Sequence[Agent], schema: FeatureSchema,
                     quotas: Quotas, panel_size: int, pool_probs,
                     dev: DeviationKind, s: int = 300, rng=None, solver=None,
                     initial_quotas: Quotas | None = None,
                     pool_scenarios: Sequence | None = None,
                     node_limit: int = 2_000_000,
                     provenance: Mapping | None = None) -> PanelSelectionResult:
    """Pick the panel itself to minimize expected deviation after dropouts
    sampled from the whole pool. Optional initial quotas constrain the
    selected panel's composition; the objective always measures against the
    true quotas."""
    if panel_size > len(pool):
        raise DataError("panel size exceeds the pool")
    pool_ids = tuple(sorted(a.id for a in pool))
    if pool_scenarios is None:
        pool_probs = as_probs(pool_probs)
        if len(pool_probs) != len(pool_ids):
            raise DataError("pool probability vector does not match the pool "
                            "(order: sorted pool ids)")
    space = ReplacementSpace(schema, quotas)
    worlds = _sample_worlds(pool_probs, pool_ids, s, rng, pool_scenarios)
    groups, masks = _pool_world_groups(space, pool, worlds)

    init = None
    if initial_quotas is not None:
        init = ([[initial_quotas.lower[(f, v)] for v in vals]
                 for f, vals in zip(schema.features, schema.values)],
                [[initial_quotas.upper[(f, v)] for v in vals]
                 for f, vals in zip(schema.features, schema.values)])

    m = len(groups)
    weights = [wt for _, wt in worlds]

    def panel_counts(counts, widx):
        rows = [[0] * s_ for s_ in space.sizes]
        for gi, (g, c) in enumerate(zip(groups, counts)):
            if c and masks[gi][widx]:
                for fi, vi in enumerate(g.key):
                    rows[fi][vi] += c
        return rows

    def value_of(counts):
        total = ZERO
        for widx, (_, wt) in enumerate(worlds):
            pen = space.base_penalty(panel_counts(counts, widx))
            if dev is DeviationKind.BINARY:
                total += wt * (ONE if pen > 0 else ZERO)
            else:
                total += wt * space.ratio(pen)
        return total

    def selection_ok(counts, final=False):
        if init is None:
            return True
        per = [[0] * s_ for s_ in space.sizes]
        for g, c in zip(groups, counts):
            for fi, vi in enumerate(g.key):
                per[fi][vi] += c
        lo, hi = init
        for fi in range(space.nf):
            for vi in range(space.sizes[fi]):
                if per[fi][vi] > hi[fi][vi]:
                    return False
                if final and per[fi][vi] < lo[fi][vi]:
                    return False
        return True

    best = [None, None]
    nodes = [0]
    counts = [0] * m
    suffix_cap = [0] * (m + 1)
    for i in range(m - 1, -1, -1):
        suffix_cap[i] = suffix_cap[i + 1] + groups[i].capacity

    def rec(pos, b_rem):
        nodes[0] += 1
        if nodes[0] > node_limit:
            raise BudgetExceeded("panel-select search exceeded its node budget",
                                 (best[0], best[1]))
        if pos == m:
            if b_rem != 0 or not selection_ok(counts, final=True):
                return
            obj = value_of(counts)
            if best[0] is None or obj < best[0]:
                best[0] = obj
                best[1] = tuple(counts)
            return
        if b_rem > suffix_cap[pos]:
            return
        hi = min(groups[pos].capacity, b_rem)
        for take in range(hi, -1, -1):
            counts[pos] = take
            if selection_ok(counts):
                rec(pos + 1, b_rem - take)
        counts[pos] = 0

    rec(0, panel_size)
    if best[0] is None:
        raise DataError("no feasible panel under the initial quotas")
    objective, best_counts = best

    members = _members_from_counts(groups, best_counts)
    by_id = {a.id: a for a in pool}
    outcomes = []
    total = ZERO
    for w, wt in worlds:
        gone = set(w)
        final = [by_id[mid] for mid in members if mid not in gone]
        exact = dev_linear(final, schema, quotas)
        value = Q(dev_binary(final, schema, quotas)) \
            if dev is DeviationKind.BINARY else exact
        outcomes.append(ScenarioOutcome(w, (), value, wt))
        total += wt * value
    if total != objective:
        raise AssertionError("panel-select objective decode mismatch")
    prov = dict(provenance or {})
    prov.update(variant="panel-select", algorithm="erm-panel-select",
                dev=dev.value, s=s, solver="builtin", nodes=nodes[0])
    return PanelSelectionResult(members, total, tuple(outcomes), prov)


def erm_panel_and_alts(pool: Sequence[Agent], schema: FeatureSchema,
                       quotas: Quotas, panel_size: int, budget: int,
                       pool_probs, dev: DeviationKind, s: int = 300,
                       rng=None, solver=None,
                       pool_scenarios: Sequence | None = None,
                       node_limit: int = 200_000,
                       provenance: Mapping | None = None) -> JointSelectionResult:
    """Jointly pick a panel and its alternates from one pool.

    Per world, dropped chosen panelists leave; replacements come from chosen
    alternates who survived that world, capped by the number of chosen
    panelists who dropped. Exhaustive over panel compositions with an exact
    alternate search per composition (small inputs; guarded)."""
    if panel_size + budget > len(pool):
        raise DataError("panel size plus budget exceeds the pool")
    pool_ids = tuple(sorted(a.id for a in pool))
    if pool_scenarios is None:
        pool_probs = as_probs(pool_probs)
        if len(pool_probs) != len(pool_ids):
            raise DataError("pool probability vector does not match the pool "
                            "(order: sorted pool ids)")
    space = ReplacementSpace(schema, quotas)
    worlds = _sample_worlds(pool_probs, pool_ids, s, rng, pool_scenarios)
    groups, masks = _pool_world_groups(space, pool, worlds)
    m = len(groups)

    best = [None, None, None]  # objective, panel counts, alt counts
    nodes = [0]
    counts = [0] * m
    suffix_cap = [0] * (m + 1)
    for i in range(m - 1, -1, -1):
        suffix_cap[i] = suffix_cap[i + 1] + groups[i].capacity

    def alt_solve(panel_counts_vec):
        """Exact alternate search given a panel composition."""
        engine = ReplacementEngine(space, [g.key for g in groups])
        cases = []
        for widx, (w, wt) in enumerate(worlds):
            rows = [[0] * s_ for s_ in space.sizes]
            dropped_chosen = 0
            for gi, (g, c) in enumerate(zip(groups, panel_counts_vec)):
                if not c:
                    continue
                if masks[gi][widx]:
                    for fi, vi in enumerate(g.key):
                        rows[fi][vi] += c
                else:
                    dropped_chosen += c
            pid = engine.register_profile(
                Profile(tuple(tuple(r) for r in rows), dropped_chosen))
            mask = tuple(masks[gi][widx] for gi in range(m))
            cases.append(Case(wt, pid, mask))
        alt_groups = [ClassGroup(g.key, g.members[c:])
                      for g, c in zip(groups, panel_counts_vec)]
        search = SelectionSearch(space, alt_groups, cases, engine, budget,
                                 exact_size=True,
                                 binary_kind=dev is DeviationKind.BINARY)
        return search.solve(node_limit=node_limit)

    def rec(pos, b_rem):
        nodes[0] += 1
        if nodes[0] > node_limit:
            raise BudgetExceeded("joint search exceeded its node budget",
                                 tuple(best))
        if pos == m:
            if b_rem != 0:
                return
            obj, alt_counts, _ = alt_solve(tuple(counts))
            if best[0] is None or obj < best[0]:
                best[0] = obj
                best[1] = tuple(counts)
                best[2] = tuple(alt_counts)
            return
        if b_rem > suffix_cap[pos]:
            return
        hi = min(groups[pos].capacity, b_rem)
        for take in range(hi, -1, -1):
            counts[pos] = take
            rec(pos + 1, b_rem - take)
        counts[pos] = 0

    rec(0, panel_size)
    objective, panel_counts_vec, alt_counts = best

    panel_members = _members_from_counts(groups, panel_counts_vec)
    alt_pools = [g.members[c:] for g, c in zip(groups, panel_counts_vec)]
    alt_members = _members_from_counts(groups, alt_counts, alt_pools)

    by_id = {a.id: a for a in pool}
    engine = ReplacementEngine(space, [g.key for g in groups])
    outcomes = []
    total = ZERO
    panel_by_group = [g.members[:c] for g, c in zip(groups, panel_counts_vec)]
    alts_by_group = [alt_pools[gi][:c] for gi, c in enumerate(alt_counts)]
    for widx, (w, wt) in enumerate(worlds):
        gone = set(w)
        alive_panel = [mid for mid in panel_members if mid not in gone]
        dropped_chosen = len(panel_members) - len(alive_panel)
        rows = space.counts_of([by_id[mid] for mid in alive_panel])
        pid = engine.register_profile(Profile(rows, dropped_chosen))
        avail = tuple(len([x for x in alts_by_group[gi] if x not in gone])
                      for gi in range(m))
        scaled, r = engine.solve(pid, avail)
        reps = []
        for gi, cnt in enumerate(r):
            avail_ids = [x for x in alts_by_group[gi] if x not in gone]
            reps.extend(avail_ids[:cnt])
        reps = tuple(sorted(reps))
        final = [by_id[mid] for mid in alive_panel] + [by_id[mid] for mid in reps]
        exact = dev_linear(final, schema, quotas)
        if exact != space.ratio(scaled):
            raise AssertionError("joint decode deviation mismatch")
        value = Q(dev_binary(final, schema, quotas)) \
            if dev is DeviationKind.BINARY else exact
        outcomes.append(ScenarioOutcome(w, reps, value, wt))
        total += wt * value
    if total != objective:
        raise AssertionError("joint objective decode mismatch")
    prov = dict(provenance or {})
    prov.update(variant="panel-and-alts", algorithm="erm-panel-and-alts",
                dev=dev.value, s=s, solver="builtin", nodes=nodes[0])
    return JointSelectionResult(panel_members, AlternateSet(alt_members),
                                total, tuple(outcomes), prov)
