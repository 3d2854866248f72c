"""0/1 program builders for the selection problems (export / external route).

The built-in path solves these problems with the structured search instead;
these explicit models exist so any LP-file-speaking solver can be used and
cross-checked. Variable naming is positional (x0, y0_s1, ...) for LP-format
safety; each builder returns (model, meta) where meta maps entity ids back
to variable names.
"""

from __future__ import annotations

from typing import Iterable, Sequence

from .._ratio import ONE, Q, ZERO
from ..deviation import DeviationKind
from ..domain import Instance
from ..dropout import ScenarioDistribution
from ..milp.model import Model


def _fv_counts(instance: Instance, agents) -> dict:
    counts = {key: 0 for key in instance.schema.fv_pairs()}
    for a in agents:
        for fi, v in enumerate(a.vector):
            counts[(instance.schema.features[fi], v)] += 1
    return counts


def _incidence(instance: Instance, agent) -> list:
    return [(instance.schema.features[fi], v) for fi, v in enumerate(agent.vector)]


def build_replacement_model(instance: Instance, alternates: Sequence[str],
                            dropped: Sequence[str], dev: DeviationKind,
                            policy) -> tuple[Model, dict]:
    """Best-replacement program for one dropout set.

    Binary kind: indicator z per (feature, value) with big-M |K|+|A|,
    minimizing the number of violated pairs (the quotas are restorable iff
    the optimum is 0). Linear kind: continuous z scaled by the upper quota,
    minimizing the normalized L1 deviation.
    """
    from .algorithms import ReplacementPolicy  # local import to avoid a cycle

    model = Model("replacement")
    pool_by_id = instance.pool_by_id()
    y = {}
    for i, mid in enumerate(sorted(alternates)):
        y[mid] = model.add_binary(f"y{i}")
    fv = instance.schema.fv_pairs()
    z = {}
    big_m = instance.panel_size + len(alternates)
    for p, key in enumerate(fv):
        if dev is DeviationKind.BINARY:
            z[key] = model.add_binary(f"z{p}")
        else:
            z[key] = model.add_continuous(f"z{p}")

    remaining = [a for a in instance.panel if a.id not in set(dropped)]
    base = _fv_counts(instance, remaining)

    if policy is ReplacementPolicy.CAPPED:
        model.add_constraint("cap", {var: ONE for var in y.values()},
                             "<=", len(dropped))

    for p, key in enumerate(fv):
        l, u = instance.quotas.bounds(key)
        coeff_m = big_m if dev is DeviationKind.BINARY else u
        inc = {}
        for mid, var in y.items():
            if key in _incidence(instance, pool_by_id[mid]):
                inc[var] = ONE
        lo = dict(inc)
        lo[z[key]] = Q(coeff_m)
        model.add_constraint(f"lo{p}", lo, ">=", l - base[key])
        hi = {var: -c for var, c in inc.items()}
        hi[z[key]] = Q(coeff_m)
        model.add_constraint(f"hi{p}", hi, ">=", base[key] - u)

    model.set_objective({var: ONE for var in z.values()})
    return model, {"y": y, "z": z}


def build_opt_model(instance: Instance, distribution: ScenarioDistribution,
                    dev: DeviationKind, policy, exact_size: bool = True,
                    ) -> tuple[Model, dict]:
    """Joint selection program: pick the alternate set and, per scenario, its
    replacement subset, minimizing scenario-weighted deviation.

    Linear kind: per-scenario deviation d_s is continuous and bounded below
    by the summed normalized violations. Binary kind: d_s is an indicator
    forced to 1 by any violation through the big-M (|K|+a)|FV|.
    """
    from .algorithms import ReplacementPolicy

    model = Model("selection")
    fv = instance.schema.fv_pairs()
    pool = sorted(instance.pool, key=lambda a: a.id)
    x = {a.id: model.add_binary(f"x{i}") for i, a in enumerate(pool)}
    model.add_constraint("budget", {var: ONE for var in x.values()},
                         "=" if exact_size else "<=", instance.budget)

    big_m = (instance.panel_size + instance.budget) * len(fv)
    meta_y: dict = {}
    d_vars = {}
    obj = {}
    for s_idx, sc in enumerate(distribution.scenarios):
        dropped = set(sc.members)
        remaining = [a for a in instance.panel if a.id not in dropped]
        base = _fv_counts(instance, remaining)
        ys = {}
        for i, a in enumerate(pool):
            ys[a.id] = model.add_binary(f"y{i}_s{s_idx}")
            model.add_constraint(f"link{i}_s{s_idx}",
                                 {ys[a.id]: ONE, x[a.id]: -ONE}, "<=", ZERO)
        meta_y[s_idx] = ys
        if policy is ReplacementPolicy.CAPPED:
            model.add_constraint(f"cap_s{s_idx}",
                                 {var: ONE for var in ys.values()},
                                 "<=", len(sc.members))
        zs = {}
        for p, key in enumerate(fv):
            zs[key] = model.add_continuous(f"z{p}_s{s_idx}")
        for p, key in enumerate(fv):
            l, u = instance.quotas.bounds(key)
            inc = {ys[a.id]: ONE for a in pool if key in _incidence(instance, a)}
            lo = dict(inc)
            lo[zs[key]] = Q(u)
            model.add_constraint(f"lo{p}_s{s_idx}", lo, ">=", l - base[key])
            hi = {var: -c for var, c in inc.items()}
            hi[zs[key]] = Q(u)
            model.add_constraint(f"hi{p}_s{s_idx}", hi, ">=", base[key] - u)
        if dev is DeviationKind.BINARY:
            d = model.add_binary(f"d_s{s_idx}")
            coeffs = {var: -ONE for var in zs.values()}
            coeffs[d] = Q(big_m)
            model.add_constraint(f"dev_s{s_idx}", coeffs, ">=", ZERO)
        else:
            d = model.add_continuous(f"d_s{s_idx}")
            coeffs = {var: -ONE for var in zs.values()}
            coeffs[d] = ONE
            model.add_constraint(f"dev_s{s_idx}", coeffs, ">=", ZERO)
        d_vars[s_idx] = d
        obj[d] = sc.weight

    model.set_objective(obj)
    return model, {"x": x, "y": meta_y, "d": d_vars}


def build_quota_subset_model(instance: Instance, lower: dict, upper: dict,
                             size: int) -> tuple[Model, dict]:
    """Feasibility program: a size-subset of the pool within given per-pair
    bounds (constant objective; any feasible point is accepted)."""
    model = Model("quota-subset")
    pool = sorted(instance.pool, key=lambda a: a.id)
    x = {a.id: model.add_binary(f"x{i}") for i, a in enumerate(pool)}
    model.add_constraint("size", {var: ONE for var in x.values()}, "=", size)
    for p, key in enumerate(instance.schema.fv_pairs()):
        members = {x[a.id]: ONE for a in pool if key in _incidence(instance, a)}
        lo = lower.get(key, 0)
        hi = upper.get(key)
        if lo > 0:
            model.add_constraint(f"lo{p}", dict(members), ">=", lo)
        if hi is not None and hi < size:
            model.add_constraint(f"hi{p}", dict(members), "<=", hi)
    model.set_objective({})
    return model, {"x": x}
