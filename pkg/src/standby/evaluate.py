"""Experiment harness: loss estimation, benchmark grids, robustness sweeps,
calibration tables and sample-size convergence studies.

All stochastic pieces draw from substreams derived from one master seed
(see rand.substream): training coins live under ("train", algorithm,
budget), the shared evaluation sample under ("eval",), and probability
perturbations under ("perturb", gamma index, rep). Evaluation scenarios
are shared across algorithms and budgets within a run, so comparisons are
paired. Loss means are exact rationals; standard deviations and errors are
floats for reporting.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
import statistics
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from ._ratio import ONE, Q, ZERO, as_ratio, ratio_str, to_float
from .deviation import DeviationKind, aux_metrics, dev_binary, dev_linear
from .domain import Agent, DataError, FeatureSchema, Instance
from .dropout import (DropoutModel, ScenarioDistribution,
                      build_empirical_distribution, as_probs,
                      enumerate_exact_distribution, perturb_probabilities,
                      predict_dropout, single_scenario_distribution)
from .milp.model import BudgetExceeded, Model, SolverConfig
from .milp.solve import BuiltinSolver
from .rand import substream
from .selection import (AlternateSet, ReplacementPolicy, SelectionContext,
                        best_replacement, erm_alts, erm_alts_eq, greedy_alts,
                        make_alternate_set, quota_based_alts)
from .selection.algorithms import _cap
from .selection.inner import Profile, ReplacementEngine, ReplacementSpace
from .selection.optimize import build_groups

ALGORITHMS = ("erm-l1", "erm-binary", "erm-l1-eq", "greedy", "quota-based",
              "empty", "full-pool")
PREDICTION_FREE = ("erm-l1-eq", "quota-based", "empty", "full-pool")


@dataclass(frozen=True)
class LossEstimate:
    mean: object            # exact rational
    stddev: float
    stderr: float
    samples: int
    raw: tuple              # ((dropout set, weight, loss), ...), all exact
    metrics: Mapping | None = None  # aux metric means, exact rationals

    def scenario_hash(self) -> str:
        h = hashlib.sha256()
        for members, weight, _ in self.raw:
            h.update(",".join(members).encode())
            h.update(f"#{ratio_str(weight)};".encode())
        return h.hexdigest()[:16]


@dataclass
class EvalRow:
    algorithm: str
    budget: int | None = None
    gamma: object = None
    rep: int | None = None
    s_train: int | None = None
    dev: str = "l1"
    loss_mean: object = None
    loss_stddev: float | None = None
    loss_stderr: float | None = None
    eval_samples: int | None = None
    seed: int | None = None
    status: str = "ok"
    error: str | None = None
    scenario_hash: str | None = None
    members: tuple[str, ...] | None = None
    metrics: Mapping | None = None
    reference: bool = False


@dataclass
class EvaluationReport:
    rows: list[EvalRow]
    provenance: dict = field(default_factory=dict)
    raw_losses: dict = field(default_factory=dict)  # row index -> raw tuples

    def row_dict(self, row: EvalRow) -> dict:
        d = {}
        for f in dataclasses.fields(EvalRow):
            v = getattr(row, f.name)
            if f.name == "loss_mean" and v is not None:
                d["loss_mean"] = ratio_str(v)
                d["loss_mean_float"] = to_float(v)
                continue
            if f.name == "gamma" and v is not None:
                v = ratio_str(v)
            if f.name == "members" and v is not None:
                v = list(v)
            if f.name == "metrics" and v is not None:
                v = {k: ratio_str(x) for k, x in v.items()}
            d[f.name] = v
        return d


# ---------------------------------------------------------------------------
# loss estimation


def _loss_context(instance: Instance, context: SelectionContext | None):
    return context if context is not None else SelectionContext(instance)


def _distribution_losses(aset: AlternateSet, instance: Instance,
                         distribution: ScenarioDistribution, dev: DeviationKind,
                         policy: ReplacementPolicy, ctx: SelectionContext,
                         solver=None) -> list:
    """Per-scenario minimal deviations for a fixed alternate set."""
    out = []
    counts = tuple(ctx.counts_of_members(aset.members))
    use_engine = solver is None or isinstance(solver, BuiltinSolver)
    for sc in distribution.scenarios:
        if use_engine:
            pid = ctx.profile_of(sc.members, _cap(policy, len(sc.members)))
            scaled = ctx.engine.solve(pid, counts)[0]
            if dev is DeviationKind.BINARY:
                loss = ONE if scaled > 0 else ZERO
            else:
                loss = ctx.space.ratio(scaled)
        else:
            _, loss = best_replacement(aset, sc.members, instance, dev, policy,
                                       solver)
            loss = as_ratio(loss)
        out.append((sc, loss))
    return out


def _spread(values_with_mult: Sequence, mean, n: int) -> tuple[float, float]:
    if n <= 1:
        return 0.0, 0.0
    var = sum(m * (to_float(x) - to_float(mean)) ** 2
              for x, m in values_with_mult) / (n - 1)
    sd = math.sqrt(var)
    return sd, sd / math.sqrt(n)


def estimate_loss(alternates, instance: Instance, probs, dev: DeviationKind,
                  policy: ReplacementPolicy = ReplacementPolicy.CAPPED,
                  eval_samples: int = 300, rng=None, solver=None,
                  distribution: ScenarioDistribution | None = None,
                  context: SelectionContext | None = None,
                  aux: bool = False) -> LossEstimate:
    """Mean deviation of an alternate set over fresh i.i.d. dropout draws.

    A fixed distribution may be supplied instead of sampling (exact
    enumeration on small panels makes the estimate exact). With aux=True the
    four auxiliary metrics are also averaged, each with its replacement set
    re-optimized for that metric.
    """
    aset = alternates if isinstance(alternates, AlternateSet) else \
        make_alternate_set(instance, alternates)
    if distribution is None:
        if rng is None:
            raise DataError("estimate_loss needs an rng when sampling")
        probs = as_probs(probs)
        distribution = build_empirical_distribution(
            probs, instance.panel_ids(), eval_samples, rng)
    ctx = _loss_context(instance, context)
    losses = _distribution_losses(aset, instance, distribution, dev, policy,
                                  ctx, solver)
    n = distribution.sample_count or len(distribution)
    mean = sum((sc.weight * loss for sc, loss in losses), ZERO)
    if distribution.sample_count is None:  # exact distribution: no draw spread
        sd = se = 0.0
    else:
        with_mult = [(loss, int(sc.weight * n)) for sc, loss in losses]
        sd, se = _spread(with_mult, mean, n)
    raw = tuple((sc.members, sc.weight, loss) for sc, loss in losses)
    metrics = _aux_metric_means(aset, instance, distribution, policy, ctx) if aux else None
    return LossEstimate(mean, sd, se, n, raw, metrics)


def evaluate_realized(alternates, realized_dropouts: Iterable[str],
                      instance: Instance, dev: DeviationKind,
                      policy: ReplacementPolicy = ReplacementPolicy.CAPPED,
                      solver=None, context: SelectionContext | None = None):
    """Deviation against the one dropout set that actually occurred."""
    dist = single_scenario_distribution(realized_dropouts)
    est = estimate_loss(alternates, instance, None, dev, policy,
                        distribution=dist, solver=solver, context=context)
    return est.mean


# -- auxiliary metrics (each with its own replacement objective) ------------


def _aux_metric_means(aset, instance, distribution, policy, ctx):
    from .selection import ilp as _unused  # noqa: F401 (import kept local)
    below_space = ReplacementSpace(instance.schema, instance.quotas, mode="below")
    below_groups = build_groups(below_space, [a for a in instance.pool
                                              if a.id in set(aset.members)])
    below_engine = ReplacementEngine(below_space, [g.key for g in below_groups])
    below_avail = tuple(g.capacity for g in below_groups)

    sums = {"dev_below": ZERO, "max_norm_dev": ZERO, "max_dev": ZERO,
            "unrepresented": ZERO}
    pool_by_id = instance.pool_by_id()
    chosen = [pool_by_id[m] for m in aset.members]
    for sc in distribution.scenarios:
        dropped = set(sc.members)
        remaining = [a for a in instance.panel if a.id not in dropped]
        cap = _cap(policy, len(sc.members))
        pid = below_engine.register_profile(
            Profile(below_space.counts_of(remaining), cap))
        scaled, _ = below_engine.solve(pid, below_avail)
        sums["dev_below"] += sc.weight * below_space.ratio(scaled)
        mx_norm, mx_raw, unrep = _minmax_metrics(instance, remaining, chosen, cap)
        sums["max_norm_dev"] += sc.weight * mx_norm
        sums["max_dev"] += sc.weight * mx_raw
        sums["unrepresented"] += sc.weight * unrep
    return sums


def _minmax_metrics(instance, remaining, chosen, cap):
    """Best achievable max normalized deviation, max raw deviation, and
    number of unrepresented pairs, each with its own replacement objective.

    The max objectives use an auxiliary bound variable t over the violation
    rows; unrepresented counts indicator variables forced by zero counts.
    Solved exactly by the built-in solver.
    """
    from .milp.solve import solve as milp_solve

    schema, quotas = instance.schema, instance.quotas
    fv = schema.fv_pairs()
    base = {key: 0 for key in fv}
    for a in remaining:
        for fi, v in enumerate(a.vector):
            base[(schema.features[fi], v)] += 1
    member_keys = [
        [(schema.features[fi], v) for fi, v in enumerate(a.vector)]
        for a in chosen
    ]

    def build(kind: str) -> Model:
        model = Model(f"metric-{kind}")
        ys = [model.add_binary(f"y{i}") for i in range(len(chosen))]
        if cap is not None:
            model.add_constraint("cap", {y: ONE for y in ys}, "<=", cap)
        inc = {key: {} for key in fv}
        for i, keys in enumerate(member_keys):
            for key in keys:
                inc[key][ys[i]] = ONE
        if kind in ("max_norm", "max_raw"):
            t = model.add_continuous("t")
            for p, key in enumerate(fv):
                l, u = quotas.bounds(key)
                scale = Q(u) if kind == "max_norm" else ONE
                lo = dict(inc[key])
                lo[t] = scale
                model.add_constraint(f"lo{p}", lo, ">=", l - base[key])
                hi = {y: -c for y, c in inc[key].items()}
                hi[t] = scale
                model.add_constraint(f"hi{p}", hi, ">=", base[key] - u)
            model.set_objective({t: ONE})
        else:  # unrepresented
            obj = {}
            for p, key in enumerate(fv):
                b = model.add_binary(f"b{p}")
                row = dict(inc[key])
                row[b] = ONE
                model.add_constraint(f"rep{p}", row, ">=", 1 - base[key])
                obj[b] = ONE
            model.set_objective(obj)
        return model

    out = []
    for kind in ("max_norm", "max_raw", "unrep"):
        solution = milp_solve(build(kind))
        out.append(solution.objective)
    return out[0], out[1], out[2]


# ---------------------------------------------------------------------------
# algorithm dispatch


def _run_algorithm(name: str, instance: Instance, probs, dev: DeviationKind,
                   policy, s: int, seed: int, budget: int, solver,
                   context: SelectionContext) -> AlternateSet:
    """Select an alternate set with the named algorithm (the two reference
    baselines need no selection: empty and the whole pool)."""
    if budget == 0 and name not in ("empty", "full-pool"):
        return AlternateSet(())
    if name == "empty":
        return AlternateSet(())
    if name == "full-pool":
        return AlternateSet(tuple(sorted(a.id for a in instance.pool)))
    if name == "greedy":
        return greedy_alts(instance, probs)
    if name == "quota-based":
        return quota_based_alts(instance, solver)
    rng = substream(seed, "train", name, budget)
    common = dict(s=s, policy=policy, rng=rng, solver=solver, context=context)
    if name == "erm-l1":
        return erm_alts(instance, probs, DeviationKind.LINEAR, **common).alternates
    if name == "erm-binary":
        return erm_alts(instance, probs, DeviationKind.BINARY, **common).alternates
    if name == "erm-l1-eq":
        return erm_alts_eq(instance, probs, DeviationKind.LINEAR, **common).alternates
    raise DataError(f"unknown algorithm {name!r}")


def _with_budget(instance: Instance, budget: int) -> Instance:
    return dataclasses.replace(instance, budget=budget)


# ---------------------------------------------------------------------------
# benchmark suite (loss vs budget)


def benchmark_suite(instance: Instance, probs, budgets: Sequence[int],
                    algorithms: Sequence[str] = ALGORITHMS,
                    eval_samples: int = 300, seed: int = 0, solver=None,
                    s: int = 300, dev: DeviationKind = DeviationKind.LINEAR,
                    policy: ReplacementPolicy = ReplacementPolicy.CAPPED,
                    aux: bool = False) -> EvaluationReport:
    """One row per (algorithm, budget): mean loss on one shared evaluation
    sample (paired comparison). Cell failures are recorded, not fatal."""
    probs = as_probs(probs)
    for b in budgets:
        if not 0 <= b <= instance.pool_size:
            raise DataError(f"budget {b} outside [0, {instance.pool_size}]")
    eval_rng = substream(seed, "eval")
    eval_dist = build_empirical_distribution(probs, instance.panel_ids(),
                                             eval_samples, eval_rng,
                                             seed_note=f"{seed}/eval")
    context = SelectionContext(instance)
    report = EvaluationReport([], {"kind": "benchmark", "seed": seed,
                                   "s": s, "eval_samples": eval_samples,
                                   "dev": dev.value, "budgets": list(budgets),
                                   "algorithms": list(algorithms)})
    for budget in budgets:
        ctx_b = context.with_budget(budget)
        inst_b = ctx_b.instance
        for name in algorithms:
            row = EvalRow(algorithm=name, budget=budget, dev=dev.value,
                          s_train=s, seed=seed, eval_samples=eval_samples)
            try:
                aset = _run_algorithm(name, inst_b, probs, dev, policy, s,
                                      seed, budget, solver, ctx_b)
                est = estimate_loss(aset, inst_b, probs, dev, policy,
                                    distribution=eval_dist, solver=None,
                                    context=ctx_b, aux=aux)
                row.loss_mean = est.mean
                row.loss_stddev = est.stddev
                row.loss_stderr = est.stderr
                row.scenario_hash = est.scenario_hash()
                row.members = aset.members
                row.metrics = est.metrics
                report.raw_losses[len(report.rows)] = est.raw
            except (DataError, BudgetExceeded, ValueError) as exc:
                row.status = "failed"
                row.error = str(exc)
            report.rows.append(row)
    return report


# ---------------------------------------------------------------------------
# robustness sweep (loss vs prediction error)


def robustness_sweep(instance: Instance, probs, gammas: Sequence,
                     reps: int = 25, budget: int = 6,
                     algorithms: Sequence[str] = ("erm-l1", "erm-binary",
                                                  "greedy", "erm-l1-eq",
                                                  "quota-based"),
                     eval_samples: int = 300, seed: int = 0, solver=None,
                     s: int = 300, dev: DeviationKind = DeviationKind.LINEAR,
                     policy: ReplacementPolicy = ReplacementPolicy.CAPPED,
                     ) -> EvaluationReport:
    """Prediction-error sweep: per error radius, run each algorithm on
    perturbed probabilities and evaluate under the true ones.

    Training coins are shared across radii and reps (common random numbers),
    so the zero-radius rows reproduce the unperturbed benchmark exactly.
    Prediction-free algorithms are computed once and reported as flat
    reference rows.
    """
    probs = as_probs(probs)
    gammas = [as_ratio(g) for g in gammas]
    inst_b = _with_budget(instance, budget)
    context = SelectionContext(inst_b)
    eval_rng = substream(seed, "eval")
    eval_dist = build_empirical_distribution(probs, instance.panel_ids(),
                                             eval_samples, eval_rng,
                                             seed_note=f"{seed}/eval")
    report = EvaluationReport([], {"kind": "robustness", "seed": seed,
                                   "s": s, "eval_samples": eval_samples,
                                   "budget": budget, "dev": dev.value,
                                   "reps": reps,
                                   "gammas": [ratio_str(g) for g in gammas]})

    reference_rows: dict[str, EvalRow] = {}
    for name in algorithms:
        if name not in PREDICTION_FREE:
            continue
        row = EvalRow(algorithm=name, budget=budget, dev=dev.value, s_train=s,
                      seed=seed, eval_samples=eval_samples, reference=True)
        try:
            aset = _run_algorithm(name, inst_b, probs, dev, policy, s, seed,
                                  budget, solver, context)
            est = estimate_loss(aset, inst_b, probs, dev, policy,
                                distribution=eval_dist, context=context)
            row.loss_mean = est.mean
            row.loss_stddev = est.stddev
            row.loss_stderr = est.stderr
            row.scenario_hash = est.scenario_hash()
            row.members = aset.members
        except (DataError, BudgetExceeded, ValueError) as exc:
            row.status = "failed"
            row.error = str(exc)
        reference_rows[name] = row

    for gi, gamma in enumerate(gammas):
        for name in algorithms:
            if name in PREDICTION_FREE:
                ref = reference_rows[name]
                row = dataclasses.replace(ref, gamma=gamma)
                report.rows.append(row)
                continue
            means = []
            fail = None
            last_hash = None
            for rep in range(reps):
                perturb_rng = substream(seed, "perturb", gi, rep)
                tilde = perturb_probabilities(probs, gamma, perturb_rng)
                try:
                    aset = _run_algorithm(name, inst_b, tilde, dev, policy, s,
                                          seed, budget, solver, context)
                    est = estimate_loss(aset, inst_b, probs, dev, policy,
                                        distribution=eval_dist, context=context)
                    means.append(est.mean)
                    last_hash = est.scenario_hash()
                except (DataError, BudgetExceeded, ValueError) as exc:
                    fail = str(exc)
                    break
            row = EvalRow(algorithm=name, budget=budget, gamma=gamma,
                          dev=dev.value, s_train=s, seed=seed,
                          eval_samples=eval_samples, scenario_hash=last_hash)
            if fail is not None:
                row.status = "failed"
                row.error = fail
            else:
                mean = sum(means, ZERO) / len(means)
                row.loss_mean = mean
                if len(means) > 1:
                    sd = statistics.stdev([to_float(x) for x in means])
                else:
                    sd = 0.0
                row.loss_stddev = sd
                row.loss_stderr = sd / math.sqrt(len(means))
                row.rep = len(means)
            report.rows.append(row)
    return report


# ---------------------------------------------------------------------------
# calibration


def calibration_report(model: DropoutModel, panel: Sequence[Agent],
                       schema: FeatureSchema,
                       realized_dropouts: Iterable[str]) -> list[dict]:
    """Per (feature, value): expected dropouts under the model vs how many
    actually dropped."""
    realized = set(realized_dropouts)
    panel_ids = {a.id for a in panel}
    unknown = realized - panel_ids
    if unknown:
        raise DataError(f"realized dropouts not on the panel: {sorted(unknown)}")
    rows = []
    for f, vals in zip(schema.features, schema.values):
        fi = schema.features.index(f)
        for v in vals:
            members = [a for a in panel if a.vector[fi] == v]
            expected = sum(predict_dropout(model, a, schema) for a in members)
            actual = sum(1 for a in members if a.id in realized)
            rows.append({"feature": f, "value": v,
                         "expected": expected, "actual": actual})
    return rows


# ---------------------------------------------------------------------------
# convergence study (loss vs training sample size)


def convergence_study(instance: Instance, probs,
                      dev_kinds: Sequence[DeviationKind],
                      s_grid: Sequence[int], eval_samples: int = 500,
                      seeds: Sequence[int] = (0,), seed: int = 0,
                      solver=None,
                      policy: ReplacementPolicy = ReplacementPolicy.CAPPED,
                      ) -> EvaluationReport:
    """Loss of the sampling selectors across training sample sizes, always
    evaluated on one fixed evaluation distribution."""
    if not s_grid:
        raise DataError("empty sample-size grid")
    probs = as_probs(probs)
    eval_rng = substream(seed, "eval")
    eval_dist = build_empirical_distribution(probs, instance.panel_ids(),
                                             eval_samples, eval_rng,
                                             seed_note=f"{seed}/eval")
    context = SelectionContext(instance)
    report = EvaluationReport([], {"kind": "convergence", "seed": seed,
                                   "eval_samples": eval_samples,
                                   "s_grid": list(s_grid),
                                   "seeds": list(seeds)})
    for dev in dev_kinds:
        algo = "erm-l1" if dev is DeviationKind.LINEAR else "erm-binary"
        for s_train in s_grid:
            for run_seed in seeds:
                row = EvalRow(algorithm=algo, dev=dev.value, s_train=s_train,
                              seed=run_seed, eval_samples=eval_samples,
                              budget=instance.budget)
                try:
                    rng = substream(run_seed, "train", algo, instance.budget,
                                    s_train)
                    res = erm_alts(instance, probs, dev, s=s_train,
                                   policy=policy, rng=rng, solver=solver,
                                   context=context)
                    est = estimate_loss(res.alternates, instance, probs, dev,
                                        policy, distribution=eval_dist,
                                        context=context)
                    row.loss_mean = est.mean
                    row.loss_stddev = est.stddev
                    row.loss_stderr = est.stderr
                    row.scenario_hash = est.scenario_hash()
                    row.members = res.alternates.members
                except (DataError, BudgetExceeded, ValueError) as exc:
                    row.status = "failed"
                    row.error = str(exc)
                report.rows.append(row)
    return report


# ---------------------------------------------------------------------------
# report output


CSV_COLUMNS = ["algorithm", "budget", "gamma", "rep", "s_train", "dev",
               "loss_mean", "loss_mean_float", "loss_stddev", "loss_stderr",
               "eval_samples", "seed", "status", "error", "scenario_hash",
               "reference"]


def report_to_csv(report: EvaluationReport, header_lines: Sequence[str] = ()) -> str:
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, extrasaction="ignore")
    writer.writeheader()
    for row in report.rows:
        writer.writerow(report.row_dict(row))
    return buf.getvalue()


def report_to_json(report: EvaluationReport) -> dict:
    rows = [report.row_dict(r) for r in report.rows]
    raw = {
        str(i): [{"dropped": list(members), "weight": ratio_str(weight),
                  "loss": ratio_str(loss)}
                 for members, weight, loss in raw_rows]
        for i, raw_rows in report.raw_losses.items()
    }
    return {"provenance": report.provenance, "rows": rows, "raw_losses": raw}


def write_plot_data(report: EvaluationReport, x_field: str) -> str:
    """Tidy long-format CSV: one (x, algorithm, loss, stderr) row per cell."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow([x_field, "algorithm", "loss", "stderr"])
    for row in report.rows:
        if row.status != "ok" or row.loss_mean is None:
            continue
        x = getattr(row, x_field)
        if x is None:
            continue
        if x_field == "gamma":
            x = to_float(as_ratio(x))
        writer.writerow([x, row.algorithm, to_float(row.loss_mean),
                         row.loss_stderr])
    return buf.getvalue()
