"""Dropout probabilities: estimation, scenario sampling, perturbation.

The probability model is multiplicative: an agent's dropout rate is a base
rate times one learned factor per (feature, value) they possess. Factors
are fit by maximum likelihood. Downstream code is agnostic to where the
per-panelist probabilities came from; any vector in [0,1]^k works.

Scenario distributions are weighted collections of dropout sets with exact
rational weights, either sampled (empirical) or fully enumerated.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from ._ratio import ONE, Q, ZERO, as_ratio, ratio_str, to_float
from .domain import Agent, DataError, FeatureSchema, OutcomeRow

PROB_FLOOR = 1e-9
PROB_CEIL = 1.0 - 1e-9


def as_probs(values: Sequence) -> tuple:
    """Normalize a probability vector to exact rationals in [0, 1]."""
    out = []
    for x in values:
        q = as_ratio(x)
        if not ZERO <= q <= ONE:
            raise DataError(f"dropout probability {x!r} outside [0, 1]")
        out.append(q)
    return tuple(out)


# ---------------------------------------------------------------------------
# multiplicative dropout model


@dataclass(frozen=True)
class DropoutModel:
    """Fitted multiplicative dropout-rate model.

    beta0 is the base rate; beta maps (feature, value) to that value's
    multiplicative factor. After fitting, factors are normalized so the
    training-count-weighted geometric mean over each feature's values is 1
    (the scale is absorbed into beta0), which makes fitted parameters
    comparable across runs. degenerate marks boundary fits (all or none of
    the training rows dropped).
    """

    beta0: float
    beta: Mapping[tuple[str, str], float]
    degenerate: bool = False


def predict_dropout_detail(model: DropoutModel, agent: Agent,
                           schema: FeatureSchema) -> tuple[float, list[str]]:
    """Predicted dropout probability plus flags for unseen values and clamps."""
    flags: list[str] = []
    p = model.beta0
    for fi, v in enumerate(agent.vector):
        key = (schema.features[fi], v)
        factor = model.beta.get(key)
        if factor is None:
            flags.append(f"agent {agent.id!r}: unseen pair {key}, using neutral factor 1")
            factor = 1.0
        p *= factor
    if p > PROB_CEIL:
        flags.append(f"agent {agent.id!r}: predicted rate {p:.6g} clamped to {PROB_CEIL}")
        p = PROB_CEIL
    elif p < PROB_FLOOR:
        p = PROB_FLOOR
    return p, flags


def predict_dropout(model: DropoutModel, agent: Agent, schema: FeatureSchema) -> float:
    return predict_dropout_detail(model, agent, schema)[0]


def model_to_json(model: DropoutModel, schema: FeatureSchema) -> dict:
    doc = {
        "beta0": model.beta0,
        "beta": {
            f: {v: model.beta[(f, v)] for v in vals if (f, v) in model.beta}
            for f, vals in zip(schema.features, schema.values)
        },
    }
    if model.degenerate:
        doc["degenerate"] = True
    return doc


def model_from_json(doc: dict) -> DropoutModel:
    beta = {
        (f, v): float(x)
        for f, per in doc["beta"].items()
        for v, x in per.items()
    }
    return DropoutModel(float(doc["beta0"]), beta, bool(doc.get("degenerate", False)))


def _design(rows: Sequence[OutcomeRow], schema: FeatureSchema):
    """Value-index arrays (one per feature) and the outcome vector."""
    n = len(rows)
    y = np.fromiter((1.0 if r.dropped else 0.0 for r in rows), dtype=float, count=n)
    idx = []
    for fi in range(schema.num_features):
        col = np.fromiter(
            (schema.value_index(fi, r.agent.vector[fi]) for r in rows),
            dtype=np.int64, count=n)
        idx.append(col)
    return idx, y


def fit_dropout_model_trace(rows: Sequence[OutcomeRow], schema: FeatureSchema,
                            tol: float = 1e-8, max_iter: int = 200_000):
    """Maximum-likelihood fit; returns (model, per-iteration log-likelihoods).

    Optimizes in log-parameter space by gradient ascent with Barzilai-Borwein
    step sizes safeguarded by backtracking, so the recorded log-likelihood is
    non-decreasing. Converged when the mean-log-likelihood gradient infinity
    norm falls below tol. Deterministic: fixed initialization (base rate =
    empirical dropout rate, all factors 1).
    """
    if not rows:
        raise DataError("cannot fit a dropout model on zero rows")
    for r in rows:
        if len(r.agent.vector) != schema.num_features:
            raise DataError(f"outcome row for {r.agent.id!r} does not match schema")

    n = len(rows)
    dropped = sum(1 for r in rows if r.dropped)
    if dropped == 0 or dropped == n:
        rate = PROB_FLOOR if dropped == 0 else PROB_CEIL
        beta = {key: 1.0 for key in schema.fv_pairs()}
        return DropoutModel(rate, beta, degenerate=True), np.zeros(0)

    idx, y = _design(rows, schema)
    sizes = [len(vals) for vals in schema.values]
    offsets = np.cumsum([1] + sizes)[:-1]  # theta[0] is the base rate
    dim = 1 + sum(sizes)

    eta_max = math.log(PROB_CEIL)
    eta_min = math.log(PROB_FLOOR)

    def eta_of(theta):
        e = np.full(n, theta[0])
        for fi in range(len(sizes)):
            e += theta[offsets[fi] + idx[fi]]
        return e

    def value_and_grad(theta):
        eta_raw = eta_of(theta)
        eta = np.clip(eta_raw, eta_min, eta_max)
        rho = np.exp(eta)
        ll = float(np.sum(y * eta + (1.0 - y) * np.log1p(-rho)))
        g_eta = y - (1.0 - y) * rho / (1.0 - rho)
        g_eta = np.where((eta_raw > eta_max) | (eta_raw < eta_min), 0.0, g_eta)
        grad = np.zeros(dim)
        grad[0] = g_eta.sum()
        for fi, size in enumerate(sizes):
            grad[offsets[fi]:offsets[fi] + size] = np.bincount(
                idx[fi], weights=g_eta, minlength=size)
        return ll, grad

    theta = np.zeros(dim)
    theta[0] = math.log(dropped / n)
    ll, grad = value_and_grad(theta)
    history = [ll]
    step = 1.0 / n
    prev_theta = None
    prev_grad = None

    for _ in range(max_iter):
        if np.max(np.abs(grad)) / n <= tol:
            break
        if prev_theta is not None:
            d_theta = theta - prev_theta
            d_grad = grad - prev_grad
            denom = float(d_theta @ d_grad)
            if denom < 0.0:  # ascent: curvature along the step
                step = float(d_theta @ d_theta) / (-denom)
            step = min(max(step, 1e-12), 1e6)
        t = step
        gnorm2 = float(grad @ grad)
        for _bt in range(60):
            cand = theta + t * grad
            cand_ll, cand_grad = value_and_grad(cand)
            if cand_ll >= ll + 1e-4 * t * gnorm2:
                break
            t *= 0.5
        else:  # no acceptable step: gradient numerically flat
            break
        prev_theta, prev_grad = theta, grad
        theta, ll, grad = cand, cand_ll, cand_grad
        history.append(ll)

    # absorb per-feature scale into the base rate (count-weighted geometric mean 1)
    counts = [np.bincount(ix, minlength=size) for ix, size in zip(idx, sizes)]
    for fi, size in enumerate(sizes):
        w = counts[fi].astype(float)
        if w.sum() == 0:
            continue
        block = theta[offsets[fi]:offsets[fi] + size]
        mean = float((w * block).sum() / w.sum())
        block -= mean
        theta[0] += mean

    beta = {}
    for fi, (f, vals) in enumerate(zip(schema.features, schema.values)):
        for vi, v in enumerate(vals):
            beta[(f, v)] = math.exp(theta[offsets[fi] + vi])
    model = DropoutModel(math.exp(theta[0]), beta)
    return model, np.asarray(history)


def fit_dropout_model(rows: Sequence[OutcomeRow], schema: FeatureSchema,
                      tol: float = 1e-8, max_iter: int = 200_000) -> DropoutModel:
    return fit_dropout_model_trace(rows, schema, tol=tol, max_iter=max_iter)[0]


def panel_probs(model: DropoutModel, panel: Sequence[Agent],
                schema: FeatureSchema) -> tuple:
    """Predicted probabilities aligned with the panel, as exact rationals."""
    return as_probs([predict_dropout(model, a, schema) for a in panel])


# ---------------------------------------------------------------------------
# scenario distributions


@dataclass(frozen=True)
class Scenario:
    members: tuple[str, ...]  # sorted panelist ids
    weight: object  # exact rational > 0


@dataclass(frozen=True)
class ScenarioDistribution:
    """Weighted dropout sets. Weights are positive rationals summing to 1.

    kind is "exact" (full enumeration) or "empirical" (sample_count draws,
    duplicates collapsed with summed weight). Scenario order is canonical:
    by set size, then lexicographic member tuple.
    """

    scenarios: tuple[Scenario, ...]
    kind: str
    sample_count: int | None = None
    seed_note: object = None

    def __post_init__(self):
        total = ZERO
        seen = set()
        for sc in self.scenarios:
            if sc.weight <= ZERO:
                raise DataError(f"scenario {sc.members} has non-positive weight")
            if sc.members != tuple(sorted(sc.members)):
                raise DataError(f"scenario members not sorted: {sc.members}")
            if sc.members in seen:
                raise DataError(f"duplicate scenario {sc.members}")
            seen.add(sc.members)
            total += sc.weight
        if total != ONE:
            raise DataError(f"scenario weights sum to {total}, not 1")

    def __len__(self):
        return len(self.scenarios)


def _canonical(scenarios: dict) -> tuple[Scenario, ...]:
    keys = sorted(scenarios, key=lambda m: (len(m), m))
    return tuple(Scenario(m, scenarios[m]) for m in keys)


def sample_dropout_set(probs: Sequence, panel_ids: Sequence[str],
                       rng: np.random.Generator) -> tuple[str, ...]:
    """One independent-coin draw; always consumes exactly k uniforms.

    The fixed consumption makes draws comparable across probability vectors
    under a shared stream (common random numbers).
    """
    probs = as_probs(probs)
    if len(probs) != len(panel_ids):
        raise DataError("probability vector does not match the panel")
    u = rng.random(len(probs))
    members = [pid for pid, p, x in zip(panel_ids, probs, u) if x < to_float(p)]
    return tuple(sorted(members))


def build_empirical_distribution(probs: Sequence, panel_ids: Sequence[str],
                                 s: int, rng: np.random.Generator,
                                 seed_note=None) -> ScenarioDistribution:
    """s i.i.d. dropout-set draws, duplicates collapsed (weight m/s)."""
    if s < 1:
        raise DataError("sample count must be at least 1")
    counts: dict[tuple[str, ...], int] = {}
    for _ in range(s):
        d = sample_dropout_set(probs, panel_ids, rng)
        counts[d] = counts.get(d, 0) + 1
    weights = {m: Q(c, s) for m, c in counts.items()}
    return ScenarioDistribution(_canonical(weights), "empirical",
                                sample_count=s, seed_note=seed_note)


def enumerate_exact_distribution(probs: Sequence, panel_ids: Sequence[str],
                                 max_panel: int = 20) -> ScenarioDistribution:
    """All dropout sets with exact product weights; zero-weight sets dropped.

    Supports panels up to max_panel members (2^k scenarios); beyond that,
    use build_empirical_distribution.
    """
    probs = as_probs(probs)
    k = len(probs)
    if len(panel_ids) != k:
        raise DataError("probability vector does not match the panel")
    if k > max_panel:
        raise DataError(
            f"exact enumeration needs 2^{k} scenarios; cap is 2^{max_panel}. "
            "Use sampling instead.")
    weights: dict[tuple[str, ...], object] = {}
    for mask in itertools.product((0, 1), repeat=k):
        w = ONE
        for inc, p in zip(mask, probs):
            w *= p if inc else (ONE - p)
            if w == ZERO:
                break
        if w == ZERO:
            continue
        members = tuple(sorted(pid for pid, inc in zip(panel_ids, mask) if inc))
        weights[members] = weights.get(members, ZERO) + w
    return ScenarioDistribution(_canonical(weights), "exact")


def single_scenario_distribution(members: Iterable[str]) -> ScenarioDistribution:
    """Point mass on one realized dropout set."""
    return ScenarioDistribution(
        (Scenario(tuple(sorted(members)), ONE),), "exact")


def perturb_probabilities(probs: Sequence, gamma, rng: np.random.Generator) -> tuple:
    """Independent uniform perturbation over [max(0, p - g), min(1, p + g)]."""
    probs = as_probs(probs)
    g = as_ratio(gamma)
    if not ZERO <= g <= ONE:
        raise DataError("perturbation radius must lie in [0, 1]")
    out = []
    for p in probs:
        lo = max(ZERO, p - g)
        hi = min(ONE, p + g)
        u = as_ratio(float(rng.random()))
        out.append(lo + (hi - lo) * u)
    return tuple(out)


def equalize_probabilities(probs: Sequence) -> tuple:
    """Replace every entry by the exact arithmetic mean (preserves the sum)."""
    probs = as_probs(probs)
    if not probs:
        raise DataError("cannot equalize an empty probability vector")
    mean = sum(probs, ZERO) / len(probs)
    return tuple(mean for _ in probs)


# ---------------------------------------------------------------------------
# serialization


def distribution_to_json(dist: ScenarioDistribution) -> dict:
    doc = {
        "kind": dist.kind,
        "scenarios": [
            {"members": list(sc.members), "weight": ratio_str(sc.weight)}
            for sc in dist.scenarios
        ],
    }
    if dist.sample_count is not None:
        doc["s"] = dist.sample_count
    if dist.seed_note is not None:
        doc["seed"] = dist.seed_note
    return doc


def distribution_from_json(doc: dict) -> ScenarioDistribution:
    scenarios = tuple(
        Scenario(tuple(sc["members"]), as_ratio(sc["weight"]))
        for sc in doc["scenarios"]
    )
    return ScenarioDistribution(scenarios, doc["kind"],
                                sample_count=doc.get("s"), seed_note=doc.get("seed"))


def probs_to_json(probs: Sequence, panel_ids: Sequence[str]) -> dict:
    probs = as_probs(probs)
    return {pid: ratio_str(p) for pid, p in zip(panel_ids, probs)}


def probs_from_json(doc: Mapping, panel_ids: Sequence[str]) -> tuple:
    missing = [pid for pid in panel_ids if pid not in doc]
    if missing:
        raise DataError(f"probability document missing panelists {missing}")
    return as_probs([doc[pid] for pid in panel_ids])
