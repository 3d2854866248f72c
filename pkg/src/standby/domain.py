"""Core data model: feature schemas, agents, quotas, instances, ingestion.

All types here are immutable after construction and safe to share across
threads. Mapping-valued fields are not mutated by this package and must be
treated as read-only by callers.

Conventions used throughout:
  - feature and value iteration order is schema declaration order, so every
    derived artifact (counts, reports, solver columns) is bit-reproducible;
  - agent ids are opaque strings and all ties are broken by lexicographic id.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from ._ratio import Q, as_ratio
from .rand import substream


class DataError(ValueError):
    """Malformed input data (CSV/JSON ingestion, schema mismatches)."""


# ---------------------------------------------------------------------------
# schema / agents / quotas / instance


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered features, each with an ordered finite set of categorical values."""

    features: tuple[str, ...]
    values: tuple[tuple[str, ...], ...]

    def __post_init__(self):
        if len(self.features) != len(self.values):
            raise DataError("schema features and value lists are misaligned")
        if not self.features:
            raise DataError("schema needs at least one feature")
        if len(set(self.features)) != len(self.features):
            raise DataError("duplicate feature names")
        for f, vals in zip(self.features, self.values):
            if not vals:
                raise DataError(f"feature {f!r} has no values")
            if len(set(vals)) != len(vals):
                raise DataError(f"feature {f!r} has duplicate values")

    def fv_pairs(self) -> list[tuple[str, str]]:
        """Flattened (feature, value) pairs in declaration order."""
        return [(f, v) for f, vals in zip(self.features, self.values) for v in vals]

    def value_index(self, feature_idx: int, value: str) -> int:
        try:
            return self.values[feature_idx].index(value)
        except ValueError:
            raise DataError(
                f"unknown value {value!r} for feature {self.features[feature_idx]!r}"
            ) from None

    @property
    def num_features(self) -> int:
        return len(self.features)


@dataclass(frozen=True)
class Agent:
    """An agent with one value per schema feature, in schema order."""

    id: str
    vector: tuple[str, ...]

    def value(self, feature_idx: int) -> str:
        return self.vector[feature_idx]


@dataclass(frozen=True)
class Quotas:
    """Lower and upper bounds on per-(feature, value) headcounts.

    Keys are (feature, value) pairs. Upper bounds must be positive: a zero
    upper bound would remove the group from the instance entirely, which is
    expressed by omitting the value from the schema instead.
    """

    lower: Mapping[tuple[str, str], int]
    upper: Mapping[tuple[str, str], int]

    def __post_init__(self):
        for key, u in self.upper.items():
            l = self.lower.get(key, 0)
            if not (isinstance(l, int) and isinstance(u, int)):
                raise DataError(f"quota bounds for {key} must be integers")
            if l < 0:
                raise DataError(f"negative lower quota for {key}")
            if u <= 0:
                raise DataError(f"upper quota for {key} must be positive")
            if u < l:
                raise DataError(f"upper quota below lower quota for {key}")

    def bounds(self, key: tuple[str, str]) -> tuple[int, int]:
        return self.lower[key], self.upper[key]


@dataclass(frozen=True)
class Instance:
    """A selection instance: panel, pool, quotas and an alternate budget.

    Construction performs only structural checks; use validate_instance for
    the full invariant report (loaders and the generator run it for you).
    """

    schema: FeatureSchema
    panel: tuple[Agent, ...]
    pool: tuple[Agent, ...]
    quotas: Quotas
    budget: int

    @property
    def panel_size(self) -> int:
        return len(self.panel)

    @property
    def pool_size(self) -> int:
        return len(self.pool)

    def panel_ids(self) -> tuple[str, ...]:
        return tuple(a.id for a in self.panel)

    def pool_by_id(self) -> dict[str, Agent]:
        return {a.id: a for a in self.pool}


@dataclass(frozen=True)
class OutcomeRow:
    """One training observation: an agent and whether they dropped out."""

    agent: Agent
    dropped: bool


# ---------------------------------------------------------------------------
# validation


def _agent_violations(agent: Agent, schema: FeatureSchema, where: str) -> list[str]:
    out = []
    if len(agent.vector) != schema.num_features:
        out.append(f"{where} agent {agent.id!r}: vector length {len(agent.vector)} "
                   f"!= feature count {schema.num_features}")
        return out
    for fi, v in enumerate(agent.vector):
        if v not in schema.values[fi]:
            out.append(f"{where} agent {agent.id!r}: unknown value {v!r} "
                       f"for feature {schema.features[fi]!r}")
    return out


def validate_instance(instance: Instance) -> list[str]:
    """Full invariant check. Returns a list of violations (empty iff valid).

    Each violation names the failing invariant and the offending
    (feature, value) pair or agent id. Never raises.
    """
    schema = instance.schema
    violations: list[str] = []

    for a in instance.panel:
        violations.extend(_agent_violations(a, schema, "panel"))
    for a in instance.pool:
        violations.extend(_agent_violations(a, schema, "pool"))

    seen: dict[str, str] = {}
    for where, agents in (("panel", instance.panel), ("pool", instance.pool)):
        for a in agents:
            if a.id in seen:
                violations.append(f"duplicate id {a.id!r} ({seen[a.id]} and {where})")
            else:
                seen[a.id] = where

    fv = schema.fv_pairs()
    for key in fv:
        if key not in instance.quotas.lower or key not in instance.quotas.upper:
            violations.append(f"quotas missing bounds for {key}")
    for key in set(instance.quotas.upper) | set(instance.quotas.lower):
        if key not in fv:
            violations.append(f"quotas reference unknown pair {key}")

    if violations:
        return violations  # counts below assume structurally sound inputs

    counts = {key: 0 for key in fv}
    for a in instance.panel:
        for fi, v in enumerate(a.vector):
            counts[(schema.features[fi], v)] += 1
    for key in fv:
        l, u = instance.quotas.bounds(key)
        c = counts[key]
        if not l <= c <= u:
            violations.append(
                f"panel violates quota for {key}: count {c} outside [{l}, {u}]")

    if instance.budget < 0:
        violations.append("budget is negative")
    if instance.budget > instance.pool_size:
        violations.append(
            f"budget exceeds pool: {instance.budget} > {instance.pool_size}")

    return violations


def checked_instance(schema, panel, pool, quotas, budget) -> Instance:
    """Build an Instance and raise DataError listing any violations."""
    inst = Instance(schema, tuple(panel), tuple(pool), quotas, budget)
    violations = validate_instance(inst)
    if violations:
        raise DataError("invalid instance:\n  " + "\n  ".join(violations))
    return inst


# ---------------------------------------------------------------------------
# CSV ingestion

AGENTS_CSV_COLUMNS = ("id", "role")  # then one column per feature, optional "dropped"


@dataclass(frozen=True)
class CsvLoadResult:
    panel: tuple[Agent, ...]
    pool: tuple[Agent, ...]
    outcomes: tuple[OutcomeRow, ...]
    warnings: tuple[str, ...]


def load_agents_csv(stream, schema: FeatureSchema, strict: bool = False) -> CsvLoadResult:
    """Read the agents CSV (header: id,role,<feature...>[,dropped]).

    Rows with role=panel go to the panel, role=pool to the pool. Rows whose
    "dropped" cell is 0 or 1 are additionally emitted as outcome rows. Rows
    with any empty feature cell are skipped with a warning; strict=True
    upgrades those warnings to errors. Structural problems (bad header,
    duplicate ids, unknown values, bad role) are hard errors that identify
    the offending row number.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    reader = csv.DictReader(stream)
    header = reader.fieldnames
    if header is None:
        raise DataError("agents CSV: empty input, no header row")
    required = ["id", "role", *schema.features]
    missing = [c for c in required if c not in header]
    if missing:
        raise DataError(f"agents CSV: malformed header, missing columns {missing}")
    has_dropped = "dropped" in header

    panel: list[Agent] = []
    pool: list[Agent] = []
    outcomes: list[OutcomeRow] = []
    warnings: list[str] = []
    seen_ids: set[str] = set()

    for rownum, row in enumerate(reader, start=2):
        agent_id = (row.get("id") or "").strip()
        role = (row.get("role") or "").strip()
        if not agent_id:
            raise DataError(f"agents CSV row {rownum}: empty id")
        if agent_id in seen_ids:
            raise DataError(f"agents CSV row {rownum}: duplicate id {agent_id!r}")
        if role not in ("panel", "pool"):
            raise DataError(f"agents CSV row {rownum}: role must be panel or pool, "
                            f"got {role!r}")

        cells = [(row.get(f) or "").strip() for f in schema.features]
        if any(c == "" for c in cells):
            msg = f"agents CSV row {rownum} ({agent_id!r}): missing feature cell, row skipped"
            if strict:
                raise DataError(msg)
            warnings.append(msg)
            continue
        for fi, cell in enumerate(cells):
            if cell not in schema.values[fi]:
                raise DataError(f"agents CSV row {rownum}: unknown value {cell!r} "
                                f"for feature {schema.features[fi]!r}")

        seen_ids.add(agent_id)
        agent = Agent(agent_id, tuple(cells))
        (panel if role == "panel" else pool).append(agent)

        if has_dropped:
            cell = (row.get("dropped") or "").strip()
            if cell in ("0", "1"):
                outcomes.append(OutcomeRow(agent, cell == "1"))
            elif cell != "":
                raise DataError(f"agents CSV row {rownum}: dropped must be 0 or 1, "
                                f"got {cell!r}")

    return CsvLoadResult(tuple(panel), tuple(pool), tuple(outcomes), tuple(warnings))


def write_agents_csv(stream, schema: FeatureSchema, panel: Sequence[Agent],
                     pool: Sequence[Agent], outcomes: Sequence[OutcomeRow] = ()) -> None:
    """Inverse of load_agents_csv on valid data."""
    dropped_by_id = {r.agent.id: "1" if r.dropped else "0" for r in outcomes}
    writer = csv.writer(stream)
    writer.writerow(["id", "role", *schema.features, "dropped"])
    for role, agents in (("panel", panel), ("pool", pool)):
        for a in agents:
            writer.writerow([a.id, role, *a.vector, dropped_by_id.get(a.id, "")])


def load_quotas(stream, schema: FeatureSchema) -> Quotas:
    """Read quotas JSON: {feature: {value: {"min": int, "max": int}}}.

    Every (feature, value) pair of the schema must be covered. min > max or
    max = 0 are hard errors.
    """
    if isinstance(stream, str):
        doc = json.loads(stream)
    else:
        doc = json.load(stream)
    lower: dict[tuple[str, str], int] = {}
    upper: dict[tuple[str, str], int] = {}
    for f, vals in zip(schema.features, schema.values):
        per_feature = doc.get(f)
        if per_feature is None:
            raise DataError(f"quotas JSON: missing feature {f!r}")
        for v in vals:
            cell = per_feature.get(v)
            if cell is None:
                raise DataError(f"quotas JSON: missing bounds for ({f!r}, {v!r})")
            try:
                lo, hi = int(cell["min"]), int(cell["max"])
            except (KeyError, TypeError, ValueError):
                raise DataError(f"quotas JSON: bad bounds for ({f!r}, {v!r})") from None
            if hi == 0:
                raise DataError(f"quotas JSON: max must be positive for ({f!r}, {v!r})")
            if lo > hi:
                raise DataError(f"quotas JSON: min > max for ({f!r}, {v!r})")
            lower[(f, v)] = lo
            upper[(f, v)] = hi
    return Quotas(lower, upper)


def quotas_to_json(schema: FeatureSchema, quotas: Quotas) -> dict:
    return {
        f: {v: {"min": quotas.lower[(f, v)], "max": quotas.upper[(f, v)]} for v in vals}
        for f, vals in zip(schema.features, schema.values)
    }


# ---------------------------------------------------------------------------
# instance JSON bundle (schema + agents + quotas + budget in one document)


def instance_to_json(instance: Instance) -> dict:
    return {
        "schema": {
            "features": [
                {"name": f, "values": list(vals)}
                for f, vals in zip(instance.schema.features, instance.schema.values)
            ]
        },
        "panel": [{"id": a.id, "values": list(a.vector)} for a in instance.panel],
        "pool": [{"id": a.id, "values": list(a.vector)} for a in instance.pool],
        "quotas": quotas_to_json(instance.schema, instance.quotas),
        "budget": instance.budget,
    }


def instance_from_json(doc: dict) -> Instance:
    try:
        schema = FeatureSchema(
            tuple(f["name"] for f in doc["schema"]["features"]),
            tuple(tuple(f["values"]) for f in doc["schema"]["features"]),
        )
        panel = tuple(Agent(a["id"], tuple(a["values"])) for a in doc["panel"])
        pool = tuple(Agent(a["id"], tuple(a["values"])) for a in doc["pool"])
        budget = int(doc["budget"])
    except (KeyError, TypeError) as exc:
        raise DataError(f"instance JSON: {exc}") from None
    quotas = load_quotas(json.dumps(doc["quotas"]), schema)
    return checked_instance(schema, panel, pool, quotas, budget)


def load_instance_json(stream) -> Instance:
    if isinstance(stream, str):
        return instance_from_json(json.loads(stream))
    return instance_from_json(json.load(stream))


# ---------------------------------------------------------------------------
# synthetic instances


@dataclass(frozen=True)
class DropoutProfile:
    """Planted multiplicative dropout-rate profile for synthetic instances.

    An agent's rate is base times the per-value multiplier of each feature,
    clamped to [1e-9, 1 - 1e-9]. Deterministic given the profile. Entries
    may be floats or exact-rational strings like "3/20".
    """

    base: object
    multipliers: tuple[tuple, ...]

    def rate(self, agent: Agent, schema: FeatureSchema):
        r = as_ratio(self.base)
        for fi, v in enumerate(agent.vector):
            vi = schema.value_index(fi, v)
            r *= as_ratio(self.multipliers[fi][vi])
        lo, hi = as_ratio(1e-9), 1 - as_ratio(1e-9)
        return min(max(r, lo), hi)


UNIFORM_PROFILE = None  # synth_dropout_probs treats None as "flat 0.15"


@dataclass(frozen=True)
class SynthConfig:
    """Settings for the synthetic instance generator.

    structure:
      "random"    panel and pool vectors drawn uniformly at random
      "balanced"  vectors cycle through the value-combination grid, so
                  per-value panel counts are as even as possible
      "two_group" panel of two groups sized max|V_f| - 1: group 1 member i
                  has value min(i, |V_f|) for every feature, group 2 members
                  sit at the last value of every feature; the pool clones
                  the panel; quotas are tight
    quota_slack widens quotas around realized panel counts (0 = tight).
    """

    n: int
    k: int
    budget: int
    value_counts: tuple[int, ...]
    quota_slack: int = 0
    structure: str = "random"
    dropout: DropoutProfile | None = None
    max_attempts: int = 50


def _grid_vectors(schema: FeatureSchema):
    return itertools.cycle(itertools.product(*schema.values))


def synth_instance(config: SynthConfig, seed: int) -> Instance:
    """Deterministic synthetic instance. Panel is quota-feasible by construction.

    Raises DataError for configs that cannot produce a valid instance within
    config.max_attempts attempts.
    """
    if config.structure not in ("random", "balanced", "two_group"):
        raise DataError(f"unknown structure {config.structure!r}")
    if any(c < 1 for c in config.value_counts):
        raise DataError("each feature needs at least one value")

    features = tuple(f"f{i + 1}" for i in range(len(config.value_counts)))
    values = tuple(
        tuple(f"f{i + 1}v{j + 1}" for j in range(c))
        for i, c in enumerate(config.value_counts)
    )
    schema = FeatureSchema(features, values)
    rng = substream(seed, "synth")

    if config.structure == "two_group":
        return _two_group_instance(schema, config)

    width = max(3, len(str(max(config.n, config.k))))
    pids = [f"k{i + 1:0{width}d}" for i in range(config.k)]
    nids = [f"p{i + 1:0{width}d}" for i in range(config.n)]

    last_err = "no attempts made"
    for _ in range(max(1, config.max_attempts)):
        if config.structure == "balanced":
            grid = _grid_vectors(schema)
            panel = tuple(Agent(pid, next(grid)) for pid in pids)
            grid = _grid_vectors(schema)
            pool = tuple(Agent(nid, next(grid)) for nid in nids)
        else:
            def draw(agent_id):
                vec = tuple(vals[rng.integers(len(vals))] for vals in schema.values)
                return Agent(agent_id, vec)
            panel = tuple(draw(pid) for pid in pids)
            pool = tuple(draw(nid) for nid in nids)

        counts = {key: 0 for key in schema.fv_pairs()}
        for a in panel:
            for fi, v in enumerate(a.vector):
                counts[(features[fi], v)] += 1
        s = config.quota_slack
        lower = {key: max(0, c - s) for key, c in counts.items()}
        upper = {key: max(1, min(config.k, c + s)) for key, c in counts.items()}
        inst = Instance(schema, panel, pool, Quotas(lower, upper), config.budget)
        violations = validate_instance(inst)
        if not violations:
            return inst
        last_err = "; ".join(violations)

    raise DataError(f"could not generate a valid instance: {last_err}")


def _two_group_instance(schema: FeatureSchema, config: SynthConfig) -> Instance:
    vmax = max(len(vals) for vals in schema.values)
    half = vmax - 1
    if half < 1:
        raise DataError("two_group structure needs a feature with at least 2 values")
    k = 2 * half
    if config.k != k:
        raise DataError(f"two_group structure forces k = {k}, got {config.k}")

    def group1_vector(i):  # i is 1-based within group 1
        return tuple(vals[min(i, len(vals)) - 1] for vals in schema.values)

    last_vector = tuple(vals[-1] for vals in schema.values)
    width = max(3, len(str(2 * k)))
    panel = [Agent(f"k{i:0{width}d}", group1_vector(i)) for i in range(1, half + 1)]
    panel += [Agent(f"k{i:0{width}d}", last_vector) for i in range(half + 1, k + 1)]

    counts = {key: 0 for key in schema.fv_pairs()}
    for a in panel:
        for fi, v in enumerate(a.vector):
            counts[(schema.features[fi], v)] += 1
    lower = dict(counts)
    upper = {key: max(1, c) for key, c in counts.items()}
    if any(c == 0 for c in counts.values()):
        raise DataError("two_group structure left an uncovered value; "
                        "use value counts with a single maximum")

    pool = [Agent(a.id.replace("k", "p", 1), a.vector) for a in panel]
    return checked_instance(schema, tuple(panel), tuple(pool),
                            Quotas(lower, upper), config.budget)


def synth_dropout_probs(instance: Instance, config: SynthConfig):
    """Per-panelist dropout rates implied by the config's planted profile.

    Returns a tuple of exact rationals aligned with instance.panel. With no
    profile configured, a flat 0.15 is used.
    """
    profile = config.dropout
    if profile is None:
        flat = as_ratio("3/20")
        return tuple(flat for _ in instance.panel)
    return tuple(profile.rate(a, instance.schema) for a in instance.panel)
