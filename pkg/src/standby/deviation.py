"""Deviation functions: how far a candidate final panel is from the quotas.

Two deviations are provided: a binary satisfied/violated check and a
normalized L1 distance whose per-value terms are shortfall-or-excess divided
by the upper quota. The L1 deviation is computed in exact rational
arithmetic; its value is always representable with a denominator dividing
the lcm of the upper quotas. Floats appear only in reports.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

from ._ratio import Q, ZERO
from .domain import Agent, FeatureSchema, Quotas


class DeviationKind(Enum):
    BINARY = "binary"
    LINEAR = "l1"


def feature_value_counts(agents: Iterable[Agent], schema: FeatureSchema) -> dict:
    """Headcount per (feature, value); every pair appears, absent ones as 0."""
    counts = {key: 0 for key in schema.fv_pairs()}
    for a in agents:
        for fi, v in enumerate(a.vector):
            key = (schema.features[fi], v)
            if key not in counts:
                raise ValueError(f"agent {a.id!r} does not conform to the schema: {key}")
            counts[key] += 1
    return counts


def violation(count: int, lower: int, upper: int) -> int:
    """Raw quota violation of one count: shortfall below lower or excess above upper."""
    return max(0, lower - count, count - upper)


def dev_binary(agents: Iterable[Agent], schema: FeatureSchema, quotas: Quotas) -> int:
    """0 if every count lies within its quota interval, else 1."""
    counts = feature_value_counts(agents, schema)
    for key, c in counts.items():
        l, u = quotas.bounds(key)
        if violation(c, l, u):
            return 1
    return 0


def dev_linear(agents: Iterable[Agent], schema: FeatureSchema, quotas: Quotas):
    """Normalized L1 quota distance: sum of violation/upper over all pairs. Exact."""
    counts = feature_value_counts(agents, schema)
    total = ZERO
    for key, c in counts.items():
        l, u = quotas.bounds(key)
        total += Q(violation(c, l, u), u)
    return total


@dataclass(frozen=True)
class MetricVector:
    """Auxiliary per-panel metrics reported alongside the L1 loss.

    dev_below     normalized shortfall below lower quotas only
    max_norm_dev  largest violation/upper over all pairs
    max_dev       largest raw violation over all pairs
    unrepresented number of (feature, value) pairs with zero members
    """

    dev_below: object
    max_norm_dev: object
    max_dev: int
    unrepresented: int


def aux_metrics(agents: Iterable[Agent], schema: FeatureSchema, quotas: Quotas) -> MetricVector:
    counts = feature_value_counts(agents, schema)
    dev_below = ZERO
    max_norm = ZERO
    max_dev = 0
    unrepresented = 0
    for key, c in counts.items():
        l, u = quotas.bounds(key)
        dev_below += Q(max(0, l - c), u)
        raw = violation(c, l, u)
        max_dev = max(max_dev, raw)
        max_norm = max(max_norm, Q(raw, u))
        if c == 0:
            unrepresented += 1
    return MetricVector(dev_below, max_norm, max_dev, unrepresented)
