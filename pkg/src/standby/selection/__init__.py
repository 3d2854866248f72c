"""Alternate-selection algorithms: exact optimizers, heuristics, oracles."""

from .algorithms import (AlternateSet, ReplacementPolicy, ScenarioOutcome,
                         SelectionContext,
                         SelectionResult, best_replacement, brute_force_opt,
                         erm_alts, erm_alts_eq, finalize_result, greedy_alts,
                         make_alternate_set, optimal_alternates,
                         quota_based_alts)
from .inner import Profile, ReplacementEngine, ReplacementSpace

__all__ = [
    "AlternateSet", "Profile", "ReplacementEngine", "ReplacementPolicy",
    "ReplacementSpace", "ScenarioOutcome", "SelectionContext", "SelectionResult",
    "best_replacement", "brute_force_opt", "erm_alts", "erm_alts_eq",
    "finalize_result", "greedy_alts", "make_alternate_set",
    "optimal_alternates", "quota_based_alts",
]
