"""0/1 mixed-integer linear model: binary and nonnegative continuous variables,
exact rational coefficients, minimization only."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping

from .._ratio import ONE, Q, ZERO, as_ratio


class VarKind(Enum):
    BINARY = "binary"
    CONTINUOUS = "continuous"


LE, GE, EQ = "<=", ">=", "="
_SENSES = (LE, GE, EQ)


@dataclass(frozen=True)
class Variable:
    name: str
    kind: VarKind
    upper: object = None  # rational upper bound; None = unbounded; binaries use 1


@dataclass(frozen=True)
class Constraint:
    name: str
    coeffs: Mapping[str, object]
    sense: str
    rhs: object


class ModelError(ValueError):
    pass


class Model:
    """A minimization model under construction. Validate before solving."""

    def __init__(self, name: str = "model"):
        self.name = name
        self.variables: list[Variable] = []
        self._index: dict[str, int] = {}
        self.objective: dict[str, object] = {}
        self.objective_constant = ZERO
        self.constraints: list[Constraint] = []

    # -- construction ------------------------------------------------------

    def add_binary(self, name: str) -> str:
        return self._add(Variable(name, VarKind.BINARY, ONE))

    def add_continuous(self, name: str, upper=None) -> str:
        up = None if upper is None else as_ratio(upper)
        if up is not None and up < ZERO:
            raise ModelError(f"negative upper bound for {name!r}")
        return self._add(Variable(name, VarKind.CONTINUOUS, up))

    def _add(self, var: Variable) -> str:
        if var.name in self._index:
            raise ModelError(f"duplicate variable {var.name!r}")
        self._index[var.name] = len(self.variables)
        self.variables.append(var)
        return var.name

    def set_objective(self, coeffs: Mapping[str, object], constant=ZERO) -> None:
        self.objective = {n: as_ratio(c) for n, c in coeffs.items()}
        self.objective_constant = as_ratio(constant)

    def add_constraint(self, name: str, coeffs: Mapping[str, object],
                       sense: str, rhs) -> None:
        if sense not in _SENSES:
            raise ModelError(f"bad sense {sense!r}")
        self.constraints.append(
            Constraint(name, {n: as_ratio(c) for n, c in coeffs.items()},
                       sense, as_ratio(rhs)))

    # -- introspection -----------------------------------------------------

    def var_index(self, name: str) -> int:
        return self._index[name]

    def binary_names(self) -> list[str]:
        return [v.name for v in self.variables if v.kind is VarKind.BINARY]

    def validate(self) -> None:
        names = self._index
        for n in self.objective:
            if n not in names:
                raise ModelError(f"objective references unknown variable {n!r}")
        seen_cons = set()
        for c in self.constraints:
            if c.name in seen_cons:
                raise ModelError(f"duplicate constraint name {c.name!r}")
            seen_cons.add(c.name)
            for n in c.coeffs:
                if n not in names:
                    raise ModelError(
                        f"constraint {c.name!r} references unknown variable {n!r}")

    # -- evaluation --------------------------------------------------------

    def constraint_violation(self, assignment: Mapping[str, object]):
        """Name of the first constraint violated by the assignment, or None."""
        for c in self.constraints:
            lhs = sum((coef * assignment.get(n, ZERO) for n, coef in c.coeffs.items()),
                      ZERO)
            ok = (lhs <= c.rhs if c.sense == LE
                  else lhs >= c.rhs if c.sense == GE
                  else lhs == c.rhs)
            if not ok:
                return c.name
        for v in self.variables:
            x = assignment.get(v.name, ZERO)
            if x < ZERO or (v.upper is not None and x > v.upper):
                return f"bound:{v.name}"
            if v.kind is VarKind.BINARY and x != ZERO and x != ONE:
                return f"integrality:{v.name}"
        return None

    def objective_value(self, assignment: Mapping[str, object]):
        return sum((c * assignment.get(n, ZERO) for n, c in self.objective.items()),
                   self.objective_constant)


class SolveStatus(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    BUDGET_EXCEEDED = "budget_exceeded"


@dataclass
class Solution:
    status: SolveStatus
    assignment: dict | None
    objective: object | None
    node_count: int = 0
    wall_time: float = 0.0


@dataclass(frozen=True)
class SolverConfig:
    """Budgets and warm start for the built-in solver.

    incumbent, when given, must be a feasible integral assignment; it seeds
    the upper bound so the search can prune early.
    """

    node_limit: int = 500_000
    time_limit: float | None = None
    incumbent: Mapping[str, object] | None = None


class BudgetExceeded(RuntimeError):
    """Raised by callers that cannot proceed on a BUDGET_EXCEEDED solve."""

    def __init__(self, message, solution: Solution | None = None):
        super().__init__(message)
        self.solution = solution
