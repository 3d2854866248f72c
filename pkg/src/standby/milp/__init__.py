"""Exact 0/1 mixed-integer linear programming, plus LP file interchange."""

from .model import (BudgetExceeded, Constraint, Model, ModelError, Solution,
                    SolveStatus, SolverConfig, Variable, VarKind)
from .solve import BuiltinSolver, solve
from .lpio import ExternalSolver, export_lp, import_solution, parse_solution_text

__all__ = [
    "BudgetExceeded", "BuiltinSolver", "Constraint", "ExternalSolver", "Model",
    "ModelError", "Solution", "SolveStatus", "SolverConfig", "Variable",
    "VarKind", "export_lp", "import_solution", "parse_solution_text", "solve",
]
