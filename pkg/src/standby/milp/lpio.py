"""LP text format writer, solution file parser, external solver adapter.

The writer emits the widely supported CPLEX-style LP layout (Minimize /
Subject To / Bounds / Binary / End). Rationals are written as exact
decimals whenever the denominator divides a power of ten; otherwise the
shortest float repr is used (documented lossy fallback; the importer
re-verifies solutions against the exact model).

Solution files are plain "name value" lines; blank lines and lines starting
with '#', '\\' or '//' are ignored. Values may be decimals or "p/q".
"""

from __future__ import annotations

import shlex
import subprocess
import tempfile
import time
import warnings
from pathlib import Path

from .._ratio import ONE, Q, ZERO, as_ratio
from .model import (Constraint, Model, Solution, SolveStatus, SolverConfig,
                    VarKind)


def _decimal_exact(q) -> str | None:
    num, den = int(q.numerator), int(q.denominator)
    d2 = d5 = 0
    rest = den
    while rest % 2 == 0:
        rest //= 2
        d2 += 1
    while rest % 5 == 0:
        rest //= 5
        d5 += 1
    if rest != 1:
        return None
    digits = max(d2, d5)
    scaled = abs(num) * (10 ** digits) // den
    sign = "-" if num < 0 else ""
    if digits == 0:
        return f"{sign}{scaled}"
    s = str(scaled).rjust(digits + 1, "0")
    return f"{sign}{s[:-digits]}.{s[-digits:]}".rstrip("0").rstrip(".") or "0"


def format_number(q) -> str:
    q = as_ratio(q)
    exact = _decimal_exact(q)
    return exact if exact is not None else repr(float(q))


def _terms(coeffs: dict, order: list[str]) -> str:
    parts = []
    for name in order:
        if name not in coeffs:
            continue
        c = coeffs[name]
        if c == ZERO:
            continue
        mag = format_number(abs(c))
        sign = "-" if c < ZERO else "+"
        if not parts and sign == "+":
            parts.append(f"{mag} {name}" if mag != "1" else name)
        else:
            parts.append(f"{sign} {mag} {name}" if mag != "1" else f"{sign} {name}")
    return " ".join(parts) if parts else "0 " + order[0] if order else "0"


def export_lp(model: Model) -> str:
    """Serialize the model to LP text."""
    model.validate()
    order = [v.name for v in model.variables]
    lines = [f"\\ {model.name}", "Minimize"]
    lines.append(f" obj: {_terms(model.objective, order)}")
    lines.append("Subject To")
    for con in model.constraints:
        sense = {"<=": "<=", ">=": ">=", "=": "="}[con.sense]
        lines.append(f" {con.name}: {_terms(con.coeffs, order)} {sense} "
                     f"{format_number(con.rhs)}")
    bound_lines = []
    for v in model.variables:
        if v.kind is VarKind.CONTINUOUS and v.upper is not None:
            bound_lines.append(f" 0 <= {v.name} <= {format_number(v.upper)}")
    if bound_lines:
        lines.append("Bounds")
        lines.extend(bound_lines)
    binaries = model.binary_names()
    if binaries:
        lines.append("Binary")
        for i in range(0, len(binaries), 8):
            lines.append(" " + " ".join(binaries[i:i + 8]))
    lines.append("End")
    return "\n".join(lines) + "\n"


def parse_solution_text(text: str) -> dict:
    """Parse "name value" lines into an exact assignment dict."""
    out: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith(("#", "\\", "//")):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"solution line {lineno}: expected 'name value', got {raw!r}")
        name, value = parts
        try:
            out[name] = as_ratio(value)
        except (ValueError, ZeroDivisionError):
            raise ValueError(f"solution line {lineno}: bad value {value!r}") from None
    return out


def import_solution(model: Model, text: str, tolerance=ZERO) -> Solution:
    """Validate a solver's assignment against the exact model.

    Unknown variable names are errors. Missing binaries default to 0 with a
    warning; missing continuous variables default to 0. The assignment must
    satisfy every constraint (within `tolerance` per constraint, default
    exact); the first violated constraint is named otherwise.
    """
    model.validate()
    parsed = parse_solution_text(text)
    known = {v.name for v in model.variables}
    unknown = sorted(set(parsed) - known)
    if unknown:
        raise ValueError(f"solution references unknown variables {unknown}")
    assignment = {}
    for v in model.variables:
        if v.name in parsed:
            assignment[v.name] = parsed[v.name]
        else:
            if v.kind is VarKind.BINARY:
                warnings.warn(f"solution missing binary {v.name!r}; defaulting to 0")
            assignment[v.name] = ZERO

    tol = as_ratio(tolerance)
    for con in model.constraints:
        lhs = sum((c * assignment[n] for n, c in con.coeffs.items()), ZERO)
        ok = (lhs <= con.rhs + tol if con.sense == "<="
              else lhs >= con.rhs - tol if con.sense == ">="
              else abs(lhs - con.rhs) <= tol)
        if not ok:
            raise ValueError(f"assignment violates constraint {con.name!r}")
    for v in model.variables:
        x = assignment[v.name]
        if x < ZERO - tol or (v.upper is not None and x > v.upper + tol):
            raise ValueError(f"assignment violates bounds of {v.name!r}")
        if v.kind is VarKind.BINARY and x != ZERO and x != ONE:
            if abs(x) <= tol:
                assignment[v.name] = ZERO
            elif abs(x - ONE) <= tol:
                assignment[v.name] = ONE
            else:
                raise ValueError(f"assignment violates integrality of {v.name!r}")

    return Solution(SolveStatus.OPTIMAL, assignment,
                    model.objective_value(assignment), 0, 0.0)


def write_solution_text(solution: Solution, model: Model) -> str:
    lines = [f"# objective {format_number(solution.objective)}"]
    for v in model.variables:
        lines.append(f"{v.name} {format_number(solution.assignment[v.name])}")
    return "\n".join(lines) + "\n"


class ExternalSolver:
    """Run an external command per model: `cmd ... {lp} ... {sol}`.

    The template must contain {lp} and {sol} placeholders; the command is
    expected to read the LP file and write a "name value" solution file.
    """

    name = "external"

    def __init__(self, command_template: str, tolerance=ZERO):
        if "{lp}" not in command_template or "{sol}" not in command_template:
            raise ValueError("external solver template needs {lp} and {sol}")
        self.command_template = command_template
        self.tolerance = tolerance

    def solve(self, model: Model, config: SolverConfig | None = None) -> Solution:
        start = time.perf_counter()
        with tempfile.TemporaryDirectory(prefix="standby-lp-") as tmp:
            lp_path = Path(tmp) / "model.lp"
            sol_path = Path(tmp) / "model.sol"
            lp_path.write_text(export_lp(model), encoding="utf-8")
            argv = [
                a.replace("{lp}", str(lp_path)).replace("{sol}", str(sol_path))
                for a in shlex.split(self.command_template)
            ]
            proc = subprocess.run(argv, capture_output=True, text=True)
            if proc.returncode != 0:
                raise RuntimeError(
                    f"external solver failed ({proc.returncode}): {proc.stderr.strip()}")
            if not sol_path.exists():
                raise RuntimeError("external solver wrote no solution file")
            solution = import_solution(model, sol_path.read_text(encoding="utf-8"),
                                       tolerance=self.tolerance)
        solution.wall_time = time.perf_counter() - start
        return solution
