"""Exact rational arithmetic shim.

All deviation values, scenario weights and solver arithmetic are exact
rationals. gmpy2.mpq is used when available (it is several times faster
than fractions.Fraction); otherwise Fraction is a drop-in replacement.
"""

from __future__ import annotations

from fractions import Fraction

try:
    from gmpy2 import mpq as Q

    HAVE_GMPY2 = True
except ImportError:  # pragma: no cover - gmpy2 is a declared dependency
    Q = Fraction
    HAVE_GMPY2 = False

ZERO = Q(0)
ONE = Q(1)


def as_ratio(x):
    """Coerce x to an exact rational.

    Accepts ints, rationals, floats (converted exactly, by binary
    expansion, not by printed repr) and strings ("3/7", "0.25", "2").
    """
    if isinstance(x, int):
        return Q(x)
    if isinstance(x, (Fraction,)) or type(x) is type(ZERO):
        return Q(x)
    if isinstance(x, float):
        return Q(Fraction(x))
    if isinstance(x, str):
        return Q(Fraction(x.strip()))
    raise TypeError(f"cannot interpret {x!r} as a rational")


def ratio_str(q) -> str:
    """Render a rational as 'p' or 'p/q' (exact, round-trips via as_ratio)."""
    q = as_ratio(q)
    if q.denominator == 1:
        return str(q.numerator)
    return f"{q.numerator}/{q.denominator}"


def to_float(q) -> float:
    """Lossy float view, for reporting only."""
    return float(Fraction(int(q.numerator), int(q.denominator)))
