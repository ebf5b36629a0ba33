"""Non-negative extended reals with an explicit infinity marker.

Weights are exact :class:`fractions.Fraction` values when the input is
rational, plain floats otherwise, and :data:`INF` for +infinity.  Floats
never carry ``math.inf``; it is converted to :data:`INF` on entry.
"""

from __future__ import annotations

import math
from fractions import Fraction
from numbers import Real
from typing import Iterable, Union


class _Infinity:
    """Singleton +infinity.  Compares above every real number."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "INF"

    def __str__(self):
        return "inf"

    def __float__(self):
        return math.inf

    def __hash__(self):
        return hash(math.inf)

    def __eq__(self, other):
        return other is self or (isinstance(other, float) and other == math.inf)

    def __lt__(self, other):
        return False

    def __le__(self, other):
        return self == other

    def __gt__(self, other):
        return not self == other

    def __ge__(self, other):
        return True

    def __add__(self, other):
        return self

    __radd__ = __add__

    def __mul__(self, other):
        # measure-theory convention 0 * inf = 0
        if other is self:
            return self
        if other == 0:
            return Fraction(0) if isinstance(other, (int, Fraction)) else 0.0
        if other < 0:
            raise ValueError("negative multiple of infinity")
        return self

    __rmul__ = __mul__

    def __reduce__(self):
        return (_Infinity, ())


INF = _Infinity()

ExtReal = Union[Fraction, float, _Infinity]


def is_inf(x) -> bool:
    return x is INF


def to_ext(x) -> ExtReal:
    """Coerce user input into an extended real.

    ints and ``"p/q"`` strings become Fractions, floats stay floats,
    ``"inf"``/``math.inf`` become :data:`INF`.
    """
    if x is INF:
        return x
    if isinstance(x, bool):
        raise TypeError("booleans are not weights")
    if isinstance(x, (int, Fraction)):
        return Fraction(x)
    if isinstance(x, float):
        if math.isnan(x):
            raise ValueError("NaN weight")
        if x == math.inf:
            return INF
        return x
    if isinstance(x, str):
        s = x.strip().lower()
        if s in ("inf", "+inf", "infinity"):
            return INF
        try:
            return Fraction(s)
        except ValueError:
            return to_ext(float(s))
    if isinstance(x, Real):
        return to_ext(float(x))
    raise TypeError(f"cannot interpret {x!r} as an extended real")


def ext_sum(values: Iterable[ExtReal]) -> ExtReal:
    """Sum with the rule that any infinite term makes the total infinite.

    Exact when all terms are Fractions; float terms are summed with
    :func:`math.fsum` so the result does not depend on term order.
    """
    exact = Fraction(0)
    inexact = []
    for v in values:
        if v is INF:
            return INF
        if isinstance(v, Fraction):
            exact += v
        else:
            inexact.append(float(v))
    if not inexact:
        return exact
    return math.fsum(inexact) + float(exact)


def encode(x) -> object:
    """JSON-friendly encoding: integral Fractions as ints, others ``"p/q"``."""
    if x is INF:
        return "inf"
    if isinstance(x, Fraction):
        return x.numerator if x.denominator == 1 else f"{x.numerator}/{x.denominator}"
    return x
