"""Deciding and constructing factorizations X = phi(Y) on finite spaces."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations
from typing import Any, Dict, List, Optional, Sequence, Tuple

from .extreal import INF
from .measure import RandomMap

PARTITION_CONSTRUCTION = "partition-construction"
SIMPLE_FUNCTION_LIMIT = "simple-function-limit"
CLOSED_FORM = "closed-form"
PROVENANCES = (PARTITION_CONSTRUCTION, SIMPLE_FUNCTION_LIMIT, CLOSED_FORM)


@dataclass(frozen=True)
class SeparationReport:
    separated: bool
    witness_pair: Optional[Tuple[Any, Any]] = None

    def __bool__(self):
        return self.separated


class NotMeasurable(ValueError):
    """X is not constant on some fibre of Y; carries the witnessing report."""

    def __init__(self, report: SeparationReport):
        a, b = report.witness_pair
        super().__init__(f"atoms {a!r} and {b!r} share a Y value but not an X value")
        self.report = report


@dataclass(frozen=True)
class FactorMap:
    """A map phi from Y-values to X-values.

    ``codomain`` is the codomain of X; values outside it are rejected when
    extending.
    """

    domain: Tuple[Any, ...]
    values: Tuple[Any, ...]
    codomain: Tuple[Any, ...]
    defined_on_image_only: bool
    provenance: str = PARTITION_CONSTRUCTION

    def __post_init__(self):
        if len(self.domain) != len(self.values):
            raise ValueError("factor map must be total on its domain")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")

    def __call__(self, y):
        try:
            return self.values[self.domain.index(y)]
        except ValueError:
            raise KeyError(y) from None

    def as_dict(self) -> Dict[Any, Any]:
        return dict(zip(self.domain, self.values))


def _check_same_domain(X: RandomMap, Y: RandomMap):
    if X.domain.atoms != Y.domain.atoms:
        raise ValueError("X and Y are defined on different spaces")


def is_measurable_wrt(X: RandomMap, Y: RandomMap) -> SeparationReport:
    """Is X constant on every fibre of Y?

    On finite spaces this is the same as sigma(X) ⊆ sigma(Y).  The witness
    is the first atom pair (in atom order) that Y fails to separate.
    """
    _check_same_domain(X, Y)
    first: Dict[Any, Tuple[Any, Any]] = {}
    for atom, x, y in zip(Y.domain.atoms, X.assignment, Y.assignment):
        seen = first.setdefault(y, (atom, x))
        if seen[1] != x:
            return SeparationReport(False, (seen[0], atom))
    return SeparationReport(True)


def construct_factor(X: RandomMap, Y: RandomMap) -> FactorMap:
    """Build the unique phi on Y(Omega) with phi(Y(w)) = X(w).

    Raises
    ------
    NotMeasurable
        If some fibre of Y carries two X values.
    """
    report = is_measurable_wrt(X, Y)
    if not report:
        raise NotMeasurable(report)
    table = {}
    for x, y in zip(X.assignment, Y.assignment):
        table.setdefault(y, x)
    image = Y.image
    return FactorMap(image, tuple(table[y] for y in image), X.codomain, True,
                     PARTITION_CONSTRUCTION)


def extend_factor(phi: FactorMap, full_codomain_Y: Sequence[Any], default) -> FactorMap:
    """Extend phi from the image to every value in ``full_codomain_Y``."""
    if not phi.defined_on_image_only:
        raise ValueError("factor map is already extended")
    if default not in phi.codomain:
        raise ValueError(f"default {default!r} is not in the codomain of X")
    known = phi.as_dict()
    missing = [y for y in known if y not in full_codomain_Y]
    if missing:
        raise ValueError(f"image values {missing!r} absent from the full codomain")
    domain = tuple(full_codomain_Y)
    values = tuple(known.get(y, default) for y in domain)
    return FactorMap(domain, values, phi.codomain, False, phi.provenance)


def dyadic_truncation(x, k: int) -> Fraction:
    """min(2^k, floor(2^k x) / 2^k), the k-th simple approximation of x >= 0."""
    cap = Fraction(2) ** k
    if x is INF:
        return cap
    x = Fraction(x)
    return min(cap, Fraction(math.floor(x * 2 ** k), 2 ** k))


def sufficient_levels(values) -> Optional[int]:
    """Smallest n at which every value is reproduced exactly, or None.

    Only dyadic rationals (floats included) are ever reproduced exactly
    by the truncation sequence.
    """
    n = 0
    for v in values:
        f = Fraction(v)
        d = f.denominator
        if d & (d - 1):
            return None
        n = max(n, d.bit_length() - 1, math.ceil(math.log2(f)) if f > 1 else 0)
    return max(n, 1)


def factor_via_simple_limit(X: RandomMap, Y: RandomMap, levels: int
                            ) -> Tuple[FactorMap, List[FactorMap]]:
    """Factor X through Y as the supremum of factored simple approximations.

    Each level X_k = min(2^k, floor(2^k X)/2^k) is factored by
    :func:`construct_factor`, and phi(y) = max_k phi_k(y).
    """
    if levels < 1:
        raise ValueError("levels must be a positive integer")
    for atom, x in X.items():
        if x is not INF and x < 0:
            raise ValueError(f"negative value {x!r} at atom {atom!r}")
    report = is_measurable_wrt(X, Y)
    if not report:
        raise NotMeasurable(report)
    per_level = []
    for k in range(1, levels + 1):
        Xk = X.compose(lambda v, k=k: dyadic_truncation(v, k), name=f"{X.name}_{k}")
        per_level.append(construct_factor(Xk, Y))
    image = per_level[0].domain
    sup = tuple(max(phi_k.values[i] for phi_k in per_level) for i in range(len(image)))
    phi = FactorMap(image, sup, tuple(dict.fromkeys(X.codomain + sup)), True,
                    SIMPLE_FUNCTION_LIMIT)
    return phi, per_level


def check_t0_separation(points: Sequence[Any], opens: Sequence[Any]) -> SeparationReport:
    """Does the supplied family contain, for each pair, a set holding exactly one?"""
    families = [frozenset(u) for u in opens]
    for p, q in combinations(points, 2):
        if not any((p in u) != (q in u) for u in families):
            return SeparationReport(False, (p, q))
    return SeparationReport(True)
