"""Conditional expectation, exactly on finite spaces and by L2 projection.

:func:`condexp_discrete` is the Radon-Nikodym density of
A -> E(Gamma; Y in A) against the law of Y, which on a finite space is a
weighted fibre average.  :func:`project_l2` fits the projection of Gamma
onto a finite feature basis of Y from samples by least squares.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Dict, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from .extreal import ExtReal, is_inf
from .measure import FiniteSpace, RandomMap, pushforward
from .rng import DEFAULT_SEED, stream, task_id


class NonSigmaFinite(ValueError):
    """Some fibre of Y has infinite mass."""


class DegenerateBasis(np.linalg.LinAlgError):
    """The regularized normal equations are numerically singular."""


def _scale(w, g):
    if isinstance(g, tuple):
        return tuple(w * c for c in g)
    return w * g


def _add(a, b):
    if isinstance(a, tuple):
        return tuple(x + y for x, y in zip(a, b))
    return a + b


def _div(a, m):
    if isinstance(a, tuple):
        return tuple(x / m for x in a)
    return a / m


@dataclass(frozen=True)
class CondExpTable:
    """phi(y) = E(Gamma | Y = y) on the y-values with 0 < mass < inf."""

    phi: Mapping[Any, Any]
    mass: Mapping[Any, ExtReal]
    undefined_set: Tuple[Any, ...]

    def __call__(self, y):
        return self.phi[y]

    def total_expectation(self):
        """Sum of phi(y) * mass(y) over the defined values."""
        total = None
        for y, v in self.phi.items():
            term = _scale(self.mass[y], v)
            total = term if total is None else _add(total, term)
        return Fraction(0) if total is None else total


def condexp_discrete(P: FiniteSpace, gamma: RandomMap, Y: RandomMap) -> CondExpTable:
    """Exact conditional expectation of ``gamma`` given ``Y``.

    Exact in rational arithmetic when weights and values are rational.
    y-values of zero mass go to ``undefined_set``.

    Raises
    ------
    NonSigmaFinite
        If some fibre of Y has infinite mass.
    """
    if gamma.domain.atoms != P.atoms or Y.domain.atoms != P.atoms:
        raise ValueError("gamma and Y must be defined on P")
    law = pushforward(P, Y)
    for y, m in zip(law.codomain, law.masses):
        if is_inf(m):
            raise NonSigmaFinite(f"fibre Y = {y!r} has infinite mass")
    for atom, g in gamma.items():
        vals = g if isinstance(g, tuple) else (g,)
        if any(is_inf(v) or (isinstance(v, float) and not math.isfinite(v)) for v in vals):
            raise ValueError(f"gamma is not finite at atom {atom!r}")
    sums: Dict[Any, Any] = {}
    for w, g, y in zip(P.weights, gamma.assignment, Y.assignment):
        term = _scale(w, g)
        sums[y] = term if y not in sums else _add(sums[y], term)
    phi = {}
    undefined = []
    masses = law.as_dict()
    for y in law.codomain:
        m = masses[y]
        if m == 0:
            undefined.append(y)
        else:
            phi[y] = _div(sums[y], m)
    return CondExpTable(phi, masses, tuple(undefined))


def expectation(P: FiniteSpace, gamma: RandomMap):
    """E(Gamma) = sum of gamma * weight, exact for rational inputs."""
    total = None
    for w, g in zip(P.weights, gamma.assignment):
        term = _scale(w, g)
        total = term if total is None else _add(total, term)
    return total


# ---------------------------------------------------------------------------
# L2 projection onto a finite basis
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Feature:
    name: str
    fn: Callable
    vectorized: bool = False


@dataclass(frozen=True)
class FeatureBasis:
    """Ordered real-valued features of y; spans a subspace of L2(sigma(Y))."""

    features: Tuple[Feature, ...]
    spec: Optional[Tuple[Tuple[str, Any], ...]] = field(default=None, compare=False)

    @property
    def size(self) -> int:
        return len(self.features)

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(f.name for f in self.features)

    @classmethod
    def polynomial(cls, degree: int) -> "FeatureBasis":
        feats = tuple(
            Feature("1" if d == 0 else ("y" if d == 1 else f"y^{d}"),
                    lambda y, d=d: np.asarray(y, dtype=float) ** d, True)
            for d in range(degree + 1))
        return cls(feats, tuple(("power", d) for d in range(degree + 1)))

    @classmethod
    def indicators(cls, values: Sequence[Any]) -> "FeatureBasis":
        feats = tuple(Feature(f"1[y={v!r}]", lambda y, v=v: 1.0 if y == v else 0.0)
                      for v in values)
        return cls(feats, tuple(("indicator", v) for v in values))

    @classmethod
    def from_spec(cls, doc: Mapping[str, Any]) -> "FeatureBasis":
        """Decode ``{"features": [{"kind": "power", "degree": d} | {"kind": "indicator", "value": v}]}``."""
        items = doc.get("features")
        if not isinstance(items, list) or not items:
            raise ValueError("features: expected a nonempty list")
        feats = []
        spec = []
        for i, item in enumerate(items):
            kind = item.get("kind") if isinstance(item, Mapping) else None
            if kind == "power":
                d = item.get("degree")
                if not isinstance(d, int) or d < 0:
                    raise ValueError(f"features[{i}].degree: expected a non-negative integer")
                feats.append(cls.polynomial(d).features[d])
                spec.append(("power", d))
            elif kind == "indicator":
                if "value" not in item:
                    raise ValueError(f"features[{i}].value: missing")
                feats.append(cls.indicators([item["value"]]).features[0])
                spec.append(("indicator", item["value"]))
            else:
                raise ValueError(f"features[{i}].kind: expected 'power' or 'indicator'")
        return cls(tuple(feats), tuple(spec))

    def to_spec(self) -> Dict[str, Any]:
        if self.spec is None:
            raise ValueError("basis built from ad-hoc callables has no serial form")
        out = []
        for kind, arg in self.spec:
            out.append({"kind": kind, "degree": arg} if kind == "power"
                       else {"kind": kind, "value": arg})
        return {"features": out}

    def design(self, ys: Sequence[Any]) -> np.ndarray:
        """N x size matrix of feature values."""
        cols = []
        for f in self.features:
            if f.vectorized:
                col = np.broadcast_to(f.fn(np.asarray(ys, dtype=float)), (len(ys),))
            else:
                col = np.fromiter((f.fn(y) for y in ys), dtype=float, count=len(ys))
            cols.append(np.asarray(col, dtype=float))
        A = np.column_stack(cols) if cols else np.empty((len(ys), 0))
        if not np.all(np.isfinite(A)):
            raise ValueError("features must evaluate finitely on every sample")
        return A


@dataclass(frozen=True)
class ProjectionFit:
    coefficients: Tuple[float, ...]
    residual_risk: float
    sample_count: int
    condition_diagnostic: float
    ridge: float
    max_orthogonality: float
    feature_names: Tuple[str, ...] = ()
    basis: Optional[FeatureBasis] = field(default=None, compare=False, repr=False)

    def __call__(self, y) -> float:
        return evaluate_fit(self, self.basis, y)

    def predict(self, ys: Sequence[Any]) -> np.ndarray:
        """Vectorized evaluation at many y."""
        return self.basis.design(ys) @ np.asarray(self.coefficients)

    def as_dict(self) -> Dict[str, Any]:
        return {
            "coefficients": list(self.coefficients),
            "features": list(self.feature_names),
            "residual_risk": self.residual_risk,
            "sample_count": self.sample_count,
            "condition": self.condition_diagnostic,
            "ridge": self.ridge,
            "max_orthogonality": self.max_orthogonality,
        }


def default_ridge(gram: np.ndarray) -> float:
    """1e-8 times the mean diagonal of the Gram matrix."""
    return 1e-8 * float(np.trace(gram)) / max(gram.shape[0], 1)


def orthogonality(A: np.ndarray, residual: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    """|<r, f_j>| / (||gamma|| ||f_j||) per feature (0 where either norm is 0).

    Scaling by the projected vector rather than the residual keeps exact
    fits, whose residual is pure round-off, from looking non-orthogonal.
    """
    num = np.abs(A.T @ residual)
    den = np.linalg.norm(A, axis=0) * np.linalg.norm(gamma)
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def project_l2(samples: Sequence[Tuple[Any, float]], basis: FeatureBasis,
               ridge: Optional[float] = None, *, allow_pinv: bool = False,
               max_condition: float = 1e12) -> ProjectionFit:
    """Least-squares projection of gamma onto span(basis) from (y, gamma) pairs.

    Minimizes mean((gamma - A c)^2) + ridge * |c|^2 by a Cholesky solve of the
    normal equations with one step of iterative refinement.  ``ridge=None``
    uses :func:`default_ridge`; ``ridge=0`` is an exact projection.

    Raises
    ------
    DegenerateBasis
        If the regularized system has condition number above
        ``max_condition`` (unless ``ridge == 0`` and ``allow_pinv``, in which
        case the minimal-norm least-squares solution is returned).
    """
    n = len(samples)
    if n < basis.size:
        raise ValueError(f"need at least {basis.size} samples, got {n}")
    ys = [s[0] for s in samples]
    gam = np.fromiter((float(s[1]) for s in samples), dtype=float, count=n)
    A = basis.design(ys)
    gram = A.T @ A / n
    rhs = A.T @ gam / n
    if ridge is None:
        ridge = default_ridge(gram)
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    system = gram + ridge * np.eye(basis.size)
    cond = float(np.linalg.cond(system))
    if not math.isfinite(cond) or cond > max_condition:
        if ridge == 0 and allow_pinv:
            coef = np.linalg.lstsq(A, gam, rcond=None)[0]
        else:
            raise DegenerateBasis(f"normal equations have condition {cond:.3g}")
    else:
        try:
            factor = linalg.cho_factor(system)
        except linalg.LinAlgError as exc:
            raise DegenerateBasis(str(exc)) from exc
        coef = linalg.cho_solve(factor, rhs)
        coef = coef + linalg.cho_solve(factor, rhs - system @ coef)
    residual = gam - A @ coef
    return ProjectionFit(
        coefficients=tuple(float(c) for c in coef),
        residual_risk=float(np.mean(residual ** 2)),
        sample_count=n,
        condition_diagnostic=cond,
        ridge=float(ridge),
        max_orthogonality=float(orthogonality(A, residual, gam).max(initial=0.0)),
        feature_names=basis.names,
        basis=basis,
    )


def evaluate_fit(fit: ProjectionFit, basis: FeatureBasis, y) -> float:
    """Sum_j c_j f_j(y)."""
    if len(fit.coefficients) != basis.size:
        raise ValueError("fit and basis have different sizes")
    row = basis.design([y])[0]
    return float(math.fsum(c * f for c, f in zip(fit.coefficients, row)))


def empirical_risk(samples: Sequence[Tuple[Any, float]], basis: FeatureBasis,
                   coefficients: Sequence[float]) -> float:
    A = basis.design([s[0] for s in samples])
    gam = np.array([float(s[1]) for s in samples])
    return float(np.mean((gam - A @ np.asarray(coefficients, dtype=float)) ** 2))


def sample_pairs(P: FiniteSpace, gamma: RandomMap, Y: RandomMap, n: int,
                 seed: int = DEFAULT_SEED) -> list:
    """Draw n i.i.d. (Y, Gamma) pairs from the normalized weights of P."""
    total = P.total_mass
    if is_inf(total) or total == 0:
        raise ValueError("sampling needs finite, positive total mass")
    p = np.array([float(w) for w in P.weights]) / float(total)
    idx = stream(seed, task_id("sample_pairs")).choice(len(P.atoms), size=n, p=p)
    return [(Y.assignment[i], float(gamma.assignment[i])) for i in idx]
