"""Finite measure spaces, random maps, pushforward laws and partitions.

A finite sigma-field is always carried by the partition that generates it,
so "the initial sigma-field of Y" is just the list of nonempty fibres of Y.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Dict, Hashable, Iterable, List, Mapping, Optional, Sequence, Tuple

from .extreal import INF, ExtReal, encode, ext_sum, is_inf, to_ext

Atom = Hashable


class SchemaError(ValueError):
    """Malformed model input.  ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class FiniteSpace:
    """Ordered atoms with a non-negative extended-real weight on each."""

    atoms: Tuple[Atom, ...]
    weights: Tuple[ExtReal, ...]
    _index: Dict[Atom, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        atoms = tuple(self.atoms)
        weights = tuple(to_ext(w) for w in self.weights)
        if len(atoms) != len(weights):
            raise ValueError("atoms and weights differ in length")
        index = {a: i for i, a in enumerate(atoms)}
        if len(index) != len(atoms):
            raise ValueError("atom identifiers must be unique")
        for a, w in zip(atoms, weights):
            if w is not INF and w < 0:
                raise ValueError(f"negative weight on atom {a!r}")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "_index", index)

    @classmethod
    def uniform(cls, atoms: Iterable[Atom], weight=1) -> "FiniteSpace":
        atoms = tuple(atoms)
        return cls(atoms, (weight,) * len(atoms))

    def weight(self, atom: Atom) -> ExtReal:
        return self.weights[self._index[atom]]

    def __contains__(self, atom) -> bool:
        return atom in self._index

    def __len__(self) -> int:
        return len(self.atoms)

    def mass(self, subset: Iterable[Atom]) -> ExtReal:
        return ext_sum(self.weight(a) for a in subset)

    @property
    def total_mass(self) -> ExtReal:
        return ext_sum(self.weights)

    @property
    def support(self) -> frozenset:
        return frozenset(a for a, w in zip(self.atoms, self.weights) if w != 0)

    @property
    def infinite_atoms(self) -> Tuple[Atom, ...]:
        """Atoms carrying weight +inf (representable, but never sigma-finite)."""
        return tuple(a for a, w in zip(self.atoms, self.weights) if is_inf(w))


@dataclass(frozen=True)
class SigmaFiniteWitness:
    """Finite-mass pieces B_1..B_m whose union should be the support."""

    pieces: Tuple[frozenset, ...]

    def __post_init__(self):
        object.__setattr__(self, "pieces", tuple(frozenset(p) for p in self.pieces))

    @classmethod
    def singletons(cls, space: FiniteSpace) -> "SigmaFiniteWitness":
        return cls(tuple(frozenset([a]) for a in space.atoms))

    def piece_mass(self, space: FiniteSpace) -> Tuple[ExtReal, ...]:
        return tuple(space.mass(p) for p in self.pieces)


@dataclass(frozen=True)
class RandomMap:
    """A map on the atoms of ``domain``, given pointwise.

    ``codomain`` lists the admissible values in a fixed order; it may be
    larger than the image.
    """

    domain: FiniteSpace
    codomain: Tuple[Any, ...]
    assignment: Tuple[Any, ...]
    name: str = ""

    def __post_init__(self):
        assignment = tuple(self.assignment)
        codomain = tuple(self.codomain)
        if len(assignment) != len(self.domain.atoms):
            raise ValueError("assignment must be total on the atoms")
        allowed = set(codomain)
        for a, v in zip(self.domain.atoms, assignment):
            if v not in allowed:
                raise ValueError(f"value {v!r} at atom {a!r} is not in the codomain")
        object.__setattr__(self, "assignment", assignment)
        object.__setattr__(self, "codomain", codomain)

    @classmethod
    def from_values(cls, domain: FiniteSpace, values: Sequence[Any], name: str = "") -> "RandomMap":
        """Build a map whose codomain is its image, in first-seen order."""
        return cls(domain, tuple(dict.fromkeys(values)), tuple(values), name)

    @classmethod
    def from_function(cls, domain: FiniteSpace, fn, name: str = "") -> "RandomMap":
        return cls.from_values(domain, [fn(a) for a in domain.atoms], name)

    def __call__(self, atom: Atom):
        return self.assignment[self.domain._index[atom]]

    def items(self):
        return zip(self.domain.atoms, self.assignment)

    @property
    def image(self) -> Tuple[Any, ...]:
        """Values actually attained, in codomain order."""
        attained = set(self.assignment)
        return tuple(v for v in self.codomain if v in attained)

    def fibre(self, value) -> Tuple[Atom, ...]:
        return tuple(a for a, v in self.items() if v == value)

    def compose(self, g, codomain: Optional[Sequence[Any]] = None, name: str = "") -> "RandomMap":
        """Return ``g ∘ self``."""
        values = [g(v) for v in self.assignment]
        if codomain is None:
            return RandomMap.from_values(self.domain, values, name)
        return RandomMap(self.domain, tuple(codomain), tuple(values), name)


@dataclass(frozen=True)
class Partition:
    """Disjoint nonempty cells covering a finite atom set."""

    cells: Tuple[frozenset, ...]

    def __post_init__(self):
        cells = tuple(frozenset(c) for c in self.cells)
        seen = set()
        for c in cells:
            if not c:
                raise ValueError("partition cells must be nonempty")
            if seen & c:
                raise ValueError("partition cells must be disjoint")
            seen |= c
        object.__setattr__(self, "cells", cells)

    @property
    def atoms(self) -> frozenset:
        return frozenset().union(*self.cells)

    def cell_of(self, atom: Atom) -> frozenset:
        for c in self.cells:
            if atom in c:
                return c
        raise KeyError(atom)

    def as_set(self) -> frozenset:
        """Order-free view, for comparing partitions."""
        return frozenset(self.cells)

    def is_finer_than(self, other: "Partition") -> bool:
        return all(any(c <= d for d in other.cells) for c in self.cells)

    def __eq__(self, other):
        if not isinstance(other, Partition):
            return NotImplemented
        return self.as_set() == other.as_set()

    def __hash__(self):
        return hash(self.as_set())


@dataclass(frozen=True)
class PushforwardLaw:
    codomain: Tuple[Any, ...]
    masses: Tuple[ExtReal, ...]

    def mass(self, value) -> ExtReal:
        return self.masses[self.codomain.index(value)]

    def as_dict(self) -> Dict[Any, ExtReal]:
        return dict(zip(self.codomain, self.masses))

    @property
    def total_mass(self) -> ExtReal:
        return ext_sum(self.masses)


def pushforward(P: FiniteSpace, Y: RandomMap) -> PushforwardLaw:
    """The law P_Y(A) = P(Y in A), one mass per codomain value."""
    if Y.domain != P:
        raise ValueError("random map is defined on a different space")
    buckets: Dict[Any, List[ExtReal]] = {v: [] for v in Y.codomain}
    for w, v in zip(P.weights, Y.assignment):
        buckets[v].append(w)
    return PushforwardLaw(Y.codomain, tuple(ext_sum(buckets[v]) for v in Y.codomain))


def initial_sigma_field(Y: RandomMap) -> Partition:
    """Generating partition of {Y^-1(A)}: the nonempty fibres of Y."""
    cells: Dict[Any, List[Atom]] = {}
    for a, v in Y.items():
        cells.setdefault(v, []).append(a)
    return Partition(tuple(frozenset(c) for c in cells.values()))


def is_sigma_finite(P: FiniteSpace, w: SigmaFiniteWitness) -> Tuple[bool, str]:
    """Check a witness of sigma-finiteness.

    Returns ``(verdict, diagnostic)``; the diagnostic names the first
    violated condition and is empty on success.
    """
    for k, piece in enumerate(w.pieces):
        unknown = [a for a in piece if a not in P]
        if unknown:
            raise ValueError(f"piece {k} references unknown atoms {unknown!r}")
    infinite = P.infinite_atoms
    if infinite:
        return False, f"infinite atom uncovered by finite piece: {infinite[0]!r}"
    for k, piece in enumerate(w.pieces):
        if is_inf(P.mass(piece)):
            return False, f"piece {k} has infinite mass"
    covered = frozenset().union(*w.pieces) if w.pieces else frozenset()
    missing = [a for a in P.atoms if a in P.support and a not in covered]
    if missing:
        return False, f"support atom {missing[0]!r} not covered by any piece"
    return True, ""


def refine(p: Partition, q: Partition) -> Partition:
    """Coarsest common refinement: all nonempty pairwise intersections."""
    if p.atoms != q.atoms:
        raise ValueError("partitions live on different atom sets")
    cells = []
    for c in p.cells:
        for d in q.cells:
            both = c & d
            if both:
                cells.append(both)
    return Partition(tuple(cells))


# ---------------------------------------------------------------------------
# JSON model files
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpaceFile:
    """Contents of a ``--space`` model file."""

    space: FiniteSpace
    maps: Mapping[str, RandomMap]
    witness: Optional[SigmaFiniteWitness] = None


def _atom_key(x):
    if isinstance(x, list):
        return tuple(_atom_key(v) for v in x)
    return x


def parse_space(doc: Mapping[str, Any]) -> SpaceFile:
    """Decode ``{"atoms", "weights", "maps", "pieces"}``."""
    if not isinstance(doc, Mapping):
        raise SchemaError("<root>", "expected a JSON object")
    if "atoms" not in doc:
        raise SchemaError("atoms", "missing")
    atoms = doc["atoms"]
    if not isinstance(atoms, list):
        raise SchemaError("atoms", "expected a list")
    atoms = [_atom_key(a) for a in atoms]
    weights = doc.get("weights", [1] * len(atoms))
    if not isinstance(weights, list) or len(weights) != len(atoms):
        raise SchemaError("weights", "expected a list as long as atoms")
    try:
        space = FiniteSpace(tuple(atoms), tuple(to_ext(w) for w in weights))
    except (TypeError, ValueError) as exc:
        raise SchemaError("weights", str(exc)) from exc
    maps = {}
    raw_maps = doc.get("maps", {})
    if not isinstance(raw_maps, Mapping):
        raise SchemaError("maps", "expected an object of name -> value list")
    for name, values in raw_maps.items():
        if not isinstance(values, list) or len(values) != len(atoms):
            raise SchemaError(f"maps.{name}", "expected a list as long as atoms")
        values = [_atom_key(v) for v in values]
        maps[name] = RandomMap.from_values(space, values, name)
    witness = None
    if "pieces" in doc:
        pieces = doc["pieces"]
        if not isinstance(pieces, list) or not all(isinstance(p, list) for p in pieces):
            raise SchemaError("pieces", "expected a list of atom lists")
        witness = SigmaFiniteWitness(tuple(frozenset(_atom_key(a) for a in p) for p in pieces))
        for p in witness.pieces:
            for a in p:
                if a not in space:
                    raise SchemaError("pieces", f"unknown atom {a!r}")
    return SpaceFile(space, maps, witness)


def load_space(path) -> SpaceFile:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError("<root>", f"invalid JSON ({exc.msg})") from exc
    return parse_space(doc)


def dump_space(space: FiniteSpace, maps: Mapping[str, RandomMap] = (),
               witness: Optional[SigmaFiniteWitness] = None) -> Dict[str, Any]:
    doc: Dict[str, Any] = {
        "atoms": list(space.atoms),
        "weights": [encode(w) for w in space.weights],
        "maps": {name: list(m.assignment) for name, m in dict(maps).items()},
    }
    if witness is not None:
        doc["pieces"] = [sorted(p, key=space.atoms.index) for p in witness.pieces]
    return doc
