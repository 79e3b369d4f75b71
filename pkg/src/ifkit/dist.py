"""Finite discrete joint distributions and a numerical Gateaux-derivative oracle.

A :class:`DiscreteDist` stores one probability per atom of the full product
support of its :class:`Schema`, as an ``ndarray`` whose axes follow the schema's
variable order.  Atoms are level-index tuples in that same order and are
enumerated lexicographically (``np.ndindex`` order), so every reduction is
deterministic.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence, Union

import numpy as np

from .errors import (
    DuplicateAtom,
    EpsOutOfRange,
    EvalFailure,
    NegativeMass,
    SumNotOne,
    UnknownVariable,
    ZeroConditioningMass,
)

SUM_TOL = 1e-12
DEFAULT_STEP = 1e-4

Atom = tuple
FunctionalEvaluator = Callable[["DiscreteDist"], float]


@dataclass(frozen=True)
class Schema:
    """Ordered variables, each with a number of levels ``0 .. levels-1``."""

    variables: tuple

    def __post_init__(self):
        vs = tuple((str(name), int(levels)) for name, levels in self.variables)
        names = [name for name, _ in vs]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate variable names in schema: {names}")
        for name, levels in vs:
            if not name.isidentifier():
                raise ValueError(f"variable name {name!r} is not an identifier")
            if levels < 1:
                raise ValueError(f"variable {name!r} needs at least one level")
        object.__setattr__(self, "variables", vs)

    @classmethod
    def of(cls, spec: Union["Schema", Mapping[str, int], Sequence]) -> "Schema":
        if isinstance(spec, Schema):
            return spec
        if isinstance(spec, Mapping):
            return cls(tuple(spec.items()))
        return cls(tuple(tuple(v) for v in spec))

    @property
    def names(self) -> tuple:
        return tuple(name for name, _ in self.variables)

    @property
    def shape(self) -> tuple:
        return tuple(levels for _, levels in self.variables)

    def levels(self, name: str) -> int:
        for n, levels in self.variables:
            if n == name:
                return levels
        raise UnknownVariable(f"unknown variable {name!r}; schema has {list(self.names)}")

    def axis(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise UnknownVariable(
                f"unknown variable {name!r}; schema has {list(self.names)}"
            ) from None

    def atoms(self) -> Iterable[Atom]:
        return np.ndindex(*self.shape)

    def atom(self, assignment: Union[Atom, Mapping[str, int]]) -> Atom:
        """Normalize an atom given as a dict or tuple, validating ranges."""
        if isinstance(assignment, Mapping):
            extra = set(assignment) - set(self.names)
            if extra:
                raise UnknownVariable(f"unknown variables {sorted(extra)}")
            missing = [n for n in self.names if n not in assignment]
            if missing:
                raise ValueError(f"atom is missing variables {missing}")
            values = tuple(int(assignment[n]) for n in self.names)
        else:
            values = tuple(int(v) for v in assignment)
            if len(values) != len(self.variables):
                raise ValueError(f"atom {values} does not match schema {self.names}")
        for (name, levels), v in zip(self.variables, values):
            if not 0 <= v < levels:
                raise ValueError(f"level {v} out of range for {name!r} ({levels} levels)")
        return values

    def as_dict(self, atom: Atom) -> dict:
        return dict(zip(self.names, atom))


@dataclass(frozen=True, eq=False)
class DiscreteDist:
    """Immutable probability table over the full product support of ``schema``."""

    schema: Schema
    table: np.ndarray

    def __post_init__(self):
        table = np.array(self.table, dtype=float)
        table.setflags(write=False)
        object.__setattr__(self, "table", table)

    def mass(self, atom) -> float:
        return float(self.table[self.schema.atom(atom)])

    def items(self):
        for atom in self.schema.atoms():
            yield atom, float(self.table[atom])

    def grids(self) -> dict:
        """Level values of every variable, broadcast over the support."""
        idx = np.indices(self.schema.shape)
        return {name: idx[i] for i, name in enumerate(self.schema.names)}

    def is_strictly_positive(self) -> bool:
        return bool(np.all(self.table > 0))

    def __eq__(self, other):
        if not isinstance(other, DiscreteDist):
            return NotImplemented
        return self.schema == other.schema and np.array_equal(self.table, other.table)

    def __repr__(self):
        return f"DiscreteDist({dict(self.schema.variables)}, {self.table.ravel().tolist()})"

    # serialization
    def to_json(self) -> dict:
        return {
            "schema": [[name, levels] for name, levels in self.schema.variables],
            "masses": [[list(atom), m] for atom, m in self.items()],
        }

    @classmethod
    def from_json(cls, doc: Union[str, Mapping]) -> "DiscreteDist":
        if isinstance(doc, str):
            doc = json.loads(doc)
        schema = Schema.of(doc["schema"])
        masses = [(tuple(atom), float(m)) for atom, m in doc["masses"]]
        return make_discrete(schema, masses)


def _unchecked(schema: Schema, table: np.ndarray) -> DiscreteDist:
    d = object.__new__(DiscreteDist)
    table = np.asarray(table, dtype=float)
    table.setflags(write=False)
    object.__setattr__(d, "schema", schema)
    object.__setattr__(d, "table", table)
    return d


def make_discrete(schema, masses) -> DiscreteDist:
    """Build a validated distribution; atoms not listed get mass zero.

    ``masses`` is a sequence of ``(atom, probability)`` pairs where atoms are
    level-index tuples or ``{name: level}`` dicts.  An ``ndarray`` of the
    schema's shape is accepted as well.
    """
    schema = Schema.of(schema)
    if isinstance(masses, np.ndarray):
        table = np.array(masses, dtype=float).reshape(schema.shape)
    else:
        table = np.zeros(schema.shape)
        seen = set()
        for atom, m in masses:
            atom = schema.atom(atom)
            if atom in seen:
                raise DuplicateAtom(f"atom {atom} listed more than once")
            seen.add(atom)
            table[atom] = float(m)
    if np.any(table < 0) or np.any(~np.isfinite(table)):
        raise NegativeMass("masses must be finite and nonnegative")
    total = table.sum()
    if abs(total - 1.0) > SUM_TOL:
        raise SumNotOne(f"masses sum to {float(total)!r}, not 1")
    return _unchecked(schema, table)


def uniform(schema) -> DiscreteDist:
    schema = Schema.of(schema)
    n = int(np.prod(schema.shape))
    return _unchecked(schema, np.full(schema.shape, 1.0 / n))


def random_positive(schema, rng: np.random.Generator, floor: float = 0.2) -> DiscreteDist:
    """Random strictly positive distribution.

    Draws a flat Dirichlet vector and mixes in ``floor`` of the uniform
    distribution, so every atom has mass at least ``floor / n_atoms``.
    """
    schema = Schema.of(schema)
    n = int(np.prod(schema.shape))
    w = rng.dirichlet(np.ones(n))
    w = (1 - floor) * w + floor / n
    w = w / w.sum()
    return _unchecked(schema, w.reshape(schema.shape))


def contaminate(P: DiscreteDist, z, eps: float) -> DiscreteDist:
    """Point-mass mixture ``(1 - eps) P + eps * delta_z`` for ``0 <= eps <= 1``."""
    if not 0.0 <= eps <= 1.0:
        raise EpsOutOfRange(f"eps must lie in [0, 1], got {eps}")
    return _signed_contaminate(P, P.schema.atom(z), eps)


def _signed_contaminate(P: DiscreteDist, z: Atom, eps: float) -> DiscreteDist:
    table = (1.0 - eps) * P.table
    table[z] += eps
    return _unchecked(P.schema, table)


@dataclass(frozen=True)
class GateauxResult:
    value: float
    scheme: str  # "central" or "forward"
    step: float


def _eval(psi: FunctionalEvaluator, Q: DiscreteDist) -> float:
    try:
        value = float(psi(Q))
    except ZeroConditioningMass:
        raise
    except (ZeroDivisionError, FloatingPointError, ArithmeticError) as exc:
        raise EvalFailure(f"functional undefined along the contamination path: {exc}") from exc
    if not np.isfinite(value):
        raise EvalFailure("functional returned a non-finite value along the path")
    return value


def gateaux_detail(psi: FunctionalEvaluator, P: DiscreteDist, z, step: float = DEFAULT_STEP) -> GateauxResult:
    """Richardson-extrapolated finite difference along the contamination path.

    Two-sided differences use the signed path ``(1 + h) P - h delta_z`` for the
    negative side.  When that would put negative mass on ``z`` the estimate
    falls back to a one-sided second-order forward difference (also
    Richardson-extrapolated), flagged by ``scheme == "forward"``.
    """
    if not 0.0 < step <= 1e-2:
        raise ValueError(f"step must lie in (0, 1e-2], got {step}")
    z = P.schema.atom(z)
    h = step
    if (1.0 + h) * P.table[z] - h >= 0.0:

        def central(s):
            up = _eval(psi, _signed_contaminate(P, z, s))
            down = _eval(psi, _signed_contaminate(P, z, -s))
            return (up - down) / (2.0 * s)

        value = (4.0 * central(h / 2.0) - central(h)) / 3.0
        return GateauxResult(value, "central", step)

    base = _eval(psi, P)

    def forward(s):
        f1 = _eval(psi, _signed_contaminate(P, z, s))
        f2 = _eval(psi, _signed_contaminate(P, z, 2.0 * s))
        return (-3.0 * base + 4.0 * f1 - f2) / (2.0 * s)

    value = (4.0 * forward(h / 2.0) - forward(h)) / 3.0
    return GateauxResult(value, "forward", step)


def gateaux_derivative(psi: FunctionalEvaluator, P: DiscreteDist, z, step: float = DEFAULT_STEP) -> float:
    """d/d(eps) psi((1 - eps) P + eps delta_z) at eps = 0, numerically."""
    return gateaux_detail(psi, P, z, step).value


def _index(schema: Schema, partial: Mapping[str, int]) -> tuple:
    idx = [slice(None)] * len(schema.variables)
    for name, level in partial.items():
        ax = schema.axis(name)
        level = int(level)
        if not 0 <= level < schema.variables[ax][1]:
            raise ValueError(f"level {level} out of range for {name!r}")
        idx[ax] = level
    return tuple(idx)


def marginal_mass(P: DiscreteDist, partial: Mapping[str, int]) -> float:
    """Total mass of atoms consistent with a partial assignment."""
    return float(np.sum(P.table[_index(P.schema, partial)]))


DataExpression = Union[str, float, int, Callable]


def target_values(P: DiscreteDist, target: DataExpression) -> np.ndarray:
    """Values of a data expression on every atom of ``P``'s support.

    ``target`` is a variable name (its level index is its value), a constant,
    or a callable receiving ``{name: level-array}`` broadcast over the support.
    """
    if isinstance(target, str):
        return P.grids()[P.schema.names[P.schema.axis(target)]].astype(float)
    if callable(target):
        return np.broadcast_to(np.asarray(target(P.grids()), dtype=float), P.schema.shape)
    return np.full(P.schema.shape, float(target))


def conditional_mean(P: DiscreteDist, target: DataExpression, given: Mapping[str, int]) -> float:
    """E[g(Z) | given] under ``P``; fails loudly on a zero-mass conditioning event."""
    idx = _index(P.schema, given)
    w = P.table[idx]
    denom = float(np.sum(w))
    if denom <= 0.0:
        raise ZeroConditioningMass(f"conditioning event {dict(given)} has zero mass")
    g = target_values(P, target)[idx]
    return float(np.sum(g * w) / denom)


def load_dist(path) -> DiscreteDist:
    with open(path) as fh:
        return DiscreteDist.from_json(json.load(fh))


def save_dist(P: DiscreteDist, path) -> None:
    with open(path, "w") as fh:
        json.dump(P.to_json(), fh)
