"""Expression-tree nodes shared by functionals and influence functions.

A functional is a tree over ``Const``, ``BoundRef``, ``Mass``, ``CondExp``,
``SumOver``, the four arithmetic nodes and ``Apply``.  Influence functions add
leaves that read the observed data point (``DataVar``, ``Indicator``, and
``Obs`` references inside assignments) plus the ``Psi`` symbol for the
functional's own value.  ``IF`` marks a pending application of the
influence-function operator during derivation.

Assignments are tuples of ``(variable, ref)`` pairs sorted by variable name,
where ``ref`` is an ``int`` level, a ``Bound`` variable, or ``Obs`` (the
observed value of a data variable).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple, Union


@dataclass(frozen=True)
class Bound:
    name: str


@dataclass(frozen=True)
class Obs:
    var: str


Ref = Union[int, Bound, Obs]
Assignment = Tuple[Tuple[str, Ref], ...]


def make_assignment(pairs) -> Assignment:
    pairs = tuple(pairs)
    names = [v for v, _ in pairs]
    if len(set(names)) != len(names):
        raise ValueError(f"variable assigned twice in {names}")
    return tuple(sorted(pairs, key=lambda p: p[0]))


class Node:
    __slots__ = ()

    def __add__(self, other):
        return Add(self, _lift(other))

    def __sub__(self, other):
        return Sub(self, _lift(other))

    def __mul__(self, other):
        return Mul(self, _lift(other))

    def __truediv__(self, other):
        return Div(self, _lift(other))

    def __str__(self):
        from .render import render

        return render(self)


def _lift(x):
    return x if isinstance(x, Node) else Const(float(x))


@dataclass(frozen=True, repr=False)
class Const(Node):
    value: float

    def __repr__(self):
        return f"Const({self.value!r})"


@dataclass(frozen=True, repr=False)
class BoundRef(Node):
    """Numeric value (level index) of a bound summation variable."""

    name: str

    def __repr__(self):
        return f"BoundRef({self.name!r})"


@dataclass(frozen=True, repr=False)
class DataVar(Node):
    """Numeric value (level index) of a data variable at the evaluation point."""

    name: str

    def __repr__(self):
        return f"DataVar({self.name!r})"


@dataclass(frozen=True, repr=False)
class Indicator(Node):
    assign: Assignment

    def __repr__(self):
        return f"Indicator({self.assign!r})"


@dataclass(frozen=True, repr=False)
class Mass(Node):
    assign: Assignment

    def __repr__(self):
        return f"Mass({self.assign!r})"


@dataclass(frozen=True, repr=False)
class CondExp(Node):
    """E[target | given]; ``target`` is a data expression."""

    target: Node
    given: Assignment

    def __repr__(self):
        return f"CondExp({self.target!r}, {self.given!r})"


@dataclass(frozen=True, repr=False)
class SumOver(Node):
    """Sum of ``body`` over the levels of schema variable ``domain``, bound as ``var``."""

    var: str
    body: Node
    domain: str

    def __repr__(self):
        return f"SumOver({self.var!r}, {self.body!r}, {self.domain!r})"


@dataclass(frozen=True, repr=False)
class Add(Node):
    left: Node
    right: Node

    def __repr__(self):
        return f"Add({self.left!r}, {self.right!r})"


@dataclass(frozen=True, repr=False)
class Sub(Node):
    left: Node
    right: Node

    def __repr__(self):
        return f"Sub({self.left!r}, {self.right!r})"


@dataclass(frozen=True, repr=False)
class Mul(Node):
    left: Node
    right: Node

    def __repr__(self):
        return f"Mul({self.left!r}, {self.right!r})"


@dataclass(frozen=True, repr=False)
class Div(Node):
    left: Node
    right: Node

    def __repr__(self):
        return f"Div({self.left!r}, {self.right!r})"


@dataclass(frozen=True, repr=False)
class Apply(Node):
    fn: str
    arg: Node

    def __repr__(self):
        return f"Apply({self.fn!r}, {self.arg!r})"


@dataclass(frozen=True, repr=False)
class Psi(Node):
    """The value of the functional being differentiated."""

    def __repr__(self):
        return "Psi()"


@dataclass(frozen=True, repr=False)
class IF(Node):
    """Pending influence-function operator applied to ``arg``."""

    arg: Node

    def __repr__(self):
        return f"IF({self.arg!r})"


BINARY = (Add, Sub, Mul, Div)


def children(node: Node):
    if isinstance(node, BINARY):
        return (node.left, node.right)
    if isinstance(node, (Apply,)):
        return (node.arg,)
    if isinstance(node, IF):
        return (node.arg,)
    if isinstance(node, SumOver):
        return (node.body,)
    if isinstance(node, CondExp):
        return (node.target,)
    return ()


def walk(node: Node):
    """Pre-order traversal."""
    yield node
    for c in children(node):
        yield from walk(c)


def is_p_free(node: Node) -> bool:
    """True when the node does not depend on the distribution."""
    return not any(isinstance(n, (Mass, CondExp, Psi, IF)) for n in walk(node))


def assignment_refs(node: Node):
    """Every (variable, ref) pair used in an assignment anywhere under ``node``."""
    for n in walk(node):
        if isinstance(n, (Mass, Indicator)):
            yield from n.assign
        elif isinstance(n, CondExp):
            yield from n.given


def data_variables(node: Node) -> set:
    """Schema variable names referenced anywhere in ``node``."""
    out = set()
    for n in walk(node):
        if isinstance(n, DataVar):
            out.add(n.name)
        elif isinstance(n, SumOver):
            out.add(n.domain)
        if isinstance(n, (Mass, Indicator)):
            pairs = n.assign
        elif isinstance(n, CondExp):
            pairs = n.given
        else:
            pairs = ()
        for var, ref in pairs:
            out.add(var)
            if isinstance(ref, Obs):
                out.add(ref.var)
    return out


@dataclass(frozen=True)
class InfluenceExpr:
    """An influence-function tree together with the functional it belongs to.

    ``Psi`` leaves in ``tree`` evaluate to the value of ``functional``.
    """

    tree: Node
    functional: Node

    def __str__(self):
        from .render import render

        return render(self.tree)
