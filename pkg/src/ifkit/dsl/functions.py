"""Named scalar functions usable in the DSL, with their derivatives.

Each derivative is a builder ``arg -> Node`` for ``f'(arg)``; the chain rule
multiplies it by the influence function of ``arg``.  Functions registered with
``derivative=None`` evaluate fine but cannot be differentiated.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

from ..errors import UnsupportedNode
from .nodes import Apply, Const, Div, Mul, Node


@dataclass(frozen=True)
class ScalarFunction:
    name: str
    value: Callable[[float], float]
    derivative: Optional[Callable[[Node], Node]]


def _sqrt_prime(e):
    return Div(Const(0.5), Apply("sqrt", e))


FUNCTIONS = {
    f.name: f
    for f in (
        ScalarFunction("log", math.log, lambda e: Div(Const(1.0), e)),
        ScalarFunction("exp", math.exp, lambda e: Apply("exp", e)),
        ScalarFunction("sqrt", math.sqrt, _sqrt_prime),
        ScalarFunction("square", lambda v: v * v, lambda e: Mul(Const(2.0), e)),
        ScalarFunction("reciprocal", lambda v: 1.0 / v, lambda e: Div(Const(-1.0), Mul(e, e))),
        ScalarFunction("abs", abs, None),
    )
}


def lookup(name: str) -> ScalarFunction:
    try:
        return FUNCTIONS[name]
    except KeyError:
        raise UnsupportedNode(f"unknown function {name!r}; known: {sorted(FUNCTIONS)}") from None


def derivative(name: str, arg: Node) -> Node:
    fn = lookup(name)
    if fn.derivative is None:
        raise UnsupportedNode(f"function {name!r} has no registered derivative")
    return fn.derivative(arg)
