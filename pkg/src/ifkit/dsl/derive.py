"""Symbolic influence-function derivation by rewrite rules.

``IF`` markers are pushed down the functional tree one rule at a time.  The
rule for a node is chosen by its type; rewrites proceed outside-in and
left-to-right, so the resulting trace is canonical and can be replayed.

Rules
-----
constant        IF(c) = 0 for any distribution-free subtree
sum             IF(a + b) = IF(a) + IF(b)
difference      IF(a - b) = IF(a) - IF(b)
constant-factor IF(c * a) = c * IF(a), IF(a / c) = IF(a) / c
product         IF(a * b) = IF(a) * b + a * IF(b)
quotient        IF(a / b) = IF(a) / b - (a / b) * IF(b) / b
chain           IF(f(a)) = f'(a) * IF(a)
sum-over        IF(sum_v body) = sum_v IF(body)
mass-block      IF(p(S)) = 1(S) - p(S)
condexp-block   IF(E[g | S]) = 1(S) / p(S) * (g - E[g | S])
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

from ..errors import UnsupportedNode
from .functions import derivative
from .nodes import (
    IF,
    Add,
    Apply,
    BoundRef,
    CondExp,
    Const,
    Div,
    Indicator,
    InfluenceExpr,
    Mass,
    Mul,
    Psi,
    Sub,
    SumOver,
    children,
    is_p_free,
    walk,
)
from .render import render
from .simplify import run_pass, simplify_steps


def _rule_for(node) -> str:
    if isinstance(node, (Const, BoundRef)) or is_p_free(node):
        return "constant"
    if isinstance(node, Add):
        return "sum"
    if isinstance(node, Sub):
        return "difference"
    if isinstance(node, Mul):
        if is_p_free(node.left) or is_p_free(node.right):
            return "constant-factor"
        return "product"
    if isinstance(node, Div):
        return "constant-factor" if is_p_free(node.right) else "quotient"
    if isinstance(node, Apply):
        return "chain"
    if isinstance(node, SumOver):
        return "sum-over"
    if isinstance(node, Mass):
        return "mass-block"
    if isinstance(node, CondExp):
        return "condexp-block"
    raise UnsupportedNode(f"no influence-function rule for {type(node).__name__}")


def apply_rule(rule: str, node):
    """One rewrite of ``IF(node)``; the result may contain further ``IF`` markers."""
    if rule != _rule_for(node):
        raise ValueError(f"rule {rule!r} does not apply to {render(node)}")
    if rule == "constant":
        return Const(0.0)
    if rule == "sum":
        return Add(IF(node.left), IF(node.right))
    if rule == "difference":
        return Sub(IF(node.left), IF(node.right))
    if rule == "constant-factor":
        if isinstance(node, Div):
            return Div(IF(node.left), node.right)
        if is_p_free(node.left):
            return Mul(node.left, IF(node.right))
        return Mul(IF(node.left), node.right)
    if rule == "product":
        return Add(Mul(IF(node.left), node.right), Mul(node.left, IF(node.right)))
    if rule == "quotient":
        a, b = node.left, node.right
        return Sub(Div(IF(a), b), Mul(Div(a, b), Div(IF(b), b)))
    if rule == "chain":
        return Mul(derivative(node.fn, node.arg), IF(node.arg))
    if rule == "sum-over":
        return SumOver(node.var, IF(node.body), node.domain)
    if rule == "mass-block":
        return Sub(Indicator(node.assign), Mass(node.assign))
    if rule == "condexp-block":
        resid = Sub(node.target, node)
        if not node.given:
            return resid
        return Mul(Div(Indicator(node.given), Mass(node.given)), resid)
    raise ValueError(f"unknown rule {rule!r}")


@dataclass(frozen=True)
class TraceStep:
    rule: str
    before: object
    after: object
    notes: tuple = ()

    def to_json(self) -> dict:
        doc = {"rule": self.rule, "before": render(self.before), "after": render(self.after)}
        if self.notes:
            doc["notes"] = list(self.notes)
        return doc


@dataclass
class DerivationTrace:
    """Ordered rewrite steps from ``IF(functional)`` to the final influence function.

    Steps whose rule is a derivation rule rewrite the first pending ``IF``
    marker (pre-order); the remaining steps are whole-tree simplification
    passes.
    """

    functional: object
    steps: list = field(default_factory=list)

    def replay(self):
        """Re-apply every step from the input and return the resulting tree.

        Raises ``AssertionError`` if any recorded step does not reproduce.
        """
        tree = IF(self.functional)
        for step in self.steps:
            if isinstance(step.before, IF):
                marker = _first_marker(tree)
                assert marker == step.before, f"step {step.rule}: expected {step.before!r}, found {marker!r}"
                after = apply_rule(step.rule, step.before.arg)
                assert after == step.after, f"step {step.rule} does not reproduce"
                tree = _replace_first(tree, after)
            else:
                assert tree == step.before, f"pass {step.rule} starts from a different tree"
                after, _ = run_pass(step.rule, tree, self.functional)
                assert after == step.after, f"pass {step.rule} does not reproduce"
                tree = after
        return tree

    def to_json(self) -> dict:
        return {"functional": render(self.functional), "steps": [s.to_json() for s in self.steps]}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)


def _first_marker(tree):
    if isinstance(tree, IF):
        return tree
    for c in children(tree):
        found = _first_marker(c)
        if found is not None:
            return found
    return None


def _rebuild(node, kids):
    if isinstance(node, (Add, Sub, Mul, Div)):
        return type(node)(*kids)
    if isinstance(node, Apply):
        return Apply(node.fn, kids[0])
    if isinstance(node, SumOver):
        return SumOver(node.var, kids[0], node.domain)
    if isinstance(node, CondExp):
        return CondExp(kids[0], node.given)
    if isinstance(node, IF):
        return IF(kids[0])
    return node


def _replace_first(tree, replacement):
    done = [False]

    def go(node):
        if done[0]:
            return node
        if isinstance(node, IF):
            done[0] = True
            return replacement
        kids = children(node)
        if not kids:
            return node
        return _rebuild(node, [go(c) for c in kids])

    return go(tree)


def _derive(node, steps):
    rule = _rule_for(node)
    after = apply_rule(rule, node)
    steps.append(TraceStep(rule, IF(node), after))
    return _resolve(after, steps)


def _resolve(tree, steps):
    """Replace IF markers in ``tree`` left-to-right by their derivations."""
    if isinstance(tree, IF):
        return _derive(tree.arg, steps)
    kids = children(tree)
    if not kids or isinstance(tree, CondExp):
        return tree
    return _rebuild(tree, [_resolve(c, steps) for c in kids])


def derive_raw(expr):
    """Unsimplified influence function and the derivation steps."""
    if any(isinstance(n, (Psi, IF)) for n in walk(expr)):
        raise UnsupportedNode("the functional may not contain psi or IF markers")
    steps = []
    tree = _derive(expr, steps)
    return tree, steps


def derive_if(expr, simplify: bool = True):
    """Influence function of a functional tree.

    Returns ``(InfluenceExpr, DerivationTrace)``.  With ``simplify`` the
    simplification passes run after the rewrite and are recorded in the trace.
    """
    tree, steps = derive_raw(expr)
    trace = DerivationTrace(expr, list(steps))
    if simplify:
        for p in simplify_steps(tree, expr):
            trace.steps.append(TraceStep(p.rule, p.before, p.after, p.notes))
            tree = p.after
    return InfluenceExpr(tree, expr), trace
