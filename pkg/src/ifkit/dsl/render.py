"""Surface-syntax rendering of expression trees.

Observed data values render in upper case (``Y``, ``X``) outside ``E[...]``;
inside a conditional-expectation target data variables keep the DSL's lower
case.  Rendered functionals parse back to the same tree.
"""
from __future__ import annotations

from .nodes import (
    IF,
    Add,
    Apply,
    Bound,
    BoundRef,
    CondExp,
    Const,
    DataVar,
    Div,
    Indicator,
    Mass,
    Mul,
    Obs,
    Psi,
    Sub,
    SumOver,
)


def fmt_number(v: float) -> str:
    """Integers without a decimal point; others to 15 digits unless that loses the value."""
    v = float(v)
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    short = format(v, ".15g")
    return short if float(short) == v else repr(v)


def observed_name(var: str) -> str:
    return var.upper() if var.islower() else f"{var}_obs"


def fmt_ref(ref) -> str:
    if isinstance(ref, Bound):
        return ref.name
    if isinstance(ref, Obs):
        return observed_name(ref.var)
    return str(int(ref))


def fmt_assign(assign) -> str:
    return ", ".join(f"{var}={fmt_ref(ref)}" for var, ref in assign)


def _prec(node) -> int:
    if isinstance(node, (Add, Sub)):
        return 1
    if isinstance(node, (Mul, Div)):
        return 2
    if isinstance(node, Const) and node.value < 0:
        return 1
    return 3


def render(node, data: bool = False) -> str:
    def wrap(child, min_prec):
        s = render(child, data)
        return f"({s})" if _prec(child) < min_prec else s

    if isinstance(node, Const):
        return fmt_number(node.value)
    if isinstance(node, BoundRef):
        return node.name
    if isinstance(node, DataVar):
        return node.name if data else observed_name(node.name)
    if isinstance(node, Indicator):
        return f"1({fmt_assign(node.assign)})"
    if isinstance(node, Mass):
        return f"p({fmt_assign(node.assign)})"
    if isinstance(node, CondExp):
        if isinstance(node.target, Indicator):
            inner = fmt_assign(node.target.assign)
            if node.given:
                return f"p({inner} | {fmt_assign(node.given)})"
        target = render(node.target, data=True)
        if node.given:
            return f"E[{target} | {fmt_assign(node.given)}]"
        return f"E[{target}]"
    if isinstance(node, SumOver):
        return f"sum_{node.var} {{ {render(node.body, data)} }}"
    if isinstance(node, Add):
        return f"{wrap(node.left, 1)} + {wrap(node.right, 1)}"
    if isinstance(node, Sub):
        return f"{wrap(node.left, 1)} - {wrap(node.right, 2)}"
    if isinstance(node, (Mul, Div)):
        op = "*" if isinstance(node, Mul) else "/"
        left = node.left
        if isinstance(left, Const) and left.value < 0:
            # a leading negative constant binds tighter than the product
            if left.value == -1.0 and isinstance(node, Mul):
                return f"-{wrap(node.right, 3)}"
            return f"{fmt_number(left.value)} {op} {wrap(node.right, 3)}"
        return f"{wrap(left, 2)} {op} {wrap(node.right, 3)}"
    if isinstance(node, Apply):
        return f"{node.fn}({render(node.arg, data)})"
    if isinstance(node, Psi):
        return "psi"
    if isinstance(node, IF):
        return f"IF[{render(node.arg, data)}]"
    raise TypeError(f"cannot render {node!r}")
