"""Numerical evaluation of functional and influence-function trees."""
from __future__ import annotations

from typing import Optional

import numpy as np

from ..dist import DiscreteDist
from ..errors import DivideByZero, EvalFailure, UnknownVariable, ZeroConditioningMass
from .functions import lookup
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
    InfluenceExpr,
    Mass,
    Mul,
    Obs,
    Psi,
    Sub,
    SumOver,
    walk,
)


class _Evaluator:
    def __init__(self, P: DiscreteDist, z: Optional[dict], functional=None):
        self.P = P
        self.schema = P.schema
        self.z = z
        self.functional = functional
        self._psi = None
        self._grids = None
        self._cache = {}
        self._axes = {name: i for i, name in enumerate(self.schema.names)}
        self._shape = self.schema.shape

    # references
    def level(self, ref, env) -> int:
        if isinstance(ref, Bound):
            try:
                return env[ref.name]
            except KeyError:
                raise UnknownVariable(f"unbound variable {ref.name!r}") from None
        if isinstance(ref, Obs):
            return self.observed(ref.var)
        return int(ref)

    def observed(self, var) -> int:
        if self.z is None:
            raise EvalFailure(f"observed value of {var!r} needed but no data point given")
        if var not in self.z:
            raise UnknownVariable(f"unknown variable {var!r}; schema has {list(self.schema.names)}")
        return self.z[var]

    def resolve(self, assign, env) -> tuple:
        return tuple((var, self.level(ref, env)) for var, ref in assign)

    def index(self, resolved):
        """Table index for a resolved assignment, or None when a level is off-support."""
        idx = [slice(None)] * len(self.schema.variables)
        for var, level in resolved:
            ax = self._axes.get(var)
            if ax is None:
                ax = self.schema.axis(var)  # raises UnknownVariable
            if not 0 <= level < self._shape[ax]:
                return None
            if not isinstance(idx[ax], slice) and idx[ax] != level:
                return None
            idx[ax] = level
        return tuple(idx)

    def mass(self, resolved) -> float:
        key = ("m", resolved)
        if key not in self._cache:
            idx = self.index(resolved)
            self._cache[key] = 0.0 if idx is None else float(self.P.table[idx].sum())
        return self._cache[key]

    # data expressions, vectorized over the support
    def grids(self):
        if self._grids is None:
            self._grids = {k: v.astype(float) for k, v in self.P.grids().items()}
        return self._grids

    def data(self, node, env):
        if isinstance(node, Const):
            return node.value
        if isinstance(node, DataVar):
            g = self.grids()
            if node.name not in g:
                raise UnknownVariable(f"unknown variable {node.name!r}; schema has {list(self.schema.names)}")
            return g[node.name]
        if isinstance(node, Indicator):
            out = np.ones(self.schema.shape)
            g = self.grids()
            for var, level in self.resolve(node.assign, env):
                if var not in g:
                    raise UnknownVariable(f"unknown variable {var!r}; schema has {list(self.schema.names)}")
                out = out * (g[var] == level)
            return out
        if isinstance(node, Add):
            return self.data(node.left, env) + self.data(node.right, env)
        if isinstance(node, Sub):
            return self.data(node.left, env) - self.data(node.right, env)
        if isinstance(node, Mul):
            return self.data(node.left, env) * self.data(node.right, env)
        if isinstance(node, Div):
            den = self.data(node.right, env)
            if np.any(np.asarray(den) == 0):
                raise DivideByZero("division by zero inside a data expression")
            return self.data(node.left, env) / den
        raise EvalFailure(f"{type(node).__name__} is not a data expression")

    def condexp(self, node: CondExp, env) -> float:
        resolved = self.resolve(node.given, env)
        # indicator levels inside the target may depend on bound or observed values
        ind_key = ("i", node.target)
        if ind_key not in self._cache:
            self._cache[ind_key] = tuple(n for n in walk(node.target) if isinstance(n, Indicator))
        refs = tuple(self.resolve(n.assign, env) for n in self._cache[ind_key])
        key = ("e", node.target, resolved, refs)
        if key in self._cache:
            return self._cache[key]
        idx = self.index(resolved)
        w = None if idx is None else self.P.table[idx]
        denom = 0.0 if w is None else float(w.sum())
        if denom <= 0.0:
            raise ZeroConditioningMass(f"conditioning event {dict(resolved)} has zero mass")
        data_key = ("d", node.target, refs)
        if data_key not in self._cache:
            self._cache[data_key] = np.broadcast_to(self.data(node.target, env), self._shape)
        g = self._cache[data_key][idx]
        value = float((g * w).sum() / denom)
        self._cache[key] = value
        return value

    def psi(self) -> float:
        if self.functional is None:
            raise EvalFailure("psi appears but no functional is attached")
        if self._psi is None:
            self._psi = _Evaluator(self.P, None).eval(self.functional, {})
        return self._psi

    # main recursion
    def eval(self, node, env) -> float:
        if isinstance(node, Const):
            return node.value
        if isinstance(node, BoundRef):
            return float(self.level(Bound(node.name), env))
        if isinstance(node, DataVar):
            return float(self.observed(node.name))
        if isinstance(node, Indicator):
            return float(all(self.observed(v) == lv for v, lv in self.resolve(node.assign, env)))
        if isinstance(node, Mass):
            return self.mass(self.resolve(node.assign, env))
        if isinstance(node, CondExp):
            return self.condexp(node, env)
        if isinstance(node, SumOver):
            total = 0.0
            for level in range(self.schema.levels(node.domain)):
                total += self.eval(node.body, {**env, node.var: level})
            return total
        if isinstance(node, Add):
            return self.eval(node.left, env) + self.eval(node.right, env)
        if isinstance(node, Sub):
            return self.eval(node.left, env) - self.eval(node.right, env)
        if isinstance(node, Mul):
            left = self.eval(node.left, env)
            if left == 0.0:
                # indicators sort first, so zero weights skip their (possibly undefined) cofactors
                return 0.0
            return left * self.eval(node.right, env)
        if isinstance(node, Div):
            den = self.eval(node.right, env)
            if den == 0.0:
                raise DivideByZero(f"division by zero in {node}")
            return self.eval(node.left, env) / den
        if isinstance(node, Apply):
            arg = self.eval(node.arg, env)
            try:
                value = lookup(node.fn).value(arg)
            except (ValueError, ZeroDivisionError, OverflowError) as exc:
                raise EvalFailure(f"{node.fn}({arg!r}) is undefined: {exc}") from exc
            return float(value)
        if isinstance(node, Psi):
            return self.psi()
        if isinstance(node, IF):
            raise EvalFailure("cannot evaluate a pending IF marker")
        raise EvalFailure(f"cannot evaluate {node!r}")


def evaluate_functional(expr, P: DiscreteDist) -> float:
    """Value of a functional tree at distribution ``P``."""
    return _Evaluator(P, None).eval(expr, {})


def evaluate_if(ifexpr: InfluenceExpr, P: DiscreteDist, z) -> float:
    """Influence function at data point ``z`` (atom tuple or dict) under ``P``."""
    atom = P.schema.atom(z)
    return _Evaluator(P, P.schema.as_dict(atom), ifexpr.functional).eval(ifexpr.tree, {})


def if_values(ifexpr: InfluenceExpr, P: DiscreteDist) -> np.ndarray:
    """Influence-function values on every atom, shaped like ``P.table``."""
    out = np.empty(P.schema.shape)
    base = _Evaluator(P, None, ifexpr.functional)
    psi = base.psi()
    for atom in P.schema.atoms():
        ev = _Evaluator(P, P.schema.as_dict(atom), ifexpr.functional)
        # masses and conditional means are keyed by resolved levels, so they can be shared
        ev._psi, ev._cache = psi, base._cache
        out[atom] = ev.eval(ifexpr.tree, {})
    return out
