"""Canonical-polynomial simplification of influence-function trees.

Trees are converted to a sum of monomials.  A monomial is a sorted tuple of
``(factor, exponent)`` pairs where each factor is atomic: a single-variable
indicator, a data variable, a bound-variable value, a mass, a conditional
mean, a function application, a summation (``SumF``) or a multi-term
denominator (``GroupF``).  Converting back with :func:`poly_to_tree` and
re-converting yields the identical polynomial, which makes every pass
idempotent.

Passes, applied in order:

``expand``
    distribute products, fold constants, cancel repeated factors
``collapse-indicator-sum``
    ``sum_v f(v) * 1(V=v) -> f(V)``
``conditional-ratio``
    ``p(S) / p(T) -> 1 / p(T \\ S | S)`` when ``S`` is a subset of ``T``
``recognize-psi``
    replace occurrences of the functional itself by the ``psi`` symbol
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

from ..errors import UnsupportedNode
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
    Node,
    Obs,
    Psi,
    Sub,
    SumOver,
    walk,
)


@dataclass(frozen=True)
class SumF:
    var: str
    domain: str
    body: tuple  # frozen polynomial


@dataclass(frozen=True)
class GroupF:
    body: tuple  # frozen polynomial with at least two terms (or none)


# indicators first so evaluation can skip cofactors of a zero weight
_RANK = {Indicator: 0, DataVar: 1, BoundRef: 2, Mass: 3, CondExp: 4, SumF: 5, Apply: 6, GroupF: 7, Psi: 8}


@lru_cache(maxsize=None)
def factor_key(f):
    return (_RANK[type(f)], repr(f))


def mono_key(m):
    return tuple((factor_key(f), e) for f, e in m)


def freeze(p: dict) -> tuple:
    return tuple(sorted(((m, c) for m, c in p.items() if c != 0.0), key=lambda it: mono_key(it[0])))


@dataclass
class _Context:
    collapse: bool = False
    notes: list = field(default_factory=list)


# polynomial arithmetic
def _add_into(out: dict, p: dict, scale: float = 1.0):
    for m, c in p.items():
        v = out.get(m, 0.0) + scale * c
        if v == 0.0:
            out.pop(m, None)
        else:
            out[m] = v
    return out


def _conflict(a: Indicator, b: Indicator) -> bool:
    (va, ra), (vb, rb) = a.assign[0], b.assign[0]
    return va == vb and isinstance(ra, int) and isinstance(rb, int) and ra != rb


def _make_term(exps: dict, coef: float) -> dict:
    """Polynomial for ``coef * prod f**e``; positive group powers are multiplied out."""
    if coef == 0.0:
        return {}
    groups = [(f, e) for f, e in exps.items() if isinstance(f, GroupF) and e > 0]
    if groups:
        rest = {f: e for f, e in exps.items() if not (isinstance(f, GroupF) and e > 0)}
        out = _make_term(rest, coef)
        for g, e in groups:
            for _ in range(e):
                out = poly_mul(out, dict(g.body))
        return out
    m = tuple(sorted(((f, e) for f, e in exps.items() if e != 0), key=lambda fe: factor_key(fe[0])))
    return {m: coef}


def _mono_mul(m1, m2):
    d = dict(m1)
    for f, e in m2:
        if isinstance(f, Indicator):
            for g, ge in d.items():
                if isinstance(g, Indicator) and ge > 0 and e > 0 and _conflict(f, g):
                    return None
        old = d.get(f, 0)
        new = old + e
        if isinstance(f, Indicator) and old > 0 and e > 0:
            new = 1  # indicators are idempotent
        d[f] = new
    return d


def poly_mul(p: dict, q: dict) -> dict:
    out = {}
    for m1, c1 in p.items():
        for m2, c2 in q.items():
            d = _mono_mul(m1, m2)
            if d is not None:
                _add_into(out, _make_term(d, c1 * c2))
    return out


def poly_pow(p: dict, k: int) -> dict:
    if k < 0:
        return poly_pow(inverse(p), -k)
    out = {(): 1.0}
    for _ in range(k):
        out = poly_mul(out, p)
    return out


def inverse(p: dict) -> dict:
    if len(p) == 1:
        ((m, c),) = p.items()
        return _make_term({f: -e for f, e in m}, 1.0 / c)
    return {((GroupF(freeze(p)), -1),): 1.0}


def _constant(p: dict):
    if not p:
        return 0.0
    if len(p) == 1 and () in p:
        return p[()]
    return None


# atomic factors
def _factor(f) -> dict:
    if isinstance(f, Indicator):
        out = {(): 1.0}
        for var, ref in f.assign:
            if isinstance(ref, Obs) and ref.var == var:
                continue
            out = poly_mul(out, {((Indicator(((var, ref),)), 1),): 1.0})
        return out
    if isinstance(f, Mass) and not f.assign:
        return {(): 1.0}
    return {((f, 1),): 1.0}


def _mentions(f, var: str) -> bool:
    if isinstance(f, SumF):
        return any(_mentions(g, var) for m, _ in f.body for g, _ in m)
    if isinstance(f, GroupF):
        return any(_mentions(g, var) for m, _ in f.body for g, _ in m)
    for n in walk(f):
        if isinstance(n, BoundRef) and n.name == var:
            return True
        pairs = n.assign if isinstance(n, (Mass, Indicator)) else n.given if isinstance(n, CondExp) else ()
        if any(ref == Bound(var) for _, ref in pairs):
            return True
    return False


def _subst_assign(assign, var, domain):
    return tuple((v, Obs(domain) if ref == Bound(var) else ref) for v, ref in assign)


def _subst_node(node, var, domain):
    if isinstance(node, BoundRef):
        return DataVar(domain) if node.name == var else node
    if isinstance(node, Indicator):
        return Indicator(_subst_assign(node.assign, var, domain))
    if isinstance(node, Mass):
        return Mass(_subst_assign(node.assign, var, domain))
    if isinstance(node, CondExp):
        return CondExp(_subst_node(node.target, var, domain), _subst_assign(node.given, var, domain))
    if isinstance(node, (Add, Sub, Mul, Div)):
        return type(node)(_subst_node(node.left, var, domain), _subst_node(node.right, var, domain))
    if isinstance(node, Apply):
        return Apply(node.fn, _subst_node(node.arg, var, domain))
    if isinstance(node, SumOver):
        return SumOver(node.var, _subst_node(node.body, var, domain), node.domain)
    return node


def _subst_poly(p: dict, var, domain, ctx) -> dict:
    out = {}
    for m, c in p.items():
        term = {(): c}
        for f, e in m:
            term = poly_mul(term, poly_pow(_subst_factor(f, var, domain, ctx), e))
        _add_into(out, term)
    return out


def _subst_factor(f, var, domain, ctx) -> dict:
    if not _mentions(f, var):
        return {((f, 1),): 1.0}
    if isinstance(f, SumF):
        return _sum_poly(f.var, f.domain, _subst_poly(dict(f.body), var, domain, ctx), ctx)
    if isinstance(f, GroupF):
        return _subst_poly(dict(f.body), var, domain, ctx)
    if isinstance(f, Apply):
        return to_poly(_subst_node(f, var, domain), ctx)
    return _factor(_subst_node(f, var, domain))


def _try_collapse(var, domain, dep, ctx):
    target = Indicator(((domain, Bound(var)),))
    others = [f for f, e in dep if isinstance(f, Indicator) and f != target and _mentions(f, var)]
    if dict(dep).get(target, 0) != 1:
        if others:
            ctx.notes.append(f"sum over {var}: indicator on a variable other than {domain!r}; left unsimplified")
        return None
    if others:
        ctx.notes.append(f"sum over {var}: several indicators involve {var}; collapsed on {domain!r}")
    out = {(): 1.0}
    for f, e in dep:
        if f == target:
            continue
        out = poly_mul(out, poly_pow(_subst_factor(f, var, domain, ctx), e))
    return out


def _sum_poly(var, domain, body: dict, ctx) -> dict:
    out = {}
    for m, c in body.items():
        dep = tuple((f, e) for f, e in m if _mentions(f, var))
        free = tuple((f, e) for f, e in m if not _mentions(f, var))
        term = _try_collapse(var, domain, dep, ctx) if ctx.collapse else None
        if term is None:
            term = {((SumF(var, domain, freeze({dep: 1.0})), 1),): 1.0}
        _add_into(out, poly_mul({free: c}, term))
    return out


def to_poly(node, ctx=None) -> dict:
    """Canonical polynomial of a tree."""
    ctx = ctx or _Context()
    if isinstance(node, Const):
        return {(): node.value} if node.value != 0.0 else {}
    if isinstance(node, (BoundRef, DataVar, Mass, CondExp, Psi, Indicator)):
        return _factor(node)
    if isinstance(node, Add):
        return _add_into(dict(to_poly(node.left, ctx)), to_poly(node.right, ctx))
    if isinstance(node, Sub):
        return _add_into(dict(to_poly(node.left, ctx)), to_poly(node.right, ctx), -1.0)
    if isinstance(node, Mul):
        return poly_mul(to_poly(node.left, ctx), to_poly(node.right, ctx))
    if isinstance(node, Div):
        return poly_mul(to_poly(node.left, ctx), inverse(to_poly(node.right, ctx)))
    if isinstance(node, Apply):
        arg = to_poly(node.arg, ctx)
        c = _constant(arg)
        if c is not None:
            try:
                return to_poly(Const(float(lookup(node.fn).value(c))))
            except (ValueError, ZeroDivisionError, OverflowError):
                pass
        return {((Apply(node.fn, poly_to_tree(arg)), 1),): 1.0}
    if isinstance(node, SumOver):
        return _sum_poly(node.var, node.domain, to_poly(node.body, ctx), ctx)
    if isinstance(node, IF):
        raise UnsupportedNode("pending IF markers cannot be simplified")
    raise UnsupportedNode(f"cannot simplify {node!r}")


# back to trees
def _factor_tree(f):
    if isinstance(f, SumF):
        return SumOver(f.var, poly_to_tree(dict(f.body)), f.domain)
    if isinstance(f, GroupF):
        return poly_to_tree(dict(f.body))
    return f


def _product(nodes):
    out = None
    for n in nodes:
        out = n if out is None else Mul(out, n)
    return out


def _mono_tree(m, coef: float):
    num, den, groups = [], [], []
    inds = [f for f, e in m if isinstance(f, Indicator) and e > 0]
    merged = dict(ind.assign[0] for ind in inds)
    if inds and len(merged) == len(inds):
        num.append(Indicator(tuple(sorted(merged.items()))))
        inds = set(inds)
    else:
        inds = set()
    for f, e in m:
        if f in inds:
            continue
        if e > 0:
            num.extend([_factor_tree(f)] * e)
        elif isinstance(f, GroupF):
            groups.extend([_factor_tree(f)] * (-e))
        else:
            den.extend([_factor_tree(f)] * (-e))
    if coef != 1.0 or not num:
        num.insert(0, Const(coef))
    tree = _product(num)
    if den:
        tree = Div(tree, _product(den))
    for g in groups:
        # each group divides separately so re-expansion keeps it atomic
        tree = Div(tree, g)
    return tree


def _sum_tree(terms):
    """Left-folded sum of ``(tree_builder_input, coef)`` pairs with sign-aware joins."""
    out = None
    for m, c in terms:
        if out is None:
            out = _mono_tree(m, c)
        elif c < 0:
            out = Sub(out, _mono_tree(m, -c))
        else:
            out = Add(out, _mono_tree(m, c))
    return out if out is not None else Const(0.0)


def _is_weight(f, e):
    return (isinstance(f, Indicator) and e > 0) or e < 0


def poly_to_tree(p: dict):
    """Readable tree for a polynomial; re-expanding it gives back ``p`` exactly."""
    items = list(freeze(p))
    if not items:
        return Const(0.0)
    scale = 1.0
    first = abs(items[0][1])
    if len(items) > 1 and first != 1.0 and all(abs(c) == first for _, c in items):
        scale = first
        items = [(m, c / scale) for m, c in items]
    groups = {}
    for m, c in items:
        w = tuple((f, e) for f, e in m if _is_weight(f, e))
        groups.setdefault(w, []).append((m, c))
    head, tail = [], []
    for w, members in groups.items():
        if w and len(members) > 1:
            rest = [(tuple(fe for fe in m if fe not in w), c) for m, c in members]
            head.append((Mul(_mono_tree(w, 1.0), _sum_tree(rest)), 1.0))
        else:
            for m, c in members:
                is_psi = any(isinstance(f, Psi) for f, _ in m)
                (tail if is_psi else head).append((m, c))
    out = None
    for item, c in head + tail:
        tree = item if isinstance(item, Node) else _mono_tree(item, abs(c))
        if out is None:
            out = tree if c > 0 else _mono_tree(item, c)
        else:
            out = Sub(out, tree) if c < 0 else Add(out, tree)
    if scale != 1.0:
        out = Mul(Const(scale), out)
    return out


# passes
def _is_cond_prob(f) -> bool:
    return (
        isinstance(f, CondExp)
        and isinstance(f.target, Indicator)
        and bool(f.given)
        and not {v for v, _ in f.target.assign} & {v for v, _ in f.given}
    )


def _bump(d, f, e):
    if isinstance(f, Mass) and not f.assign:
        return
    d[f] = d.get(f, 0) + e
    if d[f] == 0:
        del d[f]


def _ratio_mono(m):
    """Rewrite the masses of one monomial as products of conditional probabilities.

    Conditional probabilities ``p(U | S)`` are first expanded to
    ``p(U, S) / p(S)``.  Each denominator mass is then paired with the largest
    numerator mass on a subset of its variables, giving ``1 / p(T \\ S | S)``;
    leftover numerator masses are paired with the largest denominator mass on a
    subset, giving ``p(S \\ T | T)``.
    """
    d = {}
    for f, e in m:
        if _is_cond_prob(f):
            _bump(d, Mass(tuple(sorted(f.target.assign + f.given))), e)
            _bump(d, Mass(f.given), -e)
        else:
            _bump(d, f, e)

    def masses(sign):
        fs = [f for f, e in d.items() if isinstance(f, Mass) and (e > 0) == (sign > 0)]
        return sorted(fs, key=factor_key)

    for outer_sign in (-1, 1):
        changed = True
        while changed:
            changed = False
            for big in masses(outer_sign):
                bset = set(big.assign)
                subs = [s for s in masses(-outer_sign) if set(s.assign) < bset]
                if not subs:
                    continue
                small = max(subs, key=lambda s: len(s.assign))
                cond = CondExp(Indicator(tuple(sorted(bset - set(small.assign)))), small.assign)
                _bump(d, big, -outer_sign)
                _bump(d, small, outer_sign)
                _bump(d, cond, outer_sign)
                changed = True
                break
    return d


def _ratio_poly(p: dict) -> dict:
    out = {}
    for m, c in p.items():
        d = _ratio_mono(m)
        d = {(_ratio_sum(f) if isinstance(f, SumF) else f): e for f, e in d.items()}
        _add_into(out, _make_term(d, c))
    return out


def _ratio_sum(f: SumF) -> SumF:
    return SumF(f.var, f.domain, freeze(_ratio_poly(dict(f.body))))


def _divides(r, m):
    """Quotient ``m / r`` when every factor of ``r`` occurs in ``m`` without a sign flip."""
    q = dict(m)
    for f, e in r:
        have = q.get(f, 0)
        if isinstance(f, Indicator):
            if have <= 0 or e <= 0:
                return None
            del q[f]
            continue
        if have == 0 or (have > 0) != (e > 0) or abs(have) < abs(e):
            return None
        q[f] = have - e
        if q[f] == 0:
            del q[f]
    return q


def _recognize_psi(p: dict, root: dict) -> dict:
    root_items = list(freeze(root))
    if not root_items:
        return p
    r0, c0 = root_items[0]
    out = dict(p)
    progress = True
    while progress:
        progress = False
        for m, c in freeze(out):
            q = _divides(r0, m)
            if q is None:
                continue
            qc = c / c0
            ok = True
            for r, cr in root_items:
                d = _mono_mul(tuple(q.items()), r)
                if d is None:
                    ok = False
                    break
                term = _make_term(d, qc * cr)
                ((tm, tc),) = term.items()
                have = out.get(tm)
                if have is None or abs(have - tc) > 1e-12 * max(1.0, abs(tc)):
                    ok = False
                    break
            if ok:
                for r, cr in root_items:
                    _add_into(out, _make_term(_mono_mul(tuple(q.items()), r), qc * cr), -1.0)
                q = dict(q)
                q[Psi()] = q.get(Psi(), 0) + 1
                _add_into(out, _make_term(q, qc))
                progress = True
                break
    return out


@dataclass(frozen=True)
class PassResult:
    rule: str
    before: Node
    after: Node
    notes: tuple = ()


def run_pass(rule: str, tree, functional=None):
    """Apply one named pass to ``tree``; returns ``(new_tree, notes)``."""
    if rule == "expand":
        return poly_to_tree(to_poly(tree)), ()
    if rule == "collapse-indicator-sum":
        ctx = _Context(collapse=True)
        return poly_to_tree(to_poly(tree, ctx)), tuple(dict.fromkeys(ctx.notes))
    if rule == "conditional-ratio":
        return poly_to_tree(_ratio_poly(to_poly(tree))), ()
    if rule == "recognize-psi":
        if functional is None:
            return tree, ()
        return poly_to_tree(_recognize_psi(to_poly(tree), _ratio_poly(to_poly(functional)))), ()
    raise ValueError(f"unknown simplification pass {rule!r}")


PASSES = ("expand", "collapse-indicator-sum", "conditional-ratio", "recognize-psi")


def simplify_steps(tree, functional=None) -> list:
    """Run every pass in order, returning the passes that changed the tree."""
    steps = []
    for rule in PASSES:
        after, notes = run_pass(rule, tree, functional)
        if after != tree or notes:
            steps.append(PassResult(rule, tree, after, notes))
        tree = after
    return steps


def simplify(expr):
    """Simplified influence function (or plain tree); semantics are preserved."""
    if isinstance(expr, InfluenceExpr):
        steps = simplify_steps(expr.tree, expr.functional)
        return InfluenceExpr(steps[-1].after if steps else expr.tree, expr.functional)
    steps = simplify_steps(expr)
    return steps[-1].after if steps else expr
