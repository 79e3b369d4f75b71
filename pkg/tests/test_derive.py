import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import ATE_TEXT, DENSITY_TEXT, MEAN_TEXT, positive_dists
from ifkit.catalog import ENTRY_IDS, get_entry
from ifkit.dist import gateaux_derivative, make_discrete, random_positive, uniform
from ifkit.dsl import (
    InfluenceExpr,
    check_if,
    derive_if,
    evaluate_functional,
    evaluate_if,
    if_values,
    parse_functional,
    render,
    simplify,
)
from ifkit.dsl.nodes import (
    Add,
    Apply,
    Bound,
    CondExp,
    Const,
    DataVar,
    Div,
    Indicator,
    Mass,
    Mul,
    Sub,
    SumOver,
)
from ifkit.errors import DivideByZero, UnsupportedNode, ZeroConditioningMass

UNEQUAL = make_discrete({"z": 2}, [((0,), 0.25), ((1,), 0.75)])
Y_MOSTLY_ONE = make_discrete({"y": 2}, [((0,), 0.25), ((1,), 0.75)])
DSL_ENTRIES = [i for i in ENTRY_IDS if get_entry(i).dsl is not None]
FIRST_STAGE = parse_functional(get_entry("late_denominator").dsl)


def draw(entry, rng):
    """Random positive distribution; ratio entries need a first stage of at least 0.05."""
    while True:
        P = random_positive(entry.dsl_schema, rng)
        if not entry.is_ratio or abs(evaluate_functional(FIRST_STAGE, P)) >= 0.05:
            return P


def derived(text):
    return derive_if(parse_functional(text))[0]


def oracle(expr, P, atom):
    return gateaux_derivative(lambda Q: evaluate_functional(expr, Q), P, atom)


class TestDerive:
    def test_mean_is_y_minus_psi(self):
        assert str(derived(MEAN_TEXT)) == "Y - psi"

    def test_density_is_twice_centered_mass(self):
        assert str(derived(DENSITY_TEXT)) == "2 * (p(z=Z) - psi)"

    def test_ate_form(self):
        assert str(derived(ATE_TEXT)) == (
            "1(a=1) / p(a=1 | x=X) * (Y - E[y | a=1, x=X]) + E[y | a=1, x=X] - psi"
        )

    def test_ate_trace_rules_and_replay(self):
        phi, trace = derive_if(parse_functional(ATE_TEXT))
        rules = [s.rule for s in trace.steps]
        assert rules[:4] == ["sum-over", "product", "condexp-block", "mass-block"]
        assert trace.replay() == phi.tree
        doc = json.loads(trace.dumps())
        assert doc["functional"] == render(parse_functional(ATE_TEXT))
        assert all({"rule", "before", "after"} <= set(s) for s in doc["steps"])

    def test_unsimplified_replays_too(self):
        phi, trace = derive_if(parse_functional(ATE_TEXT), simplify=False)
        assert trace.replay() == phi.tree

    def test_constant_has_zero_influence(self):
        phi = derive_if(Const(3.0))[0]
        assert evaluate_if(phi, uniform({"z": 2}), (1,)) == 0.0

    def test_quotient_rule_trace(self):
        _, trace = derive_if(parse_functional("p(x=1) / p(y=1)"))
        assert trace.steps[0].rule == "quotient"

    def test_no_derivative_registered(self):
        with pytest.raises(UnsupportedNode):
            derive_if(parse_functional("abs(p(x=1))"))

    def test_unknown_function(self):
        with pytest.raises(UnsupportedNode):
            derive_if(Apply("foo", Const(1.0)))

    def test_ambiguous_collapse_is_flagged(self):
        phi, trace = derive_if(parse_functional("sum_x { p(y=x) * p(x=x) }"))
        notes = [n for s in trace.steps for n in s.notes]
        assert any("left unsimplified" in n for n in notes)
        assert "sum_x" in str(phi)
        P = random_positive({"x": 2, "y": 2}, np.random.default_rng(3))
        assert check_if(parse_functional("sum_x { p(y=x) * p(x=x) }"), P).passed

    @pytest.mark.parametrize("entry_id", DSL_ENTRIES)
    def test_catalog_expressions_are_pointwise_derivatives(self, entry_id):
        entry = get_entry(entry_id)
        expr = parse_functional(entry.dsl)
        phi = derive_if(expr)[0]
        rng = np.random.default_rng(len(entry_id))
        for _ in range(3):
            P = draw(entry, rng)
            for atom, _m in P.items():
                assert abs(evaluate_if(phi, P, atom) - oracle(expr, P, atom)) <= 1e-6


class TestSimplify:
    def test_indicator_sum_collapses(self):
        mu = CondExp(DataVar("y"), (("x", Bound("x")),))
        tree = SumOver("x", Mul(mu, Indicator((("x", Bound("x")),))), "x")
        assert render(simplify(tree)) == "E[y | x=X]"

    def test_constant_folding(self):
        assert simplify(Mul(Const(2.0), Const(3.0))) == Const(6.0)

    def test_mass_ratio_cancels(self):
        assert simplify(Div(Mass((("x", 1),)), Mass((("x", 1),)))) == Const(1.0)

    @pytest.mark.parametrize("text", [ATE_TEXT, DENSITY_TEXT, MEAN_TEXT])
    def test_idempotent(self, text):
        phi = derived(text)
        assert simplify(phi) == phi
        assert simplify(simplify(phi.tree)) == simplify(phi.tree)

    @pytest.mark.parametrize("entry_id", DSL_ENTRIES)
    def test_preserves_values(self, entry_id):
        entry = get_entry(entry_id)
        expr = parse_functional(entry.dsl)
        raw = derive_if(expr, simplify=False)[0]
        done = simplify(raw)
        P = draw(entry, np.random.default_rng(7))
        np.testing.assert_allclose(if_values(done, P), if_values(raw, P), rtol=1e-12, atol=1e-12)


class TestEvaluate:
    def test_density_uniform(self):
        assert evaluate_functional(parse_functional(DENSITY_TEXT), uniform({"z": 2})) == 0.5

    def test_density_unequal(self):
        assert evaluate_functional(parse_functional(DENSITY_TEXT), UNEQUAL) == pytest.approx(0.625, abs=1e-15)

    def test_mean(self):
        assert evaluate_functional(parse_functional(MEAN_TEXT), Y_MOSTLY_ONE) == pytest.approx(0.75, abs=1e-15)

    def test_density_if_values(self):
        phi = derived(DENSITY_TEXT)
        assert evaluate_if(phi, UNEQUAL, (0,)) == pytest.approx(-0.75, abs=1e-14)
        assert evaluate_if(phi, UNEQUAL, (0,)) == pytest.approx(oracle(parse_functional(DENSITY_TEXT), UNEQUAL, (0,)), abs=1e-9)
        for z in [(0,), (1,)]:
            assert evaluate_if(phi, uniform({"z": 2}), z) == pytest.approx(0.0, abs=1e-15)

    def test_mean_if_value(self):
        phi = derived(MEAN_TEXT)
        assert evaluate_if(phi, Y_MOSTLY_ONE, (1,)) == pytest.approx(0.25, abs=1e-15)
        assert oracle(parse_functional(MEAN_TEXT), Y_MOSTLY_ONE, (1,)) == pytest.approx(0.25, abs=1e-9)

    def test_zero_conditioning_mass(self):
        P = make_discrete({"x": 2, "y": 2}, [((0, 0), 0.5), ((0, 1), 0.5)])
        with pytest.raises(ZeroConditioningMass):
            evaluate_functional(parse_functional("E[y | x=1]"), P)

    def test_divide_by_zero(self):
        with pytest.raises(DivideByZero):
            evaluate_functional(parse_functional("p(x=1) / (p(x=1) - p(x=1))"), uniform({"x": 2}))

    def test_ate_brute_force(self, rng):
        P = random_positive({"x": 3, "a": 2, "y": 3}, rng)
        t = P.table
        brute = sum(
            t[x].sum() * (t[x, 1] * np.arange(3)).sum() / t[x, 1].sum() for x in range(3)
        )
        assert evaluate_functional(parse_functional(ATE_TEXT), P) == pytest.approx(brute, abs=1e-14)


class TestCheck:
    def test_ate_passes(self, rng):
        report = check_if(parse_functional(ATE_TEXT), random_positive({"x": 2, "a": 2, "y": 2}, rng), tol=1e-6)
        assert report.passed
        assert len(report.rows) == 8

    def test_density_gap(self):
        report = check_if(parse_functional(DENSITY_TEXT), UNEQUAL, tol=1e-6)
        assert report.passed and report.max_gap <= 1e-9

    def test_dropping_regression_term_fails(self, rng):
        expr = parse_functional(ATE_TEXT)
        phi = derived(ATE_TEXT)
        # keep only the weighted residual and -psi
        weighted = phi.tree.left.left
        assert "1(a=1)" in render(weighted)
        broken = InfluenceExpr(Sub(weighted, phi.tree.right), expr)
        report = check_if(expr, random_positive({"x": 2, "a": 2, "y": 2}, rng), ifexpr=broken)
        assert not report.passed
        assert max(r.gap for r in report.rows) > 1e-3
        doc = report.to_json()
        assert len(doc["atoms"]) == 8 and doc["passed"] is False

    def test_tiny_tolerance_fails(self, rng):
        report = check_if(parse_functional(ATE_TEXT), random_positive({"x": 2, "a": 2, "y": 2}, rng), tol=1e-30)
        assert not report.passed


@settings(max_examples=150)
@given(st.sampled_from(DSL_ENTRIES), st.integers(0, 2**32 - 1))
def test_mean_zero_under_positive_distributions(entry_id, seed):
    entry = get_entry(entry_id)
    phi = derive_if(parse_functional(entry.dsl))[0]
    P = draw(entry, np.random.default_rng(seed))
    assert abs(float(np.sum(P.table * if_values(phi, P)))) <= 1e-9


@given(positive_dists({"x": 2, "a": 2, "y": 3}), st.floats(-3, 3), st.floats(-3, 3))
def test_linearity(P, a, b):
    first = parse_functional(ATE_TEXT)
    second = parse_functional("sum_x { E[a | x=x] * p(x=x) }")
    combo = Add(Mul(Const(a), first), Mul(Const(b), second))
    lhs = if_values(derive_if(combo)[0], P)
    rhs = a * if_values(derive_if(first)[0], P) + b * if_values(derive_if(second)[0], P)
    np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-12)


@given(positive_dists({"x": 2, "a": 2, "y": 3}))
def test_chain_rule_for_log(P):
    expr = parse_functional(ATE_TEXT)
    psi = evaluate_functional(expr, P)
    logged = if_values(derive_if(Apply("log", expr))[0], P)
    np.testing.assert_allclose(logged, if_values(derive_if(expr)[0], P) / psi, rtol=0, atol=1e-12)


@given(positive_dists({"x": 2, "y": 2}), st.sampled_from(["sqrt", "exp", "square", "reciprocal"]))
def test_chain_rule_matches_oracle_for_every_function(P, name):
    expr = Apply(name, parse_functional("E[y | x=1] + p(x=0)"))
    phi = derive_if(expr)[0]
    for atom, _m in P.items():
        assert abs(evaluate_if(phi, P, atom) - oracle(expr, P, atom)) <= 1e-6
