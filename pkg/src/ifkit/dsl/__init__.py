"""Functional DSL: parsing, symbolic influence functions, evaluation and checking."""
from .check import AtomCheck, CheckReport, check_if
from .derive import DerivationTrace, TraceStep, derive_if
from .evaluate import evaluate_functional, evaluate_if, if_values
from .nodes import InfluenceExpr
from .parser import parse_functional
from .render import render
from .simplify import simplify

__all__ = [
    "AtomCheck",
    "CheckReport",
    "DerivationTrace",
    "InfluenceExpr",
    "TraceStep",
    "check_if",
    "derive_if",
    "evaluate_functional",
    "evaluate_if",
    "if_values",
    "parse_functional",
    "render",
    "simplify",
]
