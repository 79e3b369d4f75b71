"""Atom-wise comparison of a symbolic influence function with the numerical oracle."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..dist import DEFAULT_STEP, DiscreteDist, gateaux_detail
from ..errors import IFKitError
from .derive import derive_if
from .evaluate import evaluate_functional, if_values
from .nodes import InfluenceExpr


@dataclass(frozen=True)
class AtomCheck:
    atom: tuple
    symbolic: float
    oracle: float
    gap: float
    scheme: str


@dataclass(frozen=True)
class CheckReport:
    rows: tuple
    max_gap: float
    residual: float
    tol: float
    passed: bool

    def to_json(self) -> dict:
        return {
            "passed": self.passed,
            "tol": self.tol,
            "max_gap": self.max_gap,
            "mean_zero_residual": self.residual,
            "atoms": [
                {"atom": list(r.atom), "symbolic": r.symbolic, "oracle": r.oracle, "gap": r.gap, "scheme": r.scheme}
                for r in self.rows
            ],
        }


def check_if(expr, P: DiscreteDist, tol: float = 1e-6, ifexpr: Optional[InfluenceExpr] = None,
             step: float = DEFAULT_STEP) -> CheckReport:
    """Compare the derived (or supplied) influence function with the Gateaux oracle.

    Passes iff the largest atom-wise gap and the mean-zero residual
    ``|sum_z P(z) phi(z)|`` are both at most ``tol``.  Evaluation errors are
    re-raised with an ``atom`` attribute naming the offending atom.
    """
    if ifexpr is None:
        ifexpr, _ = derive_if(expr)
    try:
        sym = if_values(ifexpr, P)
    except IFKitError as exc:
        exc.atom = None
        raise

    def psi(Q):
        return evaluate_functional(expr, Q)

    rows = []
    for atom in P.schema.atoms():
        try:
            res = gateaux_detail(psi, P, atom, step)
        except IFKitError as exc:
            exc.atom = atom
            raise
        s = float(sym[atom])
        rows.append(AtomCheck(atom, s, res.value, abs(s - res.value), res.scheme))
    max_gap = max(r.gap for r in rows)
    residual = abs(float(np.sum(P.table * sym)))
    return CheckReport(tuple(rows), max_gap, residual, tol, bool(max_gap <= tol and residual <= tol))
