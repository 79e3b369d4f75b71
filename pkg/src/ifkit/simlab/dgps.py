"""Registered data-generating processes with known truths.

Continuous designs carry analytic nuisances and a Gauss-Legendre quadrature
measure; discrete designs carry their full joint table, from which exact
nuisances and truths follow by summation.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np
from numpy.polynomial.legendre import leggauss

from .. import catalog
from ..catalog import CatalogEntry, Measure, exact_bundle, measure_from_dist
from ..data import Dataset
from ..dist import DiscreteDist, Schema, make_discrete
from ..errors import UnknownDGP

GL_NODES = 20


def gauss_legendre(lo: float, hi: float, panels: int, nodes: int = GL_NODES):
    """Composite Gauss-Legendre nodes and weights on ``[lo, hi]``."""
    t, w = leggauss(nodes)
    edges = np.linspace(lo, hi, panels + 1)
    half = np.diff(edges) / 2.0
    mid = (edges[:-1] + edges[1:]) / 2.0
    x = (mid[:, None] + half[:, None] * t[None, :]).ravel()
    wx = (half[:, None] * w[None, :]).ravel()
    return x, wx


@dataclass(frozen=True, eq=False)
class DGPSpec:
    """A simulation design.

    ``functionals`` maps each supported functional id to a provenance note for
    its truth.  ``nuisances`` maps functional id to ``{name: callable}``.
    """

    id: str
    description: str
    functionals: dict
    sampler: Callable = field(repr=False)
    nuisances: Mapping = field(default_factory=dict, repr=False)
    quadrature: Optional[Callable] = field(default=None, repr=False)
    dist: Optional[DiscreteDist] = field(default=None, repr=False)
    positivity: tuple = ()

    def supports(self, functional: str) -> bool:
        return functional in self.functionals

    def sample(self, n: int, seed: int) -> Dataset:
        """``n`` i.i.d. rows; the stream is ``default_rng([seed, 1])``."""
        return self.sampler(int(n), np.random.default_rng([int(seed), 1]))

    def _check(self, entry: CatalogEntry):
        if entry.id not in self.functionals:
            raise ValueError(f"DGP {self.id} does not support {entry.id}; supported: {sorted(self.functionals)}")

    def measure(self, entry: CatalogEntry) -> Measure:
        self._check(entry)
        if self.dist is not None:
            return measure_from_dist(self.dist)
        return self.quadrature(entry)

    def true_bundle(self, entry: CatalogEntry) -> dict:
        self._check(entry)
        if self.dist is not None:
            return exact_bundle(entry, self.dist)
        key = "ate_contrast" if entry.id == "stochastic_intervention" else entry.id
        return dict(self.nuisances[key])

    def truth(self, entry) -> float:
        if isinstance(entry, str):
            entry = catalog.get_entry(entry)
        return catalog.truth(entry, self)

    def to_json(self) -> dict:
        return {"id": self.id, "description": self.description, "functionals": dict(self.functionals),
                "positivity": list(self.positivity)}


def _col(X):
    X = np.asarray(X, dtype=float)
    return X[:, 0] if X.ndim == 2 else X


# ate-smooth-1d
def _pi_smooth(X):
    return 0.3 + 0.4 * _col(X)


def _mu1_smooth(X):
    return _col(X) ** 2


def _mu0_smooth(X):
    return _col(X) / 2.0


def _sample_smooth(n, rng):
    x = rng.uniform(size=n)
    a = (rng.uniform(size=n) < _pi_smooth(x)).astype(int)
    mu = np.where(a == 1, _mu1_smooth(x), _mu0_smooth(x))
    y = (rng.uniform(size=n) < mu).astype(float)
    return Dataset(x=x, a=a, y=y)


def _binary_treatment_measure(x, wx, pi, mu1, mu0, var1, var0):
    xs = np.concatenate([x, x])
    a = np.concatenate([np.ones_like(x, dtype=int), np.zeros_like(x, dtype=int)])
    p = pi(x)
    w = np.concatenate([wx * p, wx * (1 - p)])
    y = np.concatenate([mu1(x), mu0(x)])
    v = np.concatenate([var1(x), var0(x)])
    return Measure(Dataset(x=xs, a=a, y=y), w, v)


def _smooth_measure(entry):
    x, wx = gauss_legendre(0.0, 1.0, 50)
    return _binary_treatment_measure(
        x, wx, _pi_smooth, _mu1_smooth, _mu0_smooth,
        lambda t: _mu1_smooth(t) * (1 - _mu1_smooth(t)), lambda t: _mu0_smooth(t) * (1 - _mu0_smooth(t)))


def _mu_marginal_smooth(X):
    p = _pi_smooth(X)
    return p * _mu1_smooth(X) + (1 - p) * _mu0_smooth(X)


ATE_SMOOTH = DGPSpec(
    "ate-smooth-1d",
    "X ~ U(0,1); P(A=1|X) = 0.3 + 0.4 X; Y | X, A=1 ~ Bernoulli(X^2); Y | X, A=0 ~ Bernoulli(X/2)",
    {
        "mean_treated": "1/3 = integral of x^2 over [0, 1]",
        "ate_contrast": "1/12 = 1/3 - 1/4",
        "expected_cond_cov": "E{pi(1 - pi)(X^2 - X/2)} by Gauss-Legendre quadrature",
        "stochastic_intervention": "q mu1 + (1 - q) mu0 averaged over X by quadrature (7/24 at q = 0.5)",
    },
    _sample_smooth,
    {
        "mean_treated": {"pi": _pi_smooth, "mu": _mu1_smooth},
        "ate_contrast": {"pi": _pi_smooth, "mu1": _mu1_smooth, "mu0": _mu0_smooth},
        "expected_cond_cov": {"pi": _pi_smooth, "mu": _mu_marginal_smooth, "mu1": _mu1_smooth},
    },
    _smooth_measure,
    positivity=(0.3, 0.7),
)


# ecc-randomized
def _sample_randomized(n, rng):
    x = rng.uniform(size=n)
    a = (rng.uniform(size=n) < 0.5).astype(int)
    y = a + rng.standard_normal(n)
    return Dataset(x=x, a=a, y=y)


def _const(c):
    return lambda X: np.full(len(_col(X)), float(c))


def _randomized_measure(entry):
    x, wx = gauss_legendre(0.0, 1.0, 4)
    return _binary_treatment_measure(x, wx, _const(0.5), _const(1.0), _const(0.0), _const(1.0), _const(1.0))


ECC_RANDOMIZED = DGPSpec(
    "ecc-randomized",
    "X ~ U(0,1); A ~ Bernoulli(0.5) independent of X; Y = A + N(0, 1)",
    {
        "expected_cond_cov": "0.25 = E{pi(1 - pi) tau} with pi = 0.5, tau = 1",
        "mean_treated": "1 = E(Y | A=1)",
        "ate_contrast": "1 = treatment effect",
    },
    _sample_randomized,
    {
        "mean_treated": {"pi": _const(0.5), "mu": _const(1.0)},
        "ate_contrast": {"pi": _const(0.5), "mu1": _const(1.0), "mu0": _const(0.0)},
        "expected_cond_cov": {"pi": _const(0.5), "mu": _const(0.5), "mu1": _const(1.0)},
    },
    _randomized_measure,
    positivity=(0.5, 0.5),
)


# density-gauss-mix
class GaussMixDensity:
    """Density of 0.5 N(-1, 1) + 0.5 N(1, 1) with a quadrature rule on [-12, 12]."""

    lo, hi, panels = -12.0, 12.0, 48

    def __call__(self, z):
        z = _col(z)
        c = 1.0 / np.sqrt(2.0 * np.pi)
        return 0.5 * c * (np.exp(-0.5 * (z + 1) ** 2) + np.exp(-0.5 * (z - 1) ** 2))

    def quadrature(self):
        return gauss_legendre(self.lo, self.hi, self.panels)

    def square_integral(self) -> float:
        z, w = self.quadrature()
        return float(np.dot(w, self(z) ** 2))


MIX_SQUARE_INTEGRAL = (1.0 + np.exp(-1.0)) / (4.0 * np.sqrt(np.pi))


def _sample_mix(n, rng):
    sign = np.where(rng.uniform(size=n) < 0.5, -1.0, 1.0)
    return Dataset(x=sign + rng.standard_normal(n))


def _mix_measure(entry):
    p = GaussMixDensity()
    z, w = p.quadrature()
    return Measure(Dataset(x=z), w * p(z))


DENSITY_MIX = DGPSpec(
    "density-gauss-mix",
    "Z ~ 0.5 N(-1, 1) + 0.5 N(1, 1), stored in column x1",
    {"expected_density": "int p^2 by Gauss-Legendre quadrature on [-12, 12]; closed form (1 + e^-1) / (4 sqrt(pi))"},
    _sample_mix,
    {"expected_density": {"p": GaussMixDensity()}},
    _mix_measure,
)


# discrete designs
def _sample_discrete(P: DiscreteDist):
    flat = P.table.ravel()
    names = P.schema.names

    def sample(n, rng):
        idx = rng.choice(flat.size, size=n, p=flat)
        levels = np.unravel_index(idx, P.schema.shape)
        cols = dict(zip(names, levels))
        if "y" in cols:
            cols["y"] = cols["y"].astype(float)
        return Dataset(**{k: v for k, v in cols.items()})

    return sample


def late_table() -> DiscreteDist:
    """Joint table of (X, R, A, Y) built from compliance classes.

    P(X=1) = 0.5; P(R=1|X) = 0.4 + 0.2 X.  Classes given X: compliers
    0.6 + 0.1 X, always-takers 0.2 - 0.1 X, never-takers 0.2.  A = R for
    compliers.  P(Y=1 | X, class, A): compliers 0.3 + 0.1 X + 0.4 A,
    always-takers 0.7, never-takers 0.2.  The complier effect is 0.4.
    """
    table = np.zeros((2, 2, 2, 2))
    for x in (0, 1):
        px = 0.5
        pr1 = 0.4 + 0.2 * x
        classes = {"complier": 0.6 + 0.1 * x, "always": 0.2 - 0.1 * x, "never": 0.2}
        for r in (0, 1):
            pr = pr1 if r else 1 - pr1
            for cls, pc in classes.items():
                a = {"complier": r, "always": 1, "never": 0}[cls]
                py1 = {"complier": 0.3 + 0.1 * x + 0.4 * a, "always": 0.7, "never": 0.2}[cls]
                table[x, r, a, 1] += px * pr * pc * py1
                table[x, r, a, 0] += px * pr * pc * (1 - py1)
    return make_discrete(Schema((("x", 2), ("r", 2), ("a", 2), ("y", 2))), table)


LATE_COMPLIER_EFFECT = 0.4

_LATE_P = late_table()

LATE_BINARY = DGPSpec(
    "late-binary",
    "Binary X, instrument R, treatment A, outcome Y with explicit compliance classes",
    {
        "late_ratio": "0.4: exact ratio of sums over the support (complier effect)",
        "late_numerator": "exact sum over the support",
        "late_denominator": "exact sum over the support (complier share)",
    },
    _sample_discrete(_LATE_P),
    dist=_LATE_P,
    positivity=(0.4, 0.6),
)


def gformula_table() -> DiscreteDist:
    """Joint table of (X1, A1, X2, A2, Y), all binary.

    P(X1=1) = 0.5; P(A1=1|x1) = 0.4 + 0.2 x1; P(X2=1|x1,a1) = 0.3 + 0.2 x1 + 0.3 a1;
    P(A2=1|x1,a1,x2) = 0.3 + 0.1 x1 + 0.2 a1 + 0.2 x2;
    P(Y=1|x1,a1,x2,a2) = 0.2 + 0.1 x1 + 0.2 a1 + 0.2 x2 + 0.2 a2.
    """
    table = np.zeros((2, 2, 2, 2, 2))
    for x1, a1, x2, a2, y in np.ndindex(table.shape):
        p = 0.5
        pa1 = 0.4 + 0.2 * x1
        p *= pa1 if a1 else 1 - pa1
        px2 = 0.3 + 0.2 * x1 + 0.3 * a1
        p *= px2 if x2 else 1 - px2
        pa2 = 0.3 + 0.1 * x1 + 0.2 * a1 + 0.2 * x2
        p *= pa2 if a2 else 1 - pa2
        py = 0.2 + 0.1 * x1 + 0.2 * a1 + 0.2 * x2 + 0.2 * a2
        p *= py if y else 1 - py
        table[x1, a1, x2, a2, y] = p
    return make_discrete(Schema((("x", 2), ("a", 2), ("x2", 2), ("a2", 2), ("y", 2))), table)


_GF_P = gformula_table()

GF_2T = DGPSpec(
    "gf-2t-binary",
    "Two-timepoint binary sequence X1, A1, X2, A2, Y with explicit transition tables",
    {"gformula_2t": "0.79: exact g-formula sum 0.5 (0.6 + 0.2 * 0.6) + 0.5 (0.7 + 0.2 * 0.8)"},
    _sample_discrete(_GF_P),
    dist=_GF_P,
    positivity=(0.3, 0.9),
)

_DGPS = {d.id: d for d in (ATE_SMOOTH, ECC_RANDOMIZED, DENSITY_MIX, LATE_BINARY, GF_2T)}
DGP_IDS = tuple(_DGPS)


def get_dgp(id: str) -> DGPSpec:
    try:
        return _DGPS[id]
    except KeyError:
        raise UnknownDGP(f"unknown DGP {id!r}; registered: {', '.join(DGP_IDS)}") from None
