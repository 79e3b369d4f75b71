"""Registry of functionals with closed-form influence functions.

Each :class:`CatalogEntry` bundles

* a nuisance manifest (what must be estimated, from which roles, on which rows),
* the uncentered influence function ``phi_u = phi + psi`` evaluated row-wise,
* the plug-in term whose average is the plug-in estimate,
* optionally a closed-form second-order remainder,
* a DSL template for cross-checking on discrete distributions.

Nuisances are plain callables of a feature matrix.  A bundle is a mapping from
manifest names to such callables; the density nuisance additionally exposes
``square_integral()``.

Expectations under a distribution go through a :class:`Measure`: weighted
support rows.  For a :class:`~ifkit.dist.DiscreteDist` the rows are its atoms.
For continuous data-generating processes the rows are quadrature nodes with
the outcome replaced by its conditional mean (every uncentered influence
function here is affine in the outcome), and ``y_var`` carries the
conditional variance needed for second moments.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

from .data import Dataset
from .dist import DiscreteDist
from .errors import PositivityViolation, QuadratureFailure, UnknownFunctional, ZeroConditioningMass

DEFAULT_FLOOR = 0.01
DATA_ROLES = ("x", "a", "y", "r", "x2", "a2")


@dataclass(frozen=True)
class NuisanceSpec:
    """One manifest entry.

    ``target`` is a data role or the name of an earlier nuisance whose fitted
    values are regressed (sequential regressions).  ``subset`` restricts the
    training rows to fixed levels of integer roles.  ``floor`` is the
    positivity floor of a conditional probability; ``two_sided`` also bounds
    it away from one.
    """

    name: str
    kind: str
    target: str
    features: tuple = ("x",)
    subset: tuple = ()
    floor: Optional[float] = None
    two_sided: bool = False
    plugin_only: bool = False
    description: str = ""

    @property
    def bounds(self) -> Optional[tuple]:
        if self.floor is None:
            return None
        return (self.floor, 1.0 - self.floor if self.two_sided else 1.0)

    def mask(self, data: Dataset) -> np.ndarray:
        m = np.ones(data.n, dtype=bool)
        for role, level in self.subset:
            m &= data.role(role) == level
        return m

    def to_json(self) -> dict:
        doc = {
            "name": self.name,
            "kind": self.kind,
            "target": self.target,
            "features": list(self.features),
            "subset": {r: int(v) for r, v in self.subset},
            "description": self.description,
        }
        if self.bounds is not None:
            doc["range"] = list(self.bounds)
            doc["floor"] = self.floor
        return doc


def _prob(name, target, features=("x",), subset=(), two_sided=False, description=""):
    return NuisanceSpec(name, "conditional-probability", target, features, tuple(subset),
                        DEFAULT_FLOOR, two_sided, False, description)


def _mean(name, target, features=("x",), subset=(), plugin_only=False, description=""):
    return NuisanceSpec(name, "conditional-mean", target, features, tuple(subset),
                        None, False, plugin_only, description)


@dataclass(frozen=True, eq=False)
class Measure:
    """Weighted support rows standing in for a distribution."""

    data: Dataset
    weights: np.ndarray
    y_var: Optional[np.ndarray] = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (self.data.n,) or np.any(w < 0):
            raise QuadratureFailure("measure weights must be nonnegative, one per row")
        if abs(w.sum() - 1.0) > 1e-9:
            raise QuadratureFailure(f"measure weights sum to {w.sum():.12g}, not 1")
        object.__setattr__(self, "weights", w)

    def mean(self, values) -> float:
        return float(np.dot(self.weights, np.broadcast_to(values, self.weights.shape)))


@dataclass(frozen=True, eq=False)
class CatalogEntry:
    id: str
    description: str
    manifest: tuple
    roles: tuple
    phi: Optional[Callable] = field(default=None, repr=False)
    plugin_term: Optional[Callable] = field(default=None, repr=False)
    closed_remainder: Optional[Callable] = field(default=None, repr=False)
    dsl: Optional[str] = None
    dsl_schema: Optional[dict] = None
    parts: tuple = ()
    options: tuple = ()

    @property
    def is_ratio(self) -> bool:
        return bool(self.parts)

    @property
    def names(self) -> tuple:
        return tuple(s.name for s in self.manifest)

    def spec(self, name) -> NuisanceSpec:
        for s in self.manifest:
            if s.name == name:
                return s
        raise KeyError(name)

    def to_json(self) -> dict:
        doc = {
            "id": self.id,
            "description": self.description,
            "roles": list(self.roles),
            "manifest": [s.to_json() for s in self.manifest],
            "remainder": "closed-form" if self.closed_remainder else "identity",
        }
        if self.dsl:
            doc["dsl"] = self.dsl
            doc["dsl_schema"] = dict(self.dsl_schema)
        if self.parts:
            doc["parts"] = [p.id for p in self.parts]
        if self.options:
            doc["options"] = dict(self.options)
        return doc


# nuisance evaluation
def nuisance_values(entry: CatalogEntry, bundle: Mapping, data: Dataset, check: bool = True) -> dict:
    """Every manifest nuisance evaluated on every row of ``data``.

    Raises ``PositivityViolation`` when a conditional probability falls
    outside its declared range (values are reported, never silently fixed).
    """
    out = {}
    for s in entry.manifest:
        if s.kind == "density":
            out[s.name] = np.asarray(bundle[s.name](data.features(s.features)[:, 0]), dtype=float)
            continue
        v = np.asarray(bundle[s.name](data.features(s.features)), dtype=float)
        if v.shape != (data.n,):
            raise ValueError(f"nuisance {s.name!r} returned shape {v.shape}, expected ({data.n},)")
        if check and s.bounds is not None:
            lo, hi = s.bounds
            bad = (v < lo) | (v > hi)
            if np.any(bad):
                raise PositivityViolation(
                    f"{s.name} outside [{lo:g}, {hi:g}] on {int(bad.sum())} rows (min {v.min():.4g}, max {v.max():.4g})")
        out[s.name] = v
    return out


def eval_uncentered_if(entry: CatalogEntry, bundle: Mapping, data: Dataset):
    """Row-wise uncentered influence function.

    For a ratio entry the result is a ``(numerator, denominator)`` pair.
    """
    if isinstance(entry, str):
        entry = get_entry(entry)
    vals = nuisance_values(entry, bundle, data)
    if entry.is_ratio:
        return tuple(p.phi(vals, data, bundle) for p in entry.parts)
    return entry.phi(vals, data, bundle)


def plugin_values(entry: CatalogEntry, bundle: Mapping, data: Dataset):
    """Row-wise plug-in term (scalar for the density entry)."""
    vals = nuisance_values(entry, bundle, data)
    if entry.is_ratio:
        return tuple(p.plugin_term(vals, data, bundle) for p in entry.parts)
    return entry.plugin_term(vals, data, bundle)


# entries
def _mean_treated_phi(v, d, b):
    return d.a / v["pi"] * (d.y - v["mu"]) + v["mu"]


def _mean_treated_rem(h, t, m):
    # int (1/pi_hat - 1/pi)(mu - mu_hat) pi dP
    return m.mean((1.0 / h["pi"] - 1.0 / t["pi"]) * (t["mu"] - h["mu"]) * t["pi"])


def _ate_phi(v, d, b):
    treated = d.a / v["pi"] * (d.y - v["mu1"]) + v["mu1"]
    control = (1 - d.a) / (1 - v["pi"]) * (d.y - v["mu0"]) + v["mu0"]
    return treated - control


def _ate_rem(h, t, m):
    treated = (1.0 / h["pi"] - 1.0 / t["pi"]) * (t["mu1"] - h["mu1"]) * t["pi"]
    control = (1.0 / (1 - h["pi"]) - 1.0 / (1 - t["pi"])) * (t["mu0"] - h["mu0"]) * (1 - t["pi"])
    return m.mean(treated - control)


def _ecc_phi(v, d, b):
    return (d.a - v["pi"]) * (d.y - v["mu"])


def _ecc_rem(h, t, m):
    return m.mean((h["pi"] - t["pi"]) * (h["mu"] - t["mu"]))


def _density_phi(v, d, b):
    return 2.0 * v["p"] - b["p"].square_integral()


def _density_plugin(v, d, b):
    return b["p"].square_integral()


def _density_rem(h, t, m):
    # -int (p_hat - p)^2, written as an expectation under p
    return -m.mean((h["p"] - t["p"]) ** 2 / t["p"])


def _gformula_phi(v, d, b):
    a1, a2 = d.a, d.a2
    stage2 = a1 * a2 / (v["pi1"] * v["pi2"]) * (d.y - v["mu11"])
    stage1 = a1 / v["pi1"] * (v["mu11"] - v["nu"])
    return stage2 + stage1 + v["nu"]


def _iv_phi(target, arm1, arm0):
    def phi(v, d, b):
        r = d.r
        w = np.where(r == 1, v["varpi"], 1.0 - v["varpi"])
        fitted = np.where(r == 1, v[arm1], v[arm0])
        return (2 * r - 1) / w * (d.role(target) - fitted) + v[arm1] - v[arm0]

    return phi


def _diff(arm1, arm0):
    return lambda v, d, b: v[arm1] - v[arm0]


def _take(name):
    return lambda v, d, b: v[name]


@dataclass(frozen=True)
class LinearPolicy:
    """Stochastic treatment rule: ``P(A=1 | X=x) = intercept + slope * x1``."""

    intercept: float = 0.5
    slope: float = 0.0

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        x1 = X[:, 0] if X.ndim == 2 else X
        q = self.intercept + self.slope * x1
        if np.any((q < 0) | (q > 1)):
            raise ValueError("policy probabilities must lie in [0, 1]")
        return q

    def dsl(self) -> str:
        i, s = self.intercept, self.slope
        return f"a * ({i!r} + {s!r} * x) + (1 - a) * ({1 - i!r} - {s!r} * x)"


def _stochastic_phi(policy):
    def phi(v, d, b):
        q = policy(d.x)
        g = np.where(d.a == 1, q, 1.0 - q)
        pa = np.where(d.a == 1, v["pi"], 1.0 - v["pi"])
        mu = np.where(d.a == 1, v["mu1"], v["mu0"])
        return g / pa * (d.y - mu) + q * v["mu1"] + (1 - q) * v["mu0"]

    return phi


def _stochastic_plugin(policy):
    return lambda v, d, b: policy(d.x) * v["mu1"] + (1 - policy(d.x)) * v["mu0"]


_MEAN_TREATED = CatalogEntry(
    "mean_treated",
    "Treated-arm mean E{E(Y | X, A=1)} (missing-outcome functional)",
    (_prob("pi", "a", description="P(A=1 | X)"),
     _mean("mu", "y", subset=(("a", 1),), description="E(Y | X, A=1)")),
    ("x", "a", "y"),
    _mean_treated_phi,
    _take("mu"),
    _mean_treated_rem,
    "sum_x { E[y | x=x, a=1] * p(x=x) }",
    {"x": 3, "a": 2, "y": 3},
)

_ATE = CatalogEntry(
    "ate_contrast",
    "Average treatment effect E{E(Y | X, A=1) - E(Y | X, A=0)}",
    (_prob("pi", "a", two_sided=True, description="P(A=1 | X)"),
     _mean("mu1", "y", subset=(("a", 1),), description="E(Y | X, A=1)"),
     _mean("mu0", "y", subset=(("a", 0),), description="E(Y | X, A=0)")),
    ("x", "a", "y"),
    _ate_phi,
    _diff("mu1", "mu0"),
    _ate_rem,
    "sum_x { (E[y | x=x, a=1] - E[y | x=x, a=0]) * p(x=x) }",
    {"x": 3, "a": 2, "y": 3},
)

_ECC = CatalogEntry(
    "expected_cond_cov",
    "Expected conditional covariance E{cov(A, Y | X)}",
    (_mean("pi", "a", description="E(A | X)"),
     _mean("mu", "y", description="E(Y | X)"),
     _mean("mu1", "y", subset=(("a", 1),), plugin_only=True,
           description="E(Y | X, A=1), used only by the plug-in pi * (mu1 - mu)")),
    ("x", "a", "y"),
    _ecc_phi,
    lambda v, d, b: v["pi"] * (v["mu1"] - v["mu"]),
    _ecc_rem,
    "sum_x { (E[a * y | x=x] - E[a | x=x] * E[y | x=x]) * p(x=x) }",
    {"x": 3, "a": 2, "y": 3},
)

_DENSITY = CatalogEntry(
    "expected_density",
    "Expected density E{p(Z)} = int p^2 (Z is stored in the x1 column)",
    (NuisanceSpec("p", "density", "x", ("x",), description="density of Z"),),
    ("x",),
    _density_phi,
    _density_plugin,
    _density_rem,
    "sum_z { p(z=z) * p(z=z) }",
    {"z": 4},
)

_LATE_NUM = CatalogEntry(
    "late_numerator",
    "Instrument effect on the outcome E{E(Y | X, R=1) - E(Y | X, R=0)}",
    (_prob("varpi", "r", two_sided=True, description="P(R=1 | X)"),
     _mean("mu_r1", "y", subset=(("r", 1),), description="E(Y | X, R=1)"),
     _mean("mu_r0", "y", subset=(("r", 0),), description="E(Y | X, R=0)")),
    ("x", "r", "y"),
    _iv_phi("y", "mu_r1", "mu_r0"),
    _diff("mu_r1", "mu_r0"),
    None,
    "sum_x { (E[y | x=x, r=1] - E[y | x=x, r=0]) * p(x=x) }",
    {"x": 2, "r": 2, "y": 2},
)

_LATE_DEN = CatalogEntry(
    "late_denominator",
    "Instrument effect on treatment uptake E{E(A | X, R=1) - E(A | X, R=0)}",
    (_prob("varpi", "r", two_sided=True, description="P(R=1 | X)"),
     _mean("eta_r1", "a", subset=(("r", 1),), description="E(A | X, R=1)"),
     _mean("eta_r0", "a", subset=(("r", 0),), description="E(A | X, R=0)")),
    ("x", "r", "a"),
    _iv_phi("a", "eta_r1", "eta_r0"),
    _diff("eta_r1", "eta_r0"),
    None,
    "sum_x { (E[a | x=x, r=1] - E[a | x=x, r=0]) * p(x=x) }",
    {"x": 2, "r": 2, "a": 2},
)

_LATE = CatalogEntry(
    "late_ratio",
    "Local average treatment effect: ratio of the instrument effects on Y and on A",
    _LATE_NUM.manifest + _LATE_DEN.manifest[1:],
    ("x", "r", "a", "y"),
    parts=(_LATE_NUM, _LATE_DEN),
    dsl=("sum_x { (E[y | x=x, r=1] - E[y | x=x, r=0]) * p(x=x) }"
         " / sum_x { (E[a | x=x, r=1] - E[a | x=x, r=0]) * p(x=x) }"),
    dsl_schema={"x": 2, "r": 2, "a": 2, "y": 2},
)

_GFORMULA = CatalogEntry(
    "gformula_2t",
    "Two-timepoint g-formula E[E{E(Y | X1, A1=1, X2, A2=1) | X1, A1=1}]",
    (_prob("pi1", "a", description="P(A1=1 | X1)"),
     _prob("pi2", "a2", features=("x", "x2"), subset=(("a", 1),), description="P(A2=1 | X1, A1=1, X2)"),
     _mean("mu11", "y", features=("x", "x2"), subset=(("a", 1), ("a2", 1)),
           description="E(Y | X1, A1=1, X2, A2=1)"),
     _mean("nu", "mu11", subset=(("a", 1),),
           description="E{mu11(X1, X2) | X1, A1=1}, fit to the fitted mu11 values")),
    ("x", "a", "x2", "a2", "y"),
    _gformula_phi,
    _take("nu"),
    None,
    "sum_x { sum_x2 { E[y | x=x, a=1, x2=x2, a2=1] * p(x2=x2 | x=x, a=1) * p(x=x) } }",
    {"x": 2, "a": 2, "x2": 2, "a2": 2, "y": 2},
)


def stochastic_entry(policy: LinearPolicy = LinearPolicy()) -> CatalogEntry:
    """Mean outcome under the stochastic rule ``policy``."""
    return CatalogEntry(
        "stochastic_intervention",
        "Mean outcome when treatment is drawn from a stochastic policy q(X)",
        (_prob("pi", "a", two_sided=True, description="P(A=1 | X)"),
         _mean("mu1", "y", subset=(("a", 1),), description="E(Y | X, A=1)"),
         _mean("mu0", "y", subset=(("a", 0),), description="E(Y | X, A=0)")),
        ("x", "a", "y"),
        _stochastic_phi(policy),
        _stochastic_plugin(policy),
        None,
        "sum_x { sum_a { E[y | x=x, a=a] * (" + policy.dsl() + ") * p(x=x) } }",
        {"x": 2, "a": 2, "y": 3},
        options=(("policy_intercept", policy.intercept), ("policy_slope", policy.slope)),
    )


_REGISTRY = {e.id: e for e in (_MEAN_TREATED, _ATE, _ECC, _DENSITY, _LATE, _LATE_NUM, _LATE_DEN, _GFORMULA)}
ENTRY_IDS = ("mean_treated", "ate_contrast", "expected_cond_cov", "expected_density",
             "stochastic_intervention", "late_ratio", "late_numerator", "late_denominator", "gformula_2t")


def get_entry(id: str, policy: Optional[LinearPolicy] = None) -> CatalogEntry:
    """Registered entry; ``policy`` configures ``stochastic_intervention``."""
    if id == "stochastic_intervention":
        return stochastic_entry(policy or LinearPolicy())
    if policy is not None:
        raise ValueError(f"{id} takes no policy")
    try:
        return _REGISTRY[id]
    except KeyError:
        raise UnknownFunctional(f"unknown functional {id!r}; registered: {', '.join(ENTRY_IDS)}") from None


def list_entries() -> list:
    return [get_entry(i).to_json() for i in ENTRY_IDS]


# discrete distributions
_ROLE_OF = {"x": "x", "z": "x", "a": "a", "y": "y", "r": "r", "x2": "x2", "a2": "a2"}


def measure_from_dist(P: DiscreteDist) -> Measure:
    """Positive-mass atoms of ``P`` as a weighted dataset (level index = value)."""
    for name in P.schema.names:
        if name not in _ROLE_OF:
            raise ValueError(f"variable {name!r} has no data role; use {sorted(_ROLE_OF)}")
    grids = P.grids()
    keep = P.table > 0
    cols = {_ROLE_OF[k]: g[keep] for k, g in grids.items()}
    return Measure(Dataset(**cols), P.table[keep] / P.table[keep].sum())


class _Lookup:
    """Step function on a finite feature grid."""

    def __init__(self, keys, values, name):
        self.table = {tuple(k): float(v) for k, v in zip(keys, values)}
        self.name = name

    def __call__(self, X):
        X = np.asarray(X, dtype=float)
        X = X[:, None] if X.ndim == 1 else X
        try:
            return np.array([self.table[tuple(r)] for r in X])
        except KeyError as exc:
            raise ZeroConditioningMass(f"{self.name} is undefined at {exc.args[0]}: zero conditioning mass") from None


class _MassFunction(_Lookup):
    """Probability mass function; integrals are sums over its support."""

    def quadrature(self):
        return np.array(list(self.table)), np.ones(len(self.table))

    def square_integral(self) -> float:
        return float(sum(v * v for v in self.table.values()))


def grouped_mean(keys: np.ndarray, target: np.ndarray, weights: np.ndarray):
    """Weighted mean of ``target`` within each distinct row of ``keys``."""
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = inv.ravel()
    tot = np.bincount(inv, weights=weights, minlength=len(uniq))
    num = np.bincount(inv, weights=weights * target, minlength=len(uniq))
    ok = tot > 0
    return uniq[ok], num[ok] / tot[ok]


def exact_bundle(entry: CatalogEntry, P) -> dict:
    """Exact nuisances of ``P`` (a ``DiscreteDist`` or a ``Measure`` on a finite grid)."""
    m = P if isinstance(P, Measure) else measure_from_dist(P)
    d, w = m.data, m.weights
    bundle = {}
    for s in entry.manifest:
        if s.kind == "density":
            keys, inv = np.unique(d.features(s.features), axis=0, return_inverse=True)
            bundle[s.name] = _MassFunction(keys, np.bincount(inv.ravel(), weights=w), s.name)
            continue
        if s.target in bundle:
            target = bundle[s.target](d.features(entry.spec(s.target).features))
        else:
            target = d.role(s.target).astype(float)
        sel = s.mask(d)
        keys, vals = grouped_mean(d.features(s.features)[sel], target[sel], w[sel])
        bundle[s.name] = _Lookup(keys, vals, s.name)
    return bundle


# truth and remainder
def _resolve(entry, P, bundle_true=None):
    if isinstance(P, DiscreteDist):
        m = measure_from_dist(P)
        return m, bundle_true if bundle_true is not None else exact_bundle(entry, m)
    if isinstance(P, Measure):
        return P, bundle_true if bundle_true is not None else exact_bundle(entry, P)
    # data-generating process: quadrature measure and analytic nuisances
    return P.measure(entry), bundle_true if bundle_true is not None else P.true_bundle(entry)


def _mean_of(m, values):
    if np.ndim(values) == 0:
        return float(values)
    return m.mean(values)


def truth(entry: CatalogEntry, P, bundle_true=None) -> float:
    """psi(P): the average plug-in term under exact nuisances.

    ``P`` is a ``DiscreteDist`` (exact sum), a ``Measure``, or a data-generating
    process exposing ``measure(entry)`` and ``true_bundle(entry)``.
    """
    if isinstance(entry, str):
        entry = get_entry(entry)
    m, b = _resolve(entry, P, bundle_true)
    vals = nuisance_values(entry, b, m.data)
    if entry.is_ratio:
        num, den = (_mean_of(m, p.plugin_term(vals, m.data, b)) for p in entry.parts)
        return num / den
    return _mean_of(m, entry.plugin_term(vals, m.data, b))


def expected_if(entry: CatalogEntry, bundle: Mapping, P, bundle_true=None) -> float:
    """E_P[phi_u(Z; bundle)] for a non-ratio entry."""
    m, _ = _resolve(entry, P, bundle_true if bundle_true is not None else {})
    return m.mean(entry.phi(nuisance_values(entry, bundle, m.data), m.data, bundle))


def remainder(entry: CatalogEntry, bundle_hat: Mapping, bundle_true=None, P=None, closed_form: bool = True) -> float:
    """Second-order remainder R2(bundle_hat, truth).

    Uses the entry's closed form when one exists (and ``closed_form``),
    otherwise the defining identity ``E_P[phi_u(Z; bundle_hat)] - psi(P)``.
    """
    if isinstance(entry, str):
        entry = get_entry(entry)
    if entry.is_ratio:
        raise ValueError("remainders are defined per component of a ratio entry")
    m, bt = _resolve(entry, P, bundle_true)
    h = nuisance_values(entry, bundle_hat, m.data)
    t = nuisance_values(entry, bt, m.data)
    if entry.id == "expected_density" and np.any(t["p"] <= 0):
        raise QuadratureFailure("quadrature nodes must have positive true density")
    if all(np.array_equal(h[k], t[k]) for k in t) and _same_integrals(bundle_hat, bt):
        # R2 only sees nuisance values on the support, so it vanishes exactly
        return 0.0
    if closed_form and entry.closed_remainder is not None:
        return float(entry.closed_remainder(h, t, m))
    return expected_if(entry, bundle_hat, m) - truth(entry, m, bt)


def _same_integrals(a: Mapping, b: Mapping) -> bool:
    """Density nuisances also enter through their square integral."""
    for name, f in a.items():
        g = b.get(name)
        if hasattr(f, "square_integral") or hasattr(g, "square_integral"):
            if not (hasattr(f, "square_integral") and hasattr(g, "square_integral")):
                return False
            if f.square_integral() != g.square_integral():
                return False
    return True


def variance_of_if(entry: CatalogEntry, P, bundle_true=None) -> float:
    """var{phi(Z; P)} under the truth (the efficiency bound).

    On quadrature measures the outcome enters through its conditional mean and
    variance; phi_u is affine in Y, so its slope is recovered from two
    evaluations.
    """
    if isinstance(entry, str):
        entry = get_entry(entry)
    m, b = _resolve(entry, P, bundle_true)
    psi = truth(entry, m, b)
    vals = nuisance_values(entry, b, m.data)
    if entry.is_ratio:
        num, den = entry.parts
        psi_den = _mean_of(m, den.plugin_term(vals, m.data, b))

        def centered(d):
            return (num.phi(vals, d, b) - psi * den.phi(vals, d, b)) / psi_den
    else:

        def centered(d):
            return entry.phi(vals, d, b) - psi

    second = centered(m.data) ** 2
    if m.y_var is not None and m.data.has("y"):
        slope = centered(_with_y(m.data, np.ones(m.data.n))) - centered(_with_y(m.data, np.zeros(m.data.n)))
        second = second + slope ** 2 * m.y_var
    return m.mean(second)


def _with_y(d: Dataset, y) -> Dataset:
    return Dataset(x=d.x, a=d.a, y=y, r=d.r, x2=d.x2, a2=d.a2)


def perturb(bundle: Mapping, direction: Mapping, t: float) -> dict:
    """Bundle ``eta + t * h`` for a direction ``h`` given per nuisance name.

    Directions are callables of the feature matrix (or constants).
    """
    out = dict(bundle)
    for name, h in direction.items():
        base = bundle[name]
        out[name] = _Shifted(base, h, t)
    return out


class _Shifted:
    def __init__(self, base, h, t):
        self.base, self.h, self.t = base, h, float(t)

    def __call__(self, X):
        shift = self.h(X) if callable(self.h) else self.h
        return np.asarray(self.base(X), dtype=float) + self.t * np.asarray(shift, dtype=float)

    def quadrature(self):
        return self.base.quadrature()

    def square_integral(self) -> float:
        nodes, weights = self.quadrature()
        return float(np.dot(weights, self(nodes) ** 2))
