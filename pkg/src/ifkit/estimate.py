"""Plug-in, one-step and cross-fit one-step estimators with Wald intervals."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np
from scipy.stats import norm

from . import catalog
from .catalog import CatalogEntry, eval_uncentered_if, nuisance_values, remainder
from .data import Dataset
from .errors import (
    EmptyData,
    FoldTooSmallForLearner,
    KOutOfRange,
    KTooLarge,
    LearnerSpecError,
    TruthUnavailable,
    WeakDenominator,
)
from .nuisance import LearnerSpec, clamp, constant_fit, parse_learner

DEFAULT_K = 5
DEFAULT_LEVEL = 0.95
RATIO_FLOOR = 0.05


@dataclass(frozen=True, eq=False)
class FoldPlan:
    K: int
    seed: int
    assignment: np.ndarray

    @property
    def n(self) -> int:
        return len(self.assignment)

    def test_rows(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == k)

    def train_rows(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignment != k)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.K)


def make_fold_plan(n: int, K: int, seed: int) -> FoldPlan:
    """Seeded shuffle of the rows dealt round-robin into ``K`` folds."""
    if not 2 <= K <= n:
        raise KOutOfRange(f"need 2 <= K <= n, got K={K}, n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    assignment = np.empty(n, dtype=int)
    assignment[perm] = np.arange(n) % K
    return FoldPlan(int(K), int(seed), assignment)


@dataclass(frozen=True, eq=False)
class Estimate:
    """Point estimate with IF-based uncertainty.

    ``if_values`` holds the centered influence-function values behind the
    variance; ``bundles`` the per-fold nuisances (cross-fit only).
    """

    psi_hat: float
    if_variance: Optional[float]
    se: Optional[float]
    n: int
    ci: Optional[tuple]
    per_fold: tuple
    clamp_events: int
    method: str
    functional: str
    K: Optional[int] = None
    seed: Optional[int] = None
    learners: dict = field(default_factory=dict)
    level: float = DEFAULT_LEVEL
    plugin: Optional[float] = None
    components: Optional[dict] = None
    if_values: Optional[np.ndarray] = field(default=None, repr=False)
    bundles: tuple = field(default=(), repr=False)
    plan: Optional[FoldPlan] = field(default=None, repr=False)

    def to_json(self) -> dict:
        doc = {
            "functional": self.functional,
            "method": self.method,
            "n": self.n,
            "K": self.K,
            "seed": self.seed,
            "psi_hat": self.psi_hat,
            "se": self.se,
            "if_variance": self.if_variance,
            "level": self.level,
            "ci": None if self.ci is None else [self.ci[0], self.ci[1]],
            "per_fold": [dict(row) for row in self.per_fold],
            "clamp_events": self.clamp_events,
            "learners": dict(self.learners),
            "plugin": self.plugin,
        }
        if self.components is not None:
            doc["components"] = dict(self.components)
        return doc


def wald(psi: float, centered: np.ndarray, level: float):
    """Variance (ddof=1), standard error and Wald interval from centered IF values."""
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    n = len(centered)
    var = float(np.var(centered, ddof=1)) if n > 1 else 0.0
    se = float(np.sqrt(var / n))
    half = float(norm.ppf(0.5 + level / 2.0)) * se
    return var, se, (psi - half, psi + half, level)


def _mean(x, n):
    return float(x) if np.ndim(x) == 0 else float(np.mean(x))


def plugin_estimate(entry: CatalogEntry, bundle: Mapping, data: Dataset) -> Estimate:
    """Average of the plug-in term over all rows (``int p^2`` for the density)."""
    terms = catalog.plugin_values(entry, bundle, data)
    if entry.is_ratio:
        num, den = (_mean(t, data.n) for t in terms)
        psi = num / den
        comps = {"numerator": num, "denominator": den}
    else:
        psi, comps = _mean(terms, data.n), None
    return Estimate(psi, None, None, data.n, None, (), 0, "plugin", entry.id, components=comps)


def combine_ratio(phi_num, phi_den, level=DEFAULT_LEVEL, floor=RATIO_FLOOR):
    """Ratio of one-steps with its delta-method influence function.

    The ratio solves the estimating equation ``mean(phi_num - psi * phi_den) = 0``.
    """
    num, den = float(np.mean(phi_num)), float(np.mean(phi_den))
    if abs(den) < floor:
        raise WeakDenominator(f"denominator estimate {den:.4g} is below the floor {floor:g} (weak instrument)")
    psi = num / den
    centered = (phi_num - psi * phi_den) / den
    var, se, ci = wald(psi, centered, level)
    return psi, var, se, ci, centered, {"numerator": num, "denominator": den}


def onestep_estimate(entry: CatalogEntry, bundle: Mapping, data: Dataset, level: float = DEFAULT_LEVEL,
                     ratio_floor: float = RATIO_FLOOR) -> Estimate:
    """Mean of the uncentered IF on the same rows the nuisances describe."""
    phi = eval_uncentered_if(entry, bundle, data)
    plug = plugin_estimate(entry, bundle, data).psi_hat
    if entry.is_ratio:
        psi, var, se, ci, centered, comps = combine_ratio(*phi, level=level, floor=ratio_floor)
    else:
        psi = float(np.mean(phi))
        centered = phi - psi
        var, se, ci = wald(psi, centered, level)
        comps = None
    return Estimate(psi, var, se, data.n, ci, (), 0, "onestep", entry.id, level=level, plugin=plug,
                    components=comps, if_values=centered)


def late_full_onestep(entry: CatalogEntry, bundle: Mapping, data: Dataset, level: float = DEFAULT_LEVEL) -> Estimate:
    """Plug-in ratio plus the mean of its full influence function.

    With plug-in parts ``a`` and ``b`` and IF means ``mean(phi_num)``,
    ``mean(phi_den)`` this is ``a/b + (mean(phi_num) - a)/b - a (mean(phi_den) - b)/b^2``.
    """
    if not entry.is_ratio:
        raise ValueError("the full one-step applies to ratio entries")
    phi_num, phi_den = eval_uncentered_if(entry, bundle, data)
    t_num, t_den = catalog.plugin_values(entry, bundle, data)
    a, b = float(np.mean(t_num)), float(np.mean(t_den))
    plug = a / b
    influence = (phi_num - a) / b - a * (phi_den - b) / b ** 2
    psi = plug + float(np.mean(influence))
    centered = influence - np.mean(influence)
    var, se, ci = wald(psi, centered, level)
    return Estimate(psi, var, se, data.n, ci, (), 0, "full-onestep", entry.id, level=level, plugin=plug,
                    components={"numerator": a, "denominator": b}, if_values=centered)


# fitting
def _learner_for(learners: Mapping, name: str) -> LearnerSpec:
    spec = learners.get(name, learners.get("*"))
    if spec is None:
        raise LearnerSpecError(f"no learner given for nuisance {name!r}")
    return parse_learner(spec)


def fit_bundle(entry: CatalogEntry, learners: Mapping, train: Dataset, seed: int = 0,
               oracle: Optional[Mapping] = None, broken: Optional[Mapping] = None, skip=()) -> tuple:
    """Fit every manifest nuisance on ``train``.

    Sequential targets (a nuisance regressed on another's fitted values) use
    the earlier fit's predictions on the training rows.  Conditional
    probabilities are clamped to their declared range.  ``broken`` replaces
    named nuisances by constants.  Returns ``(bundle, fits)``.
    """
    broken = dict(broken or {})
    bundle, fits = {}, []
    for s in entry.manifest:
        if s.name in skip:
            continue
        if s.name in broken:
            bundle[s.name] = constant_fit(broken[s.name])
            continue
        learner = _learner_for(learners, s.name)
        truth_fn = None if oracle is None else oracle.get(s.name)
        mask = s.mask(train)
        if not mask.any():
            raise EmptyData(f"no training rows for {s.name} (subset {dict(s.subset)})")
        if s.kind == "density":
            bundle[s.name] = learner.fit_density(train.features(s.features)[mask, 0], oracle=truth_fn)
            continue
        X = train.features(s.features)[mask]
        if s.target in bundle:
            y = bundle[s.target](train.features(entry.spec(s.target).features))[mask]
        else:
            y = train.role(s.target)[mask]
        try:
            fit = learner.fit(X, y, seed=seed, oracle=truth_fn)
        except KTooLarge as exc:
            raise FoldTooSmallForLearner(f"{s.name}: {exc}") from None
        if s.bounds is not None:
            fit = clamp(fit, *s.bounds) if s.bounds[1] > s.bounds[0] else fit
            fits.append(fit)
        bundle[s.name] = fit
    return bundle, fits


def _fold(entry, learners, data, plan, k, seed, oracle, broken):
    train = data.take(plan.train_rows(k))
    test = data.take(plan.test_rows(k))
    bundle, fits = fit_bundle(entry, learners, train, seed ^ k, oracle, broken)
    phi = eval_uncentered_if(entry, bundle, test)
    plug = catalog.plugin_values(entry, bundle, test)
    events = sum(f.clamp_events for f in fits)
    return bundle, phi, plug, events


def crossfit_estimate(entry: CatalogEntry, learners: Mapping, data: Dataset, K: int = DEFAULT_K, seed: int = 0,
                      level: float = DEFAULT_LEVEL, oracle: Optional[Mapping] = None,
                      broken: Optional[Mapping] = None, threads: int = 1,
                      ratio_floor: float = RATIO_FLOOR, plan: Optional[FoldPlan] = None) -> Estimate:
    """K-fold cross-fit one-step.

    Nuisances are fit off-fold, the uncentered IF is averaged on-fold and the
    fold means are combined with weights ``N_k / n``.  The variance pools the
    IF values centered at the overall estimate.  Ratio entries combine the
    cross-fit numerator and denominator.  ``plan`` overrides the seeded fold
    assignment (its ``K`` must match).
    """
    if plan is None:
        plan = make_fold_plan(data.n, K, seed)
    elif plan.K != K or len(plan.assignment) != data.n:
        raise ValueError("fold plan does not match K and the number of rows")
    args = [(entry, learners, data, plan, k, seed, oracle, broken) for k in range(K)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda a: _fold(*a), args))
    else:
        results = [_fold(*a) for a in args]
    n = data.n
    sizes = plan.sizes()
    events = sum(r[3] for r in results)
    bundles = tuple(r[0] for r in results)
    learner_doc = {s.name: str(_learner_for(learners, s.name)) if s.name not in (broken or {})
                   else f"const({broken[s.name]})" for s in entry.manifest}
    common = dict(K=K, seed=seed, learners=learner_doc, level=level, bundles=bundles, plan=plan)

    def weighted(values):
        return sum(sizes[k] / n * values[k] for k in range(K))

    if entry.is_ratio:
        phi_num, phi_den = np.empty(n), np.empty(n)
        per_fold, nums, dens, pn, pd = [], [], [], [], []
        for k, (_, (fn, fd), (tn, td), _) in enumerate(results):
            rows = plan.test_rows(k)
            phi_num[rows], phi_den[rows] = fn, fd
            nums.append(float(np.mean(fn)))
            dens.append(float(np.mean(fd)))
            pn.append(_mean(tn, len(rows)))
            pd.append(_mean(td, len(rows)))
            per_fold.append({"fold": k, "n": int(sizes[k]), "numerator": nums[-1], "denominator": dens[-1]})
        num, den = weighted(nums), weighted(dens)
        if abs(den) < ratio_floor:
            raise WeakDenominator(f"denominator estimate {den:.4g} is below the floor {ratio_floor:g} (weak instrument)")
        psi = num / den
        centered = (phi_num - psi * phi_den) / den
        var, se, ci = wald(psi, centered, level)
        return Estimate(psi, var, se, n, ci, tuple(per_fold), events, "crossfit", entry.id,
                        plugin=weighted(pn) / weighted(pd),
                        components={"numerator": num, "denominator": den}, if_values=centered, **common)

    phi = np.empty(n)
    psis, plugs, per_fold = [], [], []
    for k, (_, fk, tk, _) in enumerate(results):
        rows = plan.test_rows(k)
        phi[rows] = fk
        psis.append(float(np.mean(fk)))
        plugs.append(_mean(tk, len(rows)))
        per_fold.append({"fold": k, "n": int(sizes[k]), "psi_hat": psis[-1]})
    psi = weighted(psis)
    centered = phi - psi
    var, se, ci = wald(psi, centered, level)
    return Estimate(psi, var, se, n, ci, tuple(per_fold), events, "crossfit", entry.id,
                    plugin=weighted(plugs), if_values=centered, **common)


def full_sample_estimate(entry: CatalogEntry, learners: Mapping, data: Dataset, seed: int = 0,
                         level: float = DEFAULT_LEVEL, oracle: Optional[Mapping] = None,
                         broken: Optional[Mapping] = None, ratio_floor: float = RATIO_FLOOR) -> Estimate:
    """One-step with nuisances fit and evaluated on the same rows.

    Diagnostic only: without sample splitting the interval relies on
    empirical-process conditions that are not checked.
    """
    bundle, fits = fit_bundle(entry, learners, data, seed, oracle, broken)
    est = onestep_estimate(entry, bundle, data, level, ratio_floor)
    learner_doc = {s.name: str(_learner_for(learners, s.name)) if s.name not in (broken or {})
                   else f"const({broken[s.name]})" for s in entry.manifest}
    return Estimate(est.psi_hat, est.if_variance, est.se, est.n, est.ci, (), sum(f.clamp_events for f in fits),
                    "onestep", entry.id, None, seed, learner_doc, level, est.plugin, est.components,
                    est.if_values, (bundle,))


def ratio_estimate(entry: CatalogEntry, learners: Mapping, data: Dataset, K: int = DEFAULT_K, seed: int = 0,
                   level: float = DEFAULT_LEVEL, floor: float = RATIO_FLOOR, **kw) -> Estimate:
    """Cross-fit ratio of one-steps for a ratio entry (default floor 0.05)."""
    if not entry.is_ratio:
        raise ValueError(f"{entry.id} is not a ratio functional")
    return crossfit_estimate(entry, learners, data, K, seed, level, ratio_floor=floor, **kw)


@dataclass(frozen=True)
class Decomposition:
    error: float
    s_star: float
    t1: float
    t2: float
    t1_direct: Optional[float] = None

    def to_json(self) -> dict:
        return {"error": self.error, "S_star": self.s_star, "T1": self.t1, "T2": self.t2,
                "T1_direct": self.t1_direct}


def decompose_error(entry: CatalogEntry, estimate: Estimate, data: Dataset, P=None, bundle_true=None) -> Decomposition:
    """Split ``psi_hat - psi`` into S*, T1 and T2.

    S* is the centered mean of the IF under exact nuisances, T2 the
    ``N_k / n``-weighted fold remainders and T1 the residual.  ``T1_direct``
    recomputes T1 as the weighted fold means of
    ``(E_n - E)[phi_u(fold nuisances) - phi_u(exact)]``.
    """
    if P is None:
        raise TruthUnavailable("error decomposition needs the true distribution")
    if entry.is_ratio:
        raise TruthUnavailable("error decomposition is defined for non-ratio functionals")
    if not estimate.bundles or estimate.plan is None:
        raise ValueError("decomposition needs a cross-fit estimate with its fold bundles")
    m, bt = catalog._resolve(entry, P, bundle_true)
    psi = catalog.truth(entry, m, bt)
    phi_true = eval_uncentered_if(entry, bt, data)
    s_star = float(np.mean(phi_true)) - psi
    plan, n = estimate.plan, data.n
    sizes = plan.sizes()
    exact_on_measure = entry.phi(nuisance_values(entry, bt, m.data), m.data, bt)
    t2 = 0.0
    t1_direct = 0.0
    for k, b in enumerate(estimate.bundles):
        t2 += sizes[k] / n * remainder(entry, b, bt, m)
        rows = plan.test_rows(k)
        test = data.take(rows)
        diff_sample = np.mean(eval_uncentered_if(entry, b, test) - phi_true[rows])
        fitted_on_measure = entry.phi(nuisance_values(entry, b, m.data), m.data, b)
        t1_direct += sizes[k] / n * (diff_sample - m.mean(fitted_on_measure - exact_on_measure))
    error = estimate.psi_hat - psi
    t1 = error - s_star - t2
    return Decomposition(error, s_star, t1, float(t2), float(t1_direct))
