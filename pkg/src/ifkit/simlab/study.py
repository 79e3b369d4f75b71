"""Monte Carlo replication engine and the experiments built on it."""
from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import kstest

from .. import catalog
from ..catalog import LinearPolicy, get_entry
from ..errors import IFKitError
from ..estimate import (
    crossfit_estimate,
    decompose_error,
    full_sample_estimate,
    late_full_onestep,
    onestep_estimate,
    plugin_estimate,
)
from ..nuisance import parse_learner
from .dgps import get_dgp

ESTIMATORS = ("crossfit", "onestep", "plugin", "full-onestep")
MASTER_SEED = 20240611


@dataclass(frozen=True)
class StudyConfig:
    """One simulation design.

    ``R_per_n`` overrides ``R`` for listed sample sizes.  ``broken`` forces
    named nuisances to constants (misspecification switches).  ``policy``
    is ``(intercept, slope)`` for the stochastic-intervention functional.
    """

    dgp: str
    functional: str
    learners: dict = field(default_factory=lambda: {"*": "oracle"})
    n: tuple = (2000,)
    R: int = 100
    K: int = 5
    seed: int = MASTER_SEED
    level: float = 0.95
    estimator: str = "crossfit"
    broken: dict = field(default_factory=dict)
    decompose: bool = False
    R_per_n: dict = field(default_factory=dict)
    policy: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "n", tuple(int(v) for v in self.n))
        object.__setattr__(self, "R_per_n", {int(k): int(v) for k, v in dict(self.R_per_n).items()})
        object.__setattr__(self, "broken", {str(k): float(v) for k, v in dict(self.broken).items()})
        object.__setattr__(self, "learners", {str(k): str(parse_learner(v)) for k, v in dict(self.learners).items()})
        if self.policy is not None:
            object.__setattr__(self, "policy", tuple(float(v) for v in self.policy))
        self.validate()

    def validate(self):
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"estimator must be one of {ESTIMATORS}")
        if not self.n:
            raise ValueError("n list is empty")
        for n in self.n:
            if self.replications(n) < 1:
                raise ValueError("R must be at least 1")
            if n < 10 * self.K:
                raise ValueError(f"n={n} is below 10K={10 * self.K}")
        if not 0 < self.level < 1:
            raise ValueError("level must lie in (0, 1)")
        dgp = get_dgp(self.dgp)
        entry = self.entry()
        if not dgp.supports(entry.id):
            raise ValueError(f"DGP {self.dgp} does not support {self.functional}")
        for name in self.broken:
            entry.spec(name)

    def replications(self, n: int) -> int:
        return self.R_per_n.get(int(n), self.R)

    def entry(self):
        policy = LinearPolicy(*self.policy) if self.policy is not None else None
        return get_entry(self.functional, policy=policy)

    def to_json(self) -> dict:
        doc = asdict(self)
        doc["n"] = list(self.n)
        doc["R_per_n"] = {str(k): v for k, v in sorted(self.R_per_n.items())}
        doc["policy"] = None if self.policy is None else list(self.policy)
        return doc

    @classmethod
    def from_json(cls, doc) -> "StudyConfig":
        if isinstance(doc, str):
            doc = json.loads(doc)
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)


def replication_seed(master: int, n: int, r: int) -> int:
    """64-bit seed derived from (master seed, n, replication index)."""
    return int(np.random.SeedSequence([int(master), int(n), int(r)]).generate_state(1, np.uint64)[0])


def run_estimator(config: StudyConfig, data, seed: int, oracle=None):
    entry = config.entry()
    if config.estimator == "crossfit":
        return crossfit_estimate(entry, config.learners, data, config.K, seed, config.level,
                                 oracle=oracle, broken=config.broken)
    if config.estimator == "onestep":
        return full_sample_estimate(entry, config.learners, data, seed, config.level, oracle, config.broken)
    if config.estimator == "full-onestep":
        est = full_sample_estimate(entry, config.learners, data, seed, config.level, oracle, config.broken)
        return late_full_onestep(entry, est.bundles[0], data, config.level)
    est = full_sample_estimate(entry, config.learners, data, seed, config.level, oracle, config.broken)
    return plugin_estimate(entry, est.bundles[0], data)


def run_replication(config: StudyConfig, n: int, r: int) -> dict:
    """One replication; estimator failures are recorded, not raised."""
    dgp = get_dgp(config.dgp)
    entry = config.entry()
    seed = replication_seed(config.seed, n, r)
    record = {"n": n, "rep": r, "seed": seed, "psi_hat": None, "se": None, "ci_lo": None, "ci_hi": None,
              "covered": None, "plugin": None, "clamp_events": 0, "S_star": None, "T1": None, "T2": None,
              "T1_direct": None, "failure": None}
    try:
        data = dgp.sample(n, seed)
        oracle = dgp.true_bundle(entry)
        est = run_estimator(config, data, seed, oracle)
        psi = dgp.truth(entry)
        record.update(psi_hat=_num(est.psi_hat), se=_num(est.se), plugin=_num(est.plugin),
                      clamp_events=int(est.clamp_events))
        if est.ci is not None:
            record.update(ci_lo=_num(est.ci[0]), ci_hi=_num(est.ci[1]), covered=bool(est.ci[0] <= psi <= est.ci[1]))
        if config.decompose and config.estimator == "crossfit" and not entry.is_ratio:
            dec = decompose_error(entry, est, data, dgp, oracle)
            record.update(S_star=_num(dec.s_star), T1=_num(dec.t1), T2=_num(dec.t2), T1_direct=_num(dec.t1_direct))
    except IFKitError as exc:
        record["failure"] = f"{type(exc).__name__}: {exc}"
    return record


def _num(v):
    return None if v is None else float(v)


def _run_chunk(args):
    config, n, reps = args
    return [run_replication(config, n, r) for r in reps]


def _median(v):
    return float(np.median(v)) if len(v) else None


def _mean(v):
    return float(np.mean(v)) if len(v) else None


def summarize(records, n: int, psi: float, var_if: Optional[float]) -> dict:
    """Per-n metrics from replication records."""
    ok = [r for r in records if r["failure"] is None]
    R = len(records)
    cell = {"n": n, "R": R, "failures": R - len(ok), "failure_rate": (R - len(ok)) / R}
    est = np.array([r["psi_hat"] for r in ok], dtype=float)
    if len(est) == 0:
        cell.update(bias=None, sd=None, rmse=None, rmse_sqrt_n=None, sd_undefined=True)
        return cell
    err = est - psi
    bias = float(err.mean())
    sd = float(err.std()) if len(est) > 1 else None
    rmse = float(np.sqrt(np.mean(err ** 2)))
    cell.update(bias=bias, sd=sd, sd_undefined=len(est) < 2, rmse=rmse, rmse_sqrt_n=rmse * math.sqrt(n),
                mean_psi_hat=float(est.mean()))
    cov = [r["covered"] for r in ok if r["covered"] is not None]
    if cov:
        c = float(np.mean(cov))
        cell.update(coverage=c, coverage_se=math.sqrt(c * (1 - c) / len(cov)),
                    mean_ci_width=float(np.mean([r["ci_hi"] - r["ci_lo"] for r in ok if r["ci_lo"] is not None])))
    plug = [r["plugin"] for r in ok if r["plugin"] is not None]
    if plug:
        cell["plugin_bias"] = float(np.mean(plug)) - psi
    clamps = np.array([r["clamp_events"] for r in ok])
    cell.update(mean_clamp_events=float(clamps.mean()), clamp_rate=float(np.mean(clamps > 0)))
    t1 = [abs(r["T1"]) * math.sqrt(n) for r in ok if r["T1"] is not None]
    t2 = [abs(r["T2"]) * math.sqrt(n) for r in ok if r["T2"] is not None]
    if t1:
        cell.update(mean_abs_T1_sqrt_n=_mean(t1), median_abs_T1_sqrt_n=_median(t1),
                    mean_abs_T2_sqrt_n=_mean(t2), median_abs_T2_sqrt_n=_median(t2))
    if var_if is not None and var_if > 0 and len(est) > 1:
        z = np.sqrt(n) * err / math.sqrt(var_if)
        cell.update(n_var_ratio=float(n * np.var(est, ddof=1) / var_if), ks_pvalue=float(kstest(z, "norm").pvalue))
    return cell


@dataclass(frozen=True, eq=False)
class StudyResult:
    config: StudyConfig
    truth: float
    truth_note: str
    var_if: Optional[float]
    cells: tuple
    records: tuple

    def cell(self, n: int) -> dict:
        for c in self.cells:
            if c["n"] == n:
                return c
        raise KeyError(n)

    def to_json(self) -> dict:
        return {"config": self.config.to_json(), "truth": self.truth, "truth_note": self.truth_note,
                "var_if": self.var_if, "cells": list(self.cells), "records": list(self.records)}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)

    def records_csv(self) -> str:
        cols = ["n", "rep", "seed", "psi_hat", "se", "ci_lo", "ci_hi", "covered", "plugin", "clamp_events",
                "S_star", "T1", "T2", "T1_direct", "failure"]
        lines = [",".join(cols)]
        for r in self.records:
            lines.append(",".join(_csv_cell(r[c]) for c in cols))
        return "\n".join(lines) + "\n"


def _csv_cell(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    s = str(v)
    return '"' + s.replace('"', '""') + '"' if ("," in s or '"' in s) else s


def run_study(config: StudyConfig, threads: int = 1) -> StudyResult:
    """All replications for every n; results do not depend on ``threads``."""
    dgp = get_dgp(config.dgp)
    entry = config.entry()
    psi = dgp.truth(entry)
    try:
        var_if = catalog.variance_of_if(entry, dgp)
    except IFKitError:
        var_if = None
    jobs = []
    for n in config.n:
        reps = list(range(config.replications(n)))
        step = max(1, math.ceil(len(reps) / max(1, threads * 4)))
        jobs += [(config, n, reps[i:i + step]) for i in range(0, len(reps), step)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(_run_chunk, jobs))
    else:
        chunks = [_run_chunk(j) for j in jobs]
    records = [r for chunk in chunks for r in chunk]
    cells = tuple(summarize([r for r in records if r["n"] == n], n, psi, var_if) for n in config.n)
    note = dgp.functionals[entry.id]
    return StudyResult(config, psi, note, var_if, cells, tuple(records))


def broken_switches(entry, which: str) -> dict:
    """Constant replacements for a misspecification arm.

    ``mu`` zeroes every outcome regression, ``pi`` sets every conditional
    probability to 0.5, ``both`` does both and ``none`` nothing.
    """
    if which not in ("mu", "pi", "both", "none"):
        raise ValueError("broken must be one of mu, pi, both, none")
    out = {}
    for s in entry.manifest:
        if which in ("mu", "both") and s.kind == "conditional-mean":
            out[s.name] = 0.0
        if which in ("pi", "both") and s.kind == "conditional-probability":
            out[s.name] = 0.5
    return out


@dataclass(frozen=True)
class DRRecord:
    functional: str
    broken: str
    n: int
    R: int
    truth: float
    onestep_bias: float
    plugin_bias: float
    onestep_coverage: Optional[float]
    failures: int

    def to_json(self) -> dict:
        return asdict(self)


def dr_experiment(dgp: str, functional: str, broken: str, n: int, R: int, seed: int = MASTER_SEED,
                  learners=None, K: int = 5, threads: int = 1) -> DRRecord:
    """Cross-fit one-step and plug-in biases under a misspecification arm."""
    entry = get_entry(functional)
    config = StudyConfig(dgp, functional, learners or {"*": "knn(cv=5, grid=[5, 10, 25, 50, 100, 200])"},
                         (n,), R, K, seed, broken=broken_switches(entry, broken))
    result = run_study(config, threads)
    c = result.cell(n)
    return DRRecord(functional, broken, n, R, result.truth, c["bias"], c["plugin_bias"], c.get("coverage"),
                    c["failures"])


@dataclass(frozen=True)
class ScalingRecord:
    functional: str
    ts: tuple
    remainders: tuple
    ratios: tuple
    exact_zero: bool

    def to_json(self) -> dict:
        return asdict(self)


def default_direction(entry) -> dict:
    """A bounded direction touching every nuisance the IF uses."""
    if entry.id == "expected_density":
        c = 1.0 / math.sqrt(2.0 * math.pi)
        return {"p": lambda z: 0.1 * c * (np.exp(-0.5 * (np.ravel(z) - 1) ** 2) - np.exp(-0.5 * (np.ravel(z) + 1) ** 2))}
    out = {}
    for s in entry.manifest:
        if s.plugin_only:
            continue
        if s.kind == "conditional-probability":
            out[s.name] = lambda X: 0.25 + 0.25 * np.asarray(X, dtype=float)[:, 0]
        else:
            out[s.name] = lambda X: 0.5 + np.sin(2.0 * np.asarray(X, dtype=float)[:, 0])
    return out


def remainder_scaling(entry, dgp, direction=None, ts=(0.2, 0.1, 0.05)) -> ScalingRecord:
    """Remainders along ``eta + t h`` and the successive ratios R(t_i) / R(t_{i+1})."""
    if isinstance(entry, str):
        entry = get_entry(entry)
    if isinstance(dgp, str):
        dgp = get_dgp(dgp)
    direction = default_direction(entry) if direction is None else direction
    true = dgp.true_bundle(entry)
    rems = tuple(catalog.remainder(entry, catalog.perturb(true, direction, t), true, dgp) for t in ts)
    exact_zero = all(r == 0.0 for r in rems)
    ratios = () if exact_zero else tuple(
        rems[i] / rems[i + 1] if rems[i + 1] != 0 else float("nan") for i in range(len(rems) - 1))
    return ScalingRecord(entry.id, tuple(ts), rems, ratios, exact_zero)
